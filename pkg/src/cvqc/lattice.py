"""Arithmetic over Z_q, truncated discrete Gaussians, gadget trapdoors and lossy sampling."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleParameters, InputError, NotInvertible, ParameterError

MAX_TRAP_TRIES = 64


# ---------------------------------------------------------------------------
# Z_q helpers


def is_prime(q: int) -> bool:
    if q < 2:
        return False
    if q % 2 == 0:
        return q == 2
    r = int(math.isqrt(q))
    return all(q % d for d in range(3, r + 1, 2))


def primes_below(limit: int) -> list[int]:
    """Odd primes below limit (the moduli the parameter search may use)."""
    return [p for p in range(3, limit) if is_prime(p)]


def bits_per_coord(q: int) -> int:
    """⌈log2 q⌉, the block width of the J encoding."""
    return max(1, (q - 1).bit_length())


def mod(x, q: int) -> np.ndarray:
    return np.mod(np.asarray(x, dtype=np.int64), q)


def centered(x, q: int) -> np.ndarray:
    """Signed representative in (-q/2, q/2]."""
    r = np.mod(np.asarray(x, dtype=np.int64), q)
    return np.where(r > q // 2, r - q, r)


def zq_norm(x, q: int) -> float:
    return float(np.linalg.norm(centered(x, q).astype(float)))


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class Params:
    lam: int
    l: int
    n: int
    m: int
    w: int
    q: int
    B_L: float
    B_V: float
    B_P: float
    C_T: float
    ratio: float = 2.0
    name: str = ""
    validated: bool = field(default=True, compare=False)

    @property
    def k(self) -> int:
        return bits_per_coord(self.q)

    @property
    def inversion_radius(self) -> float:
        """Euclidean radius q/(C_T·√(n·log2 q)) within which the trapdoor inverts."""
        return self.q / (self.C_T * math.sqrt(self.n * math.log2(self.q)))

    @property
    def preimage_count(self) -> int:
        return self.q**self.n

    def violations(self) -> list[str]:
        """Names of violated Params invariants (empty when consistent)."""
        out = []
        q, n, m = self.q, self.n, self.m
        if not (q >= 3 and is_prime(q)):
            out.append("q must be an odd prime >= 3")
        if min(self.lam, self.l, n, m) < 1:
            out.append("lam, l, n, m must be positive")
        if q >= 3 and self.w != n * bits_per_coord(q):
            out.append("w must equal n*ceil(log2 q)")
        if self.B_L < 2 * math.sqrt(n):
            out.append("B_L >= 2*sqrt(n) violated")
        if not self.B_L < self.B_V:
            out.append("B_L < B_V violated")
        if not self.B_V < self.B_P:
            out.append("B_V < B_P violated")
        if q >= 3 and self.C_T > 0:
            cap = q / (2 * self.C_T * math.sqrt(m * n * math.log2(q)))
            if self.B_P > cap + 1e-12:
                out.append(f"B_P <= q/(2*C_T*sqrt(m*n*log2 q)) = {cap:.4g} violated")
        else:
            out.append("C_T must be positive")
        if self.ratio < 2:
            out.append("minimum ratio must be >= 2")
        if self.B_V < self.ratio * self.B_L - 1e-12 or self.B_P < self.ratio * self.B_V - 1e-12:
            out.append(f"B_P/B_V and B_V/B_L must be >= {self.ratio}")
        return out

    def check(self) -> "Params":
        bad = self.violations()
        if bad:
            raise ParameterError("; ".join(bad))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("validated")
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict, validate: bool = True) -> "Params":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {"lam", "l", "n", "m", "w", "q", "B_L", "B_V", "B_P", "C_T", "ratio", "name"}
        missing = {"lam", "l", "n", "m", "w", "q", "B_L", "B_V", "B_P", "C_T"} - set(d)
        if missing:
            raise ParameterError(f"missing fields: {sorted(missing)}")
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown fields: {sorted(unknown)}")
        try:
            p = cls(
                lam=int(d["lam"]), l=int(d["l"]), n=int(d["n"]), m=int(d["m"]), w=int(d["w"]),
                q=int(d["q"]), B_L=float(d["B_L"]), B_V=float(d["B_V"]), B_P=float(d["B_P"]),
                C_T=float(d["C_T"]), ratio=float(d.get("ratio", 2.0)), name=str(d.get("name", "")),
                validated=validate,
            )
        except (TypeError, ValueError) as exc:
            raise ParameterError(f"malformed params: {exc}") from exc
        return p.check() if validate else p

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def load_preset(name: str) -> Params:
    """Load a shipped preset ("toy", "micro", "search-example")."""
    try:
        text = resources.files("cvqc.presets").joinpath(f"{name}.json").read_text()
    except FileNotFoundError as exc:
        raise ParameterError(f"unknown preset {name!r}") from exc
    d = json.loads(text)
    validate = d.pop("validated", True)
    return Params.from_dict(d, validate=validate)


def load_params_file(path) -> Params:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"params file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"params file {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ParameterError("params file must hold a JSON object")
    d.pop("header", None)
    validate = d.pop("validated", True)
    return Params.from_dict(d, validate=validate)


# ---------------------------------------------------------------------------
# Truncated discrete Gaussian


@dataclass(frozen=True)
class GaussTable:
    """Per-coordinate truncated Gaussian over Z_q, tabulated on its support."""

    q: int
    B: float
    values: np.ndarray  # signed support points
    probs: np.ndarray

    @property
    def normalizer(self) -> float:
        return float(np.exp(-np.pi * self.values.astype(float) ** 2 / self.B**2).sum())

    def pdf(self, x) -> np.ndarray:
        """Density at (arrays of) Z_q elements."""
        c = np.abs(centered(x, self.q)).astype(float)
        out = np.exp(-np.pi * c**2 / self.B**2) / self.normalizer
        return np.where(c <= self.B, out, 0.0)

    def full(self) -> np.ndarray:
        """Density vector indexed by canonical x in [0, q)."""
        return self.pdf(np.arange(self.q))


_TABLES: dict[tuple[int, float], GaussTable] = {}


def gauss_table(B: float, q: int) -> GaussTable:
    if not B > 0:
        raise ParameterError(f"Gaussian bound must be positive, got {B}")
    key = (q, float(B))
    if key not in _TABLES:
        r = min(int(math.floor(B)), (q - 1) // 2)
        vals = np.arange(-r, r + 1, dtype=np.int64)
        wts = np.exp(-np.pi * vals.astype(float) ** 2 / B**2)
        _TABLES[key] = GaussTable(q, float(B), vals, wts / wts.sum())
    return _TABLES[key]


def gaussian_density(x, B: float, q: int):
    """Truncated discrete Gaussian density exp(-π|x|²/B²)/Z on {|x| ≤ B}."""
    val = gauss_table(B, q).pdf(x)
    return float(val) if np.ndim(val) == 0 else val


def gaussian_vector_density(y, B: float, q: int) -> float:
    """Product density over Z_q^m."""
    return float(np.prod(gauss_table(B, q).pdf(y)))


def sample_gaussian_vec(m: int, B: float, q: int, rng: np.random.Generator) -> np.ndarray:
    t = gauss_table(B, q)
    return np.mod(rng.choice(t.values, size=m, p=t.probs), q)


def hellinger2_shift(e, B: float, q: int) -> float:
    """H²(D, D+e) for the product Gaussian, computed exactly coordinate by coordinate."""
    t = gauss_table(B, q)
    full = t.full()
    bc = 1.0
    for ei in np.mod(np.asarray(e, dtype=np.int64), q):
        bc *= float(np.sqrt(full * np.roll(full, int(ei))).sum())
    return 1.0 - bc


# ---------------------------------------------------------------------------
# Gadget trapdoor


def gadget_basis(q: int) -> np.ndarray:
    """Basis S_k of the lattice {z : <g, z> = 0 mod q}, g = (1, 2, ..., 2^{k-1})."""
    k = bits_per_coord(q)
    S = np.zeros((k, k), dtype=np.int64)
    for j in range(k - 1):
        S[j, j] = 2
        S[j + 1, j] = -1
    S[:, k - 1] = [(q >> i) & 1 for i in range(k)]
    return S


def gadget_matrix(n: int, q: int) -> np.ndarray:
    k = bits_per_coord(q)
    g = 2 ** np.arange(k, dtype=np.int64)
    return np.kron(np.eye(n, dtype=np.int64), g.reshape(k, 1))


@dataclass(frozen=True)
class MatrixTrapdoor:
    A: np.ndarray  # m x n
    R: np.ndarray  # nk x m_bar
    q: int
    radius: float
    certified: float

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m_bar(self) -> int:
        return self.R.shape[1]


def certified_radius(R: np.ndarray, q: int) -> float:
    """Largest Euclidean noise radius for which gadget decoding is exact."""
    S = gadget_basis(q)
    k = S.shape[0]
    n = R.shape[0] // k
    worst = 0.0
    for i in range(n):
        Ri = R[i * k:(i + 1) * k]
        rows = np.hstack([S.T @ Ri, S.T]).astype(float)
        worst = max(worst, float(np.linalg.norm(rows, axis=1).max()))
    return (q / 2) / worst


def worst_case_row_norm(m_bar: int, q: int) -> float:
    """Max over R ∈ {±1} of the row norms entering certified_radius."""
    k = bits_per_coord(q)
    p = bin(q).count("1")
    sq = [9 * m_bar + 5] if k > 1 else []
    sq.append(p * p * m_bar + p)
    return math.sqrt(max(sq))


def min_gadget_m(n: int, q: int) -> int:
    return n * bits_per_coord(q) + n


def gen_trap(n: int, m: int, q: int, rng: np.random.Generator, C_T: float = 1.0) -> MatrixTrapdoor:
    """Sample A ∈ Z_q^{m×n} with a gadget trapdoor inverting up to q/(C_T·√(n log2 q))."""
    k = bits_per_coord(q)
    m_bar = m - n * k
    if n < 1 or m_bar < n:
        raise ParameterError(f"gadget trapdoor needs m >= n*ceil(log2 q) + n = {min_gadget_m(n, q)}, got m={m}")
    radius = q / (C_T * math.sqrt(n * math.log2(q)))
    G = gadget_matrix(n, q)
    A_bar = rng.integers(0, q, size=(m_bar, n))
    for _ in range(MAX_TRAP_TRIES):
        R = rng.choice(np.array([-1, 1]), size=(n * k, m_bar))
        cert = certified_radius(R, q)
        if cert >= radius:
            A = np.mod(np.vstack([A_bar, G - R @ A_bar]), q)
            return MatrixTrapdoor(A=A, R=R, q=q, radius=radius, certified=cert)
    raise ParameterError(
        f"C_T={C_T} too small: no trapdoor certifies radius {radius:.3g} at q={q}, m={m}"
    )


def _gadget_decode(c: np.ndarray, q: int, n: int) -> np.ndarray:
    """Recover s from c = G·s + e′ (mod q) when every S_kᵀe′ is small."""
    S = gadget_basis(q)
    k = S.shape[0]
    ST = S.T.astype(float)
    s = np.zeros(n, dtype=np.int64)
    for i in range(n):
        ci = c[i * k:(i + 1) * k]
        t = centered(S.T @ ci, q).astype(float)
        e_blk = np.rint(np.linalg.solve(ST, t)).astype(np.int64)
        s[i] = (ci[0] - e_blk[0]) % q
    return s


def invert(A: np.ndarray, td: MatrixTrapdoor, y) -> tuple[np.ndarray, np.ndarray]:
    """Return (s, e) with y = A·s + e and ‖e‖ ≤ radius, else raise NotInvertible."""
    q = td.q
    y = mod(y, q)
    m_bar = td.m_bar
    y1, y2 = y[:m_bar], y[m_bar:]
    c = np.mod(y2 + td.R @ y1, q)
    s = _gadget_decode(c, q, A.shape[1])
    e = centered(y - A @ s, q)
    if float(np.linalg.norm(e.astype(float))) > td.radius:
        raise NotInvertible("no lattice point within the inversion radius")
    return s, np.mod(e, q)


def invert_brute_force(A: np.ndarray, y, q: int, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Oracle: search all s ∈ Z_q^n for ‖y − A·s‖ ≤ radius."""
    n = A.shape[1]
    if q**n > 10**6:
        raise ParameterError("brute-force inversion limited to q^n <= 1e6")
    S = np.array(list(itertools.product(range(q), repeat=n)), dtype=np.int64)
    E = centered(mod(y, q)[None, :] - S @ A.T, q).astype(float)
    norms = np.linalg.norm(E, axis=1)
    hits = np.flatnonzero(norms <= radius)
    if hits.size == 0:
        raise NotInvertible("no lattice point within the inversion radius")
    best = hits[np.argmin(norms[hits])]
    return S[best], mod(E[best].astype(np.int64), q)


# ---------------------------------------------------------------------------
# Lossy mode


def lossy_sample(n: int, m: int, l: int, q: int, B_L: float, rng: np.random.Generator) -> np.ndarray:
    """B·C + F with B uniform m×l, C uniform l×n and truncated-Gaussian F."""
    if not 0 < l < n:
        raise ParameterError("lossy rank must satisfy 0 < l < n")
    Bm = rng.integers(0, q, size=(m, l))
    C = rng.integers(0, q, size=(l, n))
    if B_L > 0:
        F = sample_gaussian_vec(m * n, B_L, q, rng).reshape(m, n)
    else:
        F = np.zeros((m, n), dtype=np.int64)
    return np.mod(Bm @ C + F, q)


def rank_mod_q(M: np.ndarray, q: int) -> int:
    M = mod(M, q).copy()
    rows, cols = M.shape
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if M[i, c] % q), None)
        if piv is None:
            continue
        M[[r, piv]] = M[[piv, r]]
        M[r] = (M[r] * pow(int(M[r, c]), -1, q)) % q
        for i in range(rows):
            if i != r and M[i, c]:
                M[i] = (M[i] - M[i, c] * M[r]) % q
        r += 1
        if r == rows:
            break
    return r


# ---------------------------------------------------------------------------
# Parameter search


def certified_C_T(n: int, m: int, q: int) -> float:
    """Smallest C_T for which every R ∈ {±1} certifies the nominal radius."""
    rho = worst_case_row_norm(m - n * bits_per_coord(q), q)
    return 2 * rho * (1 + 1e-9) / math.sqrt(n * math.log2(q))


def find_params(
    q_candidates: Iterable[int],
    n: int,
    m: int | None = None,
    ratio: float = 2.0,
    C_T: float | None = 1.0,
    lam: int | None = None,
    l: int = 1,
) -> Params:
    """Smallest q (and its tightest bounds) satisfying all Params invariants.

    m=None picks the smallest gadget-compatible m for each q, and C_T=None the
    constant that the gadget trapdoor certifies for every R.
    """
    cands = sorted(set(int(c) for c in q_candidates))
    if not cands:
        raise ParameterError("empty candidate list")
    B_L = math.ceil(2 * math.sqrt(n))
    B_V = math.ceil(B_L * ratio)
    need_P = math.ceil(B_V * ratio)
    for q in cands:
        if q < 3 or not is_prime(q):
            continue
        mm = min_gadget_m(n, q) if m is None else m
        ct = certified_C_T(n, mm, q) if C_T is None else C_T
        cap = q / (2 * ct * math.sqrt(mm * n * math.log2(q)))
        B_P = math.floor(cap)
        if B_P < need_P:
            continue
        p = Params(
            lam=lam or n, l=l, n=n, m=mm, w=n * bits_per_coord(q), q=q,
            B_L=B_L, B_V=B_V, B_P=B_P, C_T=math.ceil(ct * 1e6) / 1e6 if C_T is None else ct, ratio=ratio,
        )
        if not p.violations():
            return p
    raise InfeasibleParameters(f"no candidate q satisfies the invariants (n={n}, m={m}, ratio={ratio})")


def micro_params() -> Params:
    """Unvalidated q=5, n=1, m=4 preset for exhaustive checks (point-mass noise, radius 1)."""
    return load_preset("micro")


def as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def as_int_vector(x: Sequence[int] | np.ndarray, q: int) -> np.ndarray:
    return mod(np.atleast_1d(np.asarray(x, dtype=np.int64)), q)
