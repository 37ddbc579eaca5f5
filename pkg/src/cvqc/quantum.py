"""State-vector and density-matrix simulation of the prover's registers.

Registers are dense over an explicit list of basis labels. A qubit has labels
[0, 1]; a preimage register starts with labels x ∈ Z_q^n (tuples) and after
U_J carries integer bit labels J(x). Registers that were measured are pruned to
the labels with nonzero amplitude, which keeps the toy-preset simulation small
while remaining exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ResourceError
from .lattice import Params, gauss_table, mod
from .trapdoor_functions import PublicKey, density_f_prime, int_to_bits, j_inv, j_label

DEFAULT_BUDGET = 2**22
TOL = 1e-12

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CZ = np.diag([1, 1, 1, -1]).astype(complex)


def kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


@dataclass
class Register:
    name: str
    labels: list
    kind: str = "qubit"  # qubit | preimage | jbits | commit | aux
    width: int = 1  # bit width for jbits registers

    @property
    def dim(self) -> int:
        return len(self.labels)

    def copy(self) -> "Register":
        return Register(self.name, list(self.labels), self.kind, self.width)


def qubit(name: str, kind: str = "qubit") -> Register:
    return Register(name, [0, 1], kind, 1)


# ---------------------------------------------------------------------------
# Pure states


class QState:
    """Amplitude tensor with one axis per register."""

    def __init__(self, amps: np.ndarray, registers: Sequence[Register], normalized: bool = True):
        amps = np.asarray(amps, dtype=complex)
        regs = [r.copy() for r in registers]
        names = [r.name for r in regs]
        if len(set(names)) != len(names):
            raise ValueError("register names must be unique")
        shape = tuple(r.dim for r in regs)
        if amps.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"amplitude count {amps.size} does not match layout {shape}")
        self.amps = amps.reshape(shape)
        self.registers = regs
        if normalized and abs(self.norm() - 1) > 1e-10:
            raise ValueError(f"state not normalized (norm {self.norm():.3g})")

    # construction -------------------------------------------------------
    @classmethod
    def from_qubits(cls, vec, names: Sequence[str], kind: str = "qubit") -> "QState":
        vec = np.asarray(vec, dtype=complex)
        vec = vec / np.linalg.norm(vec)
        return cls(vec, [qubit(nm, kind) for nm in names])

    def copy(self) -> "QState":
        return QState(self.amps.copy(), self.registers, normalized=False)

    # layout -------------------------------------------------------------
    @property
    def names(self) -> list[str]:
        return [r.name for r in self.registers]

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no register {name!r}") from None

    def register(self, name: str) -> Register:
        return self.registers[self.axis(name)]

    @property
    def size(self) -> int:
        return self.amps.size

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def vector(self, order: Sequence[str] | None = None) -> np.ndarray:
        if order is None:
            return self.amps.ravel().copy()
        axes = [self.axis(n) for n in order]
        return np.transpose(self.amps, axes).ravel().copy()

    # operations -----------------------------------------------------------
    def tensor(self, other: "QState") -> "QState":
        amps = np.multiply.outer(self.amps, other.amps)
        return QState(amps, self.registers + other.registers, normalized=False)

    def add_register(self, reg: Register, label_index: int = 0) -> "QState":
        vec = np.zeros(reg.dim, dtype=complex)
        vec[label_index] = 1
        return self.tensor(QState(vec, [reg]))

    def apply(self, U: np.ndarray, names: Sequence[str]) -> "QState":
        """Apply an operator on the listed registers (in that tensor order)."""
        axes = [self.axis(n) for n in names]
        dims = [self.registers[a].dim for a in axes]
        D = int(np.prod(dims))
        if U.shape != (D, D):
            raise ValueError(f"operator shape {U.shape} does not match registers {dims}")
        t = np.moveaxis(self.amps, axes, list(range(len(axes))))
        rest = t.shape[len(axes):]
        t = (U @ t.reshape(D, -1)).reshape(tuple(dims) + rest)
        out = self.copy()
        out.amps = np.moveaxis(t, list(range(len(axes))), axes)
        return out

    def branch(self, name: str, label) -> np.ndarray:
        """Unnormalized slice with register `name` fixed to `label` (register axis removed)."""
        reg = self.register(name)
        return np.take(self.amps, reg.labels.index(label), axis=self.axis(name))

    def probabilities(self, name: str) -> np.ndarray:
        a = self.axis(name)
        p = np.sum(np.abs(np.moveaxis(self.amps, a, 0).reshape(self.amps.shape[a], -1)) ** 2, axis=1)
        return p / p.sum()

    def collapse(self, name: str, index: int) -> "QState":
        """Project register onto one label, keep it as a one-label register, renormalize."""
        a = self.axis(name)
        sl = np.take(self.amps, [index], axis=a)
        nrm = np.linalg.norm(sl)
        if nrm < TOL:
            raise ValueError("projection onto a zero-probability outcome")
        regs = [r.copy() for r in self.registers]
        regs[a].labels = [regs[a].labels[index]]
        return QState(sl / nrm, regs)

    def measure(self, name: str, rng: np.random.Generator):
        """Standard-basis measurement; returns (label, post-state)."""
        p = self.probabilities(name)
        idx = int(rng.choice(len(p), p=p))
        return self.register(name).labels[idx], self.collapse(name, idx)

    def prune(self, name: str, tol: float = TOL) -> "QState":
        a = self.axis(name)
        t = np.moveaxis(self.amps, a, 0)
        keep = np.flatnonzero(np.sum(np.abs(t.reshape(t.shape[0], -1)) ** 2, axis=1) > tol**2)
        regs = [r.copy() for r in self.registers]
        regs[a].labels = [regs[a].labels[i] for i in keep]
        return QState(np.moveaxis(t[keep], 0, a), regs, normalized=False)

    def drop(self, name: str) -> "QState":
        """Remove a register that holds a single label."""
        a = self.axis(name)
        if self.registers[a].dim != 1:
            raise ValueError(f"register {name!r} is not in a basis state")
        regs = [r for i, r in enumerate(self.registers) if i != a]
        return QState(np.take(self.amps, 0, axis=a), regs, normalized=False)

    def relabel(self, name: str, fn, kind: str | None = None, width: int | None = None) -> "QState":
        """Injective relabelling of a register's basis (a permutation-type unitary)."""
        out = self.copy()
        reg = out.registers[out.axis(name)]
        new = [fn(l) for l in reg.labels]
        if len(set(new)) != len(new):
            raise ValueError("relabelling is not injective")
        reg.labels = new
        if kind is not None:
            reg.kind = kind
        if width is not None:
            reg.width = width
        return out

    def density(self, keep: Sequence[str] | None = None) -> "DensityOp":
        keep = list(self.names if keep is None else keep)
        regs = [self.register(n) for n in keep]
        other = [n for n in self.names if n not in keep]
        t = np.transpose(self.amps, [self.axis(n) for n in keep] + [self.axis(n) for n in other])
        D = int(np.prod([r.dim for r in regs]))
        M = t.reshape(D, -1)
        return DensityOp(M @ M.conj().T, regs)


# ---------------------------------------------------------------------------
# Hadamard-basis measurement of bit-labelled registers


def _gf2_reduce(rows: list[int], width: int):
    """Row-reduce GF(2) vectors (ints); return (basis rows, pivot columns)."""
    basis: list[int] = []
    pivots: list[int] = []
    for r in rows:
        for b, p in zip(basis, pivots):
            if (r >> p) & 1:
                r ^= b
        if r:
            p = r.bit_length() - 1
            for i, b in enumerate(basis):
                if (b >> p) & 1:
                    basis[i] = b ^ r
            basis.append(r)
            pivots.append(p)
    return basis, pivots


def parity(v: int) -> int:
    return bin(v).count("1") & 1


def hadamard_outcome_distribution(labels: Sequence[int], slices: np.ndarray, width: int):
    """Exact distribution of H^{⊗width} measurement on a register with given labels.

    `slices[j]` is the (flattened) rest-of-state attached to label j. Returns a
    list of (representative d, probability, post-state of the rest).
    """
    l0 = labels[0]
    diffs = [l ^ l0 for l in labels]
    _, pivots = _gf2_reduce([d for d in diffs if d], width)
    r = len(pivots)
    out = []
    for bits in itertools.product((0, 1), repeat=r):
        d = sum(b << p for b, p in zip(bits, pivots))
        signs = np.array([(-1) ** parity(d & df) for df in diffs], dtype=float)
        rest = np.tensordot(signs, slices, axes=(0, 0))
        prob = float(np.sum(np.abs(rest) ** 2)) / 2**r
        out.append((d, prob, rest))
    return out, diffs, pivots


def measure_hadamard(state: QState, name: str, rng: np.random.Generator) -> tuple[int, QState]:
    """Apply H to every bit of a bit-labelled register and measure it."""
    reg = state.register(name)
    width = reg.width
    a = state.axis(name)
    slices = np.moveaxis(state.amps, a, 0)
    outcomes, diffs, pivots = hadamard_outcome_distribution(reg.labels, slices, width)
    probs = np.array([p for _, p, _ in outcomes])
    probs = probs / probs.sum()
    i = int(rng.choice(len(outcomes), p=probs))
    d_rep, _, rest = outcomes[i]
    # d uniform over the coset {d : d·diff_j = d_rep·diff_j for all j}
    d_rand = int(rng.integers(0, 2**width)) if width <= 62 else _random_bits(rng, width)
    sig = [parity(d_rand & df) ^ parity(d_rep & df) for df in diffs]
    fix = _solve_signature(sig, diffs, pivots)
    d = d_rand ^ fix
    regs = [r.copy() for r in state.registers]
    regs[a].labels = [d]
    rest = rest / np.linalg.norm(rest)
    return d, QState(np.expand_dims(rest, a), regs)


def _random_bits(rng, width):
    return int("".join(str(b) for b in rng.integers(0, 2, width)), 2)


def _solve_signature(sig, diffs, pivots) -> int:
    """Some d supported on pivot columns with d·diff_j = sig_j for all j."""
    for bits in itertools.product((0, 1), repeat=len(pivots)):
        d = sum(b << p for b, p in zip(bits, pivots))
        if all(parity(d & df) == s for df, s in zip(diffs, sig)):
            return d
    raise AssertionError("signature outside the image")  # pragma: no cover


def measure_qubit_hadamard(state: QState, name: str, rng) -> tuple[int, QState]:
    out = state.apply(H, [name])
    lbl, post = out.measure(name, rng)
    return int(lbl), post


# ---------------------------------------------------------------------------
# Commitment


def samp_commit(
    params: Params,
    pk: PublicKey,
    state: QState,
    qubit_name: str,
    preimage_name: str,
    rng: np.random.Generator,
    mode: str = "auto",
    budget: int = DEFAULT_BUDGET,
) -> tuple[QState, np.ndarray]:
    """Commit to one qubit with key pk and measure the commitment string y.

    mode="dense" materializes Σ α_b √f′(x)(y)|b⟩|x⟩|y⟩ and measures y;
    mode="lazy" samples y from the same marginal and collapses analytically.
    """
    reg = state.register(qubit_name)
    if reg.labels != [0, 1]:
        raise ValueError(f"{qubit_name!r} is not an uncommitted qubit")
    q, n, m = params.q, params.n, params.m
    dense_size = state.size * q**n * q**m
    if mode == "auto":
        mode = "dense" if dense_size <= budget else "lazy"
    if mode == "dense":
        if dense_size > budget:
            raise ResourceError(f"commitment needs {dense_size} amplitudes (budget {budget})")
        return _commit_dense(params, pk, state, qubit_name, preimage_name, rng)
    return _commit_lazy(params, pk, state, qubit_name, preimage_name, rng)


def _all_x(q: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(q), repeat=n)), dtype=np.int64)


def _commit_dense(params, pk, state, qname, pname, rng):
    q, n, m = params.q, params.n, params.m
    xs = _all_x(q, n)
    ys = [tuple(y) for y in itertools.product(range(q), repeat=m)]
    a = state.axis(qname)
    amp = np.zeros(state.amps.shape + (len(xs), len(ys)), dtype=complex)
    for b in (0, 1):
        psi_b = np.take(state.amps, b, axis=a)
        for ix, x in enumerate(xs):
            f = density_f_prime(params, pk, b, x).dense().ravel()
            idx = [slice(None)] * state.amps.ndim
            idx[a] = b
            amp[tuple(idx) + (ix, slice(None))] = np.multiply.outer(psi_b, np.sqrt(f / len(xs)))
    regs = state.registers + [
        Register(pname, [tuple(int(v) for v in x) for x in xs], "preimage"),
        Register("_y", ys, "commit"),
    ]
    full = QState(amp, regs)
    y, post = full.measure("_y", rng)
    post = post.drop("_y").prune(pname)
    post = QState(post.amps / post.norm(), post.registers)
    return post, np.array(y, dtype=np.int64)


def _commit_lazy(params, pk, state, qname, pname, rng):
    q, n = params.q, params.n
    a = state.axis(qname)
    weights = np.array([np.sum(np.abs(np.take(state.amps, b, axis=a)) ** 2) for b in (0, 1)])
    b = int(rng.choice(2, p=weights / weights.sum()))
    x = rng.integers(0, q, size=n)
    y = density_f_prime(params, pk, b, x).sample(rng)
    return commit_post_state(params, pk, state, qname, pname, y), y


def commit_amplitudes(params: Params, pk: PublicKey, y) -> list[tuple[int, tuple, float]]:
    """All (b, x, √f′_{k,b}(x)(y)) with nonzero density, by enumeration over x."""
    q = params.q
    xs = _all_x(q, params.n)
    t = gauss_table(params.B_P, q)
    out = []
    for b in (0, 1):
        resid = mod(np.asarray(y)[None, :] - xs @ pk.A.T - b * pk.v[None, :], q)
        dens = np.prod(t.pdf(resid), axis=1)
        for i in np.flatnonzero(dens > 0):
            out.append((b, tuple(int(v) for v in xs[i]), float(np.sqrt(dens[i]))))
    return out


def commit_post_state(params, pk, state: QState, qname: str, pname: str, y) -> QState:
    """Post-measurement state given commitment string y (exact, trapdoor-free)."""
    a = state.axis(qname)
    terms = commit_amplitudes(params, pk, y)
    labels = [x for _, x, _ in terms]
    slices = []
    for b, _, amp in terms:
        vec = np.zeros_like(state.amps)
        idx = [slice(None)] * state.amps.ndim
        idx[a] = b
        vec[tuple(idx)] = np.take(state.amps, b, axis=a) * amp
        slices.append(vec)
    if not terms:
        raise ValueError("commitment string outside every support")
    # labels may repeat across branches when x0 = x1 (s = 0)
    uniq = list(dict.fromkeys(labels))
    stacked = np.zeros((len(uniq),) + state.amps.shape, dtype=complex)
    for lab, vec in zip(labels, slices):
        stacked[uniq.index(lab)] += vec
    amps = np.moveaxis(stacked, 0, -1)
    regs = state.registers + [Register(pname, uniq, "preimage")]
    out = QState(amps, regs, normalized=False)
    return QState(out.amps / out.norm(), out.registers)


def commitment_y_marginal_dense(params, pk, alpha) -> np.ndarray:
    """Analytic y marginal Σ_b |α_b|²·(1/|X|)·Σ_x f′_{k,b}(x)(y) as a q^m array."""
    q, n = params.q, params.n
    xs = _all_x(q, n)
    out = 0
    for b in (0, 1):
        acc = sum(density_f_prime(params, pk, b, x).dense() for x in xs) / len(xs)
        out = out + abs(alpha[b]) ** 2 * acc
    return out


def apply_u_j(state: QState, name: str, q: int) -> QState:
    """U_J: relabel preimage x ∈ Z_q^n as the bit string J(x)."""
    reg = state.register(name)
    width = len(reg.labels[0]) * max(1, (q - 1).bit_length())
    return state.relabel(name, lambda x: j_label(np.array(x), q), kind="jbits", width=width)


def apply_u_j_inverse(state: QState, name: str, q: int) -> QState:

    reg = state.register(name)
    return state.relabel(
        name, lambda v: tuple(int(c) for c in j_inv(int_to_bits(v, reg.width), q)), kind="preimage", width=1
    )


def hadamard_round_measure(state: QState, qubit_name: str, jname: str, rng) -> tuple[int, int, QState]:
    """H on the committed qubit and every bit of the J register, then measure both."""
    bprime, st = measure_qubit_hadamard(state, qubit_name, rng)
    d, st = measure_hadamard(st, jname, rng)
    return bprime, d, st


# ---------------------------------------------------------------------------
# Density operators and channels


@dataclass
class DensityOp:
    matrix: np.ndarray
    registers: list
    unnormalized: bool = False

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        self.registers = [r.copy() if isinstance(r, Register) else r for r in self.registers]
        D = int(np.prod([r.dim for r in self.registers]))
        if self.matrix.shape != (D, D):
            raise ValueError("matrix does not match register layout")
        if not self.unnormalized:
            if np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0) > 1e-10:
                raise ValueError("density operator is not hermitian")

    @classmethod
    def from_matrix(cls, M, names: Sequence[str]) -> "DensityOp":
        return cls(M, [qubit(n) for n in names])

    @classmethod
    def pure(cls, vec, names: Sequence[str]) -> "DensityOp":
        v = np.asarray(vec, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()), [qubit(n) for n in names])

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.registers]

    @property
    def dims(self) -> list[int]:
        return [r.dim for r in self.registers]

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def normalized(self) -> "DensityOp":
        return DensityOp(self.matrix / self.trace().real, self.registers)

    def _tensor(self) -> np.ndarray:
        return self.matrix.reshape(self.dims + self.dims)

    def partial_trace(self, keep: Sequence[str]) -> "DensityOp":
        return partial_trace(self, keep)

    def apply_unitary(self, U: np.ndarray, names: Sequence[str]) -> "DensityOp":
        return self.apply_kraus([U], names)

    def apply_kraus(self, kraus: Sequence[np.ndarray], names: Sequence[str]) -> "DensityOp":
        full = [embed_operator(K, self, names) for K in kraus]
        M = sum(K @ self.matrix @ K.conj().T for K in full)
        return DensityOp(M, self.registers, self.unnormalized)

    def reorder(self, order: Sequence[str]) -> "DensityOp":
        n = len(self.registers)
        perm = [self.names.index(o) for o in order]
        t = np.transpose(self._tensor(), perm + [p + n for p in perm])
        regs = [self.registers[p] for p in perm]
        D = self.matrix.shape[0]
        return DensityOp(t.reshape(D, D), regs, self.unnormalized)

    def diagonal_probabilities(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))


def embed_operator(K: np.ndarray, rho: DensityOp, names: Sequence[str]) -> np.ndarray:
    """Lift an operator on `names` (in that order) to the full layout of rho."""
    n = len(rho.registers)
    axes = [rho.names.index(x) for x in names]
    dims = rho.dims
    rest = [i for i in range(n) if i not in axes]
    dk = int(np.prod([dims[a] for a in axes]))
    dr = int(np.prod([dims[a] for a in rest])) if rest else 1
    full = np.kron(K, np.eye(dr))
    # full acts on order axes + rest; permute to the natural order
    order = axes + rest
    shp = [dims[a] for a in order]
    t = full.reshape(shp + shp)
    inv = np.argsort(order)
    t = np.transpose(t, list(inv) + [i + n for i in inv])
    D = dk * dr
    return t.reshape(D, D)


def partial_trace(op: DensityOp, keep: Sequence[str]) -> DensityOp:
    keep = list(keep)
    for k in keep:
        if k not in op.names:
            raise KeyError(f"no register {k!r}")
    n = len(op.registers)
    letters = "abcdefghijklmnopqrstuvwxyz"
    if 2 * n > len(letters):
        raise ResourceError("too many registers for partial trace")
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for i, r in enumerate(op.names):
        if r not in keep:
            col[i] = row[i]
    ko = [op.names.index(k) for k in keep]
    out = "".join(row[i] for i in ko) + "".join(col[i] for i in ko)
    t = np.einsum("".join(row) + "".join(col) + "->" + out, op._tensor())
    D = int(np.prod([op.dims[i] for i in ko])) if ko else 1
    return DensityOp(t.reshape(D, D), [op.registers[i] for i in ko], op.unnormalized)


@dataclass
class CPTPMap:
    kraus: list
    name: str = ""

    def __post_init__(self):
        self.kraus = [np.asarray(K, dtype=complex) for K in self.kraus]

    @property
    def dim(self) -> int:
        return self.kraus[0].shape[1]

    def completeness_error(self) -> float:
        acc = sum(K.conj().T @ K for K in self.kraus)
        return float(np.max(np.abs(acc - np.eye(self.dim))))

    def validate(self, tol: float = 1e-10) -> "CPTPMap":
        if self.completeness_error() > tol:
            raise ValueError(f"Kraus operators are not trace preserving ({self.completeness_error():.2g})")
        return self

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return sum(K @ rho @ K.conj().T for K in self.kraus)

    def superoperator(self) -> np.ndarray:
        return sum(np.kron(K, K.conj()) for K in self.kraus)


def unitary_map(U: np.ndarray, name: str = "") -> CPTPMap:
    return CPTPMap([U], name)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    M = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    Q, R = np.linalg.qr(M)
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def random_cptp(n_qubits: int, n_kraus: int, rng: np.random.Generator) -> CPTPMap:
    """Random channel from a Haar-like isometry split into Kraus blocks."""
    D = 2**n_qubits
    M = rng.normal(size=(n_kraus * D, D)) + 1j * rng.normal(size=(n_kraus * D, D))
    V, _ = np.linalg.qr(M)
    return CPTPMap([V[i * D:(i + 1) * D] for i in range(n_kraus)], "random")


def random_density(n_qubits: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    D = 2**n_qubits
    rank = rank or D
    G = rng.normal(size=(D, rank)) + 1j * rng.normal(size=(D, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho)


# ---------------------------------------------------------------------------
# Distances and distributions


def trace_distance(a, b) -> float:
    A = a.matrix if isinstance(a, DensityOp) else np.asarray(a)
    B = b.matrix if isinstance(b, DensityOp) else np.asarray(b)
    if A.shape != B.shape:
        raise ValueError("dimension mismatch")
    ev = np.linalg.eigvalsh((A - B + (A - B).conj().T) / 2)
    return float(0.5 * np.sum(np.abs(ev)))


def _aligned(p, q):
    if isinstance(p, dict) or isinstance(q, dict):
        keys = sorted(set(p) | set(q))
        return np.array([p.get(k, 0.0) for k in keys]), np.array([q.get(k, 0.0) for k in keys])
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("dimension mismatch")
    return p, q


def tv_distance(p, q) -> float:
    p, q = _aligned(p, q)
    return float(0.5 * np.sum(np.abs(p - q)))


def hellinger2(p, q) -> float:
    p, q = _aligned(p, q)
    return float(1 - np.sum(np.sqrt(p * q)))


def bitstring(bits: Sequence[int]) -> str:
    return "".join(str(int(b)) for b in bits)


def exact_measurement_distribution(obj, names: Sequence[str], basis: Sequence[int]) -> dict[str, float]:
    """Exact outcome distribution measuring qubits `names` in Standard(0)/Hadamard(1) bases."""
    if len(names) != len(basis):
        raise ValueError("one basis per qubit")
    if isinstance(obj, QState):
        st = obj
        for nm, h in zip(names, basis):
            if h:
                st = st.apply(H, [nm])
        rho = st.density(list(names))
    else:
        rho = obj
        for nm, h in zip(names, basis):
            if h:
                rho = rho.apply_unitary(H, [nm])
        rho = partial_trace(rho, list(names))
    p = np.real(np.diag(rho.matrix))
    p = np.clip(p, 0, None)
    tot = p.sum()
    labels = [r.labels for r in rho.registers]
    out = {}
    for idx, combo in enumerate(itertools.product(*labels)):
        if p[idx] > 0:
            out[bitstring(combo)] = float(p[idx] / tot)
    return out


# ---------------------------------------------------------------------------
# Pauli decomposition and the Z twirl

PAULI_XZ = {(x, z): np.linalg.matrix_power(X, x) @ np.linalg.matrix_power(Z, z) for x in (0, 1) for z in (0, 1)}


def pauli_components(B: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    """B = Σ_{x,z} X^x Z^z ⊗ B_{xz} on (first qubit) ⊗ (rest)."""
    D = B.shape[0] // 2
    B4 = B.reshape(2, D, 2, D)
    return {
        key: 0.5 * np.einsum("ca,aicj->ij", P.conj().T, B4) for key, P in PAULI_XZ.items()
    }


def recompose(components: dict[tuple[int, int], np.ndarray]) -> np.ndarray:
    return sum(np.kron(PAULI_XZ[k], v) for k, v in components.items())


def x_trivial_kraus(B: np.ndarray, keep_x: bool = False, flip_sign: bool = False) -> list[np.ndarray]:
    """Kraus operators B′_x = Σ_z Z^z ⊗ B_{xz} (optionally preceded by X^x)."""
    comps = pauli_components(B)
    out = []
    D = B.shape[0] // 2
    for x in (0, 1):
        Bp = np.zeros_like(B)
        for z in (0, 1):
            term = np.kron(PAULI_XZ[(0, z)], comps[(x, z)])
            if flip_sign and x == 1 and z == 0:
                term = -term
            Bp = Bp + term
        if keep_x:
            Bp = np.kron(PAULI_XZ[(x, 0)], np.eye(D)) @ Bp
        out.append(Bp)
    return out


def twirled_map(channel: CPTPMap) -> CPTPMap:
    """{(1/√2)(Z^r ⊗ I) B_τ (Z^r ⊗ I)} over r ∈ {0,1}."""
    D = channel.dim // 2
    Zr = [np.eye(2 * D), np.kron(Z, np.eye(D))]
    return CPTPMap([P @ K @ P / np.sqrt(2) for K in channel.kraus for P in Zr], "twirl")


def x_trivialized_map(channel: CPTPMap, keep_x: bool = True, flip_sign: bool = False) -> CPTPMap:
    return CPTPMap(
        [K2 for K in channel.kraus for K2 in x_trivial_kraus(K, keep_x, flip_sign)], "x-trivial"
    )


def hadamard_measure_first(rho: np.ndarray) -> np.ndarray:
    """Measure the first qubit in the Hadamard basis, keeping the outcome as |b⟩⟨b|."""
    D = rho.shape[0] // 2
    out = np.zeros_like(rho)
    for b in (0, 1):
        Pb = np.kron(np.outer(I2[b], I2[b]) @ H, np.eye(D))
        out = out + Pb @ rho @ Pb.conj().T
    return out


def z_twirl_check(channel: CPTPMap, trials: int, rng: np.random.Generator, flip_sign: bool = False) -> dict:
    """Max trace distance between twirled and X-trivialized channels (plain and measured)."""
    n_q = int(np.log2(channel.dim))
    lhs = twirled_map(channel)
    rhs = x_trivialized_map(channel, keep_x=True, flip_sign=flip_sign)
    rhs_meas = x_trivialized_map(channel, keep_x=False, flip_sign=flip_sign)
    decomp = max(float(np.max(np.abs(recompose(pauli_components(K)) - K))) for K in channel.kraus)
    dev = meas = 0.0
    for _ in range(trials):
        rho = random_density(n_q, rng)
        dev = max(dev, trace_distance(lhs(rho), rhs(rho)))
        meas = max(meas, trace_distance(hadamard_measure_first(lhs(rho)), hadamard_measure_first(rhs_meas(rho))))
    return {"map": dev, "measured": meas, "decomposition": decomp, "max": max(dev, meas, decomp)}


def commutes_with_standard_measurement(channel: CPTPMap, qubits: Sequence[int], n_qubits: int) -> float:
    """Deviation of M∘S from S∘M, M = dephasing of the listed qubits (on the superoperator)."""
    def dephase(idx):
        P0 = kron_all([np.diag([1, 0]) if i == idx else I2 for i in range(n_qubits)])
        P1 = kron_all([np.diag([0, 1]) if i == idx else I2 for i in range(n_qubits)])
        return CPTPMap([P0, P1])

    S = channel.superoperator()
    dev = 0.0
    for i in qubits:
        M = dephase(i).superoperator()
        dev = max(dev, float(np.max(np.abs(M @ S - S @ M))))
    return dev


def qubit_permutation(perm: Sequence[int]) -> np.ndarray:
    """Unitary sending qubit perm[i] of the input to position i of the output."""
    n = len(perm)
    D = 2**n
    P = np.zeros((D, D))
    for idx in range(D):
        bits = [(idx >> (n - 1 - i)) & 1 for i in range(n)]
        out = [bits[perm[i]] for i in range(n)]
        P[sum(b << (n - 1 - i) for i, b in enumerate(out)), idx] = 1
    return P


def x_trivialize_on(channel: CPTPMap, j: int, n_qubits: int, keep_x: bool = False) -> CPTPMap:
    """Drop the X components of every Kraus operator on qubit j (the map S_j)."""
    perm = [j] + [i for i in range(n_qubits) if i != j]
    P = qubit_permutation(perm)
    moved = CPTPMap([P @ K @ P.T for K in channel.kraus])
    triv = x_trivialized_map(moved, keep_x=keep_x)
    return CPTPMap([P.T @ K @ P for K in triv.kraus], f"{channel.name}-xtriv{j}")


def twirl_on(channel: CPTPMap, j: int, n_qubits: int) -> CPTPMap:
    Zj = kron_all([Z if i == j else I2 for i in range(n_qubits)])
    return CPTPMap(
        [P @ K @ P / np.sqrt(2) for K in channel.kraus for P in (np.eye(2**n_qubits), Zj)],
        f"{channel.name}-twirl{j}",
    )
