"""The LWE claw-free family F and injective family G, the J encoding and decoding helpers."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DecodeError, GenerationError, NotInvertible
from .lattice import (
    MAX_TRAP_TRIES,
    MatrixTrapdoor,
    Params,
    bits_per_coord,
    centered,
    gauss_table,
    gen_trap,
    invert,
    mod,
    sample_gaussian_vec,
)

CLAW_FREE = "claw_free"
INJECTIVE = "injective"


@dataclass(frozen=True)
class PublicKey:
    """Wire form of a function key: (A, v) with v = As+e (claw-free) or v = u (injective)."""

    A: np.ndarray
    v: np.ndarray

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PublicKey":
        return cls(np.asarray(d["A"], dtype=np.int64), np.asarray(d["v"], dtype=np.int64))


@dataclass(frozen=True)
class Trapdoor:
    kind: str
    pk: PublicKey
    mat: MatrixTrapdoor
    s: np.ndarray | None = None
    e: np.ndarray | None = None
    attempts: int = 1

    @property
    def is_claw_free(self) -> bool:
        return self.kind == CLAW_FREE


# ---------------------------------------------------------------------------
# Key generation


def gen_f(params: Params, rng: np.random.Generator, zero_error: bool = False) -> tuple[PublicKey, Trapdoor]:
    """Claw-free key (A, As+e), s binary, e truncated Gaussian at B_V."""
    mat = gen_trap(params.n, params.m, params.q, rng, params.C_T)
    s = rng.integers(0, 2, size=params.n)
    if zero_error:
        e = np.zeros(params.m, dtype=np.int64)
    else:
        e = sample_gaussian_vec(params.m, params.B_V, params.q, rng)
    pk = PublicKey(mat.A, mod(mat.A @ s + e, params.q))
    return pk, Trapdoor(CLAW_FREE, pk, mat, s=s, e=e)


def gen_g(params: Params, rng: np.random.Generator) -> tuple[PublicKey, Trapdoor]:
    """Injective key (A, u) with u far from every lattice point A·s."""
    mat = gen_trap(params.n, params.m, params.q, rng, params.C_T)
    for attempt in range(1, MAX_TRAP_TRIES + 1):
        u = rng.integers(0, params.q, size=params.m)
        try:
            invert(mat.A, mat, u)
        except NotInvertible:
            pk = PublicKey(mat.A, u)
            return pk, Trapdoor(INJECTIVE, pk, mat, attempts=attempt)
    raise GenerationError(f"u rejected {MAX_TRAP_TRIES} times; parameters are pathological")


# ---------------------------------------------------------------------------
# Densities


@dataclass(frozen=True)
class ShiftedGaussian:
    """D_{Z_q^m, B}(y − center)."""

    center: np.ndarray
    B: float
    q: int

    def pdf(self, y) -> np.ndarray | float:
        y = np.asarray(y, dtype=np.int64)
        t = gauss_table(self.B, self.q)
        val = np.prod(t.pdf(y - self.center), axis=-1)
        return float(val) if np.ndim(val) == 0 else val

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return mod(self.center + sample_gaussian_vec(len(self.center), self.B, self.q, rng), self.q)

    def support(self) -> np.ndarray:
        """All points of the support box, one per row."""
        vals = gauss_table(self.B, self.q).values
        offs = np.array(list(itertools.product(vals, repeat=len(self.center))), dtype=np.int64)
        return mod(self.center[None, :] + offs, self.q)

    def dense(self) -> np.ndarray:
        """Density over all of Z_q^m as an m-dimensional array."""
        full = gauss_table(self.B, self.q).full()
        out = np.ones((), dtype=float)
        for c in self.center:
            out = np.multiply.outer(out, np.roll(full, int(c)))
        return out


def density_f(params: Params, td: Trapdoor, b: int, x) -> ShiftedGaussian:
    """f_{k,b}(x): center A·x + b·A·s (needs the trapdoor's s)."""
    A = td.pk.A
    center = mod(A @ mod(x, params.q) + b * (A @ td.s), params.q)
    return ShiftedGaussian(center, params.B_P, params.q)


def density_f_prime(params: Params, pk: PublicKey, b: int, x) -> ShiftedGaussian:
    """f′_{k,b}(x) (and g_{k,b}(x) for injective keys): center A·x + b·v, public key only."""
    center = mod(pk.A @ mod(x, params.q) + b * pk.v, params.q)
    return ShiftedGaussian(center, params.B_P, params.q)


density_g = density_f_prime


def chk(params: Params, pk: PublicKey, b: int, x, y) -> bool:
    """True iff every coordinate of y − A·x − b·v is at most B_P in absolute value."""
    r = centered(np.asarray(y) - pk.A @ mod(x, params.q) - b * pk.v, params.q)
    return bool(np.all(np.abs(r) <= params.B_P))


# ---------------------------------------------------------------------------
# Inversion


def inv_f(params: Params, td: Trapdoor, b: int, y) -> np.ndarray:
    """Preimage x_b of y under the claw-free key; raises NotInvertible."""
    A = td.pk.A
    shift = mod(b * (A @ td.s), params.q)
    x, _ = invert(A, td.mat, mod(np.asarray(y) - shift, params.q))
    return x


def inv_g(params: Params, td: Trapdoor, y) -> tuple[int, np.ndarray]:
    """Unique (b, x) with y in the support of g_{k,b}(x); raises NotInvertible."""
    hits = []
    for b in (0, 1):
        try:
            x, _ = invert(td.pk.A, td.mat, mod(np.asarray(y) - b * td.pk.v, params.q))
        except NotInvertible:
            continue
        if chk(params, td.pk, b, x, y):
            hits.append((b, x))
    if len(hits) != 1:
        raise NotInvertible("no branch inverts" if not hits else "both branches invert")
    return hits[0]


def claw_of(params: Params, td: Trapdoor, y) -> tuple[np.ndarray, np.ndarray]:
    """(x0, x1) with x0 − x1 = s."""
    return inv_f(params, td, 0, y), inv_f(params, td, 1, y)


# ---------------------------------------------------------------------------
# The J encoding


def j_map(x, q: int) -> np.ndarray:
    """LSB-first binary encoding, ⌈log2 q⌉ bits per coordinate."""
    k = bits_per_coord(q)
    x = mod(x, q)
    return ((x[:, None] >> np.arange(k)[None, :]) & 1).astype(np.uint8).ravel()


def j_inv(bits, q: int) -> np.ndarray:
    k = bits_per_coord(q)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % k:
        raise DecodeError(f"bit length {bits.size} is not a multiple of {k}")
    vals = (bits.reshape(-1, k) << np.arange(k)[None, :]).sum(axis=1)
    if np.any(vals >= q):
        raise DecodeError("block value out of range for Z_q")
    return vals


def bits_to_int(bits) -> int:
    """Pack a bit array (position i carries weight 2^i)."""
    return int(sum(int(b) << i for i, b in enumerate(np.asarray(bits).ravel())))


def int_to_bits(v: int, width: int) -> np.ndarray:
    return np.array([(v >> i) & 1 for i in range(width)], dtype=np.uint8)


def j_label(x, q: int) -> int:
    return bits_to_int(j_map(x, q))


def embed_dhat(dhat, q: int) -> np.ndarray:
    """Place dhat_i at the least significant bit of block i."""
    k = bits_per_coord(q)
    dhat = np.asarray(dhat, dtype=np.uint8)
    out = np.zeros(dhat.size * k, dtype=np.uint8)
    out[::k] = dhat
    return out


def hadamard_decode_bit(params: Params, td: Trapdoor, y, d) -> int:
    """d·(J(x0) ⊕ J(x1)) mod 2 for the claw of y."""
    x0, x1 = claw_of(params, td, y)
    return decode_from_claw(x0, x1, d, params.q)


def decode_from_claw(x0, x1, d, q: int) -> int:
    diff = j_map(x0, q) ^ j_map(x1, q)
    return int(np.dot(np.asarray(d, dtype=np.int64), diff) % 2)


def wraps_around(x, s, b: int, q: int) -> bool:
    """Whether x − (−1)^b s leaves [0, q) in some coordinate before reduction."""
    raw = np.asarray(x, dtype=np.int64) - (-1) ** b * np.asarray(s, dtype=np.int64)
    return bool(np.any((raw < 0) | (raw >= q)))


# ---------------------------------------------------------------------------
# Membership predicate for the G_{k,b,x} sets

GSetPredicate = Callable[[Trapdoor, int, np.ndarray, np.ndarray], bool]

G_SET_PREDICATES: dict[str, GSetPredicate] = {
    "all": lambda td, b, x, d: True,
    "reject-zero": lambda td, b, x, d: bool(np.any(np.asarray(d))),
}


def g_set_member(config: str, td: Trapdoor, b: int, x, d) -> bool:
    try:
        pred = G_SET_PREDICATES[config]
    except KeyError:
        raise ValueError(f"unknown G-set predicate {config!r}") from None
    return pred(td, b, x, d)
