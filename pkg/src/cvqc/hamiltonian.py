"""XZ Hamiltonians, the energy acceptance rule and the full proof-of-energy wiring."""

from __future__ import annotations

import json
import math
from importlib import resources
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import binom

from .errors import InputError, ResourceError
from .lattice import Params
from .protocol import (
    HADAMARD,
    RANDOM,
    TEST,
    exact_distribution,
    honest,
    honest_copies,
    models_for,
    run_session,
)
from .quantum import I2, X, Z, DensityOp, exact_measurement_distribution, kron_all

MAX_DIAG_QUBITS = 12
DEFAULT_KPRIME = 15
PAULI = {"X": X, "Z": Z}


@dataclass(frozen=True)
class Term:
    coeff: float
    paulis: tuple  # ((qubit index, "X" | "Z"), ...)

    @property
    def sign(self) -> int:
        return 1 if self.coeff > 0 else -1

    def qubits(self) -> list[int]:
        return [i for i, _ in self.paulis]

    def matrix(self, n: int) -> np.ndarray:
        ops = [I2] * n
        for i, p in self.paulis:
            ops[i] = PAULI[p]
        return kron_all(ops)


@dataclass(frozen=True)
class XZHamiltonian:
    n_qubits: int
    terms: tuple

    def __post_init__(self):
        if self.n_qubits < 1:
            raise InputError("n must be positive")
        if not self.terms or all(t.coeff == 0 for t in self.terms):
            raise InputError("Hamiltonian needs at least one nonzero coefficient")
        for t in self.terms:
            idx = [i for i, _ in t.paulis]
            if not 1 <= len(idx) <= 2:
                raise InputError("each term must have one or two non-identity factors")
            if len(set(idx)) != len(idx) or any(not 0 <= i < self.n_qubits for i in idx):
                raise InputError(f"bad qubit indices {idx}")
            if any(p not in PAULI for _, p in t.paulis):
                raise InputError("only X and Z factors are allowed")

    @property
    def norm1(self) -> float:
        return float(sum(abs(t.coeff) for t in self.terms))

    def matrix(self) -> np.ndarray:
        if self.n_qubits > MAX_DIAG_QUBITS:
            raise ResourceError(f"dense matrix limited to {MAX_DIAG_QUBITS} qubits")
        return sum(t.coeff * t.matrix(self.n_qubits) for t in self.terms)

    def scaled(self, c: float) -> "XZHamiltonian":
        return XZHamiltonian(self.n_qubits, tuple(Term(c * t.coeff, t.paulis) for t in self.terms))

    # JSON -----------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n_qubits,
            "terms": [{"coeff": t.coeff, "paulis": [[i, p] for i, p in t.paulis]} for t in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "XZHamiltonian":
        try:
            terms = tuple(
                Term(float(t["coeff"]), tuple((int(i), str(p)) for i, p in t["paulis"])) for t in d["terms"]
            )
            return cls(int(d["n"]), terms)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed Hamiltonian: {exc}") from exc


def load_hamiltonian(path) -> XZHamiltonian:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"Hamiltonian file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"Hamiltonian file {path} is not valid JSON: {exc}") from None
    return XZHamiltonian.from_dict(d)


def shipped_hamiltonian(name: str = "zz") -> XZHamiltonian:
    try:
        text = resources.files("cvqc.data").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise InputError(f"no shipped Hamiltonian named {name!r}") from None
    return XZHamiltonian.from_dict(json.loads(text))


def zz_hamiltonian() -> XZHamiltonian:
    return XZHamiltonian(2, (Term(1.0, ((0, "Z"), (1, "Z"))),))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RescaledHamiltonian:
    n_qubits: int
    probs: np.ndarray
    signs: tuple
    terms: tuple

    def projector(self, i: int) -> np.ndarray:
        """P_S = (I + sign(d_S)·S)/2."""
        S = self.terms[i].matrix(self.n_qubits)
        return (np.eye(S.shape[0]) + self.signs[i] * S) / 2

    def matrix(self) -> np.ndarray:
        return sum(p * self.projector(i) for i, p in enumerate(self.probs))


def rescale(H: XZHamiltonian) -> RescaledHamiltonian:
    live = [t for t in H.terms if t.coeff != 0]
    w = np.array([abs(t.coeff) for t in live])
    return RescaledHamiltonian(H.n_qubits, w / w.sum(), tuple(t.sign for t in live), tuple(live))


def ground_energy(H: XZHamiltonian) -> tuple[float, np.ndarray]:
    vals, vecs = np.linalg.eigh(H.matrix())
    return float(vals[0]), vecs[:, 0]


def max_energy(H: XZHamiltonian) -> tuple[float, np.ndarray]:
    vals, vecs = np.linalg.eigh(H.matrix())
    return float(vals[-1]), vecs[:, -1]


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityOp):
        return rho.matrix
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        return np.outer(rho, rho.conj()) / np.vdot(rho, rho).real
    return rho


def energy(H: XZHamiltonian, rho) -> float:
    R = _as_matrix(rho)
    if R.shape[0] != 2**H.n_qubits:
        raise ValueError("state dimension does not match the Hamiltonian")
    return float(np.real(np.trace(H.matrix() @ R)))


def p_acc(H: XZHamiltonian, rho) -> float:
    """1 − (Tr(Hρ) + Σ|d_S|)/(2Σ|d_S|)."""
    val = 1 - (energy(H, rho) + H.norm1) / (2 * H.norm1)
    if not -1e-9 <= val <= 1 + 1e-9:
        raise ValueError(f"acceptance probability {val} outside [0, 1]")
    return float(min(max(val, 0.0), 1.0))


def term_acceptance(term: Term, dist: dict[str, float], offset: int = 0) -> float:
    """P[product of the term's ±1 outcomes = −sign(d)] under a distribution over bitstrings."""
    idx = [offset + i for i in term.qubits()]
    tot = 0.0
    for k, p in dist.items():
        prod = (-1) ** sum(int(k[i]) for i in idx)
        if prod == -term.sign:
            tot += p
    return tot


def single_round_acceptance(H: XZHamiltonian, rho) -> float:
    """Exact acceptance of one round: draw S by π_S, measure ρ in S's basis, apply the sign rule."""
    R = DensityOp.from_matrix(_as_matrix(rho), [f"c{i}" for i in range(H.n_qubits)])
    Hr = rescale(H)
    tot = 0.0
    names = [f"c{i}" for i in range(H.n_qubits)]
    for p, t in zip(Hr.probs, Hr.terms):
        basis = [0] * H.n_qubits
        for i, pa in t.paulis:
            basis[i] = 1 if pa == "X" else 0
        tot += p * term_acceptance(t, exact_measurement_distribution(R, names, basis))
    return tot


def sample_terms(Hr: RescaledHamiltonian, kprime: int, rng: np.random.Generator) -> list[Term]:
    if kprime < 1:
        raise ValueError("k′ must be >= 1")
    idx = rng.choice(len(Hr.probs), size=kprime, p=Hr.probs)
    return [Hr.terms[i] for i in idx]


def basis_from_terms(terms: Sequence[Term], n_qubits: int, expand: bool = True) -> tuple[tuple, list]:
    """Basis choice for the sampled terms: block i of the expanded layout serves term i.

    Without expansion, qubits asked for both X and Z are reported as conflicts
    (and measured in the Hadamard basis).
    """
    if expand:
        h = [0] * (n_qubits * len(terms))
        for b, t in enumerate(terms):
            for i, p in t.paulis:
                h[b * n_qubits + i] = 1 if p == "X" else 0
        return tuple(h), []
    want: dict[int, set] = {}
    for t in terms:
        for i, p in t.paulis:
            want.setdefault(i, set()).add(p)
    h = tuple(1 if "X" in want.get(i, ()) else 0 for i in range(n_qubits))
    conflicts = sorted(i for i, s in want.items() if len(s) > 1)
    return h, conflicts


def mf_accept(terms: Sequence[Term], m: Sequence[int], n_qubits: int) -> bool:
    """Accept iff strictly more than half of the terms yield −sign(d_S) on their block."""
    if m is None or len(m) < n_qubits * len(terms):
        raise InputError("decoded bits do not cover every sampled term")
    good = 0
    for b, t in enumerate(terms):
        prod = (-1) ** sum(int(m[b * n_qubits + i]) for i in t.qubits())
        good += prod == -t.sign
    return good > len(terms) / 2


def majority_probability(p: float, kprime: int) -> float:
    """P[Bin(k′, p) > k′/2]."""
    return float(binom.sf(kprime // 2, kprime, p))


# ---------------------------------------------------------------------------


def run_qpip(
    H: XZHamiltonian, state, kprime: int, params: Params, seed=0, round_type: str = RANDOM,
    zero_error: bool = False,
):
    """One run: sample k′ terms, run the measurement protocol on ρ^{⊗k′}, apply the rule."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    term_ss, sess_ss = ss.spawn(2)
    terms = sample_terms(rescale(H), kprime, np.random.default_rng(term_ss))
    h, _ = basis_from_terms(terms, H.n_qubits)
    spec = honest_copies(state, kprime, label="qpip")
    tr = run_session(spec, h, round_type, params, sess_ss, zero_error)
    if tr.round == TEST:
        verdict = tr.accepted
    else:
        verdict = tr.accepted and mf_accept(terms, tr.m, H.n_qubits)
    stats = {"round": tr.round, "protocol_accept": tr.accepted, "terms": [t.paulis for t in terms]}
    return verdict, tr, stats


def protocol_term_acceptance(H: XZHamiltonian, state, params: Params, zero_error: bool = False) -> float:
    """Per-term acceptance through the exact protocol engine (includes dephasing when e ≠ 0)."""
    Hr = rescale(H)
    spec = honest(state)
    tot = 0.0
    for p, t in zip(Hr.probs, Hr.terms):
        h, _ = basis_from_terms([t], H.n_qubits)
        dist = exact_distribution(spec, h, models_for(h, params, zero_error))
        tot += p * term_acceptance(t, dist)
    return tot


def qpip_experiment(
    H: XZHamiltonian, state, kprime: int, trials: int, params: Params, seed=0, round_type: str = RANDOM,
    zero_error: bool = False,
) -> dict:
    counts = {TEST: [0, 0], HADAMARD: [0, 0]}
    for ss in np.random.SeedSequence(seed).spawn(trials):
        verdict, tr, _ = run_qpip(H, state, kprime, params, ss, round_type, zero_error)
        counts[tr.round][0] += 1
        counts[tr.round][1] += int(verdict)
    pa = p_acc(H, state)
    pt = protocol_term_acceptance(H, state, params, zero_error)
    expected = majority_probability(pt, kprime)
    n_h, acc_h = counts[HADAMARD]
    rate_h = acc_h / n_h if n_h else float("nan")
    sigma = math.sqrt(expected * (1 - expected) / n_h) if n_h else float("nan")
    e0, _ = ground_energy(H)
    return {
        "trials": trials,
        "kprime": kprime,
        "test_rounds": counts[TEST][0],
        "test_accepted": counts[TEST][1],
        "hadamard_rounds": n_h,
        "hadamard_accepted": acc_h,
        "hadamard_rate": rate_h,
        "p_acc": pa,
        "p_acc_protocol": float(pt),
        "expected_hadamard_rate": expected,
        "sigma": sigma,
        "within_3sigma": bool(n_h and abs(rate_h - expected) <= 3 * sigma + 1e-12),
        "energy": energy(H, state),
        "ground_energy": e0,
    }
