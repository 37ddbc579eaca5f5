"""The measurement protocol: verifier, provers, transcripts and exact distributions."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import InputError, NotInvertible
from .lattice import Params, gauss_table, hellinger2_shift
from .quantum import (
    CZ,
    H,
    I2,
    X,
    Z,
    CPTPMap,
    DensityOp,
    QState,
    apply_u_j,
    bitstring,
    commutes_with_standard_measurement,
    commit_amplitudes,
    commit_post_state,
    exact_measurement_distribution,
    hadamard_outcome_distribution,
    kron_all,
    measure_hadamard,
    measure_qubit_hadamard,
    partial_trace,
    qubit,
    qubit_permutation,
    random_cptp,
    random_unitary,
    samp_commit,
    twirl_on,
    unitary_map,
    x_trivialize_on,
)
from .trapdoor_functions import (
    INJECTIVE,
    PublicKey,
    Trapdoor,
    chk,
    claw_of,
    decode_from_claw,
    density_f_prime,
    g_set_member,
    gen_f,
    gen_g,
    int_to_bits,
    inv_g,
    j_map,
)

TEST = "test"
HADAMARD = "hadamard"
RANDOM = "random"


def parse_h(h) -> tuple[int, ...]:
    if isinstance(h, str):
        if not h or set(h) - {"0", "1"}:
            raise InputError(f"basis choice must be a nonempty 0/1 string, got {h!r}")
        return tuple(int(c) for c in h)
    return tuple(int(b) for b in h)


# ---------------------------------------------------------------------------
# Prover specifications


@dataclass
class Block:
    """Committed qubits `qubits` (global indices) plus n_aux auxiliary qubits.

    `vector` is the initial state over (block qubits in listed order, aux qubits);
    `attack` is a CPTP map on the same qubits, applied before Hadamard answers.
    """

    qubits: tuple[int, ...]
    vector: np.ndarray
    n_aux: int = 0
    attack: CPTPMap | None = None

    @property
    def size(self) -> int:
        return len(self.qubits) + self.n_aux


@dataclass
class ProverSpec:
    kind: str  # honest | characterized | trivial
    n_qubits: int
    blocks: list
    label: str = ""

    def __post_init__(self):
        seen = sorted(q for b in self.blocks for q in b.qubits)
        if seen != list(range(self.n_qubits)):
            raise ValueError("blocks must partition the committed qubits")
        for b in self.blocks:
            b.vector = np.asarray(b.vector, dtype=complex)
            if b.vector.size != 2**b.size:
                raise ValueError("block vector has the wrong dimension")
            b.vector = b.vector / np.linalg.norm(b.vector)
            if b.attack is not None:
                b.attack.validate()
                if b.attack.dim != 2**b.size:
                    raise ValueError("attack acts on the wrong number of qubits")
        if self.kind == "trivial":
            for b in self.blocks:
                if b.attack is not None:
                    dev = commutes_with_standard_measurement(b.attack, range(len(b.qubits)), b.size)
                    if dev > 1e-9:
                        raise ValueError(f"attack does not commute with standard measurement ({dev:.2g})")


def honest(vector, n_qubits: int | None = None, label: str = "") -> ProverSpec:
    v = np.asarray(vector, dtype=complex)
    n = n_qubits or int(np.log2(v.size))
    return ProverSpec("honest", n, [Block(tuple(range(n)), v)], label)


def honest_copies(vector, copies: int, label: str = "") -> ProverSpec:
    """ρ^{⊗copies} as independent blocks (used by the QPIP layout)."""
    v = np.asarray(vector, dtype=complex)
    n = int(np.log2(v.size))
    blocks = [Block(tuple(range(i * n, (i + 1) * n)), v) for i in range(copies)]
    return ProverSpec("honest", n * copies, blocks, label)


def characterized(vector, attack: CPTPMap, n_qubits: int, n_aux: int = 0, label: str = "") -> ProverSpec:
    return ProverSpec("characterized", n_qubits, [Block(tuple(range(n_qubits)), vector, n_aux, attack)], label)


def x_trivialized(spec: ProverSpec, qubits: Sequence[int] | None = None) -> ProverSpec:
    """Replace each block's attack by its X-trivialized version on the listed qubits."""
    blocks = []
    for b in spec.blocks:
        att = b.attack
        if att is not None:
            targets = range(len(b.qubits)) if qubits is None else [b.qubits.index(q) for q in qubits if q in b.qubits]
            for j in targets:
                att = x_trivialize_on(att, j, b.size)
        blocks.append(Block(b.qubits, b.vector, b.n_aux, att))
    kind = "trivial" if qubits is None else spec.kind
    return ProverSpec(kind, spec.n_qubits, blocks, spec.label + "+xtriv")


def twirled(spec: ProverSpec, qubit_index: int) -> ProverSpec:
    blocks = []
    for b in spec.blocks:
        att = b.attack
        if att is not None and qubit_index in b.qubits:
            att = twirl_on(att, b.qubits.index(qubit_index), b.size)
        blocks.append(Block(b.qubits, b.vector, b.n_aux, att))
    return ProverSpec(spec.kind, spec.n_qubits, blocks, spec.label + "+twirl")


# named inputs and attacks --------------------------------------------------

INPUTS = {
    "zero": np.array([1, 0]),
    "one": np.array([0, 1]),
    "plus": np.array([1, 1]) / np.sqrt(2),
    "minus": np.array([1, -1]) / np.sqrt(2),
    "bell": np.array([1, 0, 0, 1]) / np.sqrt(2),
    "zz-ground": np.array([0, 1, 0, 0]),  # |01⟩
    "zerozero": np.array([1, 0, 0, 0]),
}


def input_state(name: str) -> np.ndarray:
    if name.startswith("alpha="):
        p0 = float(name.split("=", 1)[1])
        if not 0 <= p0 <= 1:
            raise InputError("alpha probability must lie in [0, 1]")
        return np.array([np.sqrt(p0), np.sqrt(1 - p0)])
    try:
        return INPUTS[name].astype(complex)
    except KeyError:
        raise InputError(f"unknown input state {name!r}; known: {sorted(INPUTS)} or alpha=<p0>") from None


ATTACK_SEED = 20240607


def attack_library(n_qubits: int = 1) -> dict[str, CPTPMap]:
    """Attacks on (committed qubits, one auxiliary qubit); the target is committed qubit 0."""
    n = n_qubits + 1

    def on_first(U):
        return kron_all([U] + [I2] * (n - 1))

    rng = np.random.default_rng(ATTACK_SEED)
    U2 = random_unitary(4, rng)
    aux = n - 1
    lib = {
        "I": unitary_map(np.eye(2**n), "I"),
        "X": unitary_map(on_first(X), "X"),
        "Z": unitary_map(on_first(Z), "Z"),
        "HZH": unitary_map(on_first(H @ Z @ H), "HZH"),
        "CZ": unitary_map(_two_qubit(CZ, 0, aux, n), "CZ"),
        "rand2": unitary_map(_two_qubit(U2, 0, aux, n), "rand2"),
        "rand-channel": CPTPMap(random_cptp(n, 3, rng).kraus, "rand-channel"),
    }
    return lib


def _two_qubit(U: np.ndarray, i: int, j: int, n: int) -> np.ndarray:
    """Embed a two-qubit operator acting on qubits (i, j) of n."""
    perm = [i, j] + [k for k in range(n) if k not in (i, j)]
    P = qubit_permutation(perm)
    return P.T @ np.kron(U, np.eye(2 ** (n - 2))) @ P


def prover_from_name(name: str, n_qubits: int | None = None) -> ProverSpec:
    """honest:<input> | attack:<attack>:<input> | trivial:<attack>:<input>."""
    parts = name.split(":")
    if parts[0] == "honest" and len(parts) == 2:
        v = input_state(parts[1])
        return honest(v, label=name)
    if parts[0] in ("attack", "trivial") and len(parts) == 3:
        v = input_state(parts[2])
        nq = int(np.log2(v.size))
        lib = attack_library(nq)
        if parts[1] not in lib:
            raise InputError(f"unknown attack {parts[1]!r}; known: {sorted(lib)}")
        spec = characterized(np.kron(v, np.array([1, 1]) / np.sqrt(2)), lib[parts[1]], nq, 1, label=name)
        return x_trivialized(spec) if parts[0] == "trivial" else spec
    raise InputError(f"cannot parse prover {name!r}")


# ---------------------------------------------------------------------------
# Verifier


@dataclass
class Verifier:
    params: Params
    h: tuple
    key_rng: np.random.Generator
    coin_rng: np.random.Generator
    zero_error: bool = False
    gset: str = "all"
    keys: list = field(default_factory=list)
    trapdoors: list = field(default_factory=list)

    def keygen(self) -> list[PublicKey]:
        self.keys, self.trapdoors = verifier_keygen(self.h, self.params, self.key_rng, self.zero_error)
        return self.keys

    def choose_round(self, requested: str) -> str:
        if requested == RANDOM:
            return TEST if self.coin_rng.integers(0, 2) == 0 else HADAMARD
        if requested not in (TEST, HADAMARD):
            raise InputError(f"unknown round type {requested!r}")
        return requested

    def check_test(self, ys, answers) -> dict:
        per = []
        for pk, y, ans in zip(self.keys, ys, answers):
            try:
                ok = chk(self.params, pk, int(ans["b"]), np.asarray(ans["x"]), y)
            except (KeyError, ValueError, TypeError):
                ok = False
            per.append(bool(ok))
        return {"per_qubit": per, "accept": all(per), "m": None, "random_bits": []}

    def decode_hadamard(self, ys, answers) -> dict:
        per, m, coins = [], [], []
        w = self.params.w
        for i, (td, y, ans) in enumerate(zip(self.trapdoors, ys, answers)):
            ok, bit = True, None
            if td.kind == INJECTIVE:
                try:
                    bit, _ = inv_g(self.params, td, y)
                except NotInvertible:
                    ok = False
            else:
                try:
                    d = np.asarray(ans["d"], dtype=np.int64)
                    if d.size != w or set(np.unique(d)) - {0, 1}:
                        raise ValueError("malformed d")
                    x0, x1 = claw_of(self.params, td, y)
                    if not (g_set_member(self.gset, td, 0, x0, d) and g_set_member(self.gset, td, 1, x1, d)):
                        ok = False
                    else:
                        bit = int(ans["b"]) ^ decode_from_claw(x0, x1, d, self.params.q)
                except (NotInvertible, KeyError, ValueError, TypeError):
                    ok = False
            if not ok:
                bit = int(self.coin_rng.integers(0, 2))
                coins.append(i)
            per.append(ok)
            m.append(int(bit))
        return {"per_qubit": per, "accept": all(per), "m": m, "random_bits": coins}


def verifier_keygen(h, params: Params, rng: np.random.Generator, zero_error: bool = False):
    """gen_g where h_i = 0, gen_f where h_i = 1; returns (public keys, trapdoors)."""
    keys, tds = [], []
    for hi in parse_h(h):
        pk, td = gen_f(params, rng, zero_error) if hi else gen_g(params, rng)
        keys.append(pk)
        tds.append(td)
    return keys, tds


# ---------------------------------------------------------------------------
# Sampled prover


class ProverSession:
    """Runs a ProverSpec through one protocol session with sampled measurements."""
    def __init__(self, spec: ProverSpec, params: Params, rng: np.random.Generator, commit_mode: str = "auto"):
        self.spec, self.params, self.rng, self.mode = spec, params, rng, commit_mode
        self.states: list[QState] = []

    @staticmethod
    def _names(block: Block):
        return [f"c{q}" for q in block.qubits], [f"a{block.qubits[0]}_{j}" for j in range(block.n_aux)]

    def commit(self, keys: Sequence[PublicKey]) -> list[np.ndarray]:
        ys: list = [None] * self.spec.n_qubits
        self.states = []
        for block in self.spec.blocks:
            cn, an = self._names(block)
            st = QState(block.vector, [qubit(nm) for nm in cn] + [qubit(nm, "aux") for nm in an])
            for qi, nm in zip(block.qubits, cn):
                st, y = samp_commit(self.params, keys[qi], st, nm, f"x{qi}", self.rng, self.mode)
                ys[qi] = y
            self.states.append(st)
        return ys

    def test_answers(self) -> list[dict]:
        out: list = [None] * self.spec.n_qubits
        for block, st in zip(self.spec.blocks, self.states):
            for qi in block.qubits:
                b, st = st.measure(f"c{qi}", self.rng)
                x, st = st.measure(f"x{qi}", self.rng)
                out[qi] = {"b": int(b), "x": [int(v) for v in x]}
        return out

    def hadamard_answers(self) -> list[dict]:
        out: list = [None] * self.spec.n_qubits
        w = self.params.w
        for block, st in zip(self.spec.blocks, self.states):
            cn, an = self._names(block)
            for qi in block.qubits:
                st = apply_u_j(st, f"x{qi}", self.params.q)
            if block.attack is not None:
                st = _apply_channel_sampled(st, block.attack, cn + an, self.rng)
            for qi in block.qubits:
                b, st = measure_qubit_hadamard(st, f"c{qi}", self.rng)
                d, st = measure_hadamard(st, f"x{qi}", self.rng)
                out[qi] = {"b": int(b), "d": [int(v) for v in int_to_bits(d, w)]}
        return out


def _apply_channel_sampled(st: QState, ch: CPTPMap, names, rng) -> QState:
    """Quantum-trajectory application of a channel: pick Kraus K with prob ‖Kψ‖²."""
    branches = [st.apply(K, names) for K in ch.kraus]
    p = np.array([b.norm() ** 2 for b in branches])
    i = int(rng.choice(len(p), p=p / p.sum()))
    out = branches[i]
    return QState(out.amps / out.norm(), out.registers)


# ---------------------------------------------------------------------------
# Transcripts


@dataclass
class Transcript:
    session: dict
    messages: list

    @property
    def verdict(self) -> dict:
        return self.messages[-1]["payload"]

    @property
    def accepted(self) -> bool:
        return bool(self.verdict["accept"])

    @property
    def round(self) -> str:
        return self.messages[2]["payload"]["round"]

    @property
    def m(self):
        return self.verdict["m"]

    def to_records(self) -> list[dict]:
        return [{"session": self.session}] + self.messages

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_records()) + "\n"

    @classmethod
    def from_records(cls, records: list[dict]) -> "Transcript":
        if not records or "session" not in records[0]:
            raise InputError("transcript must start with a session record")
        msgs = records[1:]
        order = ["keys", "y", "round", "answers", "verdict"]
        if [r.get("type") for r in msgs] != order:
            raise InputError("transcript messages out of order")
        return cls(records[0]["session"], msgs)


def _msg(seq, direction, typ, payload):
    return {"seq": seq, "direction": direction, "type": typ, "payload": payload}


def session_streams(seed):
    """(verifier keys, verifier coins, prover) generators from a session seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    kv, cv, pv = ss.spawn(3)
    return ss, np.random.default_rng(kv), np.random.default_rng(cv), np.random.default_rng(pv)


def _seed_record(ss: np.random.SeedSequence) -> dict:
    return {"entropy": int(ss.entropy), "spawn_key": list(ss.spawn_key)}


def seed_from_record(rec: dict) -> np.random.SeedSequence:
    return np.random.SeedSequence(rec["entropy"], spawn_key=tuple(rec["spawn_key"]))


def run_session(
    spec: ProverSpec,
    h,
    round_type: str,
    params: Params,
    seed=0,
    zero_error: bool = False,
    gset: str = "all",
    commit_mode: str = "auto",
) -> Transcript:
    h = parse_h(h)
    if len(h) != spec.n_qubits:
        raise InputError(f"basis choice has {len(h)} bits, prover holds {spec.n_qubits} qubits")
    ss, krng, crng, prng = session_streams(seed)
    ver = Verifier(params, h, krng, crng, zero_error, gset)
    prover = ProverSession(spec, params, prng, commit_mode)
    keys = ver.keygen()
    msgs = [_msg(0, "V->P", "keys", [k.to_dict() for k in keys])]
    ys = prover.commit(keys)
    msgs.append(_msg(1, "P->V", "y", [y.tolist() for y in ys]))
    rnd = ver.choose_round(round_type)
    msgs.append(_msg(2, "V->P", "round", {"round": rnd}))
    answers = prover.test_answers() if rnd == TEST else prover.hadamard_answers()
    msgs.append(_msg(3, "P->V", "answers", answers))
    verdict = ver.check_test(ys, answers) if rnd == TEST else ver.decode_hadamard(ys, answers)
    msgs.append(_msg(4, "V", "verdict", verdict))
    session = {
        "version": __version__,
        "params": params.to_dict(),
        "params_hash": params.digest(),
        "h": bitstring(h),
        "requested_round": round_type,
        "seed": _seed_record(ss),
        "zero_error": zero_error,
        "gset": gset,
        "prover": spec.label,
    }
    return Transcript(session, msgs)


def replay(tr: Transcript) -> dict:
    """Re-derive the verifier's keys and verdict from the recorded seed and answers."""
    sess = tr.session
    params = Params.from_dict(sess["params"], validate=False)
    h = parse_h(sess["h"])
    _, krng, crng, _ = session_streams(seed_from_record(sess["seed"]))
    ver = Verifier(params, h, krng, crng, sess["zero_error"], sess["gset"])
    keys = ver.keygen()
    recorded = [PublicKey.from_dict(k) for k in tr.messages[0]["payload"]]
    keys_match = all(
        np.array_equal(a.A, b.A) and np.array_equal(a.v, b.v) for a, b in zip(keys, recorded)
    ) and len(keys) == len(recorded)
    rnd = ver.choose_round(sess["requested_round"])
    ys = [np.asarray(y, dtype=np.int64) for y in tr.messages[1]["payload"]]
    answers = tr.messages[3]["payload"]
    verdict = ver.check_test(ys, answers) if rnd == TEST else ver.decode_hadamard(ys, answers)
    return {
        "keys_match": keys_match,
        "round_match": rnd == tr.round,
        "verdict_match": verdict == tr.verdict,
        "verdict": verdict,
        "ok": keys_match and rnd == tr.round and verdict == tr.verdict,
    }


def recompute_m(tr: Transcript, trapdoors: Sequence[Trapdoor], params: Params) -> list[int]:
    """Independent m_i = b′_i ⊕ d_i·(J(x0)⊕J(x1)) from the transcript (claw-free positions)."""
    out = []
    for td, y, ans in zip(trapdoors, tr.messages[1]["payload"], tr.messages[3]["payload"]):
        if td.kind == INJECTIVE:
            out.append(inv_g(params, td, np.asarray(y))[0])
            continue
        x0, x1 = claw_of(params, td, np.asarray(y))
        diff = [int(a) ^ int(b) for a, b in zip(j_map(x0, params.q), j_map(x1, params.q))]
        out.append(int(ans["b"]) ^ (sum(int(d) * v for d, v in zip(ans["d"], diff)) % 2))
    return out


# ---------------------------------------------------------------------------
# Exact distributions


@dataclass(frozen=True)
class KeyModel:
    """Effect of one key on the y-averaged committed state.

    components: (weight, labeled, bc). `labeled` means the preimage register
    distinguishes the two branches (claw-free with s ≠ 0, or injective);
    `bc` is the coherence Σ_y √(f′_0 f′_1) between branches.
    """

    components: tuple

    @classmethod
    def injective(cls) -> "KeyModel":
        return cls(((1.0, True, 0.0),))

    @classmethod
    def from_trapdoor(cls, params: Params, td: Trapdoor) -> "KeyModel":
        if td.kind == INJECTIVE:
            return cls.injective()
        bc = 1.0 - hellinger2_shift(td.e, params.B_P, params.q)
        return cls(((1.0, bool(np.any(td.s)), bc),))

    @classmethod
    def claw_free_average(cls, params: Params, zero_error: bool = False) -> "KeyModel":
        """Average over gen_f: s uniform binary, e i.i.d. truncated Gaussian at B_V."""
        if zero_error:
            bc = 1.0
        else:
            full = gauss_table(params.B_P, params.q).full()
            tv = gauss_table(params.B_V, params.q)
            per = sum(
                p * float(np.sqrt(full * np.roll(full, int(t))).sum()) for t, p in zip(tv.values, tv.probs)
            )
            bc = per**params.m
        p0 = 2.0**-params.n
        return cls(((p0, False, bc), (1 - p0, True, bc)))


def _label_isometry(nb: int, labeled: Sequence[bool], n_aux: int) -> np.ndarray:
    """|b, a⟩ ↦ |b, ℓ = b (labeled qubits), a⟩; layout (c..., ℓ..., aux...)."""
    lab_idx = [i for i in range(nb) if labeled[i]]
    L = len(lab_idx)
    Da = 2**n_aux
    V = np.zeros((2**nb * 2**L * Da, 2**nb * Da))
    for b in range(2**nb):
        bits = [(b >> (nb - 1 - i)) & 1 for i in range(nb)]
        lab = 0
        for i in lab_idx:
            lab = (lab << 1) | bits[i]
        for a in range(Da):
            V[(b * 2**L + lab) * Da + a, b * Da + a] = 1
    return V


def _gram_mask(nb: int, bcs: Sequence[float], L: int, n_aux: int) -> np.ndarray:
    m = np.ones((1, 1))
    for bc in bcs:
        m = np.kron(m, np.array([[1, bc], [bc, 1]]))
    return np.kron(m, np.ones((2**L * 2**n_aux,) * 2))


def _block_post_commit(block: Block, labeled: Sequence[bool], bcs: Sequence[float]) -> DensityOp:
    """y-averaged state after committing every qubit of the block, before answers."""
    nb = len(block.qubits)
    V = _label_isometry(nb, labeled, block.n_aux)
    rho = np.outer(block.vector, block.vector.conj())
    L = sum(labeled)
    M = (V @ rho @ V.T) * _gram_mask(nb, bcs, L, block.n_aux)
    regs = (
        [qubit(f"c{q}") for q in block.qubits]
        + [qubit(f"l{q}") for q, lb in zip(block.qubits, labeled) if lb]
        + [qubit(f"a{j}", "aux") for j in range(block.n_aux)]
    )
    return DensityOp(M, regs)


def _apply_attack(rho: DensityOp, block: Block) -> DensityOp:
    if block.attack is None:
        return rho
    names = [f"c{q}" for q in block.qubits] + [f"a{j}" for j in range(block.n_aux)]
    return rho.apply_kraus(block.attack.kraus, names)


def _block_decoded_distribution(rho: DensityOp, block: Block, h, labeled) -> dict[str, float]:
    """Distribution of the verifier's decoded bits for the block's qubits."""
    names, basis, roles = [], [], []
    for q, lb in zip(block.qubits, labeled):
        if h[q] == 0:
            names.append(f"l{q}")  # injective: recorded branch
            basis.append(0)
            roles.append(("std", q))
        else:
            names.append(f"c{q}")
            basis.append(1)
            if lb:
                names.append(f"l{q}")
                basis.append(1)
            roles.append(("had", q, lb))
    raw = exact_measurement_distribution(rho, names, basis)
    out: dict[str, float] = {}
    for key, p in raw.items():
        pos, bits = 0, []
        for role in roles:
            if role[0] == "std":
                bits.append(int(key[pos]))
                pos += 1
            else:
                b = int(key[pos])
                pos += 1
                if role[2]:
                    b ^= int(key[pos])
                    pos += 1
                bits.append(b)
        k = "".join(map(str, bits))
        out[k] = out.get(k, 0.0) + p
    return out


def _combine(parts: list[tuple[tuple[int, ...], dict[str, float]]], n: int) -> dict[str, float]:
    dist = {"": 1.0}
    order: list[int] = []
    for qubits, d in parts:
        new = {}
        for k1, p1 in dist.items():
            for k2, p2 in d.items():
                new[k1 + k2] = new.get(k1 + k2, 0.0) + p1 * p2
        dist = new
        order += list(qubits)
    out = {}
    for k, p in dist.items():
        bits = [""] * n
        for pos, q in enumerate(order):
            bits[q] = k[pos]
        key = "".join(bits)
        out[key] = out.get(key, 0.0) + p
    return {k: v for k, v in out.items() if v > 1e-15}


def _mixture_over_keys(models: Sequence[KeyModel], qubits: Sequence[int]):
    """Yield (weight, labeled list, bc list) for every combination of key components."""
    for combo in itertools.product(*[models[q].components for q in qubits]):
        w = float(np.prod([c[0] for c in combo]))
        yield w, [c[1] for c in combo], [c[2] for c in combo]


def exact_distribution(spec: ProverSpec, h, models: Sequence[KeyModel]) -> dict[str, float]:
    """Exact D_{P,h} over decoded bits m (default all-true G-set; perfect provers accept always).

    `models[i]` must be injective where h_i = 0 and claw-free where h_i = 1.
    """
    h = parse_h(h)
    for q, hi in enumerate(h):
        injective = models[q].components == KeyModel.injective().components
        if injective != (hi == 0):
            raise ValueError("key model kind must match the basis choice")
    parts = []
    for block in spec.blocks:
        acc: dict[str, float] = {}
        for w, labeled, bcs in _mixture_over_keys(models, block.qubits):
            rho = _apply_attack(_block_post_commit(block, labeled, bcs), block)
            for k, p in _block_decoded_distribution(rho, block, h, labeled).items():
                acc[k] = acc.get(k, 0.0) + w * p
        parts.append((block.qubits, acc))
    return _combine(parts, spec.n_qubits)


def models_for(h, params: Params, zero_error: bool = False, trapdoors: Sequence[Trapdoor] | None = None):
    """Key models for basis choice h: from concrete trapdoors, or averaged over key generation."""
    if trapdoors is not None:
        return [KeyModel.from_trapdoor(params, td) for td in trapdoors]
    return [KeyModel.claw_free_average(params, zero_error) if hi else KeyModel.injective() for hi in parse_h(h)]


def underlying_state(
    spec: ProverSpec, models: Sequence[KeyModel], skip_decode: Sequence[int] = ()
) -> DensityOp:
    """The state ρ extracted from a prover: commit with the given keys, apply the attack,
    Hadamard-measure each preimage register and apply Z^{d·(J(x0)⊕J(x1))} to its committed
    qubit (except positions in skip_decode), then trace out everything but the committed qubits.
    """
    rhos = []
    for block in spec.blocks:
        acc = None
        for w, labeled, bcs in _mixture_over_keys(models, block.qubits):
            rho = _apply_attack(_block_post_commit(block, labeled, bcs), block)
            for q, lb in zip(block.qubits, labeled):
                if not lb:
                    continue
                decode = q not in skip_decode
                kraus = []
                for c in (0, 1):
                    bra = (H[c:c + 1, :])  # ⟨c|H
                    zc = np.linalg.matrix_power(Z, c) if decode else I2
                    kraus.append(np.kron(zc, bra))
                rho = _remove_label(rho, q, kraus)
            rho = partial_trace(rho, [f"c{q}" for q in block.qubits])
            acc = w * rho.matrix if acc is None else acc + w * rho.matrix
        rhos.append(DensityOp(acc, [qubit(f"c{q}") for q in block.qubits]))
    out = rhos[0]
    for r in rhos[1:]:
        out = DensityOp(np.kron(out.matrix, r.matrix), out.registers + r.registers)
    return out.reorder([f"c{q}" for q in range(spec.n_qubits)])


def _remove_label(rho: DensityOp, q: int, kraus) -> DensityOp:
    """Apply Kraus maps from (c_q, l_q) to c_q, removing the label register."""
    names = rho.names
    rho = rho.reorder([f"c{q}", f"l{q}"] + [n for n in names if n not in (f"c{q}", f"l{q}")])
    rest_regs = rho.registers[2:]
    Dr = int(np.prod([r.dim for r in rest_regs])) if rest_regs else 1
    M = sum(np.kron(K, np.eye(Dr)) @ rho.matrix @ np.kron(K, np.eye(Dr)).conj().T for K in kraus)
    out = DensityOp(M, [rho.registers[0]] + rest_regs)
    return out.reorder([n for n in names if n != f"l{q}"])


def construct_underlying_state(
    spec: ProverSpec, params: Params, h=None, variant: str = "rho", zero_error: bool = False,
    trapdoors: Sequence[Trapdoor] | None = None,
) -> DensityOp:
    """ρ (all claw-free keys), ρ_h^(1) (no decode where h_i = 0) or ρ_h^(2) (injective keys there).

    With `trapdoors` (all claw-free) the concrete keys are used at every position
    except where ρ_h^(2) swaps in injective keys; otherwise keys are averaged.
    """
    n = spec.n_qubits
    if trapdoors is not None:
        base = [KeyModel.from_trapdoor(params, td) for td in trapdoors]
    else:
        base = [KeyModel.claw_free_average(params, zero_error)] * n
    if variant == "rho":
        return underlying_state(spec, base)
    h = parse_h(h)
    std = [i for i, hi in enumerate(h) if hi == 0]
    if variant == "rho1":
        return underlying_state(spec, base, skip_decode=std)
    if variant == "rho2":
        models = [KeyModel.injective() if i in std else base[i] for i in range(n)]
        return underlying_state(spec, models, skip_decode=std)
    raise ValueError(f"unknown variant {variant!r}")


def distribution_of_state(rho: DensityOp, h) -> dict[str, float]:
    h = parse_h(h)
    return exact_measurement_distribution(rho, [f"c{q}" for q in range(len(h))], list(h))


def estimate_distribution(
    spec: ProverSpec, h, trials: int, params: Params, seed=0, zero_error: bool = False,
    gset: str = "all", conditioned: bool = False,
) -> tuple[dict[str, float], dict]:
    """Empirical distribution of decoded m over Hadamard rounds (optionally only accepted ones)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    counts: dict[str, int] = {}
    accepted = 0
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for ss in root.spawn(trials):
        tr = run_session(spec, h, HADAMARD, params, ss, zero_error, gset)
        accepted += tr.accepted
        if conditioned and not tr.accepted:
            continue
        k = bitstring(tr.m)
        counts[k] = counts.get(k, 0) + 1
    tot = sum(counts.values())
    dist = {k: c / tot for k, c in counts.items()} if tot else {}
    return dist, {"trials": trials, "accepted": accepted, "counted": tot}


def support_is_valid(state: QState, params: Params, keys, ys, qubits) -> bool:
    """Every basis component with nonzero amplitude carries a CHK-valid (b, x) for its y."""
    for qi in qubits:
        c, x = state.axis(f"c{qi}"), state.axis(f"x{qi}")
        t = np.moveaxis(state.amps, [c, x], [0, 1])
        mass = np.sum(np.abs(t.reshape(t.shape[0], t.shape[1], -1)) ** 2, axis=2)
        for b in range(t.shape[0]):
            for j, lab in enumerate(state.register(f"x{qi}").labels):
                if mass[b, j] > 1e-20 and not chk(params, keys[qi], state.register(f"c{qi}").labels[b], np.array(lab), ys[qi]):
                    return False
    return True


def _y_support(params: Params, pk: PublicKey) -> list[tuple]:
    ys = set()
    for b in (0, 1):
        for x in itertools.product(range(params.q), repeat=params.n):
            ys.update(map(tuple, density_f_prime(params, pk, b, np.array(x)).support()))
    return sorted(ys)


def _y_probability(params, pk, state: QState, qname: str, y) -> float:
    a = state.axis(qname)
    w = [float(np.sum(np.abs(np.take(state.amps, b, axis=a)) ** 2)) for b in (0, 1)]
    tot = sum(w[b] * amp**2 for b, _, amp in commit_amplitudes(params, pk, y))
    return tot / params.q**params.n


def exact_distribution_by_enumeration(
    spec: ProverSpec, h, params: Params, keys: Sequence[PublicKey], trapdoors: Sequence[Trapdoor]
) -> dict[str, float]:
    """D_{P,h} by enumerating every commitment string and every Hadamard outcome class,
    decoding with the verifier's trapdoors. Only feasible when supports are tiny."""
    h = parse_h(h)
    parts = []
    for block in spec.blocks:
        cn, an = ProverSession._names(block)
        start = QState(block.vector, [qubit(nm) for nm in cn] + [qubit(nm, "aux") for nm in an])
        acc: dict[str, float] = {}

        def measure(st: QState, qs: list, weight: float, bits: list, ys: dict):
            if not qs:
                k = "".join(map(str, bits))
                acc[k] = acc.get(k, 0.0) + weight
                return
            qi, rest = qs[0], qs[1:]
            td, y = trapdoors[qi], ys[qi]
            if h[qi] == 0:
                measure(st, rest, weight, bits + [inv_g(params, td, np.array(y))[0]], ys)
                return
            x0, x1 = claw_of(params, td, np.array(y))
            sth = st.apply(H, [f"c{qi}"])
            for bi in range(sth.register(f"c{qi}").dim):
                p = float(np.sum(np.abs(np.take(sth.amps, bi, axis=sth.axis(f"c{qi}"))) ** 2))
                if p < 1e-15:
                    continue
                post = sth.collapse(f"c{qi}", bi)
                bprime = post.register(f"c{qi}").labels[0]
                reg = post.register(f"x{qi}")
                slices = np.moveaxis(post.amps, post.axis(f"x{qi}"), 0)
                outcomes, _, _ = hadamard_outcome_distribution(reg.labels, slices, reg.width)
                for d_rep, pd, rest_amps in outcomes:
                    if pd < 1e-15:
                        continue
                    nxt = QState(
                        np.expand_dims(rest_amps / np.linalg.norm(rest_amps), post.axis(f"x{qi}")),
                        _collapsed_regs(post, f"x{qi}", d_rep),
                    )
                    m = bprime ^ decode_from_claw(x0, x1, int_to_bits(d_rep, reg.width), params.q)
                    measure(nxt, rest, weight * p * pd, bits + [m], ys)

        def commit(st: QState, idx: int, weight: float, ys: dict):
            if idx == len(block.qubits):
                for qi in block.qubits:
                    st = apply_u_j(st, f"x{qi}", params.q)
                branches = [(1.0, st)]
                if block.attack is not None:
                    branches = []
                    for K in block.attack.kraus:
                        b = st.apply(K, cn + an)
                        nrm = b.norm()
                        if nrm > 1e-12:
                            branches.append((nrm**2, QState(b.amps / nrm, b.registers)))
                for pw, bst in branches:
                    measure(bst, list(block.qubits), weight * pw, [], ys)
                return
            qi = block.qubits[idx]
            for y in _y_support(params, keys[qi]):
                py = _y_probability(params, keys[qi], st, f"c{qi}", y)
                if py < 1e-15:
                    continue
                post = commit_post_state(params, keys[qi], st, f"c{qi}", f"x{qi}", np.array(y))
                commit(post, idx + 1, weight * py, {**ys, qi: y})

        commit(start, 0, 1.0, {})
        parts.append((block.qubits, acc))
    return _combine(parts, spec.n_qubits)


def _collapsed_regs(st: QState, name: str, label):
    regs = [r.copy() for r in st.registers]
    regs[st.axis(name)].labels = [label]
    return regs


# ---------------------------------------------------------------------------
# Transcript files


def write_transcripts(path, transcripts: Sequence[Transcript], header: dict) -> None:
    """Line-delimited JSON: one header line, then each session's records in order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for tr in transcripts:
            fh.write(tr.to_jsonl())


def read_transcripts(path) -> tuple[dict, list[Transcript]]:
    try:
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except FileNotFoundError:
        raise InputError(f"transcript file not found: {path}") from None
    try:
        records = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise InputError(f"transcript {path} is not valid JSON lines: {exc}") from None
    header = {}
    if records and "header" in records[0]:
        header = records.pop(0)["header"]
    groups: list[list[dict]] = []
    for r in records:
        if "session" in r:
            groups.append([r])
        elif not groups:
            raise InputError("transcript record precedes any session record")
        else:
            groups[-1].append(r)
    return header, [Transcript.from_records(g) for g in groups]
