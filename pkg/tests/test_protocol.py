import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvqc.errors import InputError
from cvqc.lattice import load_preset, micro_params
from cvqc.protocol import (
    HADAMARD,
    RANDOM,
    TEST,
    Block,
    KeyModel,
    ProverSpec,
    Transcript,
    Verifier,
    attack_library,
    construct_underlying_state,
    distribution_of_state,
    estimate_distribution,
    exact_distribution,
    exact_distribution_by_enumeration,
    honest,
    honest_copies,
    input_state,
    models_for,
    parse_h,
    prover_from_name,
    read_transcripts,
    recompute_m,
    replay,
    run_session,
    seed_from_record,
    session_streams,
    twirled,
    verifier_keygen,
    write_transcripts,
    x_trivialized,
)
from cvqc.quantum import DensityOp, exact_measurement_distribution, tv_distance

TOY = load_preset("toy")
ATTACKS = sorted(attack_library(1))


def ideal(vector, h):
    n = int(np.log2(len(vector)))
    rho = DensityOp.pure(vector, [f"c{i}" for i in range(n)])
    return exact_measurement_distribution(rho, rho.names, list(parse_h(h)))


def test_parse_h():
    assert parse_h("0110") == (0, 1, 1, 0)
    assert parse_h([1, 0]) == (1, 0)
    for bad in ("", "012", "ab"):
        with pytest.raises(InputError):
            parse_h(bad)


def test_prover_names():
    assert prover_from_name("honest:bell").n_qubits == 2
    assert prover_from_name("attack:CZ:plus").blocks[0].n_aux == 1
    assert prover_from_name("trivial:rand2:plus").kind == "trivial"
    for bad in ("honest", "attack:nope:plus", "honest:nope", "x:y:z"):
        with pytest.raises(InputError):
            prover_from_name(bad)
    assert input_state("alpha=0.3")[0] == pytest.approx(np.sqrt(0.3))


def test_trivial_prover_rejects_non_commuting_attack():
    lib = attack_library(1)
    vec = np.kron(input_state("plus"), input_state("plus"))
    with pytest.raises(ValueError):
        ProverSpec("trivial", 1, [Block((0,), vec, 1, lib["rand2"])])


# --- sessions --------------------------------------------------------------


@pytest.mark.parametrize("h,prover", [("0", "honest:zero"), ("1", "honest:plus"), ("01", "honest:bell")])
def test_honest_test_rounds_accept(h, prover):
    spec = prover_from_name(prover)
    for seed in range(20):
        assert run_session(spec, h, TEST, TOY, seed).accepted


@pytest.mark.parametrize("prover,bit", [("honest:plus", 0), ("honest:minus", 1)])
def test_zero_error_hadamard_rounds_decode_exactly(prover, bit):
    spec = prover_from_name(prover)
    for seed in range(20):
        tr = run_session(spec, "1", HADAMARD, TOY, seed, zero_error=True)
        assert tr.accepted and tr.m == [bit]


def test_standard_basis_decoding_reads_the_committed_bit():
    for prover, bit in (("honest:zero", 0), ("honest:one", 1)):
        spec = prover_from_name(prover)
        for seed in range(10):
            assert run_session(spec, "0", HADAMARD, TOY, seed).m == [bit]


def test_sessions_are_deterministic_and_replay():
    spec = prover_from_name("attack:rand-channel:plus")
    a = run_session(spec, "1", RANDOM, TOY, 42)
    b = run_session(spec, "1", RANDOM, TOY, 42)
    assert a.to_jsonl() == b.to_jsonl()
    assert replay(a)["ok"]


def test_replay_detects_tampering():
    tr = run_session(prover_from_name("honest:zero"), "0", TEST, TOY, 3)
    recs = json.loads("[" + ",".join(tr.to_jsonl().splitlines()) + "]")
    recs[4]["payload"][0]["b"] ^= 1
    r = replay(Transcript.from_records(recs))
    assert r["keys_match"] and not r["verdict_match"] and not r["ok"]


def test_transcript_order_is_validated():
    tr = run_session(prover_from_name("honest:zero"), "0", TEST, TOY, 0)
    recs = tr.to_records()
    with pytest.raises(InputError):
        Transcript.from_records([recs[0], recs[2], recs[1]] + recs[3:])
    with pytest.raises(InputError):
        Transcript.from_records(recs[1:])


def test_transcript_file_round_trip(tmp_path):
    spec = prover_from_name("honest:bell")
    trs = [run_session(spec, "10", RANDOM, TOY, s) for s in range(4)]
    path = tmp_path / "t.jsonl"
    write_transcripts(path, trs, {"version": "x", "seed": 0})
    head, back = read_transcripts(path)
    assert head["seed"] == 0
    assert [t.to_jsonl() for t in back] == [t.to_jsonl() for t in trs]
    with pytest.raises(InputError):
        read_transcripts(tmp_path / "missing.jsonl")


def test_malformed_hadamard_answer_is_rejected_with_random_bit():
    rng = np.random.default_rng(0)
    ver = Verifier(TOY, (1,), rng, np.random.default_rng(1))
    ver.keygen()
    verdict = ver.decode_hadamard([np.zeros(TOY.m, dtype=np.int64)], [{"b": 0, "d": [0, 1]}])
    assert not verdict["accept"] and verdict["random_bits"] == [0] and verdict["m"][0] in (0, 1)


def test_recomputed_m_matches_verdict():
    spec = prover_from_name("attack:rand2:bell")
    for seed in range(10):
        tr = run_session(spec, "11", HADAMARD, TOY, seed)
        _, krng, _, _ = session_streams(seed_from_record(tr.session["seed"]))
        _, tds = verifier_keygen("11", TOY, krng)
        assert recompute_m(tr, tds, TOY) == tr.m


# --- exact engine ----------------------------------------------------------


def test_key_models():
    assert KeyModel.injective().components == ((1.0, True, 0.0),)
    avg = KeyModel.claw_free_average(TOY)
    assert sum(w for w, _, _ in avg.components) == pytest.approx(1.0)
    assert 0 < avg.components[0][2] < 1
    assert KeyModel.claw_free_average(TOY, zero_error=True).components[0][2] == 1.0


@pytest.mark.parametrize("prover,h", [("honest:zero", "0"), ("honest:plus", "1"), ("honest:bell", "01"),
                                      ("honest:bell", "11"), ("honest:minus", "1")])
def test_exact_engine_reproduces_ideal_measurement_at_zero_error(prover, h):
    spec = prover_from_name(prover)
    got = exact_distribution(spec, h, models_for(h, TOY, zero_error=True))
    assert tv_distance(got, ideal(spec.blocks[0].vector, h)) <= 1e-12


@pytest.mark.parametrize("prover,h", [("honest:plus", "1"), ("attack:HZH:plus", "1"), ("attack:rand2:bell", "10"),
                                      ("attack:rand-channel:plus", "0"), ("attack:CZ:bell", "11")])
def test_exact_engine_agrees_with_trapdoor_enumeration_at_micro(prover, h):
    p = micro_params()
    spec = prover_from_name(prover)
    rng = np.random.default_rng(11)
    for _ in range(3):
        keys, tds = verifier_keygen(h, p, rng)
        enum = exact_distribution_by_enumeration(spec, h, p, keys, tds)
        engine = exact_distribution(spec, h, models_for(h, p, trapdoors=tds))
        assert tv_distance(enum, engine) <= 1e-9


@pytest.mark.parametrize("prover,h", [("honest:plus", "1"), ("attack:HZH:plus", "1"), ("attack:CZ:bell", "10")])
def test_exact_engine_agrees_with_sampling(prover, h):
    spec = prover_from_name(prover)
    trials = 1500
    emp, info = estimate_distribution(spec, h, trials, TOY, seed=5)
    exact = exact_distribution(spec, h, models_for(h, TOY))
    for k, p in exact.items():
        sigma = np.sqrt(max(p * (1 - p), 1e-12) / trials)
        assert abs(emp.get(k, 0.0) - p) <= 4 * sigma + 1e-9
    assert info["trials"] == trials


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(ATTACKS), st.sampled_from(["plus", "zero", "minus", "alpha=0.2"]), st.sampled_from(["0", "1"]))
def test_hybrid_equalities_for_trivial_provers(attack, inp, h):
    spec = x_trivialized(prover_from_name(f"attack:{attack}:{inp}"))
    d_rho = distribution_of_state(construct_underlying_state(spec, TOY, h, "rho"), h)
    d_rho1 = distribution_of_state(construct_underlying_state(spec, TOY, h, "rho1"), h)
    d_rho2 = distribution_of_state(construct_underlying_state(spec, TOY, h, "rho2"), h)
    d_p = exact_distribution(spec, h, models_for(h, TOY))
    assert tv_distance(d_rho, d_rho1) <= 1e-9
    assert tv_distance(d_rho2, d_p) <= 1e-9


@pytest.mark.parametrize("attack", ATTACKS)
@pytest.mark.parametrize("h", ["00", "01", "10"])
def test_standard_positions_are_unaffected_by_x_components(attack, h):
    spec = prover_from_name(f"attack:{attack}:bell")
    models = models_for(h, TOY)
    base = exact_distribution(spec, h, models)
    for j, hj in enumerate(h):
        if hj == "0":
            assert tv_distance(base, exact_distribution(x_trivialized(spec, [j]), h, models)) <= 1e-9


@pytest.mark.parametrize("attack", ATTACKS)
def test_twirl_equals_x_trivialization_at_hadamard_position(attack):
    spec = prover_from_name(f"attack:{attack}:plus")
    models = models_for("1", TOY)
    a = exact_distribution(twirled(spec, 0), "1", models)
    b = exact_distribution(x_trivialized(spec, [0]), "1", models)
    assert tv_distance(a, b) <= 1e-9


def test_x_attack_at_standard_position_flips_nothing_but_the_bit():
    spec = prover_from_name("attack:X:zero")
    d = exact_distribution(spec, "0", models_for("0", TOY))
    # X after commitment does not change what the injective key recorded
    assert d == pytest.approx({"0": 1.0})


def test_honest_multi_block_layout():
    spec = honest_copies(input_state("plus"), 3)
    assert spec.n_qubits == 3 and len(spec.blocks) == 3
    got = exact_distribution(spec, "101", models_for("101", TOY, zero_error=True))
    assert tv_distance(got, {"000": 0.5, "010": 0.5}) <= 1e-12


def test_honest_spec_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        honest(np.ones(3), n_qubits=2)
