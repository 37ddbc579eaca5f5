import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvqc.errors import InputError
from cvqc.hamiltonian import (
    Term,
    XZHamiltonian,
    basis_from_terms,
    energy,
    ground_energy,
    load_hamiltonian,
    majority_probability,
    max_energy,
    mf_accept,
    p_acc,
    protocol_term_acceptance,
    qpip_experiment,
    rescale,
    run_qpip,
    sample_terms,
    shipped_hamiltonian,
    single_round_acceptance,
    zz_hamiltonian,
)
from cvqc.lattice import load_preset
from cvqc.quantum import random_density

TOY = load_preset("toy")


@st.composite
def hamiltonians(draw, max_qubits=3):
    n = draw(st.integers(1, max_qubits))
    n_terms = draw(st.integers(1, 4))
    terms = []
    for _ in range(n_terms):
        k = draw(st.integers(1, min(2, n)))
        qs = draw(st.lists(st.integers(0, n - 1), min_size=k, max_size=k, unique=True))
        ps = draw(st.lists(st.sampled_from("XZ"), min_size=k, max_size=k))
        c = draw(st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3))
        terms.append(Term(c, tuple(zip(qs, ps))))
    return XZHamiltonian(n, tuple(terms))


def test_validation_errors():
    with pytest.raises(InputError):
        XZHamiltonian(2, ())
    with pytest.raises(InputError):
        XZHamiltonian(2, (Term(1.0, ((0, "Y"),)),))
    with pytest.raises(InputError):
        XZHamiltonian(2, (Term(1.0, ((0, "X"), (0, "Z"))),))
    with pytest.raises(InputError):
        XZHamiltonian(2, (Term(1.0, ((0, "X"), (1, "Z"), (2, "Z"))),))
    with pytest.raises(InputError):
        XZHamiltonian(2, (Term(0.0, ((0, "X"),)),))


def test_json_round_trip_and_errors(tmp_path):
    H = XZHamiltonian(2, (Term(0.5, ((0, "X"), (1, "X"))), Term(-1.0, ((1, "Z"),))))
    path = tmp_path / "h.json"
    path.write_text(json.dumps(H.to_dict()))
    assert load_hamiltonian(path) == H
    with pytest.raises(InputError, match="not found"):
        load_hamiltonian(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(InputError):
        load_hamiltonian(bad)
    bad.write_text('{"n": 2}')
    with pytest.raises(InputError):
        load_hamiltonian(bad)


def test_shipped_zz():
    H = shipped_hamiltonian("zz")
    assert H == zz_hamiltonian()
    e0, v = ground_energy(H)
    assert e0 == pytest.approx(-1.0)
    assert p_acc(H, v) == pytest.approx(1.0)
    assert p_acc(H, np.array([1, 0, 0, 0])) == pytest.approx(0.0)
    with pytest.raises(InputError):
        shipped_hamiltonian("nope")


@settings(max_examples=40, deadline=None)
@given(hamiltonians(), st.integers(0, 2**31))
def test_rescaled_hamiltonian_is_affine_in_h(H, seed):
    Hr = rescale(H)
    N = H.norm1
    want = (np.eye(2**H.n_qubits) + H.matrix() / N) / 2
    assert np.allclose(Hr.matrix(), want)
    rho = random_density(H.n_qubits, np.random.default_rng(seed))
    assert 1 - np.trace(Hr.matrix() @ rho).real == pytest.approx(p_acc(H, rho), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(hamiltonians(), st.integers(0, 2**31))
def test_single_round_simulation_matches_formula(H, seed):
    rho = random_density(H.n_qubits, np.random.default_rng(seed))
    assert abs(single_round_acceptance(H, rho) - p_acc(H, rho)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(hamiltonians(), st.integers(0, 2**31))
def test_energy_bounds(H, seed):
    N = H.norm1
    a, vg = ground_energy(H)
    b, vm = max_energy(H)
    assert p_acc(H, vg) >= 0.5 - a / (2 * N) - 1e-9
    assert p_acc(H, vm) <= 0.5 - b / (2 * N) + 1e-9
    rho = random_density(H.n_qubits, np.random.default_rng(seed))
    assert 0.5 - b / (2 * N) - 1e-9 <= p_acc(H, rho) <= 0.5 - a / (2 * N) + 1e-9
    assert a - 1e-9 <= energy(H, rho) <= b + 1e-9


def test_majority_probability_matches_direct_sum():
    for k in (1, 4, 15):
        for p in (0.0, 0.3, 0.5, 0.9, 1.0):
            want = sum(math.comb(k, j) * p**j * (1 - p) ** (k - j) for j in range(k // 2 + 1, k + 1))
            assert majority_probability(p, k) == pytest.approx(want, abs=1e-12)


def test_basis_from_terms_layout():
    terms = [Term(1.0, ((0, "X"), (1, "Z"))), Term(1.0, ((1, "X"),))]
    h, conflicts = basis_from_terms(terms, 2)
    assert h == (1, 0, 0, 1) and conflicts == []
    h, conflicts = basis_from_terms(terms, 2, expand=False)
    assert h == (1, 1) and conflicts == [1]


def test_mf_accept_majority_rule():
    t = Term(1.0, ((0, "Z"), (1, "Z")))  # accept on product −1
    good, bad = [0, 1], [0, 0]
    assert mf_accept([t, t, t], good + good + bad, 2)
    assert not mf_accept([t, t, t], good + bad + bad, 2)
    assert not mf_accept([t, t], good + bad, 2)  # exactly half is not enough
    with pytest.raises(InputError):
        mf_accept([t], [0], 2)


def test_sample_terms_follows_weights():
    H = XZHamiltonian(1, (Term(3.0, ((0, "Z"),)), Term(-1.0, ((0, "X"),))))
    terms = sample_terms(rescale(H), 4000, np.random.default_rng(0))
    frac = sum(t.paulis[0][1] == "Z" for t in terms) / 4000
    assert abs(frac - 0.75) < 3 * math.sqrt(0.75 * 0.25 / 4000) + 1e-3


def test_protocol_term_acceptance_matches_formula_at_zero_error():
    H = XZHamiltonian(2, (Term(1.0, ((0, "Z"), (1, "Z"))), Term(0.5, ((0, "X"), (1, "X"))), Term(-0.3, ((1, "X"),))))
    _, v = ground_energy(H)
    assert protocol_term_acceptance(H, v, TOY, zero_error=True) == pytest.approx(p_acc(H, v), abs=1e-12)
    # noisy keys only ever lower the X-term acceptance toward 1/2
    assert protocol_term_acceptance(H, v, TOY) <= p_acc(H, v) + 1e-12


def test_qpip_ground_and_excited_provers():
    H = zz_hamiltonian()
    _, ground = ground_energy(H)
    rep = qpip_experiment(H, ground, 5, 40, TOY, seed=1, round_type="hadamard")
    assert rep["hadamard_accepted"] == 40 and rep["within_3sigma"]
    rep = qpip_experiment(H, np.array([1, 0, 0, 0]), 5, 40, TOY, seed=1, round_type="hadamard")
    assert rep["hadamard_accepted"] == 0 and rep["within_3sigma"]


def test_qpip_mixed_basis_hamiltonian_within_3_sigma():
    H = XZHamiltonian(1, (Term(1.0, ((0, "Z"),)), Term(1.0, ((0, "X"),))))
    _, v = ground_energy(H)
    rep = qpip_experiment(H, v, 5, 300, TOY, seed=2, round_type="hadamard")
    assert 0 < rep["expected_hadamard_rate"] < 1
    assert rep["within_3sigma"], rep


def test_qpip_test_rounds_always_accept_honest_prover():
    H = zz_hamiltonian()
    for seed in range(5):
        verdict, tr, stats = run_qpip(H, np.array([0, 1, 0, 0]), 3, TOY, seed, round_type="test")
        assert verdict and stats["round"] == "test" and tr.accepted
