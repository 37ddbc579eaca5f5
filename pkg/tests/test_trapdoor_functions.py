import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvqc.errors import DecodeError, NotInvertible
from cvqc.lattice import centered, invert, load_preset, micro_params, mod
from cvqc.trapdoor_functions import (
    PublicKey,
    ShiftedGaussian,
    bits_to_int,
    chk,
    claw_of,
    decode_from_claw,
    density_f,
    density_f_prime,
    embed_dhat,
    g_set_member,
    gen_f,
    gen_g,
    int_to_bits,
    inv_g,
    j_inv,
    j_map,
    wraps_around,
)


@pytest.fixture(scope="module")
def toy():
    return load_preset("toy")


@settings(max_examples=100)
@given(st.sampled_from([5, 17, 83, 521]), st.lists(st.integers(0, 10**6), min_size=1, max_size=3))
def test_j_map_round_trip(q, xs):
    x = np.array(xs) % q
    bits = j_map(x, q)
    assert bits.size == x.size * (q - 1).bit_length()
    assert np.array_equal(j_inv(bits, q), x)
    assert np.array_equal(int_to_bits(bits_to_int(bits), bits.size), bits)


def test_j_map_is_lsb_first():
    assert j_map(np.array([6]), 17).tolist() == [0, 1, 1, 0, 0]


def test_j_inv_rejects_out_of_range_block():
    with pytest.raises(DecodeError):
        j_inv([1, 1, 1], 5)
    with pytest.raises(DecodeError):
        j_inv([1, 0], 5)


def test_embed_dhat_places_lsb():
    assert embed_dhat([1, 0, 1], 5).tolist() == [1, 0, 0, 0, 0, 0, 1, 0, 0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_claw_structure_at_toy(seed):
    p = load_preset("toy")
    rng = np.random.default_rng(seed)
    pk, td = gen_f(p, rng)
    b = int(rng.integers(0, 2))
    x = rng.integers(0, p.q, size=p.n)
    y = density_f_prime(p, pk, b, x).sample(rng)
    x0, x1 = claw_of(p, td, y)
    assert np.array_equal(mod(x0 - x1, p.q), mod(td.s, p.q))
    xb = x0 if b == 0 else x1
    assert np.array_equal(xb, x)
    assert chk(p, pk, b, x, y)


def test_claw_at_zero_error_both_branches_check(toy):
    rng = np.random.default_rng(7)
    for _ in range(20):
        pk, td = gen_f(toy, rng, zero_error=True)
        x = rng.integers(0, toy.q, size=toy.n)
        y = density_f_prime(toy, pk, 0, x).sample(rng)
        x0, x1 = claw_of(toy, td, y)
        assert chk(toy, pk, 0, x0, y) and chk(toy, pk, 1, x1, y)


def test_density_f_and_f_prime_agree_at_zero_error(toy):
    rng = np.random.default_rng(1)
    pk, td = gen_f(toy, rng, zero_error=True)
    x = rng.integers(0, toy.q, size=toy.n)
    for b in (0, 1):
        assert np.array_equal(density_f(toy, td, b, x).center, density_f_prime(toy, pk, b, x).center)


def test_shifted_gaussian_support_and_dense_agree():
    g = ShiftedGaussian(np.array([1, 4]), 0.75, 5)
    dense = g.dense()
    assert dense.sum() == pytest.approx(1.0)
    for y in g.support():
        assert dense[tuple(y)] == pytest.approx(g.pdf(y))


def test_g_supports_are_disjoint_exhaustively():
    p = micro_params()
    rng = np.random.default_rng(0)
    for _ in range(5):
        pk, td = gen_g(p, rng)
        owner = {}
        for b in (0, 1):
            for x in itertools.product(range(p.q), repeat=p.n):
                for y in density_f_prime(p, pk, b, np.array(x)).support():
                    key = tuple(int(v) for v in y)
                    assert owner.setdefault(key, (b, x)) == (b, x)
                    got_b, got_x = inv_g(p, td, y)
                    assert (got_b, tuple(got_x)) == (b, x)


def test_inv_g_outside_support_raises():
    p = micro_params()
    pk, td = gen_g(p, np.random.default_rng(2))
    covered = {
        tuple(int(v) for v in y)
        for b in (0, 1)
        for x in itertools.product(range(p.q), repeat=p.n)
        for y in density_f_prime(p, pk, b, np.array(x)).support()
    }
    outside = next(y for y in itertools.product(range(p.q), repeat=p.m) if y not in covered)
    with pytest.raises(NotInvertible):
        inv_g(p, td, np.array(outside))
    b, x = inv_g(p, td, mod(pk.A @ np.array([3]) + pk.v, p.q))
    assert b == 1 and x.tolist() == [3]


def test_injective_key_offset_is_far_from_the_lattice(toy):
    rng = np.random.default_rng(3)
    for _ in range(10):
        pk, td = gen_g(toy, rng)
        with pytest.raises(NotInvertible):
            invert(pk.A, td.mat, pk.v)


def test_chk_is_a_box_check(toy):
    pk = PublicKey(np.zeros((toy.m, toy.n), dtype=np.int64), np.zeros(toy.m, dtype=np.int64))
    y = np.full(toy.m, int(toy.B_P))
    assert chk(toy, pk, 0, np.zeros(toy.n), y)
    y[0] += 1
    assert not chk(toy, pk, 0, np.zeros(toy.n), y)


@settings(max_examples=60)
@given(st.sampled_from([5, 17]), st.integers(1, 2), st.data())
def test_decoding_identity_away_from_wraparound(q, n, data):
    x = np.array(data.draw(st.lists(st.integers(0, q - 1), min_size=n, max_size=n)))
    s = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    dhat = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    b = data.draw(st.integers(0, 1))
    xp = mod(x - (-1) ** b * s, q)
    val = decode_from_claw(x, xp, embed_dhat(dhat, q), q)
    if not wraps_around(x, s, b, q):
        assert val == int(dhat @ s) % 2


def test_wraparound_can_break_the_identity():
    q, s_, dhat = 5, np.array([1]), np.array([1])
    failures = [
        v for v in range(q)
        for b in (0, 1)
        if wraps_around(np.array([v]), s_, b, q)
        and decode_from_claw(np.array([v]), mod(np.array([v]) - (-1) ** b * s_, q), embed_dhat(dhat, q), q) != 1
    ]
    assert failures


def test_g_set_predicates(toy):
    _, td = gen_f(toy, np.random.default_rng(0))
    assert g_set_member("all", td, 0, np.zeros(1), np.zeros(10))
    assert not g_set_member("reject-zero", td, 0, np.zeros(1), np.zeros(10))
    with pytest.raises(ValueError):
        g_set_member("nope", td, 0, np.zeros(1), np.zeros(10))


def test_gen_f_secret_is_binary_and_noise_bounded(toy):
    rng = np.random.default_rng(9)
    for _ in range(20):
        pk, td = gen_f(toy, rng)
        assert set(td.s.tolist()) <= {0, 1}
        assert np.abs(centered(td.e, toy.q)).max() <= toy.B_V
        assert np.array_equal(pk.v, mod(pk.A @ td.s + td.e, toy.q))
