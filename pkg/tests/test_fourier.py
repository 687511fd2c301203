import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnlskam.errors import DivergentSeries
from dnlskam.fourier import (TorusFourier, average_and_tilde, compose_along, d_omega, evaluate_many,
                             exp_series, gamma_truncate, merge_index_sets, mul, random_fourier,
                             reciprocal_one_plus, sup_norm_bound, weighted_norm)


def grid(d, n=7, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 2 * math.pi, (n, d))


series = st.builds(
    lambda seed, d, K, m: random_fourier(np.random.default_rng(seed), tuple(range(1, d + 1)), K, m, 1.0, 0.3,
                                         real=False),
    st.integers(0, 10_000), st.integers(1, 3), st.integers(0, 5), st.integers(1, 8))


def test_constant_over_empty_index_set():
    c = TorusFourier.constant(2.5)
    assert c.nterms == 1 and c.coefficient(()) == 2.5


def test_stored_harmonic_beyond_cutoff_is_rejected():
    with pytest.raises(ValueError):
        TorusFourier((1,), 1, [[2]], [1.0])


def test_duplicate_keys_are_summed():
    f = TorusFourier((1, 2), 2, [[1, 0], [1, 0], [0, -1]], [1.0, 2.0, 3.0])
    assert f.coefficient((1, 0)) == 3.0 and f.nterms == 2


@given(series, series)
def test_product_matches_pointwise_product(f, g):
    # oracle: multiply the function values on random points
    idx = merge_index_sets(f.index_set, g.index_set)
    cutoff = f.cutoff + g.cutoff
    h, dropped = mul(f, g, cutoff)
    assert dropped == 0.0
    pts = grid(len(idx))
    lhs = evaluate_many(h, pts)
    rhs = evaluate_many(f.embed(idx), pts) * evaluate_many(g.embed(idx), pts)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


@given(series, series, series)
def test_product_is_associative_and_commutative(f, g, h):
    c = f.cutoff + g.cutoff + h.cutoff
    fg, _ = mul(f, g, c)
    gf, _ = mul(g, f, c)
    left, _ = mul(fg, h, c)
    gh, _ = mul(g, h, c)
    right, _ = mul(f, gh, c)
    idx = left.index_set
    pts = grid(len(idx), seed=1)
    assert np.allclose(evaluate_many(fg, pts[:, :len(fg.index_set)]),
                       evaluate_many(gf.embed(fg.index_set), pts[:, :len(fg.index_set)]), atol=1e-12)
    assert np.allclose(evaluate_many(left, pts), evaluate_many(right.embed(idx), pts), atol=1e-11)


@given(series, st.integers(0, 5), st.floats(0.0, 1.0))
def test_truncation_tail_is_exact_majorant(f, K, s):
    kept, tail = gamma_truncate(f, K, s)
    assert kept.max_order() <= K
    rest = f - kept.with_cutoff(f.cutoff) if K <= f.cutoff else f - kept
    assert tail == pytest.approx(sup_norm_bound(rest, s), rel=1e-12, abs=1e-300)


@given(series)
def test_average_plus_tilde_restores(f):
    avg, tilde = average_and_tilde(f)
    assert not any(np.all(tilde.keys == 0, axis=1))
    back = tilde + TorusFourier.constant(avg, f.index_set, f.cutoff)
    assert np.allclose((back - f).coeffs, 0)


@given(series)
def test_sup_norm_majorant_dominates_samples(f):
    pts = grid(f.dim, 20)
    assert np.abs(evaluate_many(f, pts)).max() <= sup_norm_bound(f, 0.0) * (1 + 1e-12) + 1e-300


def test_weighted_norm_weights_harmonics():
    f = TorusFourier((1,), 2, [[2]], [1.0])
    assert weighted_norm(f, 0.5, 3.0) == pytest.approx(math.exp(1.0) * 2 ** 3)


def test_d_omega_matches_finite_difference():
    rng = np.random.default_rng(3)
    f = random_fourier(rng, (1, 2), 4, 6)
    w = np.array([1.0, math.sqrt(2)])
    x = rng.uniform(0, 6, 2)
    h = 1e-5
    fd = (evaluate_many(f, (x + h * w)[None]) - evaluate_many(f, (x - h * w)[None]))[0] / (2 * h)
    assert abs(evaluate_many(d_omega(f, w), x[None])[0] - fd) < 1e-7


def test_reciprocal_one_plus():
    rng = np.random.default_rng(4)
    a = random_fourier(rng, (1,), 2, 3, 0.1)
    inv, _ = reciprocal_one_plus(a, 30)
    pts = grid(1)
    assert np.allclose(evaluate_many(inv, pts) * (1 + evaluate_many(a, pts)), 1, atol=1e-13)
    with pytest.raises(DivergentSeries):
        reciprocal_one_plus(TorusFourier((1,), 1, [[1]], [1.5]), 10)


def test_exp_series_and_composition():
    rng = np.random.default_rng(5)
    c = random_fourier(rng, (1, 2), 2, 4, 0.05)
    e, _ = exp_series(c, 24)
    pts = grid(2)
    assert np.allclose(evaluate_many(e, pts), np.exp(evaluate_many(c, pts)), atol=1e-13)
    f = random_fourier(rng, (1, 2), 3, 5, 1.0)
    w = np.array([1.0, 0.5])
    comp, _ = compose_along(f, c, w, 30)
    shifted = pts + evaluate_many(c, pts)[:, None].real * w + 1j * evaluate_many(c, pts)[:, None].imag * w
    assert np.allclose(evaluate_many(comp, pts), evaluate_many(f, shifted), atol=1e-12)


def test_json_round_trip():
    f = random_fourier(np.random.default_rng(6), (-1, 1), 3, 5, real=False)
    g = TorusFourier.from_json(f.to_json())
    assert g.index_set == f.index_set and np.array_equal(g.keys, f.keys) and np.array_equal(g.coeffs, f.coeffs)


def test_real_symmetric_generator():
    f = random_fourier(np.random.default_rng(7), (1, 2), 3, 6)
    assert f.is_real_symmetric(1e-15)
    assert np.allclose(evaluate_many(f, grid(2)).imag, 0, atol=1e-13)
