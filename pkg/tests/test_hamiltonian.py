import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnlskam.errors import DegeneratePair
from dnlskam.hamiltonian import (AnalyticityWindow, Caps, HamiltonianPoly, ModeLayout, NormalForm, PhasePoint,
                                 check_momentum_mass, derivative, evaluate, lipschitz_seminorm,
                                 poisson_bracket, product, split_blocks, taylor_truncate_R, truncate,
                                 vf_majorant, vf_norm)

LAYOUT = ModeLayout(2)
TANGENT = (1,)
NORMAL = (-2, -1, 2)
BIG = Caps(degree=20, harmonic=20)
WINDOW = AnalyticityWindow(0.3, 0.5)


def random_poly(seed, nterms=5, max_deg=3):
    rng = np.random.default_rng(seed)
    terms = []
    for _ in range(nterms):
        k = {1: int(rng.integers(-2, 3))}
        l = {1: int(rng.integers(0, 2))}
        alpha = {j: int(rng.integers(0, 2)) for j in NORMAL}
        beta = {j: int(rng.integers(0, 2)) for j in NORMAL}
        while sum(alpha.values()) + sum(beta.values()) > max_deg:
            j = NORMAL[int(rng.integers(len(NORMAL)))]
            alpha[j] = 0
            beta[j] = 0
        terms.append((k, l, alpha, beta, complex(rng.normal(), rng.normal())))
    return HamiltonianPoly.from_terms(LAYOUT, TANGENT, terms, BIG, WINDOW)


def random_point(seed):
    rng = np.random.default_rng(seed)
    M = LAYOUT.M
    c = lambda: 0.3 * (rng.normal(size=M) + 1j * rng.normal(size=M)) + 0.5
    return PhasePoint(rng.uniform(0, 6, M).astype(complex), c(), c(), c())


def fd_derivative(P, pt, var, j, h=1e-5):
    """Central difference of the point evaluation; exact up to O(h^2) for polynomials."""
    col = LAYOUT.col(j)

    def shifted(delta):
        arrs = {name: getattr(pt, name).copy() for name in ("x", "y", "z", "zbar")}
        arrs[var][col] += delta
        return evaluate(P, PhasePoint(**arrs))

    return (shifted(h) - shifted(-h)) / (2 * h)


def bracket_oracle(F, G, pt):
    """Finite-difference evaluation of the bracket with the 2i normal factor."""
    total = 0j
    for j in TANGENT:
        total += fd_derivative(F, pt, "x", j) * fd_derivative(G, pt, "y", j)
        total -= fd_derivative(F, pt, "y", j) * fd_derivative(G, pt, "x", j)
    for j in NORMAL:
        total += 2j * (fd_derivative(F, pt, "z", j) * fd_derivative(G, pt, "zbar", j)
                       - fd_derivative(F, pt, "zbar", j) * fd_derivative(G, pt, "z", j))
    return total


seeds = st.integers(0, 100_000)


@given(seeds, seeds, seeds)
def test_bracket_matches_finite_difference_oracle(a, b, c):
    F, G = random_poly(a), random_poly(b)
    pt = random_point(c)
    B, dropped = poisson_bracket(F, G, BIG)
    assert dropped == 0.0
    ref = bracket_oracle(F, G, pt)
    assert abs(evaluate(B, pt) - ref) <= 1e-6 * (1 + abs(ref))


@given(seeds, seeds)
def test_bracket_is_antisymmetric(a, b):
    F, G = random_poly(a), random_poly(b)
    assert (poisson_bracket(F, G, BIG)[0] + poisson_bracket(G, F, BIG)[0]).max_abs_diff(F.zero()) < 1e-12


@given(seeds, seeds, seeds)
def test_jacobi_identity(a, b, c):
    F, G, K = random_poly(a, 3, 2), random_poly(b, 3, 2), random_poly(c, 3, 2)
    br = lambda u, v: poisson_bracket(u, v, BIG)[0]
    total = br(F, br(G, K)) + br(G, br(K, F)) + br(K, br(F, G))
    scale = max(1.0, float(np.abs(br(F, br(G, K)).coeffs).max(initial=0)))
    assert total.max_abs_diff(F.zero()) < 1e-10 * scale


@given(seeds, seeds, seeds)
def test_product_evaluates_pointwise(a, b, c):
    F, G = random_poly(a), random_poly(b)
    pt = random_point(c)
    FG, _ = product(F, G, BIG)
    assert abs(evaluate(FG, pt) - evaluate(F, pt) * evaluate(G, pt)) < 1e-9 * (1 + abs(evaluate(FG, pt)))


@given(seeds, seeds)
def test_derivative_matches_finite_difference(a, c):
    P, pt = random_poly(a), random_point(c)
    for var in ("x", "y"):
        assert abs(evaluate(derivative(P, var, 1), pt) - fd_derivative(P, pt, var, 1)) < 1e-6
    for var in ("z", "zbar"):
        assert abs(evaluate(derivative(P, var, 2), pt) - fd_derivative(P, pt, var, 2)) < 1e-6


@given(seeds)
def test_truncation_majorant_accounts_for_dropped_terms(a):
    P = random_poly(a, 8)
    Q, dropped = truncate(P, Caps(degree=2, harmonic=1), WINDOW)
    assert np.all(Q.degrees() <= 2) and np.all(Q.harmonic_orders() <= 1)
    rest = P - Q
    from dnlskam.hamiltonian import function_majorant
    assert dropped == pytest.approx(function_majorant(rest, WINDOW), rel=1e-12, abs=1e-300)


def test_product_reports_dropped_mass():
    P = random_poly(1, 6)
    _, dropped = product(P, P, Caps(degree=2, harmonic=2), WINDOW)
    assert dropped > 0


@given(seeds)
def test_sampled_norm_below_majorant(a):
    P = random_poly(a)
    v = vf_norm(P, WINDOW, 4)
    assert v.lower <= v.upper * (1 + 1e-12)
    assert v.upper == pytest.approx(vf_majorant(P, WINDOW))


def test_vf_norm_rejects_empty_sampling():
    with pytest.raises(ValueError):
        vf_norm(random_poly(0), WINDOW, 0)


def test_lipschitz_seminorm_of_linear_family():
    def family(s):
        return HamiltonianPoly.from_terms(LAYOUT, TANGENT, [({}, {}, {2: 1}, {2: 1}, s.get(2, 0.0))], BIG, WINDOW)

    pairs = [({2: 0.1}, {2: 0.3}), ({2: -0.2}, {2: 0.4})]
    one = lipschitz_seminorm(family, pairs, WINDOW)
    assert one == pytest.approx(vf_majorant(family({2: 1.0}), WINDOW))
    with pytest.raises(DegeneratePair):
        lipschitz_seminorm(family, [({2: 0.1}, {2: 0.1})], WINDOW)


@pytest.mark.parametrize("k, alpha, beta, expected", [
    ({}, {2: 1}, {2: 1}, (True, True)),              # |z_2|^2
    ({1: -1}, {2: 1}, {}, (False, True)),             # momentum -1 + 2
    ({1: 1}, {-2: 1}, {-1: 1}, (True, False)),        # mass 1 + 1 - 1
    ({1: 1}, {-2: 1, 2: 1}, {2: 1}, (False, False)),
    ({1: 1}, {2: 1}, {-2: 1, -1: 1}, (False, True)),  # momentum 1 + 2 + 2 + 1
])
def test_momentum_mass_index_sums(k, alpha, beta, expected):
    P = HamiltonianPoly.from_terms(LAYOUT, TANGENT, [(k, {}, alpha, beta, 1.0)], BIG)
    mom, mass, bad = check_momentum_mass(P)
    assert (mom, mass) == expected
    assert len(bad) == (0 if all(expected) else 1)


@given(seeds, seeds)
def test_bracket_preserves_momentum_and_mass(a, b):
    F = _conserving(a)
    G = _conserving(b)
    assert check_momentum_mass(F)[:2] == (True, True)
    B, _ = poisson_bracket(F, G, BIG)
    assert check_momentum_mass(B)[:2] == (True, True)


def _conserving(seed):
    P = random_poly(seed, 12)
    mom, mass, _ = check_momentum_mass(P)
    j = LAYOUT.mode_array
    k = P.k_part()
    net = P.alpha_part() - P.beta_part()
    ok = (k @ j + net @ j == 0) & (k.sum(axis=1) + net.sum(axis=1) == 0)
    return P.select(ok)


def test_json_round_trip():
    P = random_poly(3)
    Q = HamiltonianPoly.from_json(P.to_json())
    assert Q.max_abs_diff(P) == 0.0 and Q.tangent == P.tangent and Q.window == P.window


def test_real_part_is_real():
    P = random_poly(4)
    assert P.real_part().reality_defect() < 1e-15


def test_tangential_exponent_rules():
    with pytest.raises(ValueError):
        HamiltonianPoly.from_terms(LAYOUT, TANGENT, [({}, {}, {1: 1}, {}, 1.0)])
    with pytest.raises(ValueError):
        HamiltonianPoly.from_terms(LAYOUT, TANGENT, [({2: 1}, {}, {}, {}, 1.0)])


def test_taylor_split_and_blocks():
    P = random_poly(5, 12)
    R, rest = taylor_truncate_R(P)
    assert np.all(R.degrees() <= 2) and np.all(rest.degrees() > 2)
    parts = split_blocks(R)
    assert sum(p.nterms for p in parts.values()) == R.nterms


def test_normal_form_poly_has_half_normal_frequencies():
    from dnlskam.fourier import TorusFourier
    N = NormalForm({1: 1.5}, {j: [TorusFourier.constant(j * j + 0.1, (1,), 0)] for j in NORMAL})
    H = N.to_poly(LAYOUT, BIG)
    assert H.coefficient(l={1: 1}) == 1.5
    assert H.coefficient(alpha={2: 1}, beta={2: 1}) == pytest.approx((4.1) / 2)
    assert N.frequencies()[2] == pytest.approx(4.1)


def test_window_validation():
    with pytest.raises(ValueError):
        AnalyticityWindow(0.0, 1.0)
    with pytest.raises(ValueError):
        AnalyticityWindow(1.0, 1.0, p=1.0)
