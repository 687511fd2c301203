import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cases import OMEGA2, make_transform, strip_points
from dnlskam.errors import GuardViolation, NonzeroAverage, SingularSystem, SmallDivisor
from dnlskam.fourier import (TorusFourier, compose_along, d_omega, evaluate_many, random_fourier,
                             sup_norm_bound)
from dnlskam.hamiltonian import AnalyticityWindow, NormalForm
from dnlskam.homological import (BlockKey, DiophantineProfile, anti_diagonal_guard, apply_large_variable,
                                 apply_liu_yuan, build_transform, dense_oracle_large_variable,
                                 dense_oracle_solve, matrix_norm_bound, norm_certificate_dw,
                                 relative_l2_error, solve_block_F, solve_dw, solve_large_variable,
                                 solve_liu_yuan, solve_shifted)
from dnlskam.instances import compare_with_oracle, equation_residual, random_instance, solve_instance

W1 = np.array([1.0])


def test_shifted_closed_forms():
    v = solve_shifted(W1, 2.0, TorusFourier.constant(1.0, (1,), 0))
    assert v.coefficient((0,)) == 0.5
    v = solve_shifted(W1, 3.0, TorusFourier.mode((1,), (1,)))
    assert v.coefficient((1,)) == 0.5


def test_shifted_small_divisor_reports_harmonic():
    prof = DiophantineProfile(alpha=[1.0], beta=0.1, tau=[2.0], m_lower=1.0, gamma=[0.0])
    with pytest.raises(SmallDivisor) as info:
        solve_shifted(W1, 1.01, TorusFourier.mode((1,), (1,)), prof)
    assert info.value.k == (1,)


@given(st.integers(0, 10_000))
def test_dw_solution_differentiates_back(seed):
    p = random_fourier(np.random.default_rng(seed), (1, 2), 5, 6, zero_average=True)
    u = solve_dw(OMEGA2, p)
    assert np.allclose((d_omega(u, OMEGA2) - p).coeffs, 0, atol=1e-13)


def test_dw_rejects_average():
    with pytest.raises(NonzeroAverage):
        solve_dw(W1, TorusFourier.constant(1.0, (1,), 0))


def test_dw_norm_certificate_dominates():
    rng = np.random.default_rng(1)
    p = random_fourier(rng, (1, 2), 4, 6, zero_average=True)
    prof = DiophantineProfile(alpha=[1e-3], beta=1e-3, tau=[12.0], m_lower=1.0, gamma=[0.0])
    u = solve_dw(OMEGA2, p, prof)
    assert sup_norm_bound(u, 0.3) <= norm_certificate_dw(p, prof, 0.3)


def test_large_variable_with_zero_coefficient_is_shifted_solution():
    rng = np.random.default_rng(2)
    p = random_fourier(rng, (1, 2), 6, 8)
    zero = TorusFourier((1, 2), 0)
    a = solve_large_variable(OMEGA2, 7.3, [zero], p)
    b = solve_shifted(OMEGA2, 7.3, p)
    assert np.array_equal(a.keys, b.keys) and np.array_equal(a.coeffs, b.coeffs)


def test_large_variable_one_dimensional_residual():
    a = TorusFourier((1,), 1, [[1], [-1]], [-0.005j, 0.005j])     # 0.01 sin x
    p = TorusFourier.mode((1,), (1,))
    rep = {}
    # lam = 10 meets the resonance k = 10, so the retained ball stays below it (K + margin = 9)
    u = solve_large_variable(W1, 10.0, [a], p, K=5, report=rep)
    res = apply_large_variable(u, W1, 10.0, a, 5) - p
    assert math.sqrt(np.sum(np.abs(res.coeffs) ** 2)) < 1e-9
    assert rep["residual"] < 1e-9


def test_liu_yuan_constant_mu_is_rejected():
    with pytest.raises(NonzeroAverage):
        solve_liu_yuan(W1, 3.0, [TorusFourier.constant(0.5, (1,), 0)], TorusFourier.mode((1,), (1,)))


def test_liu_yuan_without_mu_matches_closed_form():
    p = TorusFourier.mode((1,), (2,), 3.0)
    u = solve_liu_yuan(W1, 0.5, [], p, K=4)
    assert u.coefficient((2,)) == pytest.approx(3.0 / 2.5)


def test_liu_yuan_large_coefficient_against_oracle():
    rng = np.random.default_rng(3)
    mu = random_fourier(rng, (1,), 2, 2, 5 * 0.1, 0.0, real=False, zero_average=True)
    p = random_fourier(rng, (1,), 6, 6)
    lam = 0.37 + 0.2j
    u = solve_liu_yuan(W1, lam, [mu], p, K=16)
    ref = dense_oracle_solve(W1, lam, mu, p, 16)
    assert relative_l2_error(u, ref) < 1e-8


@pytest.mark.parametrize("solver", ["shifted", "large_variable", "liu_yuan"])
@settings(max_examples=12)
@given(seed=st.integers(0, 10_000), c=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_solvers_are_linear_in_the_right_side(solver, seed, c):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 2, 6, solver)
    p2 = random_fourier(rng, inst.p.index_set, 6, 5, real=False)
    u1 = solve_instance(inst)
    inst2 = type(inst)(inst.solver, inst.omega, inst.lam, inst.stages, p2, inst.K)
    u2 = solve_instance(inst2)
    inst3 = type(inst)(inst.solver, inst.omega, inst.lam, inst.stages, inst.p + c * p2, inst.K)
    u3 = solve_instance(inst3)
    scale = max(1.0, float(np.abs(u3.coeffs).max()))
    assert np.abs((u3 - (u1 + c * u2)).coeffs).max(initial=0) < 1e-12 * scale


@pytest.mark.parametrize("solver", ["shifted", "large_variable", "liu_yuan"])
def test_solvers_match_dense_oracle_small(solver):
    summary = compare_with_oracle(2, 6, 10, seed=5, solvers=(solver,))
    assert summary.max_deviation[solver] < 1e-8
    assert summary.max_residual[solver] < 1e-9


def test_dense_oracle_without_mu_is_diagonal():
    p = random_fourier(np.random.default_rng(4), (1,), 8, 8)
    zero = TorusFourier((1,), 0)
    ref = dense_oracle_solve(W1, 0.3 + 0.1j, zero, p, 8)
    direct = TorusFourier((1,), 8, p.keys, p.coeffs / (p.keys @ W1 + 0.3 + 0.1j))
    assert relative_l2_error(ref, direct) < 1e-14


def test_dense_oracle_condition_grows_near_resonance():
    p = TorusFourier.mode((1,), (1,))
    zero = TorusFourier((1,), 0)
    conds = []
    for gap in (1e-2, 1e-4, 1e-6):
        rep = {}
        dense_oracle_solve(W1, -1.0 + gap, zero, p, 3, rep)
        conds.append(rep["condition_number"])
    assert conds[0] < conds[1] < conds[2]
    with pytest.raises(SingularSystem):
        dense_oracle_solve(W1, -1.0, zero, p, 3)


def test_dense_oracle_large_variable_residual():
    rng = np.random.default_rng(6)
    a = random_fourier(rng, (1,), 2, 2, 0.05, real=False, zero_average=True)
    p = random_fourier(rng, (1,), 6, 6)
    u = dense_oracle_large_variable(W1, 6.5, a, p, 8)
    res = apply_large_variable(u, W1, 6.5, a, 8) - p
    assert math.sqrt(np.sum(np.abs(res.coeffs) ** 2)) < 1e-12 * math.sqrt(np.sum(np.abs(p.coeffs) ** 2))


# --------------------------------------------------------------------------
# transform

def test_zero_stage_gives_identity_transform():
    T = build_transform(W1, [TorusFourier((1,), 0)])
    x = np.array([0.3 + 0.01j])
    assert np.array_equal(T.forward_point(x), x)


def test_single_stage_sine():
    eps = 0.05
    a = TorusFourier((1,), 1, [[1], [-1]], [-0.5j * eps, 0.5j * eps])
    T = build_transform(W1, [a])
    b = T.stages[0].b
    # d_omega b = eps sin x gives b = -eps cos x
    assert b.coefficient((1,)) == pytest.approx(-eps / 2) and b.coefficient((-1,)) == pytest.approx(-eps / 2)
    bt = T.stages[0].b_tilde
    comp, _ = compose_along(b, bt, W1, T.cutoff)
    assert sup_norm_bound(bt + comp, 0.0) < 1e-14


@pytest.mark.parametrize("gamma0", [1e-2, 1e-3])
def test_transform_inverse_and_decay(gamma0):
    T, a_stages, gammas = make_transform(gamma0)
    for stage, g in zip(T.stages, gammas):
        assert stage.b_norm <= g
        assert stage.b_tilde_norm <= g ** 0.99
    worst = 0.0
    for phi in strip_points(20, 2, 0.25, seed=1):
        x, _ = T.inverse_point(phi)
        worst = max(worst, float(np.abs(T.forward_point(x) - phi).max()))
    assert worst < 1e-12


# --------------------------------------------------------------------------
# block equations

def _constant_normal_form():
    Omega = {j: [TorusFourier.constant(j * j + 0.1 / abs(j), (1,), 0)] for j in (-3, -2, 2, 3)}
    return NormalForm({1: 1.0 + 0.05}, Omega)


def test_block_closed_form_constant_frequencies():
    N = _constant_normal_form()
    r = TorusFourier.mode((1,), (1,))
    key = BlockKey("zzbar", (2, 3))
    sol = solve_block_F(N, {key: r}, None, AnalyticityWindow(1.0, 0.1), 4)
    div = N.omega[1] + N.Omega_bar(2) - N.Omega_bar(3)
    assert sol.F[key].coefficient((1,)) == pytest.approx(-1j / div)
    assert sol.residuals[key] < 1e-14


def test_all_zero_blocks_give_zero_generator():
    sol = solve_block_F(_constant_normal_form(), {}, None, AnalyticityWindow(1.0, 0.1), 4)
    assert sol.F == {} and sol.max_residual() == 0.0


def test_diagonal_block_moves_into_normal_form():
    N = _constant_normal_form()
    key = BlockKey("zzbar", (2, 2))
    r = TorusFourier((1,), 1, [[0], [1], [-1]], [0.3, 0.1, 0.1])
    sol = solve_block_F(N, {key: r}, None, AnalyticityWindow(1.0, 0.1), 4)
    assert key not in sol.F
    assert sol.Omega_shift[2].coefficient((0,)) == pytest.approx(0.6)


def test_y_block_average_shifts_tangent_frequency():
    N = _constant_normal_form()
    key = BlockKey("y", (1,))
    r = TorusFourier((1,), 1, [[0], [1], [-1]], [0.2, 0.05, 0.05])
    sol = solve_block_F(N, {key: r}, None, AnalyticityWindow(1.0, 0.1), 4)
    assert sol.omega_shift[1] == pytest.approx(0.2)
    assert sol.residuals[key] < 1e-14


def _guarded_setup():
    Omega = {j: [TorusFourier.constant(j * j + 0.03 * j, (1, -1), 0),
                 TorusFourier((1, -1), 2, [[1, -1], [-1, 1]], [0.01, 0.01])] for j in (-2, 2)}
    N = NormalForm({1: 1.02, -1: 0.97}, Omega)
    key = BlockKey("zzbar", (-2, 2))
    r = TorusFourier((1, -1), 4, [[2, -2]], [1e-3])
    return N, {key: r}


@pytest.mark.parametrize("K, sigma", [(2, 0.05), (2, 0.9), (64, 0.9), (4, 0.99), (600, 0.05), (2000, 0.05)])
def test_anti_diagonal_refuses_exactly_when_guard_fails(K, sigma):
    N, blocks = _guarded_setup()
    prof = DiophantineProfile(alpha=[0.5], beta=1e-4, tau=[14.0], m_lower=0.5, gamma=[0.05])
    window = AnalyticityWindow(1.0, 0.1)
    holds = anti_diagonal_guard(K, window.s, prof.gamma, sigma, 2, prof.tau[-1], 1.0)
    assert holds == (K * 1.0 * 0.05 <= -(2 + 14.0) * math.log(sigma))
    if holds:
        sol = solve_block_F(N, blocks, prof, window, K, sigma=sigma)
        key = next(iter(blocks))
        assert sol.residuals[key] < 1e-9
        assert sol.guard[key.label()]["holds"]
    else:
        with pytest.raises(GuardViolation):
            solve_block_F(N, blocks, prof, window, K, sigma=sigma)


def test_anti_diagonal_beyond_K_is_remainder():
    N, blocks = _guarded_setup()
    sol = solve_block_F(N, blocks, None, AnalyticityWindow(1.0, 0.1), 1)
    assert list(sol.remainder) == list(blocks) and not sol.F


def test_block_small_divisor_names_block():
    N = _constant_normal_form()
    key = BlockKey("zzbar", (2, 3))
    prof = DiophantineProfile(alpha=[1.0], beta=10.0, tau=[11.0], m_lower=0.5, gamma=[0.0])
    with pytest.raises(SmallDivisor) as info:
        solve_block_F(N, {key: TorusFourier.mode((1,), (1,))}, prof, AnalyticityWindow(1.0, 0.1), 4)
    assert info.value.block == key.label()


# --------------------------------------------------------------------------
# operator norm bounds

def test_matrix_norm_bound_diagonal_and_zero():
    assert matrix_norm_bound({}, 1, 0.1) == 0.0
    elems = {(i, i): 1.0 + 0.1 * i for i in range(5)}
    assert matrix_norm_bound(elems, 1, 0.1) == pytest.approx(1.4 * 4 ** 3 / 0.1)


@given(st.integers(0, 10_000))
def test_matrix_norm_bound_dominates_operator_norm(seed):
    rng = np.random.default_rng(seed)
    n = 12
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - 2), min(n, i + 3)):
            A[i, j] = rng.normal() / (1 + abs(i - j))
    elems = {(i, j): A[i, j] for i in range(n) for j in range(n) if A[i, j]}
    assert matrix_norm_bound(elems, 1, 0.1) >= np.linalg.norm(A, 2)


def test_profile_validation():
    with pytest.raises(ValueError):
        DiophantineProfile(alpha=[1.0], beta=1.0, tau=[10.0], m_lower=1.0, gamma=[0.2])
    with pytest.raises(ValueError):
        DiophantineProfile(alpha=[1.0], beta=1.0, tau=[10.0], m_lower=1.0, gamma=[0.0], stage_sets=[(1, -1)])


def test_random_instance_residual():
    rng = np.random.default_rng(8)
    for solver in ("shifted", "large_variable", "liu_yuan"):
        inst = random_instance(rng, 1, 8, solver)
        assert equation_residual(inst, solve_instance(inst)) < 1e-9
