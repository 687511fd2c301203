import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dnlskam.errors import RadiusViolation
from dnlskam.fourier import TorusFourier, random_fourier
from dnlskam.hamiltonian import (AnalyticityWindow, Caps, HamiltonianPoly, ModeLayout, NormalForm, PhasePoint,
                                 check_momentum_mass, evaluate, vf_majorant)
from dnlskam.kam import (KamSeeds, KamState, apply_poincare_map, diagonalize_normal_frequency, eps_schedule,
                         excite_oscillators, flow_map, lie_flow_apply, poincare_map_point, profile_for, prune,
                         schedules, stage_tau, symplectic_defect)

LAYOUT = ModeLayout(3)
BIG = Caps(degree=8, harmonic=12)


def test_schedule_first_rows():
    seeds = KamSeeds(eps0=1e-3)
    row0, row1 = schedules(0, seeds), schedules(1, seeds)
    assert row0.eps == 1e-3 and row1.eps == pytest.approx(1e-3 ** 1.25)
    assert row0.s == 1.0 and row1.s == 0.5 and row1.sigma == pytest.approx(0.025)
    assert row0.tau == 10 and row1.tau == 20 and row0.K == 1 and row1.K == 2
    assert row0.rho == 0.5 and row1.rho == pytest.approx(0.5 * 0.9)
    with pytest.raises(ValueError):
        schedules(-1, seeds)


@given(st.integers(0, 6))
def test_schedules_are_monotone(v):
    a, b = schedules(v), schedules(v + 1)
    assert b.eps < a.eps and b.s < a.s and b.rho < a.rho and b.K > a.K and b.r < a.r
    assert eps_schedule(v + 1, 1e-3) == pytest.approx(eps_schedule(v, 1e-3) ** 1.25)


def test_stage_exponents_respect_set_size():
    assert stage_tau(0, 2) == 14.0 and stage_tau(1, 4) == 20.0 and stage_tau(3, 8) == 40.0
    prof = profile_for(schedules(2), 3, KamSeeds())
    for t, J in zip(prof.tau, prof.stage_sets):
        assert t >= 2 * len(J) + 10


def test_seed_validation():
    with pytest.raises(ValueError):
        KamSeeds(eps0=1.5)
    with pytest.raises(ValueError):
        KamSeeds(r0=0.0)


# --------------------------------------------------------------------------
# Lie series against direct integration of the flow

def _real_generator(scale):
    F = HamiltonianPoly.from_terms(LAYOUT, (1,), [
        ({1: 1}, {}, {2: 1}, {2: 1}, scale * (0.3 + 0.2j)),
        ({}, {1: 1}, {}, {}, scale * 0.5),
        ({1: -1}, {}, {-2: 1}, {3: 1}, scale * 0.4j),
        ({}, {}, {3: 1}, {3: 1}, scale * 0.7),
    ], BIG, AnalyticityWindow(0.5, 0.5))
    return F.real_part()


def _observable():
    G = HamiltonianPoly.from_terms(LAYOUT, (1,), [
        ({1: 1}, {}, {2: 1}, {-2: 1}, 0.2),
        ({}, {1: 2}, {}, {}, 1.0),
        ({}, {}, {3: 1}, {}, 0.3 - 0.1j),
        ({1: 2}, {}, {}, {2: 1, 3: 1}, 0.15),
    ], BIG, AnalyticityWindow(0.5, 0.5))
    return G.real_part()


def _point(seed):
    rng = np.random.default_rng(seed)
    M = LAYOUT.M
    x = rng.uniform(0, 2 * math.pi, M)
    y = rng.uniform(0.1, 0.3, M)
    z = 0.2 * (rng.normal(size=M) + 1j * rng.normal(size=M))
    return x, y, z


def _evaluate(P, x, y, z):
    return evaluate(P, PhasePoint(np.asarray(x, complex), np.asarray(y, complex), z, np.conj(z)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lie_series_matches_integrated_flow(seed):
    F, G = _real_generator(0.05), _observable()
    Gt, rep = lie_flow_apply(F, G, 16, BIG, tol=1e-18)
    x, y, z = _point(seed)
    x1, y1, z1 = flow_map(F, (x, y, z))
    ref = _evaluate(G, x1, y1, z1)
    assert abs(_evaluate(Gt, x, y, z) - ref) < 1e-10 * max(1.0, abs(ref))


def test_lie_series_zero_generator_is_identity():
    G = _observable()
    out, rep = lie_flow_apply(G.zero(), G)
    assert out is G and rep.order == 0


# --------------------------------------------------------------------------
# pruning

@given(st.integers(0, 10_000), st.floats(1e-6, 1.0))
def test_prune_respects_budget(seed, frac):
    rng = np.random.default_rng(seed)
    window = AnalyticityWindow(0.5, 0.1)
    terms = [({1: int(rng.integers(-3, 4))}, {}, {2: 1}, {int(rng.choice([-2, 2, 3])): 1},
              complex(rng.normal(), rng.normal()) * 10.0 ** rng.uniform(-8, 0)) for _ in range(30)]
    P = HamiltonianPoly.from_terms(LAYOUT, (1,), terms, BIG, window)
    budget = frac * vf_majorant(P, window)
    kept, lost = prune(P, budget, window)
    assert lost <= budget
    assert vf_majorant(P - kept, window) == pytest.approx(lost, rel=1e-12, abs=1e-300)
    assert kept.nterms <= P.nterms


# --------------------------------------------------------------------------
# diagonalization

def _variable_state(amplitude=1e-3):
    tangent = (-1, 1)
    rng = np.random.default_rng(5)
    Omega = {}
    for j in (-3, -2, 2, 3):
        tilde = random_fourier(rng, tangent, 2, 3, amplitude, 0.0, zero_average=True)
        Omega[j] = [TorusFourier.constant(j * j + 0.01 * j, tangent, 0), tilde]
    N = NormalForm({-1: 1.003, 1: 0.998}, Omega)
    window = AnalyticityWindow(0.5, 0.01)
    P = HamiltonianPoly.from_terms(LAYOUT, tangent, [({1: 1, -1: -1}, {}, {2: 1}, {2: 1}, 1e-4),
                                                     ({1: -1, -1: 1}, {}, {2: 1}, {2: 1}, 1e-4),
                                                     ({}, {}, {3: 1, -3: 1}, {2: 1, -2: 1}, 1e-3)],
                                   BIG, window)
    return KamState(LAYOUT, N, P, window, BIG)


def test_diagonalization_makes_frequency_constant():
    state = _variable_state()
    new, rep = diagonalize_normal_frequency(state, 2, None)
    assert not rep.identity
    assert rep.nonconstant_majorant < 1e-10
    assert rep.exp_sampled_max <= rep.exp_bound_sharp
    assert rep.exp_sampled_max <= rep.exp_bound
    assert rep.symplectic_error < 1e-6
    assert new.N.is_constant(2) and new.N.Omega_bar(2) == pytest.approx(state.N.Omega_bar(2))
    # the Hamiltonian is only conjugated: frequencies of untouched modes are unchanged
    assert new.N.Omega[3] == state.N.Omega[3]


def test_diagonalization_of_constant_mode_is_identity():
    state = _variable_state(0.0)
    new, rep = diagonalize_normal_frequency(state, 2, None)
    assert rep.identity and new is state


def test_poincare_map_matches_substitution():
    state = _variable_state()
    f = random_fourier(np.random.default_rng(2), (-1, 1), 2, 3, 1e-2, 0.0, zero_average=True)
    P = state.hamiltonian()
    Q, _ = apply_poincare_map(P, f, 2, BIG, state.window)
    x, y, z = _point(4)
    tangent = (-1, 1)
    cols = [LAYOUT.col(j) for j in tangent]
    x2, y2, z2, zb2 = poincare_map_point(f, 2, tangent, x[cols], y[cols], z[LAYOUT.col(2)])
    xx, yy, zz, zzb = x.astype(complex), y.astype(complex), z.copy(), np.conj(z)
    yy[cols] = y2
    zz[LAYOUT.col(2)] = z2
    zzb[LAYOUT.col(2)] = zb2
    direct = evaluate(P, PhasePoint(xx, yy, zz, zzb))
    assert abs(evaluate(Q, PhasePoint(x.astype(complex), y.astype(complex), z, np.conj(z))) - direct) < 1e-12


def test_diagonalizing_map_is_symplectic():
    f = TorusFourier((1,), 1, [[1], [-1]], [0.1, 0.1])
    assert symplectic_defect(f, 2, (1,)) < 1e-6


# --------------------------------------------------------------------------
# excitation

def _quadratic_state(r=0.01):
    N = NormalForm({}, {j: [TorusFourier.constant(j * j + 0.1, (), 0)] for j in LAYOUT.modes})
    window = AnalyticityWindow(1.0, r)
    return KamState(LAYOUT, N, HamiltonianPoly(LAYOUT, (), caps=BIG, window=window), window, BIG)


def test_excitation_turns_oscillators_into_actions():
    state = _quadratic_state()
    new, dropped = excite_oscillators(state, 1, {1: 0.01, -1: 0.02})
    assert dropped == 0.0
    assert new.N.omega == {1: pytest.approx(1.1), -1: pytest.approx(1.1)}
    assert new.P.is_zero()
    assert set(new.tangent) == {-1, 1}


def test_excitation_of_quartic_term():
    state = _quadratic_state()
    P = HamiltonianPoly.from_terms(LAYOUT, (), [({}, {}, {1: 1, 2: 1}, {1: 1, 2: 1}, 1.0)], BIG, state.window)
    state = KamState(LAYOUT, state.N, P, state.window, BIG)
    I = 0.01
    new, _ = excite_oscillators(state, 1, {1: I})
    # |z_1|^2 |z_2|^2 -> 2(I + y_1) |z_2|^2
    assert new.P.coefficient(alpha={2: 1}, beta={2: 1}) == pytest.approx(2 * I)
    assert new.P.coefficient(l={1: 1}, alpha={2: 1}, beta={2: 1}) == pytest.approx(2.0)
    assert check_momentum_mass(new.P)[:2] == (True, True)


def test_excitation_needs_small_radius():
    state = _quadratic_state(r=0.5)
    with pytest.raises(RadiusViolation):
        excite_oscillators(state, 1, {1: 0.01})
    with pytest.raises(ValueError):
        excite_oscillators(_quadratic_state(), 1, {1: -1.0})
