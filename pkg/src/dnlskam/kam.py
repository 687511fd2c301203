"""One KAM iteration: schedules, normal-frequency diagonalization, excitation,
homological solve, Lie-series transformation and the new normal form.

State is kept as a pair ``(N, P)``: a :class:`NormalForm` and a perturbation
polynomial in the current coordinates. Every truncating operation adds its
dropped majorant to the step's tail budget.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import BudgetExceeded, RadiusViolation, SeriesStagnation
from .fourier import (TorusFourier, average_and_tilde, evaluate_many, exp_series, gamma_truncate,
                      merge_index_sets, mul, omega_vector, partial, sup_norm_bound, weighted_norm)
from .hamiltonian import (AnalyticityWindow, Caps, HamiltonianPoly, ModeLayout, NormalForm,
                          check_momentum_mass, derivative, function_majorant, monomial_majorants, poisson_bracket, product,
                          taylor_truncate_R, truncate, vf_majorant, vf_norm)
from .homological import (BlockKey, DiophantineProfile, blocks_from_poly, poly_from_blocks, solve_block_F,
                          solve_dw)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class KamSeeds:
    """Seeds of the iteration constants; exponents left open by the theory are configurable."""

    s0: float = 1.0
    eps0: float = 1e-3
    rho0: float = 0.5
    m0: float = 0.5
    alpha_exp: float = 1.0
    beta_exp: float = 1.0
    beta_scale: float = 1e-3
    M10: float = 1.0
    M20: float = 1.0
    C: float = 1.0
    r0: float = 0.05
    c_r: float = 1.0 / 3.0
    excite_factor: float = 4.0

    def __post_init__(self):
        for name in ("s0", "eps0", "rho0", "m0", "beta_scale", "M10", "M20", "C", "r0", "c_r",
                     "excite_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eps0 >= 1:
            raise ValueError("eps0 must be below 1")


def _pow_self(i: int, e: float) -> float:
    """``(i^i)^e`` with ``0^0 = 1``."""
    return 1.0 if i == 0 else float(i) ** (i * e)


@dataclass(frozen=True)
class ScheduleRow:
    v: int
    J: tuple
    alpha: tuple
    beta: float
    tau: int
    m: float
    E: float
    M1: float
    M2: float
    M: float
    L: float
    s: float
    sigma: float
    log_B: float
    B: float
    eps: float
    gamma: float
    iota: int
    Lambda: int
    rho: float
    K: int
    r: float
    lam: float

    def stage_sets(self, stages: int) -> list:
        return [tuple(j for j in range(-(i + 1), i + 2) if j) for i in range(stages)]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["J"] = list(self.J)
        d["alpha"] = list(self.alpha)
        if not math.isfinite(d["B"]):
            d["B"] = None
        return d


def eps_schedule(v: int, eps0: float) -> float:
    return eps0 ** (1.25 ** v)


def schedules(v: int, seeds: KamSeeds = KamSeeds()) -> ScheduleRow:
    """All iteration constants at step ``v``."""
    if v < 0:
        raise ValueError("v must be nonnegative")
    sd = seeds
    eps = eps_schedule(v, sd.eps0)
    s = sd.s0 / 2 ** v
    sigma = s / 20
    tau = 10 * v + 10
    # alpha_v^i for every stage present after this step's excitation
    alpha = tuple((1.0 / _pow_self(i, sd.alpha_exp)) / 10 * (9 + 2.0 ** -v) for i in range(v + 2))
    beta = sd.beta_scale / _pow_self(v, sd.beta_exp)
    M1 = sd.M10 / 9 * (10 - 2.0 ** -v)
    M2 = sd.M20 / 9 * (10 - 2.0 ** -v)
    c_v_log = tau * math.log(tau)  # log (tau^tau)^exp with exp = 1
    log_B = c_v_log - 9 * (4 * v + tau + 1) * math.log(sigma)
    B = math.exp(log_B) if log_B < 700 else math.inf
    r = sd.r0
    for i in range(v):
        r *= eps_schedule(i, sd.eps0) ** sd.c_r
    rho = sd.rho0 * (1 - sum(1.0 / (10 * i * i) for i in range(1, v + 1)))
    return ScheduleRow(v=v, J=tuple(j for j in range(-v, v + 1) if j), alpha=alpha, beta=beta, tau=tau,
                       m=sd.m0 / 10 * (9 + 2.0 ** -v), E=sd.C * v ** 2.5, M1=M1, M2=M2, M=M1 + M2,
                       L=sd.C, s=s, sigma=sigma, log_B=log_B, B=B, eps=eps, gamma=eps ** 0.5,
                       iota=2 ** (v * v), Lambda=10 * v + 10, rho=rho, K=2 ** v, r=r, lam=beta / (M1 + M2))


def stage_tau(i: int, size: int) -> float:
    """``10 i + 10``, raised where needed to ``2 #J_i + 10`` so the diagonalization hypothesis holds."""
    return float(max(10 * i + 10, 2 * size + 10))


def profile_for(row: ScheduleRow, stages: int, seeds: KamSeeds) -> DiophantineProfile:
    """Diophantine profile with one stage per tangent shell ``{|i| <= l + 1}``."""
    gam = [eps_schedule(i, seeds.eps0) ** 0.5 for i in range(stages)]
    return DiophantineProfile(alpha=list(row.alpha[:stages]) + [row.alpha[-1]] * max(0, stages - len(row.alpha)),
                              beta=row.beta, tau=[stage_tau(i, len(J)) for i, J in enumerate(row.stage_sets(stages))],
                              m_lower=row.m,
                              gamma=gam, stage_sets=row.stage_sets(stages))


# --------------------------------------------------------------------------
# state

@dataclass
class KamState:
    layout: ModeLayout
    N: NormalForm
    P: HamiltonianPoly
    window: AnalyticityWindow
    caps: Caps
    v: int = 0
    sigma: dict = field(default_factory=dict)
    actions: dict = field(default_factory=dict)

    @property
    def tangent(self) -> tuple:
        return self.N.tangent

    def hamiltonian(self) -> HamiltonianPoly:
        return self.N.to_poly(self.layout, self.caps, self.window) + self.P


def split_normal(H: HamiltonianPoly, N: NormalForm) -> HamiltonianPoly:
    """``H - N`` with the pure constant term removed."""
    P = H - N.to_poly(H.layout, H.caps, H.window)
    const = ~np.any(P.keys != 0, axis=1)
    return P.select(~const)


def _constant_term(H: HamiltonianPoly) -> complex:
    const = ~np.any(H.keys != 0, axis=1)
    return complex(H.coeffs[const].sum())


# --------------------------------------------------------------------------
# substitutions

def _x_poly(like: HamiltonianPoly, f: TorusFourier, normal_key=None) -> HamiltonianPoly:
    key = normal_key if normal_key is not None else tuple([0] * (3 * like.M))
    return like.from_x_function(f, key)


def shift_y(P: HamiltonianPoly, shifts: Mapping[int, HamiltonianPoly], caps: Caps, window):
    """``P(y + c)`` by the terminating Taylor series ``sum (c . d_y)^n P / n!``."""
    total = P
    term = P
    dropped = 0.0
    n = 0
    while True:
        n += 1
        nxt = P.zero()
        for i, c in shifts.items():
            d = derivative(term, "y", i)
            if d.is_zero() or c.is_zero():
                continue
            prod, lost = product(c, d, caps, window)
            dropped += lost
            nxt = nxt + prod
        if nxt.is_zero():
            break
        term = nxt / n
        total = total + term
    return total, dropped


def apply_poincare_map(P: HamiltonianPoly, f: TorusFourier, t: int, caps: Caps, window):
    """Compose with ``z_t -> z_t e^{2if}``, ``zbar_t -> zbar_t e^{-2if}``, ``y -> y - d_x f z_t zbar_t``.

    The map is the time-one flow of ``f(x) z_t zbar_t``. Returns ``(P o Phi, dropped majorant)``.
    """
    lay = P.layout
    if P.is_zero() or f.is_zero():
        return P, 0.0
    f = f.embed(merge_index_sets(P.tangent, f.index_set))
    zz = lay.key(alpha={t: 1}, beta={t: 1})[P.M:]
    shifts = {}
    for i in P.tangent:
        df = partial(f, i)
        if not df.is_zero():
            shifts[i] = _x_poly(P, -df, tuple(int(v) for v in zz))
    out, dropped = shift_y(P, shifts, caps, window)
    net = out.keys[:, lay.a_col(t)].astype(int) - out.keys[:, lay.b_col(t)].astype(int)
    result = out.select(net == 0)
    for m in sorted(set(net.tolist()) - {0}):
        part = out.select(net == m)
        E, lost = exp_series(f.map_coeffs(2j * m), caps.harmonic)
        dropped += lost * function_majorant(part, window)
        prod, lost = product(_x_poly(P, E), part, caps, window)
        dropped += lost
        result = result + prod
    return result, dropped


def poincare_map_point(f: TorusFourier, t: int, tangent: Sequence[int], x, y, zt):
    """Pointwise image of ``(x, y, z_t)`` under the diagonalizing map (``x`` unchanged)."""
    x = np.asarray(x, complex)
    fx = evaluate_many(f.embed(merge_index_sets(tuple(tangent), f.index_set)), x[None, :])[0]
    grad = np.array([evaluate_many(partial(f, i).embed(tuple(tangent)), x[None, :])[0] for i in tangent])
    zt_new = zt * np.exp(2j * fx)
    zbar_new = np.conj(zt) * np.exp(-2j * fx)
    y_new = np.asarray(y, complex) - grad * zt * np.conj(zt)
    return x, y_new, zt_new, zbar_new


def symplectic_defect(f: TorusFourier, t: int, tangent: Sequence[int], points: int = 20,
                      h: float = 1e-6, rng: np.random.Generator | None = None, radius: float = 0.3) -> float:
    """Finite-difference check ``J Pi J^T = Pi`` for the real form of the diagonalizing map.

    Real coordinates are ``(x, y, a, b)`` with ``z_t = a + ib``; the Poisson
    matrix has ``{x_i, y_i} = 1`` and ``{a, b} = -1``.
    """
    rng = rng or np.random.default_rng(7)
    n = len(tangent)
    dim = 2 * n + 2
    Pi = np.zeros((dim, dim))
    for i in range(n):
        Pi[i, n + i] = 1.0
        Pi[n + i, i] = -1.0
    Pi[2 * n, 2 * n + 1] = -1.0
    Pi[2 * n + 1, 2 * n] = 1.0

    def phi(u):
        x, y = u[:n], u[n:2 * n]
        zt = u[2 * n] + 1j * u[2 * n + 1]
        x2, y2, z2, _ = poincare_map_point(f, t, tangent, x, y, zt)
        return np.concatenate([x2.real, y2.real, [z2.real, z2.imag]])

    worst = 0.0
    for _ in range(points):
        u0 = np.concatenate([rng.uniform(0, 2 * np.pi, n), rng.uniform(-radius, radius, n),
                             rng.uniform(-radius, radius, 2)])
        J = np.empty((dim, dim))
        for c in range(dim):
            e = np.zeros(dim)
            e[c] = h
            J[:, c] = (phi(u0 + e) - phi(u0 - e)) / (2 * h)
        worst = max(worst, float(np.abs(J @ Pi @ J.T - Pi).max()))
    return worst


@dataclass
class DiagReport:
    mode: int
    identity: bool
    nonconstant_majorant: float
    gamma_n: float
    exp_bound: float
    exp_bound_sharp: float
    exp_sampled_max: float
    symplectic_error: float
    displacement: float
    tail: float

    def as_dict(self):
        return asdict(self)


def diagonalize_normal_frequency(state: KamState, t: int, profile: DiophantineProfile | None,
                                 window: AnalyticityWindow | None = None, samples: int = 100,
                                 symplectic_points: int = 20, rng: np.random.Generator | None = None):
    """Make ``Omega_t`` constant by the time-one map of ``f(x) z_t zbar_t`` with ``d_omega f = Omega~_t/2``.

    Returns ``(new_state, DiagReport)``.
    """
    window = window or state.window
    N = state.N
    tangent = N.tangent
    tilde = TorusFourier(tangent, 0)
    stages = N.Omega_tilde_stages(t)
    for st in stages:
        tilde = tilde + st.embed(merge_index_sets(tangent, st.index_set))
    if tilde.is_zero():
        return state, DiagReport(t, True, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
    w = omega_vector(tangent, N.omega)
    f = solve_dw(w, tilde / 2.0, profile)
    layout, caps = state.layout, state.caps
    Npoly = N.to_poly(layout, caps, window)
    Nmap, lost_n = apply_poincare_map(Npoly, f, t, caps, window)
    Pmap, lost_p = apply_poincare_map(state.P, f, t, caps, window)
    N_new = N.copy()
    N_new.Omega[t] = [TorusFourier.constant(N.Omega_bar(t), tangent, 0)]
    # nonconstant part of the z_t zbar_t coefficient produced by the exact substitution
    key = Npoly.normal_key(alpha={t: 1}, beta={t: 1})
    coef = Nmap.x_functions().get(key, TorusFourier(tangent, 0))
    nonconst = sup_norm_bound(average_and_tilde(coef)[1], window.s)
    P_new = split_normal(Nmap + Pmap, N_new)
    # imaginary-part bound |e^{2if}| <= e^{s gamma n}
    gamma_n = 0.0
    for l, st in enumerate(stages):
        if st.is_zero():
            continue
        if profile is not None:
            lvl = min(l, profile.stages - 1)
            gamma_n += weighted_norm(st, window.s, profile.tau[lvl] + 1) / profile.alpha[lvl]
        else:
            gamma_n += weighted_norm(st, window.s, 1.0)
    rng = rng or np.random.default_rng(11)
    pts = rng.uniform(0, 2 * np.pi, (samples, len(tangent))) + 1j * rng.uniform(-1, 1, (samples, len(tangent))) * window.s
    sampled = float(np.abs(np.exp(2j * evaluate_many(f, pts))).max())
    exp_bound = math.exp(window.s * gamma_n) if window.s * gamma_n < 700 else math.inf
    # |e^{2if}| <= e^{2|Im f|} <= e^{2 |f|_s} on the strip, usable when gamma n overflows
    sharp = 2.0 * sup_norm_bound(f, window.s)
    exp_sharp = math.exp(sharp) if sharp < 700 else math.inf
    sym = symplectic_defect(f, t, tangent, symplectic_points, rng=rng) if symplectic_points else 0.0
    disp = float(np.abs(np.exp(2j * evaluate_many(f, pts.real)) - 1).max()) * window.r
    new = replace(state, N=N_new, P=P_new)
    return new, DiagReport(t, False, nonconst, gamma_n, exp_bound, exp_sharp, sampled, sym, disp, lost_n + lost_p)


def excite_oscillators(state: KamState, j: int, actions: Mapping[int, float], window=None):
    """Introduce action-angle variables ``z_m = sqrt(2(I_m + y_m)) e^{i x_m}`` for ``m = +-j``.

    Returns ``(new_state, dropped majorant)``. The binomial series in ``y/I``
    is truncated at the degree cap; the truncated part is budgeted.
    """
    window = window or state.window
    modes = [m for m in (j, -j) if m in actions]
    if not modes:
        raise ValueError("no actions given")
    for m in modes:
        I = actions[m]
        if I <= 0:
            raise ValueError("actions must be positive")
        if window.r ** 2 >= I:
            raise RadiusViolation(f"r^2 = {window.r ** 2:.3e} is not below I_{m} = {I:.3e}")
        if m in state.N.omega:
            raise ValueError(f"mode {m} is already tangential")
    lay, caps = state.layout, state.caps
    H = state.hamiltonian()
    dropped = 0.0
    done = set(H.tangent)
    for m in modes:
        done.add(m)
        H, lost = _substitute_action_angle(H, m, actions[m], tuple(sorted(done)), caps, window)
        dropped += lost
    omega = dict(state.N.omega)
    Omega = {k: list(v) for k, v in state.N.Omega.items() if k not in modes}
    for m in modes:
        omega[m] = state.N.Omega_bar(m)
    new_idx = tuple(sorted(omega))
    Omega = {k: [st.embed(merge_index_sets(new_idx, st.index_set)) for st in sts] for k, sts in Omega.items()}
    N_new = NormalForm(omega, Omega)
    P_new = split_normal(H, N_new)
    acts = dict(state.actions)
    acts.update({m: actions[m] for m in modes})
    return replace(state, N=N_new, P=P_new, actions=acts), dropped


def _substitute_action_angle(H: HamiltonianPoly, m: int, I: float, tangent, caps: Caps, window):
    lay = H.layout
    M = lay.M
    ac, bc, kc, lc = lay.a_col(m), lay.b_col(m), lay.k_col(m), lay.l_col(m)
    a = H.keys[:, ac].astype(int)
    b = H.keys[:, bc].astype(int)
    deg = H.degrees()
    rows, vals = [], []
    dropped = 0.0
    q = window.r ** 2 / I
    base_keys = H.keys.astype(np.int16).copy()
    base_keys[:, ac] = 0
    base_keys[:, bc] = 0
    rest_win = monomial_majorants_without(H, window, (ac, bc))
    for idx in range(H.nterms):
        if a[idx] == 0 and b[idx] == 0:
            rows.append(base_keys[idx])
            vals.append(H.coeffs[idx])
            continue
        h = (a[idx] + b[idx]) / 2.0
        pref = H.coeffs[idx] * (2.0 * I) ** h
        base_deg = deg[idx] - a[idx] - b[idx]
        n = 0
        binom = 1.0
        while True:
            if base_deg + 2 * n > caps.degree:
                # remainder of the binomial series in y/I on |y| <= r^2
                rem = 0.0 if (h == int(h) and n > h) else abs(binom) * q ** n / (1 - q)
                dropped += abs(pref) * rest_win[idx] * rem
                break
            row = base_keys[idx].copy()
            row[kc] += a[idx] - b[idx]
            row[lc] += n
            rows.append(row)
            vals.append(pref * binom / I ** n)
            binom *= (h - n) / (n + 1)
            n += 1
            if binom == 0.0:
                break
    out = HamiltonianPoly(lay, tangent, np.array(rows).reshape(-1, lay.width) if rows else None,
                          np.array(vals) if vals else None, caps, H.window)
    return out, dropped


def monomial_majorants_without(P: HamiltonianPoly, window, cols) -> np.ndarray:
    """Majorant of each unit-coefficient monomial with the given columns removed."""
    if not P.nterms:
        return np.zeros(0)
    lw = P.layout.log_weights(window).copy()
    lw[list(cols)] = 0.0
    M = P.M
    expo = window.s * P.harmonic_orders() + P.keys[:, M:].astype(float) @ lw[M:]
    return np.exp(expo)


# --------------------------------------------------------------------------
# pruning

def prune(P: HamiltonianPoly, budget: float, window=None, cost=None):
    """Drop the smallest monomials while the dropped part's vector-field majorant stays below ``budget``.

    ``cost`` maps the dropped polynomial to the error it causes (default: its vf majorant).
    Returns ``(kept, dropped error)``.
    """
    window = window or P.window
    if budget <= 0 or not P.nterms:
        return P, 0.0
    mu = monomial_majorants(P, window)
    order = np.argsort(mu, kind="stable")
    cum = np.cumsum(mu[order]) / window.r ** 2
    limit = budget
    for _ in range(40):
        n = int(np.searchsorted(cum, limit, side="right"))
        if n == 0:
            return P, 0.0
        mask = np.ones(P.nterms, bool)
        mask[order[:n]] = False
        dropped = P.select(~mask)
        lost = cost(dropped) if cost is not None else vf_majorant(dropped, window)
        if lost <= budget:
            return P.select(mask), lost
        limit /= 2
    return P, 0.0


# --------------------------------------------------------------------------
# Lie series

@dataclass
class LieReport:
    order: int
    increments: list
    tail: float

    def as_dict(self):
        return asdict(self)


def lie_flow_apply(F: HamiltonianPoly, G: HamiltonianPoly, q: int = 8, caps: Caps | None = None,
                   window=None, tol: float = 1e-16, min_ratio: float = 4.0, prune_budget: float = 0.0):
    """``G o X_F^1 = sum_{k <= q} ad_F^k G / k!`` with ``ad_F G = {G, F}``.

    Stops early once an increment majorant falls below ``tol`` times that of
    ``G``. Raises SeriesStagnation when increments stop decaying by ``min_ratio``
    after the second order. Each increment is pruned with ``prune_budget``
    (a vector-field majorant). Returns ``(result, LieReport)``.
    """
    caps = caps or G.caps
    window = window or G.window
    if F.is_zero():
        return G, LieReport(0, [], 0.0)
    total = G
    term = G
    scale = max(function_majorant(G, window), 1e-300)
    incs = []
    tail = 0.0
    order = 0
    for k in range(1, q + 1):
        term, lost = poisson_bracket(term, F, caps, window)
        tail += lost / math.factorial(k - 1)
        term = term / k
        if prune_budget > 0:
            term, lost = prune(term, prune_budget, window)
            tail += lost
        size = function_majorant(term, window)
        incs.append(size)
        total = total + term
        order = k
        if size < tol * scale:
            break
        if k >= 3 and size * min_ratio > incs[-2] and incs[-2] > tol * scale:
            raise SeriesStagnation(f"Lie series increment {size:.3e} after {incs[-2]:.3e} at order {k}")
    else:
        # geometric remainder estimate beyond the last computed order
        if len(incs) >= 2 and incs[-2] > 0:
            ratio = incs[-1] / incs[-2]
            tail += incs[-1] * ratio / max(1e-12, 1 - ratio)
    return total, LieReport(order, incs, tail)


def flow_map(F: HamiltonianPoly, point, t_final: float = 1.0, rtol: float = 1e-12, atol: float = 1e-12):
    """Integrate the flow of ``F`` in real coordinates (for symplecticity checks).

    ``point`` is ``(x, y, z)`` over the tangent modes and normal modes of the
    layout; returns the image as the same triple.
    """
    from scipy.integrate import solve_ivp
    from .hamiltonian import PhasePoint, vector_field_at

    lay = F.layout
    M = lay.M
    x0, y0, z0 = (np.asarray(v, complex) for v in point)

    def pack(x, y, z):
        return np.concatenate([x.real, y.real, z.real, z.imag])

    def unpack(u):
        return u[:M], u[M:2 * M], u[2 * M:3 * M] + 1j * u[3 * M:]

    tmask = np.zeros(M, bool)
    for j in F.tangent:
        tmask[lay.col(j)] = True

    def rhs(_t, u):
        x, y, z = unpack(u)
        zb = np.conj(z)
        pt = PhasePoint(x.astype(complex), np.where(tmask, y, 1.0).astype(complex),
                        np.where(tmask, 1.0, z), np.where(tmask, 1.0, zb))
        # vector field in the bracket convention {., F}: xdot = F_y, ydot = -F_x, zdot = 2i F_zbar
        Py, mPx, iPzb, _ = vector_field_at(F, pt)
        dz = 2.0 * iPzb
        dx = np.where(tmask, Py, 0).real
        dy = np.where(tmask, mPx, 0).real
        dz = np.where(tmask, 0, dz)
        return np.concatenate([dx, dy, dz.real, dz.imag])

    sol = solve_ivp(rhs, (0.0, t_final), pack(x0, y0, z0), rtol=rtol, atol=atol, method="DOP853")
    return unpack(sol.y[:, -1])


# --------------------------------------------------------------------------
# one step

@dataclass
class KamConfig:
    seeds: KamSeeds = field(default_factory=KamSeeds)
    lie_order: int = 8
    prune_relative: float = 1e-6
    guard_C: float = 1.0
    diag_samples: int = 100
    symplectic_points: int = 20
    tail_budget: float = math.inf
    check_divisors: bool = True


@dataclass
class StepReport:
    v: int
    eps_in: float
    eps_after_excitation: float
    eps_out: float
    eps_envelope: float
    window_out: dict
    tail: float
    min_divisor: float
    omega_drift: float
    Omega_drift: float
    max_block_residual: float
    remainder_majorant: float
    remainder_blocks: int
    momentum_ok: bool
    mass_ok: bool
    diagonalization: list
    lie: dict
    guard: dict
    frequencies: dict
    nterms: int

    def as_dict(self) -> dict:
        d = asdict(self)
        d["frequencies"] = {str(k): v for k, v in sorted(self.frequencies.items())}
        return d


def kam_step(state: KamState, config: KamConfig = KamConfig(), row: ScheduleRow | None = None):
    """One iteration ``H -> H o Phi = N_+ + P_+``; returns ``(new_state, StepReport)``."""
    t0 = time.perf_counter()
    seeds = config.seeds
    v = state.v
    row = row or schedules(v, seeds)
    window = AnalyticityWindow(row.s, state.window.r, state.window.a, state.window.p)
    state = replace(state, window=window, P=state.P.with_window(window))
    eps_in = vf_majorant(state.P, window)
    tail = 0.0
    diag_reports = []
    t = v + 2
    if t <= state.layout.jmax and t not in state.N.omega:
        prof = profile_for(row, len(state.tangent) // 2, seeds)
        for m in (t, -t):
            state, rep = diagonalize_normal_frequency(state, m, prof if config.check_divisors else None, window,
                                                      config.diag_samples, config.symplectic_points)
            diag_reports.append(rep.as_dict())
            tail += rep.tail
        I = seeds.excite_factor * window.r ** 2
        state, lost = excite_oscillators(state, t, {t: I, -t: I}, window)
        tail += lost
    eps_exc = vf_majorant(state.P, window)
    # pruning budget: a small fraction of the contraction target, spread over the step
    budget = config.prune_relative * eps_in ** 1.25
    P_pruned, lost = prune(state.P, budget, window)
    tail += lost
    state = replace(state, P=P_pruned)
    log.debug("step %d: excited, %d terms (%.2fs)", v, state.P.nterms, time.perf_counter() - t0)
    stages = len(state.tangent) // 2
    prof = profile_for(row, stages, seeds)
    N, P, caps, lay = state.N, state.P, state.caps, state.layout
    R, rest = taylor_truncate_R(P)
    blocks = blocks_from_poly(R)
    sol = solve_block_F(N, blocks, prof, window, row.K, harmonic_cutoff=caps.harmonic, sigma=row.sigma,
                        guard_C=config.guard_C, check_divisors=config.check_divisors)
    F = poly_from_blocks(sol.F, P)
    # dropping part of F leaves {N, F_dropped} in the new perturbation
    Npoly = N.to_poly(lay, caps, window)
    F, lost = prune(F, budget, window, cost=lambda D: vf_majorant(poisson_bracket(Npoly, D, caps, window)[0],
                                                                 window))
    tail += lost
    log.debug("step %d: solved %d blocks, F has %d terms (%.2fs)", v, len(blocks), F.nterms,
              time.perf_counter() - t0)
    H = state.hamiltonian()
    Hn, lie = lie_flow_apply(F, H, config.lie_order, caps, window, prune_budget=budget / config.lie_order)
    tail += lie.tail
    log.debug("step %d: Lie series done, %d terms (%.2fs)", v, Hn.nterms, time.perf_counter() - t0)
    # new normal form
    omega = {j: w + float(complex(sol.omega_shift.get(j, 0.0)).real) for j, w in N.omega.items()}
    Omega = {j: list(st) for j, st in N.Omega.items()}
    tangent = N.tangent
    Fy = {key.modes[0]: f for key, f in sol.F.items() if key.kind == "y"}
    for j in Omega:
        new = sol.Omega_shift.get(j, TorusFourier(tangent, 0))
        new = new.embed(merge_index_sets(tangent, new.index_set))
        total = N.Omega_total(j, tangent)
        for i, fy in Fy.items():
            dO = partial(total, i)
            if dO.is_zero():
                continue
            prod, lost = mul(dO, fy.embed(merge_index_sets(tangent, fy.index_set)), caps.harmonic)
            tail += lost * window.r ** 2
            new = new + prod
        new = new.real_part() if new.nterms else new
        if not new.is_zero():
            Omega[j].append(new)
    N_new = NormalForm(omega, Omega)
    P_new = split_normal(Hn, N_new).real_part()
    P_new, lost = prune(P_new, budget, window)
    tail += lost
    remainder = sum(sup_norm_bound(f, window.s) for f in sol.remainder.values()) * window.r ** 2
    r_next = window.r * row.eps ** seeds.c_r
    row_next = schedules(v + 1, seeds)
    win_next = AnalyticityWindow(row_next.s, r_next, window.a, window.p)
    P_new = P_new.with_window(win_next)
    eps_out = vf_majorant(P_new, win_next)
    mom, mass, _ = check_momentum_mass(P_new)
    new_state = KamState(lay, N_new, P_new, win_next, caps, v + 1, state.sigma, state.actions)
    freqs = N_new.frequencies()
    drift_w = max((abs(omega[j] - N.omega[j]) for j in N.omega), default=0.0)
    drift_O = max((abs(N_new.Omega_bar(j) - N.Omega_bar(j)) / abs(j) for j in N.Omega), default=0.0)
    if tail > config.tail_budget:
        raise BudgetExceeded(f"tail {tail:.3e} exceeds budget {config.tail_budget:.3e}")
    log.info("step %d: eps %.3e -> %.3e (%.2fs)", v, eps_in, eps_out, time.perf_counter() - t0)
    report = StepReport(
        v=v, eps_in=eps_in, eps_after_excitation=eps_exc, eps_out=eps_out,
        eps_envelope=10 * eps_in ** 1.25, window_out={"s": win_next.s, "r": win_next.r}, tail=tail,
        min_divisor=min(sol.min_divisors.values(), default=math.inf), omega_drift=drift_w,
        Omega_drift=drift_O, max_block_residual=sol.max_residual(), remainder_majorant=remainder,
        remainder_blocks=len(sol.remainder), momentum_ok=mom, mass_ok=mass, diagonalization=diag_reports,
        lie=lie.as_dict(), guard=sol.guard, frequencies=freqs, nterms=P_new.nterms)
    return new_state, report
