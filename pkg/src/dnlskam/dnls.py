"""Truncated derivative NLS with convolution potential as a polynomial Hamiltonian.

In the coordinates ``q_j`` of ``u = sum q_j e^{ijx}/sqrt(2 pi)`` the Hamiltonian is

    H = 1/2 sum (j^2 + sigma_j) |q_j|^2 + (1/(8 pi)) sum_{a+b=c+d} d qbar_a qbar_b q_c q_d,

the quartic part being ``-(i/4) int ubar^2 u u_x dx`` with the x-integral
selecting ``a + b = c + d``. Modes are kept for ``0 < |j| <= Jmax``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .hamiltonian import AnalyticityWindow, Caps, HamiltonianPoly, ModeLayout, NormalForm
from .fourier import TorusFourier
from .kam import KamState, excite_oscillators, split_normal
from .measure import ParameterPoint


@dataclass
class DnlsConfig:
    jmax: int = 8
    sigma: ParameterPoint = field(default_factory=lambda: ParameterPoint({}, 0))
    I1: float = 1e-2
    Im1: float = 1e-2
    window: AnalyticityWindow = field(default_factory=lambda: AnalyticityWindow(1.0, 0.05))
    degree_cap: int = 4
    harmonic_cap: int = 8

    def __post_init__(self):
        if self.jmax < 2:
            raise ValueError("jmax must be at least 2")
        if self.I1 <= 0 or self.Im1 <= 0:
            raise ValueError("actions must be positive")
        if self.window.r ** 2 >= min(self.I1, self.Im1):
            raise ValueError("need r^2 < min(I_1, I_-1)")
        if not isinstance(self.sigma, ParameterPoint):
            self.sigma = ParameterPoint(dict(self.sigma), max((abs(j) for j in self.sigma), default=0))

    @property
    def layout(self) -> ModeLayout:
        return ModeLayout(self.jmax)

    @property
    def caps(self) -> Caps:
        return Caps(self.degree_cap, self.harmonic_cap)

    def sigma_of(self, j: int) -> float:
        return self.sigma.get(j)


def quadratic_normal_form(cfg: DnlsConfig) -> NormalForm:
    """All modes normal with ``Omega_j = j^2 + sigma_j``."""
    return NormalForm({}, {j: [TorusFourier.constant(j * j + cfg.sigma_of(j), (), 0)]
                           for j in cfg.layout.modes})


def quartic_part(cfg: DnlsConfig) -> HamiltonianPoly:
    """``(1/(8 pi)) sum_{a+b=c+d} d qbar_a qbar_b q_c q_d`` over ordered index tuples."""
    lay = cfg.layout
    modes = lay.modes
    mset = set(modes)
    rows, vals = [], []
    pref = 1.0 / (8.0 * math.pi)
    for a in modes:
        for b in modes:
            for c in modes:
                d = a + b - c
                if d not in mset:
                    continue
                row = np.zeros(lay.width, np.int16)
                row[lay.b_col(a)] += 1
                row[lay.b_col(b)] += 1
                row[lay.a_col(c)] += 1
                row[lay.a_col(d)] += 1
                rows.append(row)
                vals.append(pref * d)
    return HamiltonianPoly(lay, (), np.array(rows), np.array(vals, complex), cfg.caps, cfg.window)


def build_hamiltonian(cfg: DnlsConfig) -> HamiltonianPoly:
    """Quadratic plus quartic part in the q coordinates (no tangential modes)."""
    N = quadratic_normal_form(cfg)
    return N.to_poly(cfg.layout, cfg.caps, cfg.window) + quartic_part(cfg)


def initial_action_angle(H: HamiltonianPoly, cfg: DnlsConfig) -> KamState:
    """Excite modes +-1 with actions ``I_{+-1}``; returns the step-0 state."""
    N0 = quadratic_normal_form(cfg)
    P0 = split_normal(H, N0)
    state = KamState(cfg.layout, N0, P0, cfg.window, cfg.caps, 0, dict(cfg.sigma.entries), {})
    state, _ = excite_oscillators(state, 1, {1: cfg.I1, -1: cfg.Im1}, cfg.window)
    return state


def default_profile(cfg: DnlsConfig) -> dict:
    """Torus point ``q_{+-1} = sqrt(2 I_{+-1})``, zero elsewhere."""
    return {1: math.sqrt(2 * cfg.I1), -1: math.sqrt(2 * cfg.Im1)}


def _mean(profile: Mapping[int, complex], L: int, kind: str) -> complex:
    """Normalised means ``(1/2pi) int g e^{iLx} dx`` for the products needed below.

    kind 'ubar_ux': g = ubar u_x; 'ubar_u': g = ubar u; 'ubar2': g = ubar^2; 'u_ux': g = u u_x.
    """
    norm = 1.0 / (2.0 * math.pi)
    tot = 0j
    items = list(profile.items())
    for a, qa in items:
        for b, qb in items:
            if kind == "ubar_ux" and b - a + L == 0:
                tot += np.conj(qa) * 1j * b * qb
            elif kind == "ubar_u" and b - a + L == 0:
                tot += np.conj(qa) * qb
            elif kind == "ubar2" and -a - b + L == 0:
                tot += np.conj(qa) * np.conj(qb)
            elif kind == "u_ux" and a + b + L == 0:
                tot += qa * 1j * b * qb
    return complex(tot * norm)


def p0_second_derivatives(u_profile: Mapping[int, complex], m: int, n: int, t: int):
    """Closed forms of the quartic part's second derivatives at ``u = sum q_j phi_j``.

    Returns ``(d2/dzbar_{n+t} dz_{m+t}, d2/dz_{n+t} dz_{m-t}, d2/dzbar_{n+t} dzbar_{m-t})``.
    """
    zzbar = -0.5j * _mean(u_profile, m - n, "ubar_ux") + 0.5 * (m + t) * _mean(u_profile, m - n, "ubar_u")
    zz = 0.25 * (n + m) * _mean(u_profile, m + n, "ubar2")
    zbzb = -0.5j * _mean(u_profile, -(n + m), "u_ux")
    return complex(zzbar), complex(zz), complex(zbzb)
