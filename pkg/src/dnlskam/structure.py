"""Structural checks on perturbations: asymptotic expansions of second derivatives,
frequency asymptotics and the anti-diagonal error tail.

Second derivatives are evaluated on the torus section ``y = 0``, normal modes at a
fixed profile, and become Fourier series in the tangential angles. Expansions in
``t`` are fitted by least squares over two disjoint windows of ``t``; the fitted
coefficients must satisfy the bounds and agree between the windows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import IllConditionedFit, ModeOutOfRange
from .fourier import TorusFourier, sup_norm_bound
from .hamiltonian import HamiltonianPoly, derivative

KINDS = ("zzbar", "zz", "zbarzbar")


def section_value(P: HamiltonianPoly, profile: Mapping[int, complex] | None = None) -> TorusFourier:
    """``P`` at ``y = 0`` with ``z_j = profile[j]`` and ``zbar_j`` its conjugate (0 off the profile)."""
    profile = profile or {}
    lay = P.layout
    tangent = P.tangent
    if not P.nterms:
        return TorusFourier(tangent, 0)
    M = lay.M
    keys = P.keys.astype(np.int64)
    keep = ~np.any(keys[:, M:2 * M] != 0, axis=1)
    vals = P.coeffs.astype(complex).copy()
    for j in lay.modes:
        a = keys[:, lay.a_col(j)]
        b = keys[:, lay.b_col(j)]
        used = (a > 0) | (b > 0)
        if not used.any():
            continue
        z = complex(profile.get(j, 0.0))
        if z == 0:
            keep &= ~used
            continue
        vals = vals * z ** a * np.conj(z) ** b
    kcols = [lay.col(j) for j in tangent]
    k = keys[keep][:, kcols]
    cutoff = int(np.abs(k).sum(axis=1).max()) if k.size else 0
    return TorusFourier(tangent, cutoff, k, vals[keep])


def block_modes(m: int, n: int, t: int, kind: str) -> tuple:
    """The two differentiation modes of a block: ``(m+t, n+t)`` or ``(m+t, n-t)``."""
    if kind == "zzbar":
        return m + t, n + t
    if kind in ("zz", "zbarzbar"):
        return m + t, n - t
    raise ValueError(f"unknown kind {kind!r}")


def second_derivative_block(P: HamiltonianPoly, m: int, n: int, t: int, kind: str,
                            profile: Mapping[int, complex] | None = None) -> TorusFourier:
    """``d^2 P / dz_{m+t} dzbar_{n+t}`` ('zzbar'), ``d^2 P / dz_{m+t} dz_{n-t}`` ('zz') or
    ``d^2 P / dzbar_{m+t} dzbar_{n-t}`` ('zbarzbar') on the torus section."""
    i, j = block_modes(m, n, t, kind)
    lay = P.layout
    for mode in (i, j):
        if mode == 0 or abs(mode) > lay.jmax:
            raise ModeOutOfRange(f"mode {mode} outside 0 < |j| <= {lay.jmax}")
        if mode in P.tangent:
            raise ModeOutOfRange(f"mode {mode} is tangential")
    first, second = {"zzbar": ("z", "zbar"), "zz": ("z", "z"), "zbarzbar": ("zbar", "zbar")}[kind]
    D = derivative(derivative(P, second, j), first, i)
    return section_value(D, profile)


# --------------------------------------------------------------------------
# expansions

@dataclass
class ExpansionFit:
    """Least-squares fit of a second-derivative block over a window of ``t``."""

    m: int
    n: int
    kind: str
    ts: list
    coefficients: list          # three TorusFourier: the template's coefficient functions
    norms: list                 # their sup-norm majorants
    bounds: list                # allowed majorants
    residual: float             # max |data - fit| / max |data|

    def within(self) -> bool:
        return all(a <= b * (1 + 1e-9) + 1e-300 for a, b in zip(self.norms, self.bounds))


@dataclass
class StructureReport:
    kind: str                   # 'FAE' or 'SAE'
    passed: bool
    checked_bounds: int
    checked_fits: int
    untestable: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    worst_bound_ratio: float = 0.0
    worst_fit_residual: float = 0.0
    worst_refit_gap: float = 0.0
    rows: list = field(default_factory=list)    # every pointwise bound check

    def as_dict(self, rows: bool = False) -> dict:
        d = dict(self.__dict__)
        if not rows:
            d.pop("rows")
        return d


def _decay(m: int, n: int, kind: str) -> int:
    return abs(n - m) if kind == "zzbar" else abs(n + m)


def _mu(m: int, n: int) -> float:
    return float(abs(m) + abs(n)) or 1.0


def _valid_t(P: HamiltonianPoly, m: int, n: int, kind: str, ts: Iterable[int]) -> list:
    out = []
    for t in ts:
        i, j = block_modes(m, n, t, kind)
        if 0 < abs(i) <= P.layout.jmax and 0 < abs(j) <= P.layout.jmax \
                and i not in P.tangent and j not in P.tangent:
            out.append(t)
    return out


def _stack(values: Sequence[TorusFourier]):
    """Align Fourier coefficients of several series; returns (keys, matrix rows=values)."""
    allkeys = {}
    for f in values:
        for k in f.keys:
            allkeys.setdefault(tuple(int(x) for x in k), len(allkeys))
    mat = np.zeros((len(values), max(1, len(allkeys))), complex)
    for r, f in enumerate(values):
        for k, c in zip(f.keys, f.coeffs):
            mat[r, allkeys[tuple(int(x) for x in k)]] = c
    keys = sorted(allkeys, key=allkeys.get)
    return keys, mat


def _fit(P, m, n, kind, ts, template, profile, eps, rho, s) -> ExpansionFit:
    vals = [second_derivative_block(P, m, n, t, kind, profile) for t in ts]
    keys, Y = _stack(vals)
    tt = np.array(ts, float)
    X = np.stack([f(tt) for f in template], axis=1)
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    scale = max(np.abs(Y).max(), 1e-300)
    resid = float(np.abs(X @ coef - Y).max() / scale) if np.abs(Y).max() > 0 else 0.0
    idx = tuple(vals[0].index_set) if vals else ()
    funcs = []
    for row in coef:
        if keys:
            kk = np.array(keys, np.int64).reshape(len(keys), len(idx))
            cutoff = int(np.abs(kk).sum(axis=1).max()) if kk.size else 0
            funcs.append(TorusFourier(idx, cutoff, kk, row[:len(keys)]))
        else:
            funcs.append(TorusFourier.constant(row[0], idx, 0))
    norms = [sup_norm_bound(f, s) for f in funcs]
    e = eps * math.exp(-_decay(m, n, kind) * rho)
    mu = _mu(m, n)
    bounds = [e, (mu + 1) * e, (mu * mu + mu + 1) * e]
    return ExpansionFit(m, n, kind, list(ts), funcs, norms, bounds, resid)


def _windows(P, m, n, kind, T, sign, width):
    w = max(width, T)
    first = _valid_t(P, m, n, kind, [sign * t for t in range(T, T + w)])
    second = _valid_t(P, m, n, kind, [sign * t for t in range(T + w, T + 2 * w)])
    return first, second


def _verify(P, Lambda, eps, rho, mn_range, kinds, profile, s, growth, template, fit_tol, refit_tol,
            min_points, family, sigma_pairs, label) -> StructureReport:
    s = s if s is not None else (P.window.s if P.window is not None else 0.0)
    rep = StructureReport(label, True, 0, 0)
    lay = P.layout
    pairs = [(m, n) for m in mn_range for n in mn_range]
    for kind in kinds:
        for m, n in pairs:
            e = eps * math.exp(-_decay(m, n, kind) * rho)
            # pointwise bound over every admissible t
            for t in _valid_t(P, m, n, kind, range(-2 * lay.jmax, 2 * lay.jmax + 1)):
                i, j = block_modes(m, n, t, kind)
                val = sup_norm_bound(second_derivative_block(P, m, n, t, kind, profile), s)
                bound = (max(abs(i), abs(j)) if growth else 1.0) * e
                if family is not None:
                    val = max(val, _lipschitz(family, sigma_pairs, m, n, t, kind, profile, s))
                rep.checked_bounds += 1
                rep.rows.append({"kind": kind, "m": m, "n": n, "t": t, "value": val, "bound": bound})
                ratio = val / bound if bound > 0 else (math.inf if val > 0 else 0.0)
                rep.worst_bound_ratio = max(rep.worst_bound_ratio, ratio)
                if ratio > 1 + 1e-9:
                    rep.passed = False
                    rep.failures.append({"check": "bound", "kind": kind, "m": m, "n": n, "t": t,
                                         "value": val, "bound": bound})
            # expansion for |t| >= Lambda max(|m|, |n|), t != 0
            T = max(1, int(math.ceil(Lambda * max(abs(m), abs(n)))))
            for sign in (1, -1):
                w1, w2 = _windows(P, m, n, kind, T, sign, 4)
                if len(w1) < min_points or len(w2) < min_points:
                    rep.untestable.append({"kind": kind, "m": m, "n": n, "sign": sign})
                    continue
                fits = [_fit(P, m, n, kind, w, template, profile, eps, rho, s) for w in (w1, w2)]
                rep.checked_fits += 2
                for f in fits:
                    rep.worst_fit_residual = max(rep.worst_fit_residual, f.residual)
                    if f.residual > fit_tol:
                        rep.passed = False
                        rep.failures.append({"check": "fit", "kind": kind, "m": m, "n": n,
                                             "ts": f.ts, "residual": f.residual})
                    if not f.within():
                        rep.passed = False
                        rep.failures.append({"check": "coefficients", "kind": kind, "m": m, "n": n,
                                             "ts": f.ts, "norms": f.norms, "bounds": f.bounds})
                gap = 0.0
                for a, b, bound in zip(fits[0].coefficients, fits[1].coefficients, fits[0].bounds):
                    gap = max(gap, sup_norm_bound(a - b, s) / max(bound, 1e-300))
                rep.worst_refit_gap = max(rep.worst_refit_gap, gap)
                if gap > refit_tol:
                    rep.passed = False
                    rep.failures.append({"check": "refit", "kind": kind, "m": m, "n": n, "gap": gap})
    return rep


def _lipschitz(family, sigma_pairs, m, n, t, kind, profile, s) -> float:
    worst = 0.0
    for s1, s2 in sigma_pairs:
        d1 = second_derivative_block(family(s1), m, n, t, kind, profile)
        d2 = second_derivative_block(family(s2), m, n, t, kind, profile)
        keys = set(s1) | set(s2)
        dist = max((abs(s1.get(j, 0.0) - s2.get(j, 0.0)) for j in keys), default=0.0)
        if dist > 0:
            worst = max(worst, sup_norm_bound(d1 - d2, s) / dist)
    return worst


def verify_fae(P: HamiltonianPoly, Lambda: float, eps: float, rho: float, mn_range=range(-1, 2),
               kinds=KINDS, profile=None, s=None, fit_tol=1e-8, refit_tol=1e-6, min_points=4,
               family: Callable | None = None, sigma_pairs=()) -> StructureReport:
    """Check the first-type asymptotic condition: growth-weighted bounds and ``t A + B + C/t`` expansions.

    Coefficient bounds are those of the identifiable combinations
    ``A = a^1``, ``B = a^2 + b^1``, ``C = a^3 + b^2 + c``: ``e``, ``(mu+1) e``, ``(mu^2+mu+1) e``
    with ``e = eps exp(-decay rho)`` and ``mu = |m| + |n|`` (1 when both vanish).
    """
    template = (lambda t: t, lambda t: np.ones_like(t), lambda t: 1.0 / t)
    return _verify(P, Lambda, eps, rho, mn_range, kinds, profile, s, True, template, fit_tol, refit_tol,
                   min_points, family, sigma_pairs, "FAE")


def verify_sae(F: HamiltonianPoly, Lambda: float, eps: float, rho: float, mn_range=range(-1, 2),
               kinds=KINDS, profile=None, s=None, fit_tol=1e-8, refit_tol=1e-6, min_points=4,
               family: Callable | None = None, sigma_pairs=()) -> StructureReport:
    """Second-type condition: unweighted bounds and ``A + B/t + C/t^2`` expansions."""
    template = (lambda t: np.ones_like(t), lambda t: 1.0 / t, lambda t: 1.0 / t ** 2)
    return _verify(F, Lambda, eps, rho, mn_range, kinds, profile, s, False, template, fit_tol, refit_tol,
                   min_points, family, sigma_pairs, "SAE")


# --------------------------------------------------------------------------
# frequencies

@dataclass
class FrequencyFit:
    lam_bar: float
    lam_tilde: float
    hat: dict
    sup_weighted_hat: float
    modes: list

    def as_dict(self) -> dict:
        return {"lam_bar": self.lam_bar, "lam_tilde": self.lam_tilde,
                "hat": {str(k): v for k, v in self.hat.items()},
                "sup_weighted_hat": self.sup_weighted_hat, "modes": self.modes}


def frequency_expansion(freqs: Mapping[int, float], sigma: Mapping[int, float] | Callable,
                        modes: Sequence[int] | None = None) -> FrequencyFit:
    """Fit ``lambda_n = n^2 + sigma_n + n lam_bar + lam_tilde + hat_n`` by least squares.

    ``sigma`` is a mapping or a callable ``j -> sigma_j``. Needs at least four modes.
    """
    get = sigma if callable(sigma) else (lambda j: sigma.get(j, 0.0))
    modes = sorted(modes if modes is not None else freqs)
    if len(modes) < 4:
        raise IllConditionedFit(f"need at least 4 modes, got {len(modes)}")
    n = np.array(modes, float)
    rhs = np.array([float(np.real(freqs[j])) - j * j - get(j) for j in modes])
    X = np.stack([n, np.ones_like(n)], axis=1)
    if np.linalg.matrix_rank(X) < 2:
        raise IllConditionedFit("modes do not separate slope and offset")
    (lb, lt), *_ = np.linalg.lstsq(X, rhs, rcond=None)
    hat = {j: float(rhs[c] - lb * j - lt) for c, j in enumerate(modes)}
    sup = max(abs(j) * abs(h) for j, h in hat.items())
    return FrequencyFit(float(lb), float(lt), hat, float(sup), list(modes))


# --------------------------------------------------------------------------
# error tail

@dataclass
class TailReport:
    K: int
    coefficient_tail: float
    majorant: float
    envelope: float
    constant: float
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def check_error_tail(entries: Mapping[int, TorusFourier | complex | float], K: int, rho: float, r: float,
                     eps: float, s: float = 0.0, factor: float = 10.0) -> TailReport:
    """Majorant of the discarded anti-diagonal part ``sum_{|j| > K} R_j z_{-j} zbar_j``.

    ``entries[j]`` is the coefficient of ``z_{-j} zbar_j``; the majorant is
    ``r^2 sum_{|j| > K} |R_j|_s`` and the envelope ``factor r^2 eps exp(-rho K)``.
    """
    def size(v):
        return sup_norm_bound(v, s) if isinstance(v, TorusFourier) else abs(v)

    coeff_tail = float(sum(size(v) for j, v in entries.items() if abs(j) > K))
    maj = r * r * coeff_tail
    env = factor * r * r * eps * math.exp(-rho * K)
    const = maj / (r * r * eps * math.exp(-rho * K)) if eps > 0 else math.inf
    return TailReport(K, coeff_tail, maj, env, const, maj <= env)


def tail_slope(reports: Sequence[TailReport]) -> float:
    """Least-squares slope of ``log majorant`` against ``K``."""
    Ks = np.array([r.K for r in reports], float)
    logs = np.log(np.array([r.majorant for r in reports], float))
    slope, _ = np.polyfit(Ks, logs, 1)
    return float(slope)
