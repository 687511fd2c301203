"""Small-divisor solvers for the homological equations and their dense oracle.

Conventions, for ``u(x) = sum u_k e^{ikx}``:

* ``d_omega u`` has coefficients ``i<k,omega> u_k``;
* the large-variable equation ``(i d_omega + lam (1 + a(x))) u = p`` has the
  constant-coefficient symbol ``lam - <k,omega>``;
* the Liu-Yuan form ``-i d_omega u + lam u + mu(x) u = p`` has symbol
  ``<k,omega> + lam``.

Variable-coefficient solvers return the Galerkin solution on the l1-ball
``|k| <= K``: the analytic construction (transform or exponential conjugation)
is used as an approximate inverse and residual-correction sweeps remove the
truncation commutators.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (GuardViolation, NonContraction, NonzeroAverage, PicardDivergence,
                     SingularSystem, SmallDivisor, StripViolation)
from .fourier import (TorusFourier, average_and_tilde, compose_along, d_omega, evaluate_many,
                      exp_series, gamma_truncate, merge_index_sets, mul, omega_vector,
                      reciprocal_one_plus, sup_norm_bound, weighted_norm)


@dataclass
class DiophantineProfile:
    """Per-stage Diophantine constants for the homological equations."""

    alpha: Sequence[float]
    beta: float
    tau: Sequence[float]
    m_lower: float
    gamma: Sequence[float]
    stage_sets: Sequence[Sequence[int]] | None = None
    b_exponent: float = 0.99

    def __post_init__(self):
        self.alpha = [float(a) for a in self.alpha]
        self.tau = [float(t) for t in self.tau]
        self.gamma = [float(g) for g in self.gamma]
        if len(self.alpha) != len(self.tau):
            raise ValueError("alpha and tau need one entry per stage")
        if any(a <= 0 for a in self.alpha) or self.beta <= 0 or self.m_lower <= 0:
            raise ValueError("alpha, beta and m_lower must be positive")
        if sum(self.gamma) > 0.1 + 1e-15 or any(g < 0 for g in self.gamma):
            raise ValueError("need 0 <= gamma_l and sum gamma_l <= 1/10")
        if self.stage_sets is not None:
            self.stage_sets = [tuple(s) for s in self.stage_sets]
            for t, J in zip(self.tau, self.stage_sets):
                if t < len(J) + 10:
                    raise ValueError(f"tau {t} below #J + 10 for stage {J}")
            for a, b in zip(self.stage_sets, self.stage_sets[1:]):
                if not set(a) < set(b):
                    raise ValueError("stage sets must be strictly nested")

    @property
    def stages(self) -> int:
        return len(self.alpha)

    def stage_for(self, modes: Sequence[int]) -> int:
        """Smallest stage whose angle set contains ``modes`` (last stage if unknown)."""
        if self.stage_sets is None:
            return self.stages - 1
        need = set(modes)
        for l, J in enumerate(self.stage_sets):
            if need <= set(J):
                return l
        return self.stages - 1


def bracket_weight(k: np.ndarray) -> np.ndarray:
    """``<k> = max(1, |k|)`` per row."""
    return np.maximum(1, np.abs(np.asarray(k, dtype=np.int64)).sum(axis=-1))


def l2_weight(l: Mapping[int, int]) -> int:
    """``<l>_2 = max(1, |sum j^2 l_j|)``."""
    return max(1, abs(sum(j * j * v for j, v in l.items())))


def _rel_l2(a: TorusFourier, b: TorusFourier) -> float:
    d = a - b
    den = math.sqrt(float(np.sum(np.abs(b.coeffs) ** 2))) if b.nterms else 0.0
    num = math.sqrt(float(np.sum(np.abs(d.coeffs) ** 2))) if d.nterms else 0.0
    return num / den if den > 0 else num


def relative_l2_error(u: TorusFourier, ref: TorusFourier) -> float:
    return _rel_l2(u, ref)


def _l2(f: TorusFourier) -> float:
    return math.sqrt(float(np.sum(np.abs(f.coeffs) ** 2))) if f.nterms else 0.0


def _record(report, **kw):
    if report is not None:
        report.update(kw)


# --------------------------------------------------------------------------
# constant-coefficient solvers

def _check_dw_divisors(f: TorusFourier, w: np.ndarray, profile: DiophantineProfile | None):
    div = f.keys @ w
    kmin = None
    for row, dv in zip(f.keys, div):
        modes = [j for j, v in zip(f.index_set, row) if v]
        if profile is not None:
            l = profile.stage_for(modes)
            bound = profile.alpha[l] / float(bracket_weight(row)) ** profile.tau[l]
        else:
            bound = 1e-300
        if abs(dv) < bound:
            raise SmallDivisor(f"|<k,omega>| = {abs(dv):.3e} below {bound:.3e} at k={tuple(int(v) for v in row)}",
                               k=tuple(int(v) for v in row), value=dv, bound=bound)
        if kmin is None or abs(dv) < kmin:
            kmin = abs(dv)
    return kmin


def solve_dw(omega, p: TorusFourier, profile: DiophantineProfile | None = None, report: dict | None = None,
             avg_tol: float = 1e-13) -> TorusFourier:
    """Solve ``d_omega u = p`` for zero-average ``p``; the solution has zero average."""
    avg, _ = average_and_tilde(p)
    if abs(avg) > avg_tol * max(1.0, sup_norm_bound(p, 0.0)):
        raise NonzeroAverage(f"[p] = {avg:.3e} is not zero")
    _, p = average_and_tilde(p)
    w = omega_vector(p.index_set, omega)
    kmin = _check_dw_divisors(p, w, profile)
    u = p.map_coeffs(1.0 / (1j * (p.keys @ w))) if p.nterms else p
    _record(report, min_divisor=kmin, solver="dw",
            divisor_scope="harmonics present in the right-hand side")
    return u


def _check_shift_divisors(keys, div, bound_fn, block=None):
    dmin = None
    for row, dv in zip(keys, div):
        bound = bound_fn(row)
        if abs(dv) < bound:
            raise SmallDivisor(f"divisor {abs(dv):.3e} below {bound:.3e} at k={tuple(int(v) for v in row)}"
                               + (f" in block {block}" if block else ""),
                               k=tuple(int(v) for v in row), block=block, value=dv, bound=bound)
        if dmin is None or abs(dv) < dmin:
            dmin = abs(dv)
    return dmin


def solve_shifted(omega, lam: complex, p: TorusFourier, profile: DiophantineProfile | None = None,
                  report: dict | None = None) -> TorusFourier:
    """Solve ``(i d_omega + lam) v = p``: ``v_k = p_k / (lam - <k,omega>)``."""
    w = omega_vector(p.index_set, omega)
    div = lam - p.keys @ w
    if profile is not None:
        tau = profile.tau[-1]
        bound_fn = lambda row: profile.beta / float(bracket_weight(row)) ** tau
    else:
        bound_fn = lambda row: 1e-300
    dmin = _check_shift_divisors(p.keys, div, bound_fn)
    _record(report, min_divisor=dmin, solver="shifted")
    return p.map_coeffs(1.0 / div) if p.nterms else p


def solve_constant_ly(omega, lam: complex, p: TorusFourier, bound_fn=None, block=None) -> TorusFourier:
    """Solve ``-i d_omega v + lam v = p``: ``v_k = p_k / (<k,omega> + lam)``."""
    w = omega_vector(p.index_set, omega)
    div = p.keys @ w + lam
    _check_shift_divisors(p.keys, div, bound_fn or (lambda row: 1e-300), block)
    return p.map_coeffs(1.0 / div) if p.nterms else p


# --------------------------------------------------------------------------
# operators on the retained l1-ball

def apply_large_variable(u: TorusFourier, omega, lam, a: TorusFourier, K: int) -> TorusFourier:
    """``Gamma_K (i d_omega u + lam (1 + a) u)``."""
    idx = merge_index_sets(u.index_set, a.index_set)
    u = u.embed(idx)
    w = omega_vector(idx, omega)
    base, _ = gamma_truncate(u.map_coeffs(lam - u.keys @ w), K)
    prod, _ = mul(a, u, K)
    return base + lam * prod


def apply_liu_yuan(u: TorusFourier, omega, lam, mu: TorusFourier, K: int) -> TorusFourier:
    """``Gamma_K (-i d_omega u + lam u + mu u)``."""
    idx = merge_index_sets(u.index_set, mu.index_set)
    u = u.embed(idx)
    w = omega_vector(idx, omega)
    base, _ = gamma_truncate(u.map_coeffs(u.keys @ w + lam), K)
    prod, _ = mul(mu, u, K)
    return base + prod


def _sum_stages(stages, idx, cutoff):
    total = TorusFourier(idx, cutoff)
    for st in stages:
        total = total + st.embed(merge_index_sets(idx, st.index_set))
    return total


def _refine(approx, apply_op, rhs: TorusFourier, K: int, tol: float, max_sweeps: int,
            strict: bool, report: dict | None):
    """Residual-correction sweeps ``u += approx(rhs - L u)``."""
    rhs, _ = gamma_truncate(rhs, K)
    scale = _l2(rhs)
    u, _ = gamma_truncate(approx(rhs), K)
    res = rhs - apply_op(u)
    history = [_l2(res) / scale if scale else 0.0]
    sweeps = 0
    while history[-1] > tol and sweeps < max_sweeps:
        delta, _ = gamma_truncate(approx(res), K)
        u = u + delta
        res = rhs - apply_op(u)
        history.append(_l2(res) / scale if scale else 0.0)
        sweeps += 1
        if strict and history[-1] > tol and history[-1] > 0.5 * history[-2]:
            raise NonContraction(f"residual went {history[-2]:.3e} -> {history[-1]:.3e} in sweep {sweeps}")
    _record(report, raw_residual=history[0], residual=history[-1], sweeps=sweeps,
            residual_history=history)
    return u


# --------------------------------------------------------------------------
# large-variable transform

@dataclass
class TransformStage:
    b: TorusFourier
    b_tilde: TorusFourier
    inv_one_plus_a: TorusFourier
    a: TorusFourier
    picard_iterations: int
    picard_increment: float
    b_norm: float
    b_tilde_norm: float


@dataclass
class Transform:
    """Stagewise shifts ``x -> x + b_j(x) omega`` and their inverses."""

    omega: np.ndarray
    index_set: tuple
    stages: list
    lam_factor: complex
    cutoff: int
    strips: list = field(default_factory=list)
    tail: float = 0.0

    @property
    def b(self):
        return [st.b for st in self.stages]

    @property
    def b_tilde(self):
        return [st.b_tilde for st in self.stages]

    def forward_point(self, x):
        x = np.asarray(x, complex).copy()
        for st in self.stages:
            x = x + evaluate_many(st.b.embed(self.index_set), x[None, :])[0] * self.omega
        return x

    def inverse_point(self, phi, tol: float = 1e-16, max_iter: int = 200):
        """Invert by pointwise Picard iteration ``c = -b(phi + c omega)`` per stage."""
        phi = np.asarray(phi, complex).copy()
        worst = 0.0
        for st in reversed(self.stages):
            b = st.b.embed(self.index_set)
            c = 0j
            for _ in range(max_iter):
                c_new = -evaluate_many(b, (phi + c * self.omega)[None, :])[0]
                step = abs(c_new - c)
                c = c_new
                if step < tol:
                    break
            worst = max(worst, abs(c + evaluate_many(b, (phi + c * self.omega)[None, :])[0]))
            phi = phi + c * self.omega
        return phi, worst

    def solve(self, lam: complex, p: TorusFourier, profile: DiophantineProfile | None = None,
              report: dict | None = None) -> TorusFourier:
        """Approximate solution of ``(i d_omega + lam(1 + sum a_l)) u = p`` through the stages."""
        q = p.embed(merge_index_sets(self.index_set, p.index_set))
        for st in self.stages:
            q, _ = mul(q, st.inv_one_plus_a, self.cutoff)
            q, _ = compose_along(q, st.b_tilde, self.omega, self.cutoff)
        v = solve_shifted(self.omega, lam * self.lam_factor, q, profile, report)
        for st in reversed(self.stages):
            v, _ = compose_along(v, st.b, self.omega, self.cutoff)
        return v


def _picard_inverse(b: TorusFourier, w, cutoff: int, tol: float = 1e-14, max_iter: int = 50):
    """Coefficient-space Picard iteration ``c = -b(phi + c omega)``."""
    c = -b
    prev = None
    grow = 0
    inc = float("inf")
    for it in range(1, max_iter + 1):
        c_new, _ = compose_along(b, c, w, cutoff)
        c_new = -c_new
        inc = sup_norm_bound(c_new - c, 0.0)
        c = c_new
        if prev is not None and inc > prev:
            grow += 1
            if grow >= 2:
                raise PicardDivergence(f"Picard increment grew twice in a row (last {inc:.3e})")
        else:
            grow = 0
        prev = inc
        if inc < tol:
            return c, it, inc
    return c, max_iter, inc


def build_transform(omega, a_stages: Sequence[TorusFourier], profile: DiophantineProfile | None = None,
                    window=None, cutoff: int | None = None, strip_samples: int = 20,
                    rng: np.random.Generator | None = None) -> Transform:
    """Stagewise elimination of ``a_l`` by shifts along omega.

    After each stage the remaining coefficients are divided by ``1 + a_j`` and
    composed with the inverse shift; their averages are absorbed into ``lam``
    (``lam_factor``) so every stage again has zero average.
    """
    if not a_stages:
        raise ValueError("need at least one stage")
    idx = merge_index_sets(*[a.index_set for a in a_stages])
    w = omega_vector(idx, omega)
    if cutoff is None:
        cutoff = max(2 * max(a.cutoff for a in a_stages), 4)
    work = [a.embed(idx, max(a.cutoff, cutoff)) for a in a_stages]
    for a in work:
        avg, _ = average_and_tilde(a)
        if abs(avg) > 1e-13 * max(1.0, sup_norm_bound(a, 0)):
            raise NonzeroAverage("stage coefficient must have zero average")
    stages = []
    lam_factor = 1.0 + 0j
    tail = 0.0
    rng = rng or np.random.default_rng(12345)
    s = getattr(window, "s", None)
    strips = []
    for j in range(len(work)):
        a_j = work[j]
        b_j = solve_dw(w, a_j, None)
        b_j, lost = gamma_truncate(b_j.with_cutoff(max(b_j.cutoff, b_j.max_order())), cutoff)
        tail += lost
        if profile is not None and s is not None and profile.gamma and not b_j.is_zero():
            gam = profile.gamma[min(j, len(profile.gamma) - 1)]
            s_j = s / 2 ** j
            strips.append(s_j)
            for _ in range(strip_samples):
                re = rng.uniform(0, 2 * np.pi, len(idx))
                im = rng.uniform(-1, 1, len(idx)) * 0.9 * s_j
                val = evaluate_many(b_j, (re + 1j * im)[None, :])[0]
                if abs(val.imag) >= gam ** 0.1 * np.abs(im).max():
                    raise StripViolation(f"|Im b_{j}| = {abs(val.imag):.3e} exceeds gamma^(1/10)|Im x|")
        if b_j.is_zero():
            bt, its, inc = b_j, 0, 0.0
        else:
            bt, its, inc = _picard_inverse(b_j, w, cutoff)
        inv, lost = reciprocal_one_plus(a_j, cutoff)
        tail += lost
        for l in range(j + 1, len(work)):
            t, lost1 = mul(work[l], inv, cutoff)
            t, lost2 = compose_along(t, bt, w, cutoff) if not bt.is_zero() else (t, 0.0)
            tail += lost1 + lost2
            work[l] = t
        later = list(range(j + 1, len(work)))
        if later:
            avgs = [average_and_tilde(work[l])[0] for l in later]
            C = sum(avgs)
            for l, c in zip(later, avgs):
                work[l] = (average_and_tilde(work[l])[1]) / (1.0 + C)
            lam_factor *= 1.0 + C
        stages.append(TransformStage(b=b_j, b_tilde=bt, inv_one_plus_a=inv, a=a_j,
                                     picard_iterations=its, picard_increment=inc,
                                     b_norm=sup_norm_bound(b_j, 0.0),
                                     b_tilde_norm=sup_norm_bound(bt, 0.0)))
    return Transform(omega=w, index_set=idx, stages=stages, lam_factor=lam_factor, cutoff=cutoff,
                     strips=strips, tail=tail)


def solve_large_variable(omega, lam: complex, a_stages: Sequence[TorusFourier], p: TorusFourier,
                         profile: DiophantineProfile | None = None, window=None, K: int | None = None,
                         refine: bool = True, tol: float = 1e-14, max_sweeps: int = 30,
                         work_margin: int | None = None, report: dict | None = None) -> TorusFourier:
    """Solve ``(i d_omega + lam (1 + sum a_l(x))) u = p`` on ``|k| <= K``."""
    a_nonzero = [a for a in a_stages if not a.is_zero()]
    if not a_nonzero:
        u = solve_shifted(omega, lam, p, profile, report)
        _record(report, residual=0.0, raw_residual=0.0, sweeps=0)
        return u
    idx = merge_index_sets(p.index_set, *[a.index_set for a in a_nonzero])
    p = p.embed(idx)
    w = omega_vector(idx, omega) if not isinstance(omega, Mapping) else omega
    if K is None:
        K = max(p.cutoff, p.max_order())
    margin = 4 if work_margin is None else work_margin
    T = build_transform(w if isinstance(w, Mapping) else w, [a.embed(idx) for a in a_nonzero], profile,
                        window, cutoff=K + margin)
    a_total = _sum_stages(a_nonzero, idx, K + margin)
    inner = {}

    def approx(q):
        return T.solve(lam, q, profile, inner)

    def op(u):
        return apply_large_variable(u, w, lam, a_total, K)

    if refine:
        u = _refine(approx, op, p, K, tol, max_sweeps, False, report)
    else:
        u, _ = gamma_truncate(approx(p), K)
        res = gamma_truncate(p, K)[0] - op(u)
        _record(report, residual=_l2(res) / max(_l2(gamma_truncate(p, K)[0]), 1e-300), sweeps=0)
    _record(report, solver="large_variable", lam_factor=complex(T.lam_factor),
            b_norms=[st.b_norm for st in T.stages], b_tilde_norms=[st.b_tilde_norm for st in T.stages],
            picard_iterations=[st.picard_iterations for st in T.stages],
            min_divisor=inner.get("min_divisor"), transform_tail=T.tail, K=K)
    return u


# --------------------------------------------------------------------------
# Liu-Yuan equation

def solve_liu_yuan(omega, lam: complex, mu_stages: Sequence[TorusFourier], p: TorusFourier,
                   profile: DiophantineProfile | None = None, window=None, sigma_out: float = 0.0,
                   K: int | None = None, gamma_tilde: float = 1.0, tol: float = 1e-14,
                   max_sweeps: int = 30, work_margin: int | None = None,
                   report: dict | None = None) -> TorusFourier:
    """Solve ``-i d_omega u + lam u + mu(x) u = p`` on ``|k| <= K``.

    The variable part is removed exactly by the conjugation ``u = e^{g} v`` with
    ``d_omega g = -i mu``; sweeps then clear the truncation commutators and must
    halve the residual each time.
    """
    for st in mu_stages:
        avg, _ = average_and_tilde(st)
        if abs(avg) > 1e-13 * max(1.0, sup_norm_bound(st, 0.0)):
            raise NonzeroAverage(f"[mu_l] = {avg:.3e} is not zero")
    mu_nonzero = [m for m in mu_stages if not m.is_zero()]
    idx = merge_index_sets(p.index_set, *[m.index_set for m in mu_nonzero])
    p = p.embed(idx)
    if K is None:
        K = max(p.cutoff, p.max_order())
    w = omega_vector(idx, omega)
    tau = profile.tau[-1] if profile is not None else 0.0
    if profile is not None:
        bound_fn = lambda row: profile.beta * gamma_tilde / (1.0 + float(np.abs(row).sum()) ** tau)
    else:
        bound_fn = None
    if not mu_nonzero:
        u = solve_constant_ly(w, lam, p, bound_fn)
        u, _ = gamma_truncate(u.with_cutoff(max(u.cutoff, u.max_order(), K)), K)
        _record(report, residual=0.0, raw_residual=0.0, sweeps=0, solver="liu_yuan")
        return u
    margin = 4 if work_margin is None else work_margin
    Kw = K + margin
    mu = _sum_stages(mu_nonzero, idx, Kw)
    g = solve_dw(w, mu.map_coeffs(-1j), None)
    g = g.with_cutoff(max(g.cutoff, g.max_order(), Kw))
    E_plus, _ = exp_series(g, Kw)
    E_minus, _ = exp_series(-g, Kw)
    s = getattr(window, "s", 0.0) or 0.0

    def approx(q):
        t, _ = mul(E_minus, q.embed(idx), Kw)
        v = solve_constant_ly(w, lam, t, bound_fn)
        out, _ = mul(E_plus, v, Kw)
        return out

    def op(u):
        return apply_liu_yuan(u, w, lam, mu, K)

    u = _refine(approx, op, p, K, tol, max_sweeps, True, report)
    _record(report, solver="liu_yuan", exp_factor=sup_norm_bound(E_plus, max(s - sigma_out, 0.0)),
            g_norm=sup_norm_bound(g, max(s - sigma_out, 0.0)), K=K)
    return u


def anti_diagonal_guard(K: int, s: float, gammas: Sequence[float], sigma: float, n: int, tau: float,
                        C: float = 1.0) -> bool:
    """``e^{C K s sum gamma} <= sigma^{-C (n + tau)}``, compared in logs."""
    lhs = C * K * s * float(sum(gammas))
    rhs = -C * (n + tau) * math.log(sigma)
    return lhs <= rhs


# --------------------------------------------------------------------------
# dense oracle

def l1_ball(n: int, K: int) -> np.ndarray:
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    pts = [k for k in itertools.product(range(-K, K + 1), repeat=n) if sum(abs(v) for v in k) <= K]
    return np.array(pts, dtype=np.int64).reshape(-1, n)


def dense_oracle_solve(omega, lam: complex, mu: TorusFourier, p: TorusFourier, K: int,
                       report: dict | None = None, cond_limit: float = 1e14) -> TorusFourier:
    """Direct solve of ``-i d_omega u + lam u + mu u = p`` on the basis ``|k|_1 <= K``."""
    idx = merge_index_sets(p.index_set, mu.index_set)
    p = p.embed(idx)
    mu = mu.embed(idx)
    w = omega_vector(idx, omega)
    basis = l1_ball(len(idx), K)
    pos = {tuple(k): i for i, k in enumerate(basis)}
    A = np.diag(basis @ w + lam).astype(complex)
    mu_map = mu.to_dict()
    for i, k in enumerate(basis):
        for dk, c in mu_map.items():
            j = pos.get(tuple(k - np.array(dk, dtype=np.int64)))
            if j is not None:
                A[i, j] += c
    rhs = np.zeros(len(basis), complex)
    for k, c in p.to_dict().items():
        i = pos.get(k)
        if i is not None:
            rhs[i] = c
    try:
        cond = float(np.linalg.cond(A))
        if not np.isfinite(cond) or cond > cond_limit:
            raise SingularSystem(f"condition number {cond:.3e}")
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    resid = float(np.linalg.norm(A @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))
    _record(report, condition_number=cond, residual=resid, size=len(basis))
    return TorusFourier(idx, K, basis, sol)


def dense_oracle_large_variable(omega, lam: complex, a: TorusFourier, p: TorusFourier, K: int,
                                report: dict | None = None) -> TorusFourier:
    """Oracle for ``(i d_omega + lam (1 + a)) u = p`` (mapped to the Liu-Yuan form by a sign flip)."""
    return dense_oracle_solve(omega, -lam, a * (-lam), -p, K, report)


# --------------------------------------------------------------------------
# operator norm bounds

def matrix_norm_bound(R_elements: Mapping[tuple, float], n: int, sigma: float) -> float:
    """Certified l2 bound ``(4^{n+2}/sigma^n) * ||R||`` with ``||R||`` from the Schur test."""
    if not R_elements:
        return 0.0
    rows, cols = {}, {}
    for (i, j), v in R_elements.items():
        v = abs(float(v))
        rows[i] = rows.get(i, 0.0) + v
        cols[j] = cols.get(j, 0.0) + v
    schur = math.sqrt(max(rows.values()) * max(cols.values()))
    return 4.0 ** (n + 2) / sigma ** n * schur


def norm_certificate_dw(p: TorusFourier, profile: DiophantineProfile, s: float) -> float:
    """Bound ``(1/alpha) ||p||_{s,tau}`` for the solution of ``d_omega u = p``."""
    l = profile.stage_for(p.support_modes())
    return weighted_norm(p, s, profile.tau[l]) / profile.alpha[l]


# --------------------------------------------------------------------------
# blockwise homological equations {N, F} + R = 0

@dataclass(frozen=True, order=True)
class BlockKey:
    """One coefficient function of the second-order truncation.

    ``kind`` is one of x, y, z, zbar, zz, zbarzbar, zzbar; ``modes`` lists the
    y-index, the z/zbar index, the pair (i <= j), or (i, j) for ``z_i zbar_j``.
    """

    kind: str
    modes: tuple = ()

    @property
    def net(self) -> dict:
        """alpha - beta as a map mode -> exponent."""
        out: dict = {}
        if self.kind == "z":
            out[self.modes[0]] = 1
        elif self.kind == "zbar":
            out[self.modes[0]] = -1
        elif self.kind in ("zz", "zbarzbar"):
            sgn = 1 if self.kind == "zz" else -1
            for j in self.modes:
                out[j] = out.get(j, 0) + sgn
        elif self.kind == "zzbar":
            i, j = self.modes
            out[i] = out.get(i, 0) + 1
            out[j] = out.get(j, 0) - 1
        return {j: v for j, v in out.items() if v}

    @property
    def is_diagonal(self) -> bool:
        return self.kind == "zzbar" and self.modes[0] == self.modes[1]

    @property
    def is_anti_diagonal(self) -> bool:
        return self.kind == "zzbar" and self.modes[0] == -self.modes[1]

    def label(self) -> str:
        return self.kind + "".join(f"_{j}" for j in self.modes)

    def normal_parts(self):
        """(l, alpha, beta) dictionaries of the monomial."""
        l, a, b = {}, {}, {}
        if self.kind == "y":
            l[self.modes[0]] = 1
        elif self.kind == "z":
            a[self.modes[0]] = 1
        elif self.kind == "zbar":
            b[self.modes[0]] = 1
        elif self.kind == "zz":
            for j in self.modes:
                a[j] = a.get(j, 0) + 1
        elif self.kind == "zbarzbar":
            for j in self.modes:
                b[j] = b.get(j, 0) + 1
        elif self.kind == "zzbar":
            a[self.modes[0]] = 1
            b[self.modes[1]] = 1
        return l, a, b


def block_key_from_tail(layout, tail) -> BlockKey:
    M = layout.M
    tail = np.asarray(tail)
    modes = layout.mode_array
    l, a, b = tail[:M], tail[M:2 * M], tail[2 * M:3 * M]
    ly = [int(modes[c]) for c in np.nonzero(l)[0]]
    az = [int(modes[c]) for c in np.nonzero(a)[0] for _ in range(int(a[c]))]
    bz = [int(modes[c]) for c in np.nonzero(b)[0] for _ in range(int(b[c]))]
    if l.sum() > 1 or (l.sum() == 1 and (az or bz)):
        raise ValueError("monomial outside the second-order truncation")
    if ly:
        return BlockKey("y", (ly[0],))
    if not az and not bz:
        return BlockKey("x", ())
    if len(az) == 1 and not bz:
        return BlockKey("z", (az[0],))
    if len(bz) == 1 and not az:
        return BlockKey("zbar", (bz[0],))
    if len(az) == 2 and not bz:
        return BlockKey("zz", tuple(sorted(az)))
    if len(bz) == 2 and not az:
        return BlockKey("zbarzbar", tuple(sorted(bz)))
    if len(az) == 1 and len(bz) == 1:
        return BlockKey("zzbar", (az[0], bz[0]))
    raise ValueError("monomial outside the second-order truncation")


def blocks_from_poly(R) -> dict:
    """Group the second-order part of a HamiltonianPoly into block functions."""
    out = {}
    for tail, f in R.x_functions().items():
        out[block_key_from_tail(R.layout, tail)] = f
    return out


def poly_from_blocks(blocks: Mapping, like):
    """Inverse of ``blocks_from_poly`` on the layout, tangent and caps of ``like``."""
    P = like.zero()
    for key, f in sorted(blocks.items()):
        if f.is_zero():
            continue
        l, a, b = key.normal_parts()
        P = P + like.from_x_function(f, like.normal_key(l, a, b))
    return P


@dataclass
class BlockSolution:
    """Output of ``solve_block_F``: generating blocks plus what goes into the new normal form."""

    F: dict
    residuals: dict
    omega_shift: dict
    Omega_shift: dict
    constant: complex
    remainder: dict
    min_divisors: dict
    guard: dict
    reports: dict

    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def to_json_obj(self) -> dict:
        return {
            "residuals": {k.label(): v for k, v in sorted(self.residuals.items())},
            "min_divisors": {k.label(): v for k, v in sorted(self.min_divisors.items())},
            "omega_shift": {str(j): [complex(v).real, complex(v).imag] for j, v in sorted(self.omega_shift.items())},
            "remainder_blocks": sorted(k.label() for k in self.remainder),
            "guard": self.guard,
            "divisor_scope": "harmonics present in each block right-hand side",
        }


def _stage_combination(N, net: Mapping[int, int], idx):
    """Constant part and per-stage variable parts of ``<alpha - beta, Omega(x)>``."""
    bar = 0.0
    nst = max((len(N.Omega[j]) for j in net), default=0)
    stages = [TorusFourier(idx, 0) for _ in range(nst)]
    for j, c in net.items():
        bar += c * N.Omega_bar(j)
        for i, st in enumerate(N.Omega[j]):
            tilde = average_and_tilde(st)[1]
            stages[i] = stages[i] + c * tilde.embed(merge_index_sets(idx, tilde.index_set))
    return bar, stages


def _block_residual(f, r, omega, bar, stages, K):
    """Relative residual of ``d_omega f + i Omega_l(x) f = r`` on ``|k| <= K``."""
    idx = merge_index_sets(f.index_set, r.index_set, *[s.index_set for s in stages])
    f = f.embed(idx)
    w = omega_vector(idx, omega)
    lhs = f.map_coeffs(1j * (f.keys @ w) + 1j * bar)
    for st in stages:
        if st.is_zero():
            continue
        prod, _ = mul(st.embed(idx), f, K)
        lhs = lhs + 1j * prod
    lhs, _ = gamma_truncate(lhs.with_cutoff(max(lhs.cutoff, lhs.max_order())), K)
    rr, _ = gamma_truncate(r.embed(idx).with_cutoff(max(r.cutoff, r.max_order())), K)
    den = _l2(rr)
    return _l2(lhs - rr) / den if den else _l2(lhs)


def solve_block_F(N, R_blocks: Mapping, profile: DiophantineProfile | None, window, K: int,
                  harmonic_cutoff: int | None = None, sigma: float | None = None,
                  guard_C: float = 1.0, gamma_tilde: float = 1.0, check_divisors: bool = True,
                  tol: float = 1e-14) -> BlockSolution:
    """Solve ``d_omega F_b + i<alpha-beta, Omega(x)> F_b = R_b`` block by block.

    x and y blocks lose their averages (a dropped constant and the frequency
    shift ``omega'``); diagonal ``z_j zbar_j`` blocks are not solved but move
    into the normal form as ``Omega'_j = 2 R_jj(x)``; anti-diagonal blocks
    ``z_{-j} zbar_j`` are solved only for ``|j| <= K`` and kept as remainder
    otherwise.
    """
    omega = dict(N.omega)
    tangent = N.tangent
    w_vec = omega_vector(tangent, omega)
    s = window.s if window is not None else 0.0
    F, residuals, mins, reports, remainder = {}, {}, {}, {}, {}
    omega_shift, Omega_shift = {}, {}
    constant = 0j
    guard_info: dict = {}
    n = len(tangent)
    tau = profile.tau[-1] if profile is not None else 0.0
    for key in sorted(R_blocks):
        r = R_blocks[key]
        if r.is_zero():
            continue
        r = r.embed(merge_index_sets(tangent, r.index_set))
        Kh = harmonic_cutoff if harmonic_cutoff is not None else max(r.cutoff, r.max_order())
        if key.kind in ("x", "y"):
            avg, rt = average_and_tilde(r)
            if key.kind == "x":
                constant += avg
            else:
                omega_shift[key.modes[0]] = avg
            if rt.is_zero():
                continue
            if check_divisors:
                mins[key] = _check_block_divisors(rt, w_vec, 0.0, key, profile)
            f = solve_dw(w_vec, rt, None)
            F[key] = f
            residuals[key] = _block_residual(f, rt, w_vec, 0.0, [], Kh)
            continue
        if key.is_diagonal:
            j = key.modes[0]
            Omega_shift[j] = 2.0 * r
            continue
        if key.is_anti_diagonal and abs(key.modes[1]) > K:
            remainder[key] = r
            continue
        bar, stages = _stage_combination(N, key.net, tangent)
        stages = [st for st in stages if not st.is_zero()]
        if check_divisors:
            mins[key] = _check_block_divisors(r, w_vec, bar, key, profile)
        rep: dict = {}
        if key.is_anti_diagonal:
            sig = sigma if sigma is not None else (s / 20.0 if s else 0.05)
            gam = profile.gamma if profile is not None else [0.0]
            ok = anti_diagonal_guard(K, s, gam, sig, n, tau, guard_C)
            guard_info[key.label()] = {"K": K, "s": s, "sum_gamma": float(sum(gam)), "sigma": sig,
                                       "n": n, "tau": tau, "C": guard_C, "holds": ok}
            if not ok:
                raise GuardViolation(f"anti-diagonal guard fails for {key.label()}: "
                                     f"exp({guard_C}*{K}*{s}*{sum(gam):.3g}) > sigma^-{guard_C}(n+tau)")
            f = solve_liu_yuan(w_vec, bar, stages, r.map_coeffs(-1j), None, window, K=Kh,
                               gamma_tilde=gamma_tilde, tol=tol, report=rep)
        elif not stages:
            f = solve_shifted(w_vec, -bar, r.map_coeffs(1j), None, rep)
            f, _ = gamma_truncate(f.with_cutoff(max(f.cutoff, f.max_order(), Kh)), Kh)
        else:
            a_stages = [st / bar for st in stages]
            f = solve_large_variable(w_vec, -bar, a_stages, r.map_coeffs(1j), None, window, K=Kh,
                                     tol=tol, report=rep)
        F[key] = f
        reports[key] = rep
        residuals[key] = _block_residual(f, r, w_vec, bar, stages, Kh)
    return BlockSolution(F=F, residuals=residuals, omega_shift=omega_shift, Omega_shift=Omega_shift,
                         constant=constant, remainder=remainder, min_divisors=mins, guard=guard_info,
                         reports=reports)


def _check_block_divisors(r: TorusFourier, w, bar: float, key: BlockKey,
                          profile: DiophantineProfile | None) -> float:
    """Lower bounds per divisor class; raises SmallDivisor with the block label."""
    net = key.net
    lw = l2_weight(net)
    keys = r.keys
    div = keys @ w + bar
    dmin = float("inf")
    for row, dv in zip(keys, div):
        k_zero = not np.any(row)
        kb = float(bracket_weight(row))
        if profile is None:
            bound = 1e-300
        elif key.kind in ("x", "y"):
            l = profile.stage_for([j for j, v in zip(r.index_set, row) if v])
            bound = profile.alpha[l] / kb ** profile.tau[l]
        elif key.is_anti_diagonal:
            bound = profile.beta * abs(key.modes[1]) / kb ** profile.tau[-1]
        elif k_zero:
            bound = profile.m_lower * lw
        else:
            bound = profile.beta * lw / kb ** profile.tau[-1]
        if abs(dv) < bound or abs(dv) == 0.0:
            raise SmallDivisor(f"block {key.label()}: divisor {abs(dv):.3e} below {bound:.3e} "
                               f"at k={tuple(int(v) for v in row)}",
                               k=tuple(int(v) for v in row), block=key.label(), value=dv, bound=bound)
        dmin = min(dmin, abs(dv))
    return dmin
