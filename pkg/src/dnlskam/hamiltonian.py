"""Polynomial Hamiltonians ``sum c e^{ikx} y^l z^alpha zbar^beta`` on a truncated phase space.

All modes ``0 < |j| <= Jmax`` share one key layout of four column blocks
(harmonics k, y-powers l, z-powers alpha, zbar-powers beta). A mode is
tangential when it carries an angle/action pair and normal otherwise; the
bracket formula does not need to know which, because tangential modes never
carry z-powers and normal modes never carry k or l.

Normal coordinates follow the symplectic form ``sum dx^dy + (i/2) sum dzbar^dz``,
so the normal part of the bracket carries the factor ``2i`` and a normal-form
term with frequency ``Omega_j`` reads ``(Omega_j/2) z_j zbar_j``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import DegeneratePair
from .fourier import TorusFourier, evaluate_many, merge_index_sets, sup_norm_bound

NORMAL_BRACKET_FACTOR = 2j

BLOCK_NAMES = ("x", "y", "z", "zbar", "zz", "zbarzbar", "zzbar")


@dataclass(frozen=True)
class AnalyticityWindow:
    """Strip half-width ``s``, radius ``r`` and the weight exponents ``a``, ``p`` of l^{a,p}."""

    s: float
    r: float
    a: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if not (self.s > 0 and self.r > 0):
            raise ValueError("window needs s > 0 and r > 0")
        if self.a < 0 or self.p <= 1.5:
            raise ValueError("window needs a >= 0 and p > 3/2")

    def replace(self, **kw) -> "AnalyticityWindow":
        d = dict(s=self.s, r=self.r, a=self.a, p=self.p)
        d.update(kw)
        return AnalyticityWindow(**d)


class ModeLayout:
    """Column bookkeeping for modes ``-Jmax..-1, 1..Jmax``."""

    def __init__(self, jmax: int):
        if jmax < 1:
            raise ValueError("jmax must be positive")
        self.jmax = int(jmax)
        self.modes = tuple(list(range(-jmax, 0)) + list(range(1, jmax + 1)))
        self.M = len(self.modes)
        self._col = {j: c for c, j in enumerate(self.modes)}
        self.mode_array = np.array(self.modes)

    def __eq__(self, other):
        return isinstance(other, ModeLayout) and other.jmax == self.jmax

    def __hash__(self):
        return hash(self.jmax)

    def col(self, j: int) -> int:
        try:
            return self._col[int(j)]
        except KeyError:
            raise KeyError(f"mode {j} outside |j| <= {self.jmax}") from None

    def k_col(self, j):
        return self.col(j)

    def l_col(self, j):
        return self.M + self.col(j)

    def a_col(self, j):
        return 2 * self.M + self.col(j)

    def b_col(self, j):
        return 3 * self.M + self.col(j)

    @property
    def width(self) -> int:
        return 4 * self.M

    def key(self, k=None, l=None, alpha=None, beta=None) -> np.ndarray:
        row = np.zeros(self.width, np.int16)
        for block, data in enumerate((k, l, alpha, beta)):
            for j, v in (data or {}).items():
                row[block * self.M + self.col(j)] += v
        return row

    def z_weights(self, window: AnalyticityWindow, shift: float = 0.0) -> np.ndarray:
        """``|j|^(p-shift) e^{a|j|}`` per column."""
        aj = np.abs(self.mode_array).astype(float)
        return aj ** (window.p - shift) * np.exp(window.a * aj)

    def log_weights(self, window: AnalyticityWindow) -> np.ndarray:
        """Per-column log majorant weights for the monomial bound on D(s, r)."""
        M = self.M
        lw = np.zeros(self.width)
        lw[M:2 * M] = 2.0 * math.log(window.r)
        zlog = math.log(window.r) - np.log(self.z_weights(window))
        lw[2 * M:3 * M] = zlog
        lw[3 * M:] = zlog
        return lw


@dataclass(frozen=True)
class Caps:
    """Degree cap (in 2|l|+|alpha|+|beta|) and harmonic cap (l1) of the stored algebra."""

    degree: int = 4
    harmonic: int = 8


class HamiltonianPoly:
    """Immutable sparse polynomial Hamiltonian."""

    __slots__ = ("layout", "tangent", "keys", "coeffs", "caps", "window")

    def __init__(self, layout: ModeLayout, tangent: Sequence[int], keys=None, coeffs=None,
                 caps: Caps = Caps(), window: AnalyticityWindow | None = None, check: bool = True):
        tangent = tuple(sorted(int(j) for j in tangent))
        W = layout.width
        if keys is None:
            keys = np.zeros((0, W), np.int8)
            coeffs = np.zeros(0, complex)
        keys = np.asarray(keys).reshape(-1, W)
        coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)
        if keys.size and np.abs(keys).max() > 127:
            raise OverflowError("exponent exceeds int8 storage")
        keys, coeffs = kernels.aggregate(keys.astype(np.int8), coeffs)
        nz = coeffs != 0
        keys, coeffs = keys[nz], coeffs[nz]
        if check and keys.shape[0]:
            M = layout.M
            tmask = np.zeros(M, bool)
            for j in tangent:
                tmask[layout.col(j)] = True
            if np.any(keys[:, :2 * M][:, np.concatenate([~tmask, ~tmask])] != 0):
                raise ValueError("angle/action exponent on a normal mode")
            if np.any(keys[:, 2 * M:][:, np.concatenate([tmask, tmask])] != 0):
                raise ValueError("z exponent on a tangential mode")
            if np.any(keys[:, M:] < 0):
                raise ValueError("negative power of y, z or zbar")
        keys.setflags(write=False)
        coeffs.setflags(write=False)
        for name, value in (("layout", layout), ("tangent", tangent), ("keys", keys),
                            ("coeffs", coeffs), ("caps", caps), ("window", window)):
            object.__setattr__(self, name, value)

    def __setattr__(self, name, value):
        raise AttributeError("HamiltonianPoly is immutable")

    def __reduce__(self):
        return (HamiltonianPoly, (self.layout, self.tangent, self.keys, self.coeffs, self.caps, self.window))

    # construction -------------------------------------------------------
    @classmethod
    def from_terms(cls, layout, tangent, terms: Iterable, caps: Caps = Caps(), window=None):
        """``terms`` yields ``(k, l, alpha, beta, coeff)`` with dict exponents keyed by mode."""
        rows, vals = [], []
        for k, l, alpha, beta, c in terms:
            rows.append(layout.key(k, l, alpha, beta))
            vals.append(c)
        if not rows:
            return cls(layout, tangent, caps=caps, window=window)
        return cls(layout, tangent, np.array(rows), np.array(vals), caps=caps, window=window)

    def like(self, keys, coeffs, tangent=None) -> "HamiltonianPoly":
        return HamiltonianPoly(self.layout, self.tangent if tangent is None else tangent,
                               keys, coeffs, self.caps, self.window)

    def zero(self) -> "HamiltonianPoly":
        return self.like(None, None)

    def with_window(self, window) -> "HamiltonianPoly":
        return HamiltonianPoly(self.layout, self.tangent, self.keys, self.coeffs, self.caps, window, check=False)

    def with_caps(self, caps) -> "HamiltonianPoly":
        return HamiltonianPoly(self.layout, self.tangent, self.keys, self.coeffs, caps, self.window, check=False)

    # views --------------------------------------------------------------
    @property
    def nterms(self) -> int:
        return self.coeffs.shape[0]

    @property
    def M(self) -> int:
        return self.layout.M

    def is_zero(self) -> bool:
        return self.nterms == 0

    def k_part(self):
        return self.keys[:, :self.M].astype(np.int64)

    def l_part(self):
        return self.keys[:, self.M:2 * self.M].astype(np.int64)

    def alpha_part(self):
        return self.keys[:, 2 * self.M:3 * self.M].astype(np.int64)

    def beta_part(self):
        return self.keys[:, 3 * self.M:].astype(np.int64)

    def degrees(self) -> np.ndarray:
        return 2 * self.l_part().sum(axis=1) + self.alpha_part().sum(axis=1) + self.beta_part().sum(axis=1)

    def harmonic_orders(self) -> np.ndarray:
        return np.abs(self.k_part()).sum(axis=1)

    def normal_modes(self) -> tuple:
        return tuple(j for j in self.layout.modes if j not in self.tangent)

    def terms(self):
        """Yield ``(k, l, alpha, beta, coeff)`` with sparse dict exponents."""
        modes = self.layout.modes
        M = self.M
        for row, c in zip(self.keys, self.coeffs):
            blocks = []
            for b in range(4):
                seg = row[b * M:(b + 1) * M]
                blocks.append({modes[i]: int(seg[i]) for i in np.nonzero(seg)[0]})
            yield (*blocks, complex(c))

    def coefficient(self, k=None, l=None, alpha=None, beta=None) -> complex:
        row = self.layout.key(k, l, alpha, beta).astype(np.int8)
        hit = np.all(self.keys == row, axis=1)
        return complex(self.coeffs[hit][0]) if hit.any() else 0j

    # arithmetic ---------------------------------------------------------
    def _merge_tangent(self, other):
        if other.layout != self.layout:
            raise ValueError("incompatible mode layouts")
        return tuple(sorted(set(self.tangent) | set(other.tangent)))

    def __add__(self, other):
        if other == 0:
            return self
        tangent = self._merge_tangent(other)
        return self.like(np.vstack([self.keys, other.keys]), np.concatenate([self.coeffs, other.coeffs]), tangent)

    __radd__ = __add__

    def __neg__(self):
        return self.like(self.keys, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c):
        if isinstance(c, HamiltonianPoly):
            raise TypeError("use hamiltonian.product for polynomial products")
        return self.like(self.keys, self.coeffs * complex(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / complex(c))

    def select(self, mask) -> "HamiltonianPoly":
        mask = np.asarray(mask, bool)
        return HamiltonianPoly(self.layout, self.tangent, self.keys[mask], self.coeffs[mask],
                               self.caps, self.window, check=False)

    def drop_small(self, threshold: float, window: AnalyticityWindow):
        """Drop monomials whose majorant is below ``threshold``; returns (poly, dropped majorant)."""
        mu = monomial_majorants(self, window)
        keep = mu >= threshold
        return self.select(keep), float(mu[~keep].sum())

    def max_abs_diff(self, other) -> float:
        d = self - other
        return float(np.abs(d.coeffs).max()) if d.nterms else 0.0

    def conj_reflect(self) -> "HamiltonianPoly":
        """Coefficient of ``(k,l,alpha,beta)`` becomes conj of the coefficient of ``(-k,l,beta,alpha)``."""
        M = self.M
        keys = self.keys.astype(np.int16).copy()
        keys[:, :M] *= -1
        keys[:, 2 * M:3 * M], keys[:, 3 * M:] = self.keys[:, 3 * M:].copy(), self.keys[:, 2 * M:3 * M].copy()
        return self.like(keys, np.conj(self.coeffs))

    def reality_defect(self) -> float:
        return self.max_abs_diff(self.conj_reflect())

    def real_part(self) -> "HamiltonianPoly":
        return 0.5 * (self + self.conj_reflect())

    def __repr__(self):
        return f"HamiltonianPoly(jmax={self.layout.jmax}, tangent={self.tangent}, nterms={self.nterms})"

    # grouping by normal structure ----------------------------------------
    def x_functions(self) -> dict:
        """Group terms by their (l, alpha, beta) part; values are TorusFourier over the tangent angles."""
        M = self.M
        tail = self.keys[:, M:]
        out = {}
        if not self.nterms:
            return out
        kcols = [self.layout.col(j) for j in self.tangent]
        uniq, inv = np.unique(tail, axis=0, return_inverse=True)
        inv = np.asarray(inv).reshape(-1)
        for g, row in enumerate(uniq):
            sel = inv == g
            keys = self.keys[sel][:, kcols]
            cutoff = int(np.abs(keys.astype(int)).sum(axis=1).max()) if keys.size else 0
            out[tuple(int(v) for v in row)] = TorusFourier(self.tangent, max(cutoff, self.caps.harmonic),
                                                           keys, self.coeffs[sel])
        return out

    def from_x_function(self, f: TorusFourier, normal_key: Sequence[int]) -> "HamiltonianPoly":
        """Monomials ``f(x) * y^l z^alpha zbar^beta`` with the (l, alpha, beta) part given as a key tail."""
        if f.is_zero():
            return self.zero()
        f = f.embed(merge_index_sets(self.tangent, f.index_set))
        keys = np.zeros((f.nterms, self.layout.width), np.int16)
        for col, j in enumerate(f.index_set):
            keys[:, self.layout.col(j)] = f.keys[:, col]
        keys[:, self.M:] = np.asarray(normal_key, np.int16)[None, :]
        return self.like(keys, f.coeffs)

    def normal_key(self, l=None, alpha=None, beta=None) -> tuple:
        row = self.layout.key(None, l, alpha, beta)
        return tuple(int(v) for v in row[self.M:])

    # serialisation -------------------------------------------------------
    def to_json_obj(self) -> dict:
        order = np.lexsort(self.keys.T[::-1])
        terms = []
        for i in order:
            k, l, a, b, c = next(self.select(np.arange(self.nterms) == i).terms())
            terms.append({"k": {str(j): v for j, v in sorted(k.items())},
                          "l": {str(j): v for j, v in sorted(l.items())},
                          "alpha": {str(j): v for j, v in sorted(a.items())},
                          "beta": {str(j): v for j, v in sorted(b.items())},
                          "re": float(c.real), "im": float(c.imag)})
        obj = {"jmax": self.layout.jmax, "tangent": list(self.tangent),
               "caps": {"degree": self.caps.degree, "harmonic": self.caps.harmonic},
               "terms": terms}
        if self.window is not None:
            w = self.window
            obj["window"] = {"s": w.s, "r": w.r, "a": w.a, "p": w.p}
        return obj

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)

    @classmethod
    def from_json_obj(cls, obj) -> "HamiltonianPoly":
        layout = ModeLayout(obj["jmax"])
        caps = Caps(**obj.get("caps", {}))
        window = AnalyticityWindow(**obj["window"]) if "window" in obj else None

        def dec(d):
            return {int(j): int(v) for j, v in d.items()}

        terms = [(dec(t["k"]), dec(t["l"]), dec(t["alpha"]), dec(t["beta"]), complex(t["re"], t["im"]))
                 for t in obj["terms"]]
        return cls.from_terms(layout, obj["tangent"], terms, caps, window)

    @classmethod
    def from_json(cls, text: str) -> "HamiltonianPoly":
        return cls.from_json_obj(json.loads(text))


# --------------------------------------------------------------------------
# algebra

def _default_window(*polys):
    for p in polys:
        if p.window is not None:
            return p.window
    return AnalyticityWindow(1.0, 1.0)


def product(F: HamiltonianPoly, G: HamiltonianPoly, caps: Caps | None = None, window=None):
    """Truncated product; returns ``(F*G, dropped majorant)``."""
    caps = caps or F.caps
    window = window or _default_window(F, G)
    tangent = F._merge_tangent(G)
    keys, coefs, dropped = kernels.poly_product(F.keys, F.coeffs, G.keys, G.coeffs, F.M, caps.harmonic,
                                                caps.degree, window.s, F.layout.log_weights(window))
    return HamiltonianPoly(F.layout, tangent, keys, coefs, caps, F.window, check=False), dropped


def poisson_bracket(F: HamiltonianPoly, G: HamiltonianPoly, caps: Caps | None = None, window=None):
    """``{F, G} = sum_J (F_x G_y - F_y G_x) + 2i sum_normal (F_z G_zbar - F_zbar G_z)``.

    Returns ``(bracket truncated to the caps, dropped majorant)``.
    """
    caps = caps or F.caps
    window = window or _default_window(F, G)
    tangent = F._merge_tangent(G)
    if F.is_zero() or G.is_zero():
        return HamiltonianPoly(F.layout, tangent, caps=caps, window=F.window), 0.0
    keys, coefs, dropped = kernels.poly_bracket(F.keys, F.coeffs, G.keys, G.coeffs, F.M, caps.harmonic,
                                                caps.degree, window.s, F.layout.log_weights(window),
                                                NORMAL_BRACKET_FACTOR)
    return HamiltonianPoly(F.layout, tangent, keys, coefs, caps, F.window, check=False), dropped


def derivative(P: HamiltonianPoly, var: str, j: int) -> HamiltonianPoly:
    """Partial derivative in ``x_j``, ``y_j``, ``z_j`` or ``zbar_j``."""
    lay = P.layout
    if var == "x":
        col = lay.k_col(j)
        return P.like(P.keys, P.coeffs * 1j * P.keys[:, col])
    col = {"y": lay.l_col, "z": lay.a_col, "zbar": lay.b_col}[var](j)
    power = P.keys[:, col].astype(np.int64)
    sel = power > 0
    keys = P.keys[sel].astype(np.int16)
    keys[:, col] -= 1
    return P.like(keys, P.coeffs[sel] * power[sel])


def truncate(P: HamiltonianPoly, caps: Caps, window=None):
    """Restrict to the caps; returns ``(poly, dropped majorant)``."""
    window = window or _default_window(P)
    keep = (P.degrees() <= caps.degree) & (P.harmonic_orders() <= caps.harmonic)
    mu = monomial_majorants(P, window)
    out = HamiltonianPoly(P.layout, P.tangent, P.keys[keep], P.coeffs[keep], caps, P.window, check=False)
    return out, float(mu[~keep].sum())


# --------------------------------------------------------------------------
# evaluation and norms

@dataclass
class PhasePoint:
    """Arrays over all layout columns; entries of irrelevant modes are ignored."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    zbar: np.ndarray

    def logvector(self):
        return np.concatenate([1j * self.x, self.y, self.z, self.zbar])


def evaluate(P: HamiltonianPoly, point: PhasePoint) -> complex:
    return complex(evaluate_batch(P, [point])[0])


def evaluate_batch(P: HamiltonianPoly, points: Sequence[PhasePoint]) -> np.ndarray:
    if not P.nterms:
        return np.zeros(len(points), complex)
    M = P.M
    out = np.empty(len(points), complex)
    keys = P.keys.astype(np.float64)
    for n, pt in enumerate(points):
        vals = np.concatenate([pt.y, pt.z, pt.zbar]).astype(complex)
        zero = vals == 0
        logs = np.zeros_like(vals)
        logs[~zero] = np.log(vals[~zero])
        dead = np.any(P.keys[:, M:][:, zero] > 0, axis=1)
        expo = keys[:, :M] @ (1j * np.asarray(pt.x, complex)) + keys[:, M:] @ logs
        term = np.exp(expo)
        term[dead] = 0
        out[n] = np.sum(P.coeffs * term)
    return out


def monomial_majorants(P: HamiltonianPoly, window: AnalyticityWindow) -> np.ndarray:
    """Per-monomial bound ``|c| e^{s|k|} r^{2|l|} prod (r/w_j)^{alpha_j+beta_j}`` on D(s, r)."""
    if not P.nterms:
        return np.zeros(0)
    lw = P.layout.log_weights(window)
    M = P.M
    expo = window.s * P.harmonic_orders() + P.keys[:, M:].astype(float) @ lw[M:]
    return np.abs(P.coeffs) * np.exp(expo)


def function_majorant(P: HamiltonianPoly, window: AnalyticityWindow) -> float:
    return float(monomial_majorants(P, window).sum())


@dataclass
class VFNorm:
    lower: float
    upper: float
    components: dict = field(default_factory=dict)

    def __float__(self):
        return self.upper


def _vf_components_majorant(P, window):
    M = P.M
    lay = P.layout
    mu = monomial_majorants(P, window)
    r = window.r
    if not P.nterms:
        return 0.0, 0.0, 0.0, 0.0
    zr = r / lay.z_weights(window)
    X = (mu[:, None] * P.l_part()).sum(axis=0) / r ** 2
    Y = (mu[:, None] * np.abs(P.k_part())).sum(axis=0)
    Z = (mu[:, None] * P.beta_part()).sum(axis=0) / zr
    Zb = (mu[:, None] * P.alpha_part()).sum(axis=0) / zr
    w1 = lay.z_weights(window, shift=1.0)
    return (float(X.max()), float(Y.max()) / r ** 2,
            float(np.sqrt(np.sum((Z * w1) ** 2))) / r, float(np.sqrt(np.sum((Zb * w1) ** 2))) / r)


def sample_phase_points(P: HamiltonianPoly, window: AnalyticityWindow, count: int,
                        rng: np.random.Generator) -> list:
    M = P.M
    lay = P.layout
    w = lay.z_weights(window)
    pts = []
    for _ in range(count):
        x = rng.uniform(0, 2 * np.pi, M) + 1j * rng.uniform(-1, 1, M) * window.s * 0.999
        y = window.r ** 2 * 0.999 * np.sqrt(rng.uniform(0, 1, M)) * np.exp(2j * np.pi * rng.uniform(size=M))

        def ball():
            v = rng.normal(size=M) + 1j * rng.normal(size=M)
            v = v / np.sqrt(np.sum(np.abs(v * w) ** 2))
            return v * window.r * 0.999 * rng.uniform() ** (1.0 / (2 * M))

        pts.append(PhasePoint(x, y, ball(), ball()))
    return pts


def vector_field_at(P: HamiltonianPoly, point: PhasePoint):
    """``(P_y, -P_x, i P_zbar, -i P_z)`` at a point with nonzero y, z, zbar entries."""
    M = P.M
    if not P.nterms:
        zero = np.zeros(M, complex)
        return zero, zero, zero, zero
    keys = P.keys.astype(np.float64)
    vals = np.concatenate([point.y, point.z, point.zbar]).astype(complex)
    term = P.coeffs * np.exp(keys[:, :M] @ (1j * point.x) + keys[:, M:] @ np.log(vals))
    y, z, zb = point.y, point.z, point.zbar
    Py = (term[:, None] * P.l_part()).sum(axis=0) / y
    Px = (term[:, None] * 1j * P.k_part()).sum(axis=0)
    Pz = (term[:, None] * P.alpha_part()).sum(axis=0) / z
    Pzb = (term[:, None] * P.beta_part()).sum(axis=0) / zb
    return Py, -Px, 1j * Pzb, -1j * Pz


def vf_majorant(P: HamiltonianPoly, window: AnalyticityWindow | None = None) -> float:
    """Coefficient majorant of the weighted vector-field norm (the ``upper`` of :func:`vf_norm`)."""
    window = window or _default_window(P)
    return float(sum(_vf_components_majorant(P, window)))


def vf_norm(P: HamiltonianPoly, window: AnalyticityWindow | None = None, sample_count: int = 8,
            rng: np.random.Generator | None = None) -> VFNorm:
    """Weighted vector-field norm ``|X| + |Y|/r^2 + ||Z||/r + ||Zbar||/r`` on D(s, r).

    ``upper`` is the coefficient majorant, ``lower`` the maximum over sampled points.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    window = window or _default_window(P)
    parts = _vf_components_majorant(P, window)
    upper = float(sum(parts))
    if not P.nterms:
        return VFNorm(0.0, 0.0, dict(X=0.0, Y=0.0, Z=0.0, Zbar=0.0))
    rng = rng or np.random.default_rng(0)
    lay = P.layout
    w1 = lay.z_weights(window, shift=1.0)
    lower = 0.0
    for pt in sample_phase_points(P, window, sample_count, rng):
        X, Y, Z, Zb = vector_field_at(P, pt)
        val = (np.abs(X).max() + np.abs(Y).max() / window.r ** 2
               + np.sqrt(np.sum(np.abs(Z * w1) ** 2)) / window.r
               + np.sqrt(np.sum(np.abs(Zb * w1) ** 2)) / window.r)
        lower = max(lower, float(val))
    return VFNorm(lower, upper, dict(zip(("X", "Y", "Z", "Zbar"), parts)))


def lipschitz_seminorm(family: Callable[[Mapping[int, float]], HamiltonianPoly], pairs, window=None,
                       sample_count: int = 1) -> float:
    """``max vf_norm(P(s1) - P(s2)) / ||s1 - s2||`` over the given parameter pairs (majorant)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("pairs must be nonempty")
    best = 0.0
    for s1, s2 in pairs:
        keys = sorted(set(s1) | set(s2))
        dist = math.sqrt(sum((s1.get(j, 0.0) - s2.get(j, 0.0)) ** 2 for j in keys))
        if dist == 0:
            raise DegeneratePair("parameter pair with zero distance")
        diff = family(s1) - family(s2)
        best = max(best, vf_norm(diff, window, sample_count).upper / dist)
    return best


# --------------------------------------------------------------------------
# structure

def block_kind(P: HamiltonianPoly) -> np.ndarray:
    """Name of the quadratic block of each monomial ('' when outside the second-order truncation)."""
    deg_l = P.l_part().sum(axis=1)
    na = P.alpha_part().sum(axis=1)
    nb = P.beta_part().sum(axis=1)
    kinds = np.full(P.nterms, "", dtype=object)
    base = deg_l == 0
    kinds[base & (na == 0) & (nb == 0)] = "x"
    kinds[(deg_l == 1) & (na == 0) & (nb == 0)] = "y"
    kinds[base & (na == 1) & (nb == 0)] = "z"
    kinds[base & (na == 0) & (nb == 1)] = "zbar"
    kinds[base & (na == 2) & (nb == 0)] = "zz"
    kinds[base & (na == 0) & (nb == 2)] = "zbarzbar"
    kinds[base & (na == 1) & (nb == 1)] = "zzbar"
    return kinds


def taylor_truncate_R(P: HamiltonianPoly):
    """Second-order part R (2|l|+|alpha|+|beta| <= 2) and the remainder P - R."""
    keep = P.degrees() <= 2
    return P.select(keep), P.select(~keep)


def split_blocks(R: HamiltonianPoly) -> dict:
    kinds = block_kind(R)
    return {name: R.select(kinds == name) for name in BLOCK_NAMES}


def check_momentum_mass(P: HamiltonianPoly):
    """Integer momentum and mass sums per monomial; returns (momentum_ok, mass_ok, violations)."""
    j = P.layout.mode_array
    k = P.k_part()
    net = P.alpha_part() - P.beta_part()
    momentum = k @ j + net @ j
    mass = k.sum(axis=1) + net.sum(axis=1)
    bad = (momentum != 0) | (mass != 0)
    violations = []
    for idx in np.nonzero(bad)[0]:
        term = next(P.select(np.arange(P.nterms) == idx).terms())
        violations.append({"term": term, "momentum": int(momentum[idx]), "mass": int(mass[idx])})
    return bool(np.all(momentum == 0)), bool(np.all(mass == 0)), violations


# --------------------------------------------------------------------------
# normal form

class NormalForm:
    """``sum omega_j y_j + sum (Omega_j(x)/2) z_j zbar_j`` with staged normal frequencies.

    ``Omega[j]`` is a list of TorusFourier stages; stage ``i`` depends only on the
    angles that were tangential when it was created.
    """

    def __init__(self, omega: Mapping[int, float], Omega: Mapping[int, Sequence[TorusFourier]]):
        self.omega = {int(j): float(v) for j, v in omega.items()}
        self.Omega = {int(j): list(st) for j, st in Omega.items()}
        overlap = set(self.omega) & set(self.Omega)
        if overlap:
            raise ValueError(f"modes {sorted(overlap)} both tangential and normal")

    @property
    def tangent(self) -> tuple:
        return tuple(sorted(self.omega))

    def copy(self) -> "NormalForm":
        return NormalForm(dict(self.omega), {j: list(st) for j, st in self.Omega.items()})

    def Omega_total(self, j: int, index_set=None) -> TorusFourier:
        idx = tuple(index_set) if index_set is not None else self.tangent
        total = TorusFourier(idx, 0)
        for stage in self.Omega[j]:
            total = total + stage.embed(merge_index_sets(idx, stage.index_set))
        return total

    def Omega_bar(self, j: int) -> float:
        from .fourier import average_and_tilde
        return float(average_and_tilde(self.Omega_total(j))[0].real)

    def Omega_tilde_stages(self, j: int) -> list:
        from .fourier import average_and_tilde
        return [average_and_tilde(st)[1] for st in self.Omega[j]]

    def is_constant(self, j: int) -> bool:
        return all(st.max_order() == 0 for st in self.Omega[j])

    def frequencies(self) -> dict:
        """Constant parts: omega on tangential modes, [Omega] on normal ones."""
        out = dict(self.omega)
        for j in self.Omega:
            out[j] = self.Omega_bar(j)
        return out

    def to_poly(self, layout: ModeLayout, caps: Caps = Caps(), window=None) -> HamiltonianPoly:
        tangent = self.tangent
        H = HamiltonianPoly(layout, tangent, caps=caps, window=window)
        terms = [({}, {j: 1}, {}, {}, w) for j, w in self.omega.items()]
        H = H + HamiltonianPoly.from_terms(layout, tangent, terms, caps, window)
        for j in self.Omega:
            f = self.Omega_total(j, tangent)
            H = H + H.from_x_function(0.5 * f, H.normal_key(alpha={j: 1}, beta={j: 1}))
        return H

    def max_stage_order(self) -> int:
        return max((st.max_order() for sts in self.Omega.values() for st in sts), default=0)

    def to_json_obj(self) -> dict:
        return {"omega": {str(j): w for j, w in sorted(self.omega.items())},
                "Omega": {str(j): [st.to_json_obj() for st in sts] for j, sts in sorted(self.Omega.items())}}

    @classmethod
    def from_json_obj(cls, obj) -> "NormalForm":
        return cls({int(j): w for j, w in obj["omega"].items()},
                   {int(j): [TorusFourier.from_json_obj(s) for s in sts] for j, sts in obj["Omega"].items()})


def x_function_majorant(f: TorusFourier, s: float) -> float:
    return sup_norm_bound(f, s)
