"""Product probability measure on the parameter cube, resonance zones and Monte-Carlo estimates.

The parameter space is ``prod_j [0, 1/|j|]`` with coordinate law ``|j| * Lebesgue``,
i.e. ``sigma_j = u_j / |j|`` for independent uniform ``u_j``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .errors import NonBoxBase


@dataclass(frozen=True)
class ParameterPoint:
    """Finitely many stored coordinates; anything past ``dim_cutoff`` takes ``default``."""

    entries: Mapping[int, float]
    dim_cutoff: int
    default: float = 0.0

    def __post_init__(self):
        clean = {}
        for j, s in dict(self.entries).items():
            j = int(j)
            if j == 0:
                raise ValueError("index 0 is not a parameter coordinate")
            if not (0.0 <= s <= 1.0 / abs(j)):
                raise ValueError(f"sigma_{j} = {s} outside [0, 1/{abs(j)}]")
            clean[j] = float(s)
        object.__setattr__(self, "entries", clean)

    def get(self, j: int) -> float:
        if abs(j) > self.dim_cutoff:
            return self.default
        return self.entries.get(int(j), self.default)

    def to_json_obj(self) -> dict:
        return {"entries": {str(j): s for j, s in sorted(self.entries.items())},
                "dim_cutoff": self.dim_cutoff, "default": self.default}

    @classmethod
    def from_json_obj(cls, obj) -> "ParameterPoint":
        return cls({int(j): float(s) for j, s in obj["entries"].items()}, int(obj["dim_cutoff"]),
                   float(obj.get("default", 0.0)))


def _coords(D: int) -> list:
    return [j for j in range(-D, D + 1) if j]


def sample_sigma(rng_seed: int, D: int) -> ParameterPoint:
    if D < 1:
        raise ValueError("D must be at least 1")
    rng = np.random.default_rng(rng_seed)
    js = _coords(D)
    u = rng.random(len(js))
    return ParameterPoint({j: ui / abs(j) for j, ui in zip(js, u)}, D)


def bracket(k: Mapping[int, int]) -> float:
    """``<k> = max(1, |k|_1)``."""
    return max(1.0, float(sum(abs(v) for v in k.values())))


def truncate_sigma(sigma: ParameterPoint, k: Mapping[int, int], alpha: float, tau: float) -> ParameterPoint:
    """Keep ``sigma_j`` for ``|j| < <k>^{2 tau + 2} / alpha^2`` and zero the rest."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    log_cut = (2 * tau + 2) * math.log(bracket(k)) - 2 * math.log(alpha)
    kept = {j: s for j, s in sigma.entries.items() if math.log(abs(j)) < log_cut}
    # coordinates past the cutoff are zeroed too, so the default beyond D becomes 0
    return ParameterPoint(kept, sigma.dim_cutoff, 0.0)


# --------------------------------------------------------------------------
# cylinders

@dataclass(frozen=True)
class CylinderSet:
    """``index_set`` with base a list of boxes ``{j: (lo, hi)}`` or a predicate on arrays."""

    index_set: tuple
    base: object

    def __post_init__(self):
        object.__setattr__(self, "index_set", tuple(sorted(int(j) for j in self.index_set)))
        if isinstance(self.base, (list, tuple)):
            for box in self.base:
                if set(box) - set(self.index_set):
                    raise ValueError("box uses coordinates outside the index set")


def _box_mass(box: Mapping[int, tuple], index_set) -> float:
    p = 1.0
    for j in index_set:
        lo, hi = box.get(j, (0.0, 1.0 / abs(j)))
        lo, hi = max(lo, 0.0), min(hi, 1.0 / abs(j))
        p *= max(0.0, hi - lo) * abs(j)
    return p


def _box_meet(a, b, index_set):
    out = {}
    for j in index_set:
        la, ha = a.get(j, (0.0, 1.0 / abs(j)))
        lb, hb = b.get(j, (0.0, 1.0 / abs(j)))
        out[j] = (max(la, lb), min(ha, hb))
    return out


def measure_of_cylinder(c: CylinderSet, mc_samples: int | None = None, seed: int = 0) -> float:
    """Exact measure of a finite union of boxes (inclusion-exclusion).

    A callable base raises :class:`NonBoxBase` unless ``mc_samples`` is given,
    in which case the Monte-Carlo frequency is returned.
    """
    if callable(c.base):
        if mc_samples is None:
            raise NonBoxBase("predicate base has no closed-form measure; pass mc_samples")
        rng = np.random.default_rng(seed)
        scale = np.array([1.0 / abs(j) for j in c.index_set])
        pts = rng.random((mc_samples, len(c.index_set))) * scale
        hits = np.asarray(c.base(pts), dtype=bool)
        return float(hits.mean())
    boxes = list(c.base)
    total = 0.0
    for r in range(1, len(boxes) + 1):
        for combo in itertools.combinations(boxes, r):
            meet = combo[0]
            for b in combo[1:]:
                meet = _box_meet(meet, b, c.index_set)
            total += (-1) ** (r + 1) * _box_mass(meet, c.index_set)
    return min(1.0, max(0.0, total))


# --------------------------------------------------------------------------
# frequencies and zones

@dataclass(frozen=True)
class FrequencyModel:
    """Asymptotic frequencies ``j^2 + sigma_j + j lam_bar + lam_tilde`` with optional exact overrides."""

    lam_bar: float = 0.0
    lam_tilde: float = 0.0
    overrides: Mapping[int, float] = field(default_factory=dict)

    def value(self, j: int, sigma_j):
        if j in self.overrides:
            return self.overrides[j] + 0 * sigma_j
        return j * j + sigma_j + j * self.lam_bar + self.lam_tilde


@dataclass(frozen=True)
class ResonanceZone:
    """``{sigma : |<k, omega> + <l, Omega_bar>| < 2 level <l>_2 / <k>^tau}``, membership at the truncated point.

    ``l`` maps normal modes to +-1 or +-2 with ``|l| <= 2``; an empty ``l`` is the tangent-only zone.
    """

    k: Mapping[int, int]
    l: Mapping[int, int]
    level: float
    tau: float
    v: int = 0
    model: FrequencyModel = field(default_factory=FrequencyModel)

    def __post_init__(self):
        object.__setattr__(self, "k", {int(a): int(b) for a, b in dict(self.k).items() if b})
        object.__setattr__(self, "l", {int(a): int(b) for a, b in dict(self.l).items() if b})
        if sum(abs(x) for x in self.l.values()) > 2:
            raise ValueError("|l| must be at most 2")
        if self.level <= 0:
            raise ValueError("level must be positive")

    @classmethod
    def from_pair(cls, k, i, j, level, tau, v=0, model=None, kind="diff"):
        """``l = e_i - e_j`` (kind 'diff') or ``e_i + e_j`` (kind 'sum')."""
        l = {i: 1}
        l[j] = l.get(j, 0) + (-1 if kind == "diff" else 1)
        return cls(k, l, level, tau, v, model or FrequencyModel())

    @property
    def l2(self) -> float:
        """``<l>_2 = max(1, |sum l_j j^2|)``."""
        return max(1.0, abs(sum(c * j * j for j, c in self.l.items())))

    @property
    def width(self) -> float:
        return 2 * self.level * self.l2 / bracket(self.k) ** self.tau

    @property
    def coords(self) -> tuple:
        return tuple(sorted(set(self.k) | set(self.l)))

    def kept(self) -> set:
        log_cut = (2 * self.tau + 2) * math.log(bracket(self.k)) - 2 * math.log(self.level)
        return {j for j in self.coords if math.log(abs(j)) < log_cut}

    def coefficients(self) -> dict:
        """Linear coefficient of each sigma coordinate in the divisor functional."""
        c = {}
        for j, v in list(self.k.items()) + list(self.l.items()):
            if j not in self.model.overrides:
                c[j] = c.get(j, 0) + v
        return {j: v for j, v in c.items() if v}

    def divisor(self, sig: Mapping[int, np.ndarray], truncate: bool = True):
        kept = self.kept() if truncate else set(self.coords)
        tot = 0.0
        for j, v in list(self.k.items()) + list(self.l.items()):
            s = sig[j] if j in kept else 0.0 * sig[j]
            tot = tot + v * self.model.value(j, s)
        return tot

    def contains(self, sigma: ParameterPoint, truncate: bool = True) -> bool:
        return bool(abs(self.divisor({j: sigma.get(j) for j in self.coords}, truncate)) < self.width)

    def divisor_range(self) -> tuple:
        """Exact range of the divisor over the cube (it is affine in sigma)."""
        base = self.divisor({j: 0.0 for j in self.coords}, truncate=True)
        kept = self.kept()
        lo = hi = base
        for j, c in self.coefficients().items():
            if j in kept:
                d = c / abs(j)
                lo += min(0.0, d)
                hi += max(0.0, d)
        return lo, hi


def wilson_interval(hits: int, n: int, level: float = 0.95) -> tuple:
    z = norm.ppf(0.5 + level / 2)
    p = hits / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == n else min(1.0, centre + half)
    return lo, hi


def zone_density_bound(zone: ResonanceZone) -> float:
    """Rigorous bound ``width * 2 * min_j |j| / |c_j|`` over coordinates moving the divisor."""
    kept = zone.kept()
    c = {j: v for j, v in zone.coefficients().items() if j in kept}
    if not c:
        lo, hi = zone.divisor_range()
        return 1.0 if abs(lo) < zone.width else 0.0
    return min(1.0, 2 * zone.width * min(abs(j) / abs(v) for j, v in c.items()))


def _is_anti_diagonal(zone: ResonanceZone) -> bool:
    ks = sorted(zone.l.items())
    return len(ks) == 2 and ks[0][0] == -ks[1][0] and ks[0][1] == -ks[1][1]


def _envelope_scale(zone: ResonanceZone) -> float:
    # anti-diagonal zones have <l>_2 = 1 and lose no power of <k>
    if _is_anti_diagonal(zone):
        return zone.level / bracket(zone.k) ** zone.tau
    return zone.level * zone.l2 / bracket(zone.k) ** (zone.tau - 1)


def zone_envelope(zone: ResonanceZone) -> tuple:
    """``(C, C * scale)`` with ``C = 4 max_j |j|`` over the moving coordinates.

    The scale is ``level <l>_2 / <k>^{tau-1}``, or ``level / <k>^tau`` for ``l = e_{-j} - e_j``.
    """
    c = zone.coefficients()
    C = 4.0 * max((abs(j) for j in c), default=1)
    return C, C * _envelope_scale(zone)


@dataclass
class ZoneEstimate:
    estimate: float
    ci: tuple
    hits: int
    samples: int
    envelope: float
    envelope_constant: float
    density_bound: float
    measured_constant: float
    verdict: bool

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ci"] = list(self.ci)
        return d


def zone_measure_mc(zone: ResonanceZone, N_builder: Callable | None = None, samples: int = 100_000,
                    seed: int = 0, shards: int = 1) -> ZoneEstimate:
    """Monte-Carlo frequency of membership with a Wilson 95% interval.

    ``N_builder`` (optional) maps a :class:`ParameterPoint` to a frequency dict ``j -> value``
    and replaces the asymptotic model; it is called once per sample.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    coords = zone.coords
    hits = 0
    per = [samples // shards + (1 if i < samples % shards else 0) for i in range(shards)]
    for shard, n in enumerate(per):
        rng = np.random.default_rng([seed, shard])
        u = rng.random((n, len(coords)))
        sig = {j: u[:, c] / abs(j) for c, j in enumerate(coords)}
        if N_builder is None:
            d = zone.divisor(sig)
            hits += int(np.count_nonzero(np.abs(d) < zone.width))
        else:
            kept = zone.kept()
            for row in range(n):
                pt = ParameterPoint({j: float(sig[j][row]) for j in coords if j in kept},
                                    max(abs(j) for j in coords))
                fr = N_builder(pt)
                d = sum(v * fr[j] for j, v in list(zone.k.items()) + list(zone.l.items()))
                hits += int(abs(d) < zone.width)
    est = hits / samples
    ci = wilson_interval(hits, samples)
    C, env = zone_envelope(zone)
    scale = _envelope_scale(zone)
    return ZoneEstimate(est, ci, hits, samples, env, C, zone_density_bound(zone), est / scale,
                        ci[0] <= env and est <= env)


def classify_zone(zone: ResonanceZone) -> tuple:
    """('case1', certificate) when the divisor range avoids the zone, ('case3', ...) for ``l = e_{-j} - e_j``,
    ('case2', ...) otherwise."""
    lo, hi = zone.divisor_range()
    w = zone.width
    if lo >= w or hi <= -w:
        return "case1", {"range": (lo, hi), "width": w}
    if _is_anti_diagonal(zone):
        return "case3", {"range": (lo, hi), "width": w}
    return "case2", {"range": (lo, hi), "width": w}


def case1_condition(zone: ResonanceZone, E: float, m: float) -> bool:
    """Sufficient emptiness test ``|k| E < (9 m / 10) <l>_2`` with ``2 level / <k>^tau <= m / 10``."""
    kn = sum(abs(v) for v in zone.k.values())
    return kn * E < 0.9 * m * zone.l2 and 2 * zone.level / bracket(zone.k) ** zone.tau <= m / 10


def anti_diagonal_partners(k: Mapping[int, int], jmax: int) -> list:
    """Normal ``j`` with ``sum k_b b + 2 j = 0`` and ``0 < |j| <= jmax``: at most one."""
    mom = sum(b * v for b, v in k.items())
    if mom % 2:
        return []
    j = -mom // 2
    return [j] if 0 < abs(j) <= jmax else []


def surrogate_measure(k1: float, c: float, delta: float) -> float:
    """Exact Lebesgue measure of ``{w in [0,1] : |w k1 + c| < delta}``."""
    if k1 == 0:
        return 1.0 if abs(c) < delta else 0.0
    a, b = sorted(((-delta - c) / k1, (delta - c) / k1))
    return max(0.0, min(1.0, b) - max(0.0, a))


def surrogate_mc(k1: float, c: float, delta: float, samples: int = 100_000, seed: int = 0) -> tuple:
    rng = np.random.default_rng(seed)
    w = rng.random(samples)
    hits = int(np.count_nonzero(np.abs(w * k1 + c) < delta))
    return hits / samples, wilson_interval(hits, samples)


# --------------------------------------------------------------------------
# Diophantine verification

@dataclass
class DiophantineReport:
    margins: dict
    worst: dict
    passed: bool

    def as_dict(self) -> dict:
        return {"margins": self.margins, "worst": self.worst, "passed": self.passed}


def _k_ball(tangent: Sequence[int], K: int) -> np.ndarray:
    from .homological import l1_ball
    return l1_ball(len(tangent), K)


def diophantine_check(sigma: ParameterPoint | None, N, row, K_check: int, jmax: int | None = None,
                      momentum_only: bool = False, level_scale: float = 1.0,
                      tangent: Sequence[int] | None = None) -> DiophantineReport:
    """Minimal ratio ``|divisor| / bound`` per condition class; pass when every ratio is at least 1.

    ``N`` is a :class:`NormalForm` (frequencies read from it) or a mapping ``j -> frequency`` covering
    tangent and normal modes. Classes: 'tangent' (small divisors with ``l = 0``, level ``alpha``),
    'normal' (``|l| = 1, 2``, level ``beta <l>_2``), 'anti_diagonal' (``beta |j|``), 'k0' (``m <l>_2``).
    ``level_scale`` multiplies every level, e.g. 2 for the doubled test. For a mapping the tangent
    modes are ``tangent`` when given, else those listed in ``row.J``.
    """
    if hasattr(N, "frequencies"):
        freq = N.frequencies()
        tangent = list(N.tangent)
    else:
        freq = dict(N)
        pick = getattr(row, "J", ()) if tangent is None else tangent
        tangent = sorted(j for j in freq if j in pick)
    normal = sorted(j for j in freq if j not in tangent and (jmax is None or abs(j) <= jmax))
    ks = _k_ball(tangent, K_check)
    tan = np.array(tangent)
    om = np.array([freq[j] for j in tangent]) if tangent else np.zeros(0)
    kw = ks @ om if len(tangent) else np.zeros(len(ks))
    knorm = np.maximum(1.0, np.abs(ks).sum(axis=1))
    kmom = ks @ tan if len(tangent) else np.zeros(len(ks), int)
    nz = np.abs(ks).sum(axis=1) > 0
    tau = float(row.tau)
    beta = row.beta * level_scale
    alpha = row.alpha[0] * level_scale if row.alpha else row.beta * level_scale
    margins, worst = {}, {}

    def record(cls, ratio, info):
        if ratio < margins.get(cls, math.inf):
            margins[cls] = float(ratio)
            worst[cls] = info

    if nz.any():
        r = np.abs(kw[nz]) / (alpha / knorm[nz] ** tau)
        i = int(np.argmin(r))
        record("tangent", r[i], {"k": ks[nz][i].tolist()})
    Om = {j: freq[j] for j in normal}
    ls = []
    for i in normal:
        ls.append(({i: 1}, Om[i], i))
        for j in normal:
            if j > i:
                ls.append(({i: 1, j: 1}, Om[i] + Om[j], i + j))
            if j != i:
                ls.append(({i: 1, j: -1}, Om[i] - Om[j], i - j))
        ls.append(({i: 2}, 2 * Om[i], 2 * i))
    for l, lw, lmom in ls:
        l2 = max(1.0, abs(sum(c * j * j for j, c in l.items())))
        anti = len(l) == 2 and sorted(l) == sorted([-x for x in l]) and sorted(l.values()) == [-1, 1]
        sel = nz.copy()
        if momentum_only:
            sel &= (kmom + lmom) == 0
        for sign in (1, -1):
            if sel.any():
                d = np.abs(sign * kw[sel] + lw)
                if anti:
                    jj = abs(next(iter(l)))
                    bound = beta * jj / knorm[sel] ** tau
                    cls = "anti_diagonal"
                else:
                    bound = beta * l2 / knorm[sel] ** tau
                    cls = "normal"
                r = d / bound
                q = int(np.argmin(r))
                record(cls, r[q], {"k": (sign * ks[sel][q]).tolist(), "l": {str(a): b for a, b in l.items()}})
        if not anti and (not momentum_only or lmom == 0):
            record("k0", abs(lw) / (row.m * level_scale * l2), {"l": {str(a): b for a, b in l.items()}})
    passed = all(v >= 1.0 for v in margins.values())
    return DiophantineReport(margins, worst, passed)
