"""Instance builders shared by the test modules."""
import math

import numpy as np

from dnlskam.fourier import TorusFourier, merge_index_sets, random_fourier, weighted_norm
from dnlskam.homological import DiophantineProfile, build_transform

OMEGA2 = np.array([1.0, (math.sqrt(5.0) - 1.0) / 2.0])


def transform_case(gamma0, seed=0, s=0.5, stages=2, cutoff=3):
    """Stages ``a_l`` on nested angle sets with ``|a_l|_{s,tau_l} = alpha_l gamma_l``.

    ``alpha_l`` is the smallest ``|<k,omega>| <k>^tau_l`` over the harmonics used,
    so the Diophantine condition holds on every divisor the transform meets, and
    ``gamma_l = gamma0^{(6/5)^l}``.
    """
    rng = np.random.default_rng(seed)
    idx = (1, 2)
    gammas = [gamma0 ** (1.2 ** l) for l in range(stages)]
    taus = [10.0 * l + 12.0 for l in range(stages)]
    a_stages, alphas = [], []
    for l in range(stages):
        modes = idx[:l + 1] if l < len(idx) else idx
        f = random_fourier(rng, modes, cutoff, 6, 1.0, 0.5, zero_average=True).embed(idx)
        weight = np.abs(f.keys @ OMEGA2) * np.maximum(1, np.abs(f.keys).sum(axis=1)) ** taus[l]
        alpha = min(float(weight.min()), 1.0)
        # let the harmonic attaining alpha dominate so that |b_l| comes close to gamma_l
        k = f.keys[int(np.argmin(weight))]
        peak = TorusFourier(idx, cutoff, [k, -k], [0.5, 0.5])
        damp = 0.1 * weight.min() / weight * np.exp(-s * np.abs(f.keys).sum(axis=1))
        f = peak + TorusFourier(idx, cutoff, f.keys, f.coeffs * damp / np.abs(f.coeffs).max())
        f = f * (alpha * gammas[l] / weighted_norm(f, s, taus[l]))
        a_stages.append(f)
        alphas.append(alpha)
    profile = DiophantineProfile(alpha=alphas, beta=1e-3, tau=taus, m_lower=0.5, gamma=gammas)
    return a_stages, profile, gammas


def make_transform(gamma0, seed=0, s=0.5):
    from dnlskam.hamiltonian import AnalyticityWindow
    a_stages, profile, gammas = transform_case(gamma0, seed, s)
    T = build_transform(OMEGA2, a_stages, profile, AnalyticityWindow(s, 1.0), cutoff=24)
    return T, a_stages, gammas


def strip_points(count, d, s, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 2 * math.pi, (count, d)) + 1j * rng.uniform(-1, 1, (count, d)) * s


# resonance zones across generations 0..3: (v, k, l)
ZONES = [
    # divisor range clear of zero
    (0, {1: 1}, {2: 1, 3: -1}),
    (0, {1: 1, -1: 1}, {3: 1, -3: 1}),
    (1, {2: 1}, {3: 1, 5: -1}),
    (1, {1: 2, -2: -1}, {-4: 1}),
    (2, {3: 1, -1: 1}, {4: 1, 6: -1}),
    (2, {-3: 1}, {7: 1, 4: -1}),
    (3, {4: 1, -1: -1}, {-5: 1}),
    # generic crossings
    (0, {-1: -2, 1: -1}, {-3: 1, -2: -1}),
    (0, {-1: 1, 1: 2}, {2: 1, 3: -1}),
    (1, {-2: -1, 1: 1, 2: -1}, {-4: 1, -3: -1}),
    (1, {-2: 1, 1: 1, 2: 1}, {4: 1, 5: -1}),
    (2, {-3: -2, 3: 1}, {-5: 1, 4: -1}),
    (2, {-3: -1, 1: -2}, {-6: 1, -5: -1}),
    (3, {1: -1, 2: -1, 4: 1}, {5: 1, 6: -1}),
    # l = e_{-j} - e_j
    (0, {1: 2, -1: -2}, {-2: 1, 2: -1}),
    (0, {1: -2, -1: 2}, {2: 1, -2: -1}),
    (1, {2: 1, -2: -1, 1: 1, -1: -1}, {-3: 1, 3: -1}),
    (1, {2: 2, -2: -2}, {-4: 1, 4: -1}),
    (2, {3: 1, -3: -1, 1: 1, -1: -1}, {-4: 1, 4: -1}),
    (3, {4: 1, -4: -1, 1: 1, -1: -1}, {-5: 1, 5: -1}),
]

DESK_WIDTH = 5e-3


def zone_momentum(k, l):
    return sum(b * c for b, c in k.items()) + sum(j * c for j, c in l.items())


def desk_level(k, l, tau):
    """Level putting the zone width at ``DESK_WIDTH`` so a 1e5-sample estimate sees it."""
    l2 = max(1.0, abs(sum(c * j * j for j, c in l.items())))
    kb = max(1.0, float(sum(abs(c) for c in k.values())))
    return DESK_WIDTH * kb ** tau / (2 * l2)
