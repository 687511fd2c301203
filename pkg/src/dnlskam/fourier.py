"""Truncated Fourier polynomials on finite-dimensional complexified tori.

A :class:`TorusFourier` is a sparse map from integer harmonics ``k`` to complex
amplitudes, tagged with the ordered tuple of angle labels it depends on
(``index_set``) and a harmonic cutoff ``K`` in the l1 norm ``|k| = sum |k_j|``.
Values are immutable; every truncating operation returns the majorant of the
discarded part next to its result.
"""
from __future__ import annotations

import json
import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import DivergentSeries


def _as_index_set(index_set) -> tuple:
    idx = tuple(int(j) for j in index_set)
    if any(j == 0 for j in idx):
        raise ValueError("mode labels must be nonzero integers")
    if len(set(idx)) != len(idx):
        raise ValueError(f"repeated mode labels in {idx}")
    return idx


def merge_index_sets(*sets: Sequence[int]) -> tuple:
    out = []
    for s in sets:
        for j in s:
            if j not in out:
                out.append(j)
    return tuple(out)


class TorusFourier:
    """Sparse truncated Fourier series ``sum_k c_k exp(i k.x)``."""

    __slots__ = ("index_set", "cutoff", "keys", "coeffs")

    def __init__(self, index_set, cutoff: int, keys=None, coeffs=None):
        idx = _as_index_set(index_set)
        d = len(idx)
        if keys is None:
            keys = np.zeros((0, d), np.int8)
            coeffs = np.zeros(0, complex)
        coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)
        keys = np.asarray(keys).reshape(coeffs.shape[0], d)
        if keys.shape[0] != coeffs.shape[0]:
            raise ValueError("keys and coefficients differ in length")
        if keys.size and np.abs(keys).max() > 127:
            raise OverflowError("harmonic exceeds int8 storage")
        keys, coeffs = kernels.aggregate(keys.astype(np.int8), coeffs)
        nz = coeffs != 0
        keys, coeffs = keys[nz], coeffs[nz]
        if keys.shape[0] and np.abs(keys.astype(int)).sum(axis=1).max() > cutoff:
            raise ValueError("stored harmonic beyond cutoff")
        keys.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "index_set", idx)
        object.__setattr__(self, "cutoff", int(cutoff))
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "coeffs", coeffs)

    def __setattr__(self, name, value):
        raise AttributeError("TorusFourier is immutable")

    def __reduce__(self):
        return (TorusFourier._trusted, (self.index_set, self.cutoff, self.keys, self.coeffs))

    @classmethod
    def _trusted(cls, idx, cutoff, keys, coeffs):
        """Build from rows already unique and sorted; only zero coefficients are removed."""
        nz = coeffs != 0
        if not nz.all():
            keys, coeffs = keys[nz], coeffs[nz]
        else:
            keys, coeffs = keys.copy(), coeffs.copy()
        keys.setflags(write=False)
        coeffs.setflags(write=False)
        obj = object.__new__(cls)
        object.__setattr__(obj, "index_set", idx)
        object.__setattr__(obj, "cutoff", int(cutoff))
        object.__setattr__(obj, "keys", keys)
        object.__setattr__(obj, "coeffs", coeffs)
        return obj

    # construction -------------------------------------------------------
    @classmethod
    def from_dict(cls, index_set, cutoff, terms: Mapping[tuple, complex]):
        idx = _as_index_set(index_set)
        if not terms:
            return cls(idx, cutoff)
        keys = np.array([tuple(k) for k in terms], dtype=np.int64).reshape(-1, len(idx))
        return cls(idx, cutoff, keys, np.array(list(terms.values()), dtype=complex))

    @classmethod
    def constant(cls, c, index_set=(), cutoff=0):
        idx = _as_index_set(index_set)
        return cls(idx, cutoff, np.zeros((1, len(idx)), np.int8), [c])

    @classmethod
    def mode(cls, index_set, k, c=1.0, cutoff=None):
        idx = _as_index_set(index_set)
        k = tuple(int(v) for v in k)
        if cutoff is None:
            cutoff = sum(abs(v) for v in k)
        return cls(idx, cutoff, np.array([k]), [c])

    # basic views --------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.index_set)

    @property
    def nterms(self) -> int:
        return self.coeffs.shape[0]

    def is_zero(self) -> bool:
        return self.nterms == 0

    def l1_orders(self) -> np.ndarray:
        return np.abs(self.keys.astype(np.int64)).sum(axis=1)

    def max_order(self) -> int:
        return int(self.l1_orders().max()) if self.nterms else 0

    def to_dict(self) -> dict:
        return {tuple(int(v) for v in k): complex(c) for k, c in zip(self.keys, self.coeffs)}

    def coefficient(self, k) -> complex:
        k = np.asarray(k, dtype=np.int8)
        hit = np.all(self.keys == k, axis=1)
        return complex(self.coeffs[hit][0]) if hit.any() else 0j

    def embed(self, index_set, cutoff=None) -> "TorusFourier":
        """Re-express over a larger ordered index set (new angles get zero harmonics)."""
        idx = _as_index_set(index_set)
        if idx == self.index_set:
            if cutoff is None or cutoff == self.cutoff:
                return self
            if cutoff < self.max_order():
                raise ValueError("stored harmonic beyond cutoff")
            return TorusFourier._trusted(idx, cutoff, self.keys, self.coeffs)
        missing = [j for j in self.index_set if j not in idx]
        if missing:
            raise ValueError(f"cannot embed: {missing} not in target index set")
        keys = np.zeros((self.nterms, len(idx)), np.int8)
        for col, j in enumerate(self.index_set):
            keys[:, idx.index(j)] = self.keys[:, col]
        return TorusFourier(idx, self.cutoff if cutoff is None else cutoff, keys, self.coeffs)

    def restrict_to(self, index_set) -> "TorusFourier":
        """Drop angle labels on which the function does not depend."""
        idx = _as_index_set(index_set)
        cols = []
        for col, j in enumerate(self.index_set):
            if j in idx:
                cols.append(col)
            elif self.nterms and np.any(self.keys[:, col] != 0):
                raise ValueError(f"function depends on angle {j}")
        keys = np.zeros((self.nterms, len(idx)), np.int8)
        for col in cols:
            keys[:, idx.index(self.index_set[col])] = self.keys[:, col]
        return TorusFourier(idx, self.cutoff, keys, self.coeffs)

    def support_modes(self) -> tuple:
        if not self.nterms:
            return ()
        used = np.any(self.keys != 0, axis=0)
        return tuple(j for j, u in zip(self.index_set, used) if u)

    def with_cutoff(self, cutoff: int) -> "TorusFourier":
        if cutoff < self.max_order():
            raise ValueError("use gamma_truncate to lower a cutoff past stored harmonics")
        return TorusFourier(self.index_set, cutoff, self.keys, self.coeffs)

    def map_coeffs(self, factor) -> "TorusFourier":
        return TorusFourier._trusted(self.index_set, self.cutoff, self.keys,
                                     np.asarray(self.coeffs * factor, dtype=complex).reshape(-1))

    def conj_reflect(self) -> "TorusFourier":
        """The function ``conj(f(conj x))``: coefficient k becomes conj of coefficient -k."""
        return TorusFourier(self.index_set, self.cutoff, -self.keys.astype(np.int16), np.conj(self.coeffs))

    def is_real_symmetric(self, tol: float = 0.0) -> bool:
        diff = self - self.conj_reflect()
        return bool(np.all(np.abs(diff.coeffs) <= tol * max(1.0, np.abs(self.coeffs).max(initial=0.0))))

    def real_part(self) -> "TorusFourier":
        return 0.5 * (self + self.conj_reflect())

    # arithmetic ---------------------------------------------------------
    def _aligned(self, other: "TorusFourier"):
        idx = merge_index_sets(self.index_set, other.index_set)
        return self.embed(idx), other.embed(idx), idx

    def __add__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            other = TorusFourier.constant(other, self.index_set, self.cutoff)
        a, b, idx = self._aligned(other)
        return TorusFourier(idx, max(a.cutoff, b.cutoff), np.vstack([a.keys, b.keys]),
                            np.concatenate([a.coeffs, b.coeffs]))

    __radd__ = __add__

    def __neg__(self):
        return self.map_coeffs(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, c):
        if isinstance(c, TorusFourier):
            raise TypeError("use fourier.mul for products (it reports the truncation residual)")
        return self.map_coeffs(complex(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self.map_coeffs(1.0 / complex(c))

    def __repr__(self):
        return f"TorusFourier(index_set={self.index_set}, cutoff={self.cutoff}, nterms={self.nterms})"

    # serialisation ------------------------------------------------------
    def to_json_obj(self) -> dict:
        return {
            "index_set": list(self.index_set),
            "cutoff": self.cutoff,
            "coeffs": [{"k": [int(v) for v in k], "re": float(c.real), "im": float(c.imag)}
                       for k, c in zip(self.keys, self.coeffs)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)

    @classmethod
    def from_json_obj(cls, obj) -> "TorusFourier":
        terms = {tuple(t["k"]): complex(t["re"], t["im"]) for t in obj["coeffs"]}
        return cls.from_dict(obj["index_set"], obj["cutoff"], terms)

    @classmethod
    def from_json(cls, text: str) -> "TorusFourier":
        return cls.from_json_obj(json.loads(text))


def omega_vector(index_set: Sequence[int], omega) -> np.ndarray:
    """Frequencies aligned with ``index_set``; ``omega`` may be a mapping or a sequence."""
    if isinstance(omega, Mapping):
        return np.array([float(omega[j]) for j in index_set])
    w = np.asarray(omega, dtype=float).reshape(-1)
    if w.shape[0] != len(index_set):
        raise ValueError(f"frequency vector has {w.shape[0]} entries, index set has {len(index_set)}")
    return w


def evaluate(f: TorusFourier, x) -> complex:
    x = np.asarray(x, dtype=complex).reshape(-1)
    if x.shape[0] != f.dim:
        raise ValueError(f"point has {x.shape[0]} entries, function depends on {f.dim} angles")
    if not f.nterms:
        return 0j
    return complex(np.sum(f.coeffs * np.exp(1j * (f.keys @ x))))


def evaluate_many(f: TorusFourier, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=complex).reshape(-1, f.dim)
    if not f.nterms:
        return np.zeros(xs.shape[0], complex)
    return np.exp(1j * (xs @ f.keys.T.astype(float))) @ f.coeffs


def weighted_norm(f: TorusFourier, s: float, tau: float) -> float:
    """``sum_k |c_k| |k|^tau e^{|k| s}`` with ``|0|^tau = 0`` for tau > 0."""
    if not f.nterms:
        return 0.0
    order = f.l1_orders().astype(float)
    if tau == 0:
        weight = np.ones_like(order)
    else:
        weight = np.where(order > 0, order ** tau, 0.0)
    return float(np.sum(np.abs(f.coeffs) * weight * np.exp(order * s)))


def sup_norm_bound(f: TorusFourier, s: float) -> float:
    """Coefficient majorant ``sum |c_k| e^{|k| s}``, an upper bound for sup over the strip."""
    if not f.nterms:
        return 0.0
    return float(np.sum(np.abs(f.coeffs) * np.exp(f.l1_orders() * s)))


def mul(f: TorusFourier, g: TorusFourier, cutoff: int, s: float = 0.0):
    """Truncated product; returns ``(f*g restricted to |k| <= cutoff, dropped majorant)``."""
    a, b, idx = f._aligned(g)
    keys, coefs, dropped = kernels.fourier_product(a.keys, a.coeffs, b.keys, b.coeffs, cutoff, s)
    return TorusFourier(idx, cutoff, keys, coefs), dropped


def gamma_truncate(f: TorusFourier, K: int, s: float = 0.0):
    """Keep harmonics ``|k| <= K``; returns the truncation and the tail majorant on the strip s."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    order = f.l1_orders()
    keep = order <= K
    tail = float(np.sum(np.abs(f.coeffs[~keep]) * np.exp(order[~keep] * s)))
    return TorusFourier(f.index_set, K, f.keys[keep], f.coeffs[keep]), tail


def average_and_tilde(f: TorusFourier):
    zero = ~np.any(f.keys != 0, axis=1)
    avg = complex(f.coeffs[zero].sum()) if zero.any() else 0j
    return avg, TorusFourier(f.index_set, f.cutoff, f.keys[~zero], f.coeffs[~zero])


def d_omega(f: TorusFourier, omega) -> TorusFourier:
    w = omega_vector(f.index_set, omega)
    return f.map_coeffs(1j * (f.keys @ w))


def partial(f: TorusFourier, j: int) -> TorusFourier:
    """Derivative along the angle labelled ``j``."""
    if j not in f.index_set:
        return TorusFourier(f.index_set, f.cutoff)
    col = f.index_set.index(j)
    return f.map_coeffs(1j * f.keys[:, col])


def reciprocal_one_plus(a: TorusFourier, cutoff: int, tol: float = 1e-15, s: float = 0.0,
                        max_terms: int = 500):
    """Neumann series for ``1/(1+a)``; returns ``(series, accumulated truncation majorant)``."""
    rate = sup_norm_bound(a, s)
    if rate >= 1.0:
        raise DivergentSeries(f"majorant of a is {rate:.3g} >= 1 on strip s={s}")
    total = TorusFourier.constant(1.0, a.index_set, cutoff)
    term = total
    dropped = 0.0
    for _ in range(max_terms):
        term, lost = mul(term, -a, cutoff, s)
        dropped += lost
        total = total + term
        if sup_norm_bound(term, s) < tol:
            break
    else:
        raise DivergentSeries("Neumann series did not reach tolerance")
    # geometric remainder of the neglected terms
    dropped += sup_norm_bound(term, s) * rate / (1.0 - rate)
    return total, dropped


def exp_series(c: TorusFourier, cutoff: int, tol: float = 1e-17, s: float = 0.0, max_terms: int = 400):
    """``exp(c)`` by Taylor series in the algebra; returns ``(series, dropped majorant)``."""
    total = TorusFourier.constant(1.0, c.index_set, cutoff)
    term = total
    dropped = 0.0
    norm_c = sup_norm_bound(c, s)
    for n in range(1, max_terms):
        term, lost = mul(term, c, cutoff, s)
        term = term / n
        dropped += lost / n
        total = total + term
        if sup_norm_bound(term, s) * max(1.0, norm_c) < tol:
            break
    else:
        raise DivergentSeries("exponential series did not reach tolerance")
    return total, dropped


def compose_along(f: TorusFourier, c: TorusFourier, omega, cutoff: int, tol: float = 1e-17,
                  s: float = 0.0, max_terms: int = 400):
    """``f(x + c(x) omega)`` for a scalar shift function ``c``.

    Expands ``exp(i<k,omega> c(x))`` for every harmonic of ``f`` from one shared
    table of powers of ``c``. Returns ``(composition, dropped majorant)``.
    """
    idx = merge_index_sets(f.index_set, c.index_set)
    f = f.embed(idx)
    c = c.embed(idx)
    if c.is_zero() or f.is_zero():
        out, tail = gamma_truncate(f.with_cutoff(max(f.cutoff, f.max_order())), cutoff, s)
        return out, tail
    w = omega_vector(idx, omega)
    theta = f.keys @ w
    norm_c = sup_norm_bound(c, s)
    big = float(np.abs(theta).max()) * norm_c
    pcut = cutoff + f.max_order()
    powers = [TorusFourier.constant(1.0, idx, pcut)]
    dropped = 0.0
    fact = 1.0
    bound = 1.0
    n = 0
    while True:
        n += 1
        if n >= max_terms:
            raise DivergentSeries("composition series did not converge")
        nxt, lost = mul(powers[-1], c, pcut, s)
        powers.append(nxt)
        fact *= n
        dropped += lost * float(np.abs(theta).max()) ** n / fact
        bound = big ** n / fact
        if bound < tol and n > 1:
            break
    # table of powers on a common support
    all_keys, inv = np.unique(np.vstack([p.keys for p in powers]), axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    table = np.zeros((len(powers), all_keys.shape[0]), complex)
    start = 0
    for row, p in enumerate(powers):
        table[row, inv[start:start + p.nterms]] = p.coeffs
        start += p.nterms
    nn = np.arange(len(powers))
    logfact = np.array([math.lgamma(v + 1) for v in nn])
    with np.errstate(divide="ignore"):
        mags = np.where(theta[:, None] == 0, (nn[None, :] == 0).astype(float),
                        np.exp(nn[None, :] * np.log(np.abs(theta[:, None]) + (theta[:, None] == 0)) - logfact[None, :]))
    vand = mags * (1j * np.sign(theta)[:, None]) ** nn[None, :]
    vand[theta == 0, 0] = 1.0
    E = vand @ table  # (nk, S): coefficients of exp(i theta_k c)
    vals = (f.coeffs[:, None] * E).reshape(-1)
    keys = (f.keys[:, None, :].astype(np.int16) + all_keys[None, :, :].astype(np.int16)).reshape(-1, len(idx))
    order = np.abs(keys).sum(axis=1)
    keep = order <= cutoff
    dropped += float(np.sum(np.abs(vals[~keep]) * np.exp(order[~keep] * s)))
    dropped += bound * sup_norm_bound(f, s)
    return TorusFourier(idx, cutoff, keys[keep], vals[keep]), dropped


def random_fourier(rng: np.random.Generator, index_set, cutoff: int, nterms: int, scale: float = 1.0,
                   decay: float = 0.0, real: bool = True, zero_average: bool = False) -> TorusFourier:
    """Random sparse series with amplitudes ``scale * e^{-decay |k|}``; handy for tests and demos."""
    idx = _as_index_set(index_set)
    d = len(idx)
    terms = {}
    attempts = 0
    while len(terms) < nterms and attempts < 50 * nterms + 100:
        attempts += 1
        k = tuple(int(v) for v in rng.integers(-cutoff, cutoff + 1, size=d))
        if sum(abs(v) for v in k) > cutoff or (zero_average and not any(k)):
            continue
        amp = scale * math.exp(-decay * sum(abs(v) for v in k))
        c = amp * (rng.normal() + 1j * rng.normal()) / math.sqrt(2)
        if real and not any(k):
            c = c.real
        terms[k] = terms.get(k, 0) + c
        if real and any(k):
            mk = tuple(-v for v in k)
            terms[mk] = np.conj(terms[k])
    return TorusFourier.from_dict(idx, cutoff, terms)


def iter_terms(f: TorusFourier) -> Iterable[tuple]:
    for k, c in zip(f.keys, f.coeffs):
        yield tuple(int(v) for v in k), complex(c)
