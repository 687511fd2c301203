"""Kernel backend selection.

The compiled module is used when it imports; otherwise the numpy fallback.
Setting ``DNLSKAM_PURE_PYTHON=1`` forces the fallback.
"""
import os
from contextlib import contextmanager

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("DNLSKAM_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_backend = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def use_backend(name):
    """Switch the active backend ('cython' or 'python'); returns the previous name."""
    global _backend, BACKEND
    previous = BACKEND
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        _backend = _compiled
    elif name == "python":
        _backend = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return previous


@contextmanager
def using_backend(name):
    """Temporarily switch the kernel backend."""
    previous = use_backend(name)
    try:
        yield
    finally:
        use_backend(previous)


def _prep(keys, coefs):
    return (np.ascontiguousarray(keys, dtype=np.int8),
            np.ascontiguousarray(coefs, dtype=np.complex128))


def fourier_product(ka, ca, kb, cb, kmax, s=0.0):
    ka, ca = _prep(ka, ca)
    kb, cb = _prep(kb, cb)
    return _backend.fourier_product(ka, ca, kb, cb, int(kmax), float(s))


_PAIR_BUDGET = 4_000_000


def _chunked(fn, ka, ca, kb, cb, *args):
    """Run a pairwise kernel over slices of the left operand, aggregating as it goes.

    Keeps peak memory near the number of distinct output monomials instead of
    the number of pairs.
    """
    step = max(1, _PAIR_BUDGET // max(kb.shape[0], 1))
    if ka.shape[0] <= step:
        keys, coefs, dropped = fn(ka, ca, kb, cb, *args)
        return aggregate(keys, coefs) + (dropped,)
    parts_k, parts_c, pending, merged, dropped = [], [], 0, 0, 0.0
    for start in range(0, ka.shape[0], step):
        sl = slice(start, start + step)
        k, c, d = fn(np.ascontiguousarray(ka[sl]), np.ascontiguousarray(ca[sl]), kb, cb, *args)
        dropped += d
        k, c = aggregate(k, c)
        parts_k.append(k)
        parts_c.append(c)
        pending += k.shape[0]
        # merge once the unmerged rows outgrow the merged ones (amortised linear)
        if pending > max(merged, _PAIR_BUDGET):
            acc_k, acc_c = aggregate(np.concatenate(parts_k), np.concatenate(parts_c))
            parts_k, parts_c = [acc_k], [acc_c]
            merged, pending = acc_k.shape[0], 0
    acc_k, acc_c = aggregate(np.concatenate(parts_k), np.concatenate(parts_c))
    return acc_k, acc_c, dropped


def poly_product(ka, ca, kb, cb, M, kmax, dmax, s, logw):
    ka, ca = _prep(ka, ca)
    kb, cb = _prep(kb, cb)
    logw = np.ascontiguousarray(logw, dtype=np.float64)
    return _chunked(_backend.poly_product, ka, ca, kb, cb, int(M), int(kmax), int(dmax), float(s), logw)


def poly_bracket(ka, ca, kb, cb, M, kmax, dmax, s, logw, normal_factor):
    ka, ca = _prep(ka, ca)
    kb, cb = _prep(kb, cb)
    logw = np.ascontiguousarray(logw, dtype=np.float64)
    return _chunked(_backend.poly_bracket, ka, ca, kb, cb, int(M), int(kmax), int(dmax), float(s),
                    logw, complex(normal_factor))


def _pack_rows(keys):
    """Offset int8 rows to bytes and view them as big-endian words; word order is row order."""
    n, d = keys.shape
    nw = -(-d // 8)
    buf = np.zeros((n, nw * 8), np.uint8)
    buf[:, :d] = keys.view(np.uint8) ^ 0x80
    return buf.view(">u8").astype(np.uint64)


def aggregate(keys, coefs):
    """Sum coefficients of equal key rows; rows come back in lexicographic order."""
    keys = np.ascontiguousarray(keys, dtype=np.int8)
    coefs = np.asarray(coefs, dtype=np.complex128)
    n, d = keys.shape
    if n == 0:
        return keys.reshape(0, d), coefs.reshape(0)
    if d == 0:
        return np.zeros((1, 0), np.int8), np.array([coefs.sum()])
    words = _pack_rows(keys)
    if words.shape[1] == 1:
        order = np.argsort(words[:, 0], kind="stable")
    else:
        order = np.lexsort(words.T[::-1])
    keys = keys[order]
    coefs = coefs[order]
    words = words[order]
    new = np.ones(n, dtype=bool)
    new[1:] = np.any(words[1:] != words[:-1], axis=1)
    idx = np.cumsum(new) - 1
    out = np.bincount(idx, weights=coefs.real) + 1j * np.bincount(idx, weights=coefs.imag)
    return keys[new], out
