"""Numpy fallback for the pairwise kernels in ``_kernels.pyx``.

Same signatures and the same output multiset (term order may differ, callers
aggregate anyway). Work is chunked over the left operand so the broadcast
temporaries stay bounded.
"""
import numpy as np

_CHUNK_PAIRS = 2_000_000


def _chunks(na, nb):
    step = max(1, _CHUNK_PAIRS // max(nb, 1))
    for start in range(0, na, step):
        yield slice(start, min(na, start + step))


def _weights(rows, M, s, logw):
    l1 = np.abs(rows[:, :M].astype(np.int64)).sum(axis=1)
    lw = rows[:, M:].astype(np.float64) @ logw[M:]
    return np.exp(s * l1 + lw)


def _keep_mask(rows, M, kmax, dmax):
    r = rows.astype(np.int64)
    l1 = np.abs(r[:, :M]).sum(axis=1)
    deg = 2 * r[:, M:2 * M].sum(axis=1) + r[:, 2 * M:].sum(axis=1)
    return (l1 <= kmax) & (deg <= dmax)


def fourier_product(ka, ca, kb, cb, kmax, s):
    d = ka.shape[1]
    out_k, out_c, dropped = [], [], 0.0
    kb16 = kb.astype(np.int16)
    for sl in _chunks(ka.shape[0], kb.shape[0]):
        rows = (ka[sl, None, :].astype(np.int16) + kb16[None, :, :]).reshape(-1, d)
        vals = (ca[sl, None] * cb[None, :]).reshape(-1)
        l1 = np.abs(rows).sum(axis=1)
        keep = l1 <= kmax
        out_k.append(rows[keep].astype(np.int8))
        out_c.append(vals[keep])
        dropped += float(np.sum(np.abs(vals[~keep]) * np.exp(s * l1[~keep])))
    if not out_k:
        return np.empty((0, d), np.int8), np.empty(0, complex), 0.0
    return np.concatenate(out_k), np.concatenate(out_c), dropped


def poly_product(ka, ca, kb, cb, M, kmax, dmax, s, logw):
    d = ka.shape[1]
    logw = np.asarray(logw, dtype=float)
    out_k, out_c, dropped = [], [], 0.0
    kb16 = kb.astype(np.int16)
    for sl in _chunks(ka.shape[0], kb.shape[0]):
        rows = (ka[sl, None, :].astype(np.int16) + kb16[None, :, :]).reshape(-1, d)
        vals = (ca[sl, None] * cb[None, :]).reshape(-1)
        keep = _keep_mask(rows, M, kmax, dmax)
        out_k.append(rows[keep].astype(np.int8))
        out_c.append(vals[keep])
        if (~keep).any():
            dropped += float(np.sum(np.abs(vals[~keep]) * _weights(rows[~keep], M, s, logw)))
    if not out_k:
        return np.empty((0, d), np.int8), np.empty(0, complex), 0.0
    return np.concatenate(out_k), np.concatenate(out_c), dropped


def poly_bracket(ka, ca, kb, cb, M, kmax, dmax, s, logw, normal_factor):
    d = ka.shape[1]
    logw = np.asarray(logw, dtype=float)
    out_k, out_c, dropped = [], [], 0.0
    ka64 = ka.astype(np.int64)
    kb64 = kb.astype(np.int64)
    for sl in _chunks(ka.shape[0], kb.shape[0]):
        A = ka64[sl]
        base = ca[sl, None] * cb[None, :]
        for m in range(M):
            wt = 1j * (np.outer(A[:, m], kb64[:, M + m]) - np.outer(A[:, M + m], kb64[:, m]))
            wn = normal_factor * (np.outer(A[:, 2 * M + m], kb64[:, 3 * M + m])
                                  - np.outer(A[:, 3 * M + m], kb64[:, 2 * M + m]))
            for weight, cols in ((wt, (M + m,)), (wn, (2 * M + m, 3 * M + m))):
                ia, ib = np.nonzero(weight)
                if ia.size == 0:
                    continue
                rows = A[ia] + kb64[ib]
                for c in cols:
                    rows[:, c] -= 1
                vals = base[ia, ib] * weight[ia, ib]
                keep = _keep_mask(rows, M, kmax, dmax)
                out_k.append(rows[keep].astype(np.int8))
                out_c.append(vals[keep])
                if (~keep).any():
                    dropped += float(np.sum(np.abs(vals[~keep]) * _weights(rows[~keep], M, s, logw)))
    if not out_k:
        return np.empty((0, d), np.int8), np.empty(0, complex), 0.0
    return np.concatenate(out_k), np.concatenate(out_c), dropped
