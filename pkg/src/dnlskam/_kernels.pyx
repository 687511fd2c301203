# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pairwise kernels for sparse Fourier/Taylor products and brackets.

Keys are int8 rows. For Hamiltonian keys the layout is four blocks of M
columns: harmonics k, y-powers l, z-powers alpha, zbar-powers beta. Every
kernel returns the kept (keys, coeffs) pairs unaggregated plus the majorant
of what was dropped by the harmonic/degree caps.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdlib cimport abs

cnp.import_array()


cdef inline double _cabs(double complex z) nogil:
    return (z.real * z.real + z.imag * z.imag) ** 0.5


def fourier_product(const signed char[:, ::1] ka, const double complex[::1] ca,
                    const signed char[:, ::1] kb, const double complex[::1] cb,
                    int kmax, double s):
    cdef Py_ssize_t na = ka.shape[0], nb = kb.shape[0], d = ka.shape[1]
    cdef Py_ssize_t a, b, c, n = 0, pos = 0
    cdef int l1, v
    cdef double dropped = 0.0
    for a in range(na):
        for b in range(nb):
            l1 = 0
            for c in range(d):
                l1 += abs(ka[a, c] + kb[b, c])
            if l1 <= kmax:
                n += 1
    keys = np.empty((n, d), dtype=np.int8)
    coefs = np.empty(n, dtype=np.complex128)
    cdef signed char[:, ::1] ko = keys
    cdef double complex[::1] co = coefs
    for a in range(na):
        for b in range(nb):
            l1 = 0
            for c in range(d):
                l1 += abs(ka[a, c] + kb[b, c])
            if l1 <= kmax:
                for c in range(d):
                    ko[pos, c] = ka[a, c] + kb[b, c]
                co[pos] = ca[a] * cb[b]
                pos += 1
            else:
                dropped += _cabs(ca[a] * cb[b]) * exp(s * l1)
    return keys, coefs, dropped


cdef inline int _keep(signed char[::1] row, Py_ssize_t M, int kmax, int dmax,
                      double s, const double[::1] logw, double *weight) nogil:
    cdef Py_ssize_t c
    cdef int l1 = 0, deg = 0
    cdef double lw = 0.0
    for c in range(M):
        l1 += abs(row[c])
    for c in range(M, 2 * M):
        deg += 2 * row[c]
        lw += logw[c] * row[c]
    for c in range(2 * M, 4 * M):
        deg += row[c]
        lw += logw[c] * row[c]
    if l1 <= kmax and deg <= dmax:
        return 1
    weight[0] = exp(s * l1 + lw)
    return 0


def poly_product(const signed char[:, ::1] ka, const double complex[::1] ca,
                 const signed char[:, ::1] kb, const double complex[::1] cb,
                 Py_ssize_t M, int kmax, int dmax, double s, const double[::1] logw):
    cdef Py_ssize_t na = ka.shape[0], nb = kb.shape[0], d = ka.shape[1]
    cdef Py_ssize_t a, b, c, cap = 1024, pos = 0
    cdef double w, dropped = 0.0
    cdef signed char[::1] row = np.empty(d, dtype=np.int8)
    keys = np.empty((cap, d), dtype=np.int8)
    coefs = np.empty(cap, dtype=np.complex128)
    cdef signed char[:, ::1] ko = keys
    cdef double complex[::1] co = coefs
    for a in range(na):
        for b in range(nb):
            for c in range(d):
                row[c] = ka[a, c] + kb[b, c]
            if _keep(row, M, kmax, dmax, s, logw, &w):
                if pos == cap:
                    cap *= 2
                    keys = np.resize(keys, (cap, d))
                    coefs = np.resize(coefs, cap)
                    ko = keys
                    co = coefs
                ko[pos, :] = row
                co[pos] = ca[a] * cb[b]
                pos += 1
            else:
                dropped += _cabs(ca[a] * cb[b]) * w
    return keys[:pos].copy(), coefs[:pos].copy(), dropped


def poly_bracket(const signed char[:, ::1] ka, const double complex[::1] ca,
                 const signed char[:, ::1] kb, const double complex[::1] cb,
                 Py_ssize_t M, int kmax, int dmax, double s, const double[::1] logw,
                 double complex normal_factor):
    cdef Py_ssize_t na = ka.shape[0], nb = kb.shape[0], d = ka.shape[1]
    cdef Py_ssize_t a, b, c, m, cap = 1024, pos = 0
    cdef double w, dropped = 0.0
    cdef double complex wt, wn, base
    cdef signed char[::1] row = np.empty(d, dtype=np.int8)
    keys = np.empty((cap, d), dtype=np.int8)
    coefs = np.empty(cap, dtype=np.complex128)
    cdef signed char[:, ::1] ko = keys
    cdef double complex[::1] co = coefs
    for a in range(na):
        for b in range(nb):
            base = ca[a] * cb[b]
            for m in range(M):
                # tangential pair: (P_x F_y - P_y F_x)
                wt = 1j * (ka[a, m] * kb[b, M + m] - ka[a, M + m] * kb[b, m])
                # normal pair: factor * (P_z F_zbar - P_zbar F_z)
                wn = normal_factor * (ka[a, 2 * M + m] * kb[b, 3 * M + m]
                                      - ka[a, 3 * M + m] * kb[b, 2 * M + m])
                if wt != 0:
                    for c in range(d):
                        row[c] = ka[a, c] + kb[b, c]
                    row[M + m] -= 1
                    if _keep(row, M, kmax, dmax, s, logw, &w):
                        if pos == cap:
                            cap *= 2
                            keys = np.resize(keys, (cap, d))
                            coefs = np.resize(coefs, cap)
                            ko = keys
                            co = coefs
                        ko[pos, :] = row
                        co[pos] = base * wt
                        pos += 1
                    else:
                        dropped += _cabs(base * wt) * w
                if wn != 0:
                    for c in range(d):
                        row[c] = ka[a, c] + kb[b, c]
                    row[2 * M + m] -= 1
                    row[3 * M + m] -= 1
                    if _keep(row, M, kmax, dmax, s, logw, &w):
                        if pos == cap:
                            cap *= 2
                            keys = np.resize(keys, (cap, d))
                            coefs = np.resize(coefs, cap)
                            ko = keys
                            co = coefs
                        ko[pos, :] = row
                        co[pos] = base * wn
                        pos += 1
                    else:
                        dropped += _cabs(base * wn) * w
    return keys[:pos].copy(), coefs[:pos].copy(), dropped
