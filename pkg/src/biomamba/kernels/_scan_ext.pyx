# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective-scan kernels; same contract as ``_scan_py``."""
import numpy as np

from libc.math cimport exp, expm1, fabs

cdef double SERIES_THRESHOLD = 1e-6


def scan_forward(const double[:, :, ::1] u, const double[:, :, ::1] delta,
                 const double[:, ::1] A, const double[:, :, ::1] B,
                 const double[:, :, ::1] C, const double[::1] D):
    cdef Py_ssize_t nb = u.shape[0], nl = u.shape[1], nd = u.shape[2], ns = A.shape[1]
    y_arr = np.empty((nb, nl, nd))
    hs_arr = np.empty((nb, nl, nd, ns))
    h_arr = np.empty(ns)
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, :, ::1] hs = hs_arr
    cdef double[::1] h = h_arr
    cdef Py_ssize_t b, d, t, n
    cdef double ut, dt, a, da, abar, coef, acc
    with nogil:
        for b in range(nb):
            for d in range(nd):
                for n in range(ns):
                    h[n] = 0.0
                for t in range(nl):
                    ut = u[b, t, d]
                    dt = delta[b, t, d]
                    acc = 0.0
                    for n in range(ns):
                        a = A[d, n]
                        da = dt * a
                        abar = exp(da)
                        if fabs(da) < SERIES_THRESHOLD:
                            coef = dt * (1.0 + 0.5 * da)
                        else:
                            coef = expm1(da) / a
                        h[n] = abar * h[n] + coef * B[b, t, n] * ut
                        hs[b, t, d, n] = h[n]
                        acc = acc + C[b, t, n] * h[n]
                    y[b, t, d] = acc + D[d] * ut
    return y_arr, hs_arr


def scan_backward(const double[:, :, ::1] u, const double[:, :, ::1] delta,
                  const double[:, ::1] A, const double[:, :, ::1] B,
                  const double[:, :, ::1] C, const double[::1] D,
                  const double[:, :, :, ::1] hs, const double[:, :, ::1] gy):
    cdef Py_ssize_t nb = u.shape[0], nl = u.shape[1], nd = u.shape[2], ns = A.shape[1]
    gu_arr = np.empty((nb, nl, nd))
    gdelta_arr = np.empty((nb, nl, nd))
    ga_arr = np.zeros((nd, ns))
    gb_arr = np.zeros((nb, nl, ns))
    gc_arr = np.zeros((nb, nl, ns))
    gd_arr = np.zeros(nd)
    carry_arr = np.empty(ns)
    cdef double[:, :, ::1] gu = gu_arr
    cdef double[:, :, ::1] gdelta = gdelta_arr
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, :, ::1] gb = gb_arr
    cdef double[:, :, ::1] gc = gc_arr
    cdef double[::1] gd = gd_arr
    cdef double[::1] carry = carry_arr
    cdef Py_ssize_t b, d, t, n
    cdef double gyt, ut, dt, a, da, abar, em1, coef, dcd, dca
    cdef double gh, hprev, g_abar, g_coef, acc_u, acc_delta
    with nogil:
        for b in range(nb):
            for d in range(nd):
                for n in range(ns):
                    carry[n] = 0.0
                for t in range(nl - 1, -1, -1):
                    gyt = gy[b, t, d]
                    ut = u[b, t, d]
                    dt = delta[b, t, d]
                    acc_u = gyt * D[d]
                    acc_delta = 0.0
                    gd[d] += gyt * ut
                    for n in range(ns):
                        a = A[d, n]
                        da = dt * a
                        abar = exp(da)
                        if fabs(da) < SERIES_THRESHOLD:
                            coef = dt * (1.0 + 0.5 * da)
                            dcd = 1.0 + da
                            dca = 0.5 * dt * dt
                        else:
                            em1 = expm1(da)
                            coef = em1 / a
                            dcd = abar
                            dca = (da * abar - em1) / (a * a)
                        gh = C[b, t, n] * gyt + carry[n]
                        if t > 0:
                            hprev = hs[b, t - 1, d, n]
                        else:
                            hprev = 0.0
                        gc[b, t, n] += gyt * hs[b, t, d, n]
                        g_abar = gh * hprev
                        g_coef = gh * B[b, t, n] * ut
                        gb[b, t, n] += gh * coef * ut
                        acc_u = acc_u + gh * coef * B[b, t, n]
                        acc_delta = acc_delta + g_abar * a * abar + g_coef * dcd
                        ga[d, n] += g_abar * dt * abar + g_coef * dca
                        carry[n] = gh * abar
                    gu[b, t, d] = acc_u
                    gdelta[b, t, d] = acc_delta
    return gu_arr, gdelta_arr, ga_arr, gb_arr, gc_arr, gd_arr
