"""Pure numpy reference for the selective-scan kernels.

Vectorised over (batch, inner channel, state); the token axis is a Python
loop. Shapes: ``u, delta: [Bt, L, Di]``, ``A: [Di, N]``, ``B, C: [Bt, L, N]``,
``D: [Di]``, hidden states ``h: [Bt, L, Di, N]``.
"""
from __future__ import annotations

import numpy as np

SERIES_THRESHOLD = 1e-6


def coef_exact(delta, a):
    """``(exp(delta*a) - 1) / a``; undefined at ``a = 0``."""
    return np.expm1(delta * a) / a


def coef_series(delta, a):
    """Second-order expansion ``delta * (1 + delta*a/2)`` of :func:`coef_exact`."""
    return delta * (1.0 + 0.5 * delta * a)


def zoh(delta, a):
    """Zero-order-hold factors for a diagonal state matrix.

    Returns ``(Abar, coef)`` with ``Abar = exp(delta*a)`` and
    ``coef = (exp(delta*a) - 1) / a`` (the factor multiplying ``B``). For
    ``|delta*a| < 1e-6`` the coefficient is ``delta * (1 + delta*a/2)``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    da = delta * a
    small = np.abs(da) < SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, a)
    coef = np.where(small, delta * (1.0 + 0.5 * da), np.expm1(da) / safe_a)
    return np.exp(da), coef


def zoh_partials(delta, a):
    """``(Abar, coef, dcoef/ddelta, dcoef/da)`` for the same branch rule as :func:`zoh`."""
    delta = np.asarray(delta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    da = delta * a
    abar = np.exp(da)
    small = np.abs(da) < SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, a)
    em1 = np.expm1(da)
    coef = np.where(small, delta * (1.0 + 0.5 * da), em1 / safe_a)
    d_delta = np.where(small, 1.0 + da, abar)
    d_a = np.where(small, 0.5 * delta * delta, (da * abar - em1) / (safe_a * safe_a))
    return abar, coef, d_delta, d_a


def scan_forward(u, delta, A, B, C, D):
    abar, coef = zoh(delta[..., None], A)
    drive = coef * B[:, :, None, :] * u[..., None]
    bt, length, di = u.shape
    hs = np.empty((bt, length, di, A.shape[1]))
    h = np.zeros((bt, di, A.shape[1]))
    for t in range(length):
        h = abar[:, t] * h + drive[:, t]
        hs[:, t] = h
    y = np.einsum("bldn,bln->bld", hs, C) + u * D
    return y, hs


def scan_backward(u, delta, A, B, C, D, hs, gy):
    abar, coef, dc_ddelta, dc_da = zoh_partials(delta[..., None], A)
    length = u.shape[1]
    gh_all = np.empty_like(hs)
    carry = np.zeros_like(hs[:, 0])
    for t in range(length - 1, -1, -1):
        gh = C[:, t, None, :] * gy[:, t, :, None] + carry
        gh_all[:, t] = gh
        carry = gh * abar[:, t]
    h_prev = np.zeros_like(hs)
    h_prev[:, 1:] = hs[:, :-1]
    g_abar = gh_all * h_prev
    b_exp = B[:, :, None, :]
    g_coef = gh_all * b_exp * u[..., None]
    g_u = (gh_all * coef * b_exp).sum(-1) + gy * D
    g_b = np.einsum("bldn,bldn,bld->bln", gh_all, coef, u)
    g_c = np.einsum("bld,bldn->bln", gy, hs)
    g_d = (gy * u).sum(axis=(0, 1))
    g_delta = (g_abar * A * abar + g_coef * dc_ddelta).sum(-1)
    g_a = (g_abar * delta[..., None] * abar + g_coef * dc_da).sum(axis=(0, 1))
    return g_u, g_delta, g_a, g_b, g_c, g_d
