"""Selective state-space recurrence and the gated Mamba block built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError
from .layers import Linear, init_linear, linear, uniform_init
from .numerics import Tensor, as_tensor, exp, make_op, matmul, mul, neg, silu, softplus


@dataclass
class SsmParams:
    w_b: Tensor          # [Di, N]
    w_c: Tensor          # [Di, N]
    w_dt_down: Tensor    # [Di, dt_rank]
    w_dt_up: Tensor      # [dt_rank, Di]
    dt_bias: Tensor      # [Di]
    a_log: Tensor        # [Di, N]; A = -exp(a_log)
    d_skip: Tensor       # [Di]

    @property
    def d_inner(self) -> int:
        return self.a_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]


@dataclass
class MambaBlockParams:
    in_ssm: Linear       # D -> Di, feeds conv + SSM branch
    in_gate: Linear      # D -> Di, gate branch
    conv_weight: Tensor  # [Di, k]; tap k-1 is the current token
    conv_bias: Tensor    # [Di]
    ssm: SsmParams
    out: Linear          # Di -> D


def discretize(delta, a, b_t):
    """Exact zero-order hold for a diagonal state matrix.

    ``delta: [..., Di]``, ``a: [Di, N]``, ``b_t: [..., N]``. Returns
    ``(Abar, Bbar)`` of shape ``[..., Di, N]``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ContractError("step size delta must be strictly positive")
    abar, coef = kernels.zoh(delta[..., None], np.asarray(a, dtype=np.float64))
    return abar, coef * np.asarray(b_t, dtype=np.float64)[..., None, :]


def selective_scan(u, delta, A, B, C, D, backend=None) -> Tensor:
    """Run ``h_t = Abar_t h_{t-1} + Bbar_t u_t``, ``y_t = C_t . h_t + D u_t`` from ``h_0 = 0``.

    ``u, delta: [Bt, L, Di]``, ``A: [Di, N]`` (diagonal per inner channel),
    ``B, C: [Bt, L, N]``, ``D: [Di]``. Differentiable in all six inputs.
    ``backend`` overrides the kernel module (``kernels.python_backend`` or
    ``kernels.compiled_backend``).
    """
    u, delta, A, B, C, D = (as_tensor(t) for t in (u, delta, A, B, C, D))
    if u.ndim != 3 or u.shape[1] < 1:
        raise ShapeError(f"selective_scan input must be [Bt, L>=1, Di], got {u.shape}")
    bt, length, di = u.shape
    n = A.shape[-1]
    if (delta.shape != u.shape or A.shape != (di, n) or B.shape != (bt, length, n)
            or C.shape != (bt, length, n) or D.shape != (di,)):
        raise ShapeError(
            f"selective_scan shapes: u {u.shape}, delta {delta.shape}, A {A.shape}, "
            f"B {B.shape}, C {C.shape}, D {D.shape}"
        )
    if backend is None:
        forward_fn, backward_fn = kernels.scan_forward, kernels.scan_backward
    else:
        forward_fn, backward_fn = backend.scan_forward, backend.scan_backward
    arrays = [np.ascontiguousarray(t.data) for t in (u, delta, A, B, C, D)]
    y, hs = forward_fn(*arrays)
    y, hs = np.asarray(y), np.asarray(hs)
    if not np.isfinite(y).all():
        bad = np.argwhere(~np.isfinite(hs.reshape(bt, length, -1)).all(axis=(0, 2)))
        step = int(bad[0, 0]) if bad.size else int(np.argwhere(~np.isfinite(y).all(axis=(0, 2)))[0, 0])
        raise NumericError(f"selective scan produced a non-finite value at step {step}")

    def _bw(g):
        return tuple(np.asarray(x) for x in backward_fn(*arrays, hs, np.ascontiguousarray(g)))

    return make_op(y, (u, delta, A, B, C, D), _bw)


def conv_kernel_apply(u, abar, bbar, c) -> np.ndarray:
    """Causal convolution of ``u[L]`` with ``K = (C Bbar, C Abar Bbar, ..., C Abar^{L-1} Bbar)``.

    Only valid for time-invariant parameters: ``bbar`` and ``c`` are ``[N]``,
    ``abar`` is ``[N]`` (diagonal) or ``[N, N]``.
    """
    u = np.asarray(u.data if isinstance(u, Tensor) else u, dtype=np.float64)
    abar, bbar, c = (np.asarray(v, dtype=np.float64) for v in (abar, bbar, c))
    if u.ndim != 1:
        raise ShapeError(f"conv_kernel_apply expects a 1-D sequence, got {u.shape}")
    if bbar.ndim != 1 or c.ndim != 1 or abar.ndim not in (1, 2) or (abar.ndim == 2 and abar.shape[0] != abar.shape[1]):
        raise ContractError(
            "conv_kernel_apply needs time-invariant parameters "
            f"(got Abar {abar.shape}, Bbar {bbar.shape}, C {c.shape})"
        )
    length = u.shape[0]
    if abar.ndim == 1:
        powers = abar[None, :] ** np.arange(length)[:, None]
        kernel = powers @ (c * bbar)
    else:
        kernel = np.empty(length)
        for j in range(length):
            kernel[j] = c @ np.linalg.matrix_power(abar, j) @ bbar
    return np.convolve(u, kernel)[:length]


def causal_depthwise_conv(x, weight, bias) -> Tensor:
    """Per-channel causal convolution along axis 1 of ``x[B, L, Di]``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    _, length, di = x.shape
    k = weight.shape[1]
    if weight.shape[0] != di or bias.shape != (di,):
        raise ShapeError(f"conv weight {weight.shape} / bias {bias.shape} do not match {di} channels")
    xp = np.pad(x.data, ((0, 0), (k - 1, 0), (0, 0)))
    out = np.broadcast_to(bias.data, x.shape).copy()
    for j in range(k):
        out += weight.data[:, j] * xp[:, j:j + length]

    def _bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for j in range(k):
            gxp[:, j:j + length] += g * weight.data[:, j]
            gw[:, j] = (g * xp[:, j:j + length]).sum(axis=(0, 1))
        return gxp[:, k - 1:], gw, g.sum(axis=(0, 1))

    return make_op(out, (x, weight, bias), _bw)


def selective_ssm(u, p: SsmParams, backend=None) -> Tensor:
    """Input-dependent SSM: step sizes, B and C are projections of ``u[B, L, Di]``."""
    delta = softplus(matmul(matmul(u, p.w_dt_down), p.w_dt_up) + p.dt_bias)
    b_t = matmul(u, p.w_b)
    c_t = matmul(u, p.w_c)
    a = neg(exp(p.a_log))
    return selective_scan(u, delta, a, b_t, c_t, p.d_skip, backend=backend)


def mamba_block(z, p: MambaBlockParams, backend=None) -> Tensor:
    """Gated Mamba mixer over the token axis of ``z[B, E, D]``."""
    x = linear(z, p.in_ssm)
    x = silu(causal_depthwise_conv(x, p.conv_weight, p.conv_bias))
    y = selective_ssm(x, p.ssm, backend=backend)
    gate = silu(linear(z, p.in_gate))
    return linear(mul(y, gate), p.out)


def init_ssm(rng: np.random.Generator, d_inner: int, d_state: int, dt_rank: int,
             dt_min: float = 1e-3, dt_max: float = 1e-1, d_skip: bool = True) -> SsmParams:
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_inner))
    # inverse softplus, so softplus(dt_bias) == dt
    dt_bias = dt + np.log(-np.expm1(-dt))
    a_log = np.tile(np.log(np.arange(1, d_state + 1, dtype=np.float64)), (d_inner, 1))
    return SsmParams(
        w_b=uniform_init(rng, d_inner, (d_inner, d_state)),
        w_c=uniform_init(rng, d_inner, (d_inner, d_state)),
        w_dt_down=uniform_init(rng, d_inner, (d_inner, dt_rank)),
        w_dt_up=uniform_init(rng, dt_rank, (dt_rank, d_inner)),
        dt_bias=Tensor(dt_bias, requires_grad=True),
        a_log=Tensor(a_log, requires_grad=True),
        d_skip=Tensor(np.ones(d_inner) if d_skip else np.zeros(d_inner), requires_grad=d_skip),
    )


def init_mamba_block(rng: np.random.Generator, d_model: int, expand: int = 2, d_state: int = 16,
                     conv_width: int = 4, dt_rank: int | None = None, dt_min: float = 1e-3,
                     dt_max: float = 1e-1, d_skip: bool = True) -> MambaBlockParams:
    d_inner = expand * d_model
    if dt_rank is None or dt_rank <= 0:
        dt_rank = math.ceil(d_model / 16)
    return MambaBlockParams(
        in_ssm=init_linear(rng, d_model, d_inner),
        in_gate=init_linear(rng, d_model, d_inner),
        conv_weight=uniform_init(rng, conv_width, (d_inner, conv_width)),
        conv_bias=uniform_init(rng, conv_width, (d_inner,)),
        ssm=init_ssm(rng, d_inner, d_state, dt_rank, dt_min, dt_max, d_skip),
        out=init_linear(rng, d_inner, d_model),
    )
