"""Windowed segmentation and radix-2 Fourier magnitudes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tensor, as_tensor, make_op


@dataclass(frozen=True)
class FrequencyResolution:
    """Spectral window length ``window`` (a) and hop ``hop`` (b), both in samples."""

    window: int
    hop: int

    def validate(self, length: int) -> None:
        if self.window < 1 or self.hop < 1:
            raise ConfigError(f"window and hop must be positive, got [{self.window}, {self.hop}]")
        if self.window > length:
            raise ConfigError(f"window {self.window} is longer than the sequence ({length} samples)")

    def n_segments(self, length: int) -> int:
        self.validate(length)
        return (length - self.window) // self.hop + 1

    @property
    def padded(self) -> int:
        """Transform length: ``window`` rounded up to a power of two."""
        return next_pow2(self.window)

    @property
    def n_bins(self) -> int:
        return self.padded // 2 + 1


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def segment(x, res: FrequencyResolution) -> np.ndarray:
    """Cut ``x[..., T, C]`` into windows ``[..., C, n_seg, window]``.

    Window ``j`` of channel ``c`` is ``x[j*hop : j*hop + window, c]``;
    trailing samples not covered by a full window are dropped.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError(f"segment expects [..., T, C], got {x.shape}")
    length = x.shape[-2]
    n_seg = res.n_segments(length)
    starts = np.arange(n_seg) * res.hop
    idx = starts[:, None] + np.arange(res.window)[None, :]
    xc = np.swapaxes(x, -1, -2)
    return xc[..., idx]


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(n):
        r, v = 0, i
        for _ in range(bits):
            r = (r << 1) | (v & 1)
            v >>= 1
        rev[i] = r
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey transform along the last axis.

    The last axis must be a power of two. Leading axes are batched.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if not is_pow2(n):
        raise ConfigError(f"radix-2 transform needs a power-of-two length, got {n}")
    out = x[..., _bit_reverse(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(*out.shape[:-1], n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        out = blocks.reshape(*out.shape[:-1], n)
        size *= 2
    return out


def hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def rfft_magnitude(window) -> Tensor:
    """One-sided magnitudes ``|X_k|``, ``k = 0..a/2``, of power-of-two windows.

    Accepts ``[..., a]``. Differentiable; the subgradient at a zero-magnitude
    bin is 0.
    """
    w = as_tensor(window)
    n = w.shape[-1]
    spec = fft(w.data)[..., : n // 2 + 1]
    mag = np.abs(spec)

    def _bw(g):
        safe = np.where(mag > 0.0, mag, 1.0)
        unit = np.where(mag > 0.0, spec / safe, 0.0)
        k = np.arange(n // 2 + 1)[:, None]
        basis = np.exp(2j * np.pi * k * np.arange(n)[None, :] / n)
        return (np.real((g * unit) @ basis),)

    return make_op(mag, (w,), _bw)


def frames(x, res: FrequencyResolution, use_hann: bool = False) -> Tensor:
    """Differentiable :func:`segment` of ``x[B, T, C]`` into ``[B, C, n_seg, padded]``.

    Windows shorter than the next power of two are zero-padded on the right;
    with ``use_hann`` each window is tapered before padding.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a batch [B, T, C], got {x.shape}")
    windows = segment(x.data, res)
    taper = hann(res.window) if use_hann else None
    if taper is not None:
        windows = windows * taper
    pad = res.padded - res.window
    if pad:
        windows = np.pad(windows, [(0, 0)] * 3 + [(0, pad)])
    n_seg = windows.shape[2]
    starts = np.arange(n_seg) * res.hop

    def _bw(g):
        g = g[..., : res.window]
        if taper is not None:
            g = g * taper
        gx = np.zeros((x.shape[0], x.shape[2], x.shape[1]))
        for j, s in enumerate(starts):
            gx[:, :, s:s + res.window] += g[:, :, j]
        return (gx.transpose(0, 2, 1),)

    return make_op(windows, (x,), _bw)


def spectral_magnitudes(x, res: FrequencyResolution, use_hann: bool = False) -> Tensor:
    """Magnitudes ``[B, C, n_seg, n_bins]`` of every window of ``x[B, T, C]``."""
    return rfft_magnitude(frames(x, res, use_hann))
