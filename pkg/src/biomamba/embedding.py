"""Spectro-temporal token construction.

Spectral tokens come first, ordered channel-major (all segments of channel
0, then channel 1, ...); one temporal token per channel follows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Linear, init_linear, linear
from .numerics import Tensor, add, concat, transpose
from .spectral import FrequencyResolution, spectral_magnitudes


@dataclass
class EmbeddingParams:
    spectral: Linear | None = None     # n_bins -> D
    channel: Tensor | None = None      # [C, D]
    position: Tensor | None = None     # [n_seg, D]
    temporal: Linear | None = None     # T -> D


@dataclass(frozen=True)
class TokenLayout:
    """Maps a token index to ``(kind, channel, segment)``; segment is -1 for temporal tokens."""

    n_channels: int
    n_segments: int
    spectral: bool = True
    temporal: bool = True

    @property
    def n_spectral(self) -> int:
        return self.n_channels * self.n_segments if self.spectral else 0

    def __len__(self) -> int:
        return self.n_spectral + (self.n_channels if self.temporal else 0)

    def describe(self, index: int) -> tuple[str, int, int]:
        if not 0 <= index < len(self):
            raise IndexError(index)
        if index < self.n_spectral:
            return "spectral", index // self.n_segments, index % self.n_segments
        return "temporal", index - self.n_spectral, -1

    def index(self, kind: str, channel: int, segment: int = -1) -> int:
        if kind == "spectral" and self.spectral:
            return channel * self.n_segments + segment
        if kind == "temporal" and self.temporal:
            return self.n_spectral + channel
        raise KeyError((kind, channel, segment))


@dataclass
class TokenSequence:
    tokens: Tensor  # [B, E, D]
    layout: TokenLayout


def init_embedding(rng: np.random.Generator, seq_len: int, n_channels: int, d_model: int,
                   res: FrequencyResolution, use_pse: bool = True, use_tde: bool = True) -> EmbeddingParams:
    p = EmbeddingParams()
    if use_pse:
        p.spectral = init_linear(rng, res.n_bins, d_model)
        p.channel = Tensor(rng.normal(0.0, 0.02, (n_channels, d_model)), requires_grad=True)
        p.position = Tensor(rng.normal(0.0, 0.02, (res.n_segments(seq_len), d_model)), requires_grad=True)
    if use_tde:
        p.temporal = init_linear(rng, seq_len, d_model)
    return p


def patched_spectral_embedding(x, p: EmbeddingParams, res: FrequencyResolution,
                               use_hann: bool = False) -> Tensor:
    """Tokens ``W_spec |FFT(window)| + CE[c] + PE[j]`` for every (channel, segment): ``[B, C*n_seg, D]``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a batch [B, T, C], got {x.shape}")
    batch, _, n_channels = x.shape
    if p.channel.shape[0] != n_channels:
        raise ConfigError(f"channel table has {p.channel.shape[0]} rows, data has {n_channels} channels")
    mags = spectral_magnitudes(x, res, use_hann)          # [B, C, n_seg, F]
    if mags.shape[2] != p.position.shape[0]:
        raise ConfigError(f"position table has {p.position.shape[0]} rows, data gives {mags.shape[2]} segments")
    tok = linear(mags, p.spectral)                 # [B, C, n_seg, D]
    tok = add(tok, p.channel.reshape(n_channels, 1, -1))
    tok = add(tok, p.position)
    return tok.reshape(batch, -1, tok.shape[-1])


def temporal_domain_embedding(x, p: EmbeddingParams) -> Tensor:
    """One token per channel: the whole series of that channel projected to D: ``[B, C, D]``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a batch [B, T, C], got {x.shape}")
    if x.shape[1] != p.temporal.in_features:
        raise ConfigError(f"temporal embedding expects T={p.temporal.in_features}, data has T={x.shape[1]}")
    return linear(transpose(x, (0, 2, 1)), p.temporal)


def spectro_temporal_embedding(x, p: EmbeddingParams, res: FrequencyResolution,
                               use_hann: bool = False) -> TokenSequence:
    """Concatenate spectral tokens then temporal tokens along the token axis."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    parts = []
    n_seg = 0
    n_channels = x.shape[-1]
    if p.spectral is not None:
        parts.append(patched_spectral_embedding(x, p, res, use_hann))
        n_seg = p.position.shape[0]
    if p.temporal is not None:
        parts.append(temporal_domain_embedding(x, p))
    if not parts:
        raise ConfigError("both embeddings are disabled")
    tokens = parts[0] if len(parts) == 1 else concat(parts, axis=1)
    layout = TokenLayout(n_channels, n_seg, p.spectral is not None, p.temporal is not None)
    return TokenSequence(tokens, layout)
