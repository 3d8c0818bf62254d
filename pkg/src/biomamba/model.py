"""Bidirectional Mamba blocks with sparse feed-forward layers, stacked into a classifier."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .embedding import EmbeddingParams, init_embedding, spectro_temporal_embedding
from .errors import ConfigError, ContractError
from .layers import Linear, init_linear, linear, named_masks, named_parameters
from .numerics import Tensor, add, flip, layer_norm, mean, mul, silu
from .ssm import MambaBlockParams, init_mamba_block, mamba_block


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def active_count(in_features: int, out_features: int, sparsity: float) -> int:
    """``R = Round[(1 - s) * In * Out]`` with halves rounded away from zero."""
    return round_half_away((1.0 - sparsity) * in_features * out_features)


def sparse_mask_init(in_features: int, out_features: int, sparsity: float, seed: int) -> np.ndarray:
    """Boolean ``[In, Out]`` mask with exactly ``R`` entries set, drawn without replacement."""
    if not 0.0 <= sparsity < 1.0:
        raise ConfigError(f"sparsity must lie in [0, 1), got {sparsity}")
    total = in_features * out_features
    r = active_count(in_features, out_features, sparsity)
    mask = np.zeros(total, dtype=bool)
    if r == total:
        mask[:] = True
    else:
        mask[np.random.default_rng(seed).choice(total, size=r, replace=False)] = True
    return mask.reshape(in_features, out_features)


@dataclass
class SparseLinear:
    weight: Tensor       # [In, Out], zero wherever mask is False
    bias: Tensor         # [Out]
    mask: np.ndarray     # [In, Out] bool
    sparsity: float = 0.0
    seed: int = 0

    @property
    def active(self) -> int:
        return int(self.mask.sum())


def init_sparse_linear(rng: np.random.Generator, in_features: int, out_features: int,
                       sparsity: float, seed: int) -> SparseLinear:
    dense = init_linear(rng, in_features, out_features)
    mask = sparse_mask_init(in_features, out_features, sparsity, seed)
    dense.weight.data *= mask
    return SparseLinear(dense.weight, dense.bias, mask, sparsity, seed)


def sparse_linear(x, p: SparseLinear) -> Tensor:
    """Affine map with masked weights; inactive weights receive exactly zero gradient."""
    if p.mask.shape != p.weight.shape:
        raise ContractError(f"mask {p.mask.shape} does not match weight {p.weight.shape}")
    w = mul(p.weight, Tensor(p.mask.astype(np.float64)))
    return linear(x, Linear(w, p.bias))


@dataclass
class SparseFFN:
    up: SparseLinear     # D -> ffn_mult * D
    down: SparseLinear   # ffn_mult * D -> D


def sparse_ffn(x, p: SparseFFN) -> Tensor:
    return sparse_linear(silu(sparse_linear(x, p.up)), p.down)


@dataclass
class BioMambaBlockParams:
    forward: MambaBlockParams
    backward: MambaBlockParams | None  # None: unidirectional
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ffn: SparseFFN
    ln2_gamma: Tensor
    ln2_beta: Tensor


@dataclass
class BioMambaModel:
    config: ModelConfig
    embedding: EmbeddingParams
    blocks: list[BioMambaBlockParams] = field(default_factory=list)
    head: Linear | None = None

    def parameters(self) -> list[Tensor]:
        """Unique trainable tensors in declaration order (tied weights appear once)."""
        seen, out = set(), []
        for _, t in named_parameters(self):
            if t.requires_grad and id(t) not in seen:
                seen.add(id(t))
                out.append(t)
        return out

    def sparse_layers(self) -> list[SparseLinear]:
        return [layer for blk in self.blocks for layer in (blk.ffn.up, blk.ffn.down)]


def bidirectional_mamba(z, p: BioMambaBlockParams, eps: float = 1e-5, backend=None) -> Tensor:
    """``LN((M+(Z) + Reverse(M-(Reverse(Z)))) + Z)``; without a backward branch ``LN(M+(Z) + Z)``."""
    mixed = mamba_block(z, p.forward, backend=backend)
    if p.backward is not None:
        rev = flip(mamba_block(flip(z, 1), p.backward, backend=backend), 1)
        mixed = add(mixed, rev)
    return layer_norm(add(mixed, z), p.ln1_gamma, p.ln1_beta, eps)


def biomamba_block(z, p: BioMambaBlockParams, eps: float = 1e-5, backend=None) -> Tensor:
    h = bidirectional_mamba(z, p, eps, backend=backend)
    return layer_norm(add(sparse_ffn(h, p.ffn), h), p.ln2_gamma, p.ln2_beta, eps)


def forward(model: BioMambaModel, x, backend=None) -> Tensor:
    """Logits ``[B, K]`` for a raw batch ``x[B, T, C]``."""
    cfg = model.config
    x_arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if x_arr.ndim != 3 or x_arr.shape[1:] != (cfg.seq_len, cfg.n_channels):
        raise ConfigError(
            f"input shape {tuple(x_arr.shape)} does not match model (B, {cfg.seq_len}, {cfg.n_channels})"
        )
    z = spectro_temporal_embedding(x, model.embedding, cfg.resolution, cfg.hann).tokens
    for blk in model.blocks:
        z = biomamba_block(z, blk, cfg.ln_eps, backend=backend)
    return linear(mean(z, axis=1), model.head)


def _layer_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def build_model(cfg: ModelConfig, seed: int = 0) -> BioMambaModel:
    """Initialise every parameter group from ``seed``; masks are drawn once here."""
    cfg.validate()
    rng = np.random.default_rng(_layer_seed(seed, 0))
    emb = init_embedding(rng, cfg.seq_len, cfg.n_channels, cfg.d_model, cfg.resolution,
                         cfg.use_pse, cfg.use_tde)
    mamba_kw = dict(expand=cfg.expand, d_state=cfg.d_state, conv_width=cfg.conv_width,
                    dt_rank=cfg.resolved_dt_rank, dt_min=cfg.dt_min, dt_max=cfg.dt_max,
                    d_skip=cfg.d_skip)
    blocks = []
    hidden = cfg.ffn_mult * cfg.d_model
    for m in range(cfg.n_blocks):
        fwd = init_mamba_block(rng, cfg.d_model, **mamba_kw)
        bwd = init_mamba_block(rng, cfg.d_model, **mamba_kw) if cfg.bidirectional else None
        ffn = SparseFFN(
            up=init_sparse_linear(rng, cfg.d_model, hidden, cfg.sparsity, _layer_seed(seed, 1, m, 0)),
            down=init_sparse_linear(rng, hidden, cfg.d_model, cfg.sparsity, _layer_seed(seed, 1, m, 1)),
        )
        ones, zeros = np.ones(cfg.d_model), np.zeros(cfg.d_model)
        blocks.append(BioMambaBlockParams(
            forward=fwd, backward=bwd,
            ln1_gamma=Tensor(ones, requires_grad=True), ln1_beta=Tensor(zeros, requires_grad=True),
            ffn=ffn,
            ln2_gamma=Tensor(ones, requires_grad=True), ln2_beta=Tensor(zeros, requires_grad=True),
        ))
    head = init_linear(rng, cfg.d_model, cfg.n_classes)
    return BioMambaModel(cfg, emb, blocks, head)


def mask_digest(model: BioMambaModel) -> str:
    """SHA-256 over all sparsity masks, for checking they never change."""
    h = hashlib.sha256()
    for name, mask in named_masks(model):
        h.update(name.encode())
        h.update(np.packbits(mask, bitorder="little").tobytes())
    return h.hexdigest()
