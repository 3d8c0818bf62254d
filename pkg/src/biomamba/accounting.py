"""Parameter and multiply-add accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .layers import named_parameters
from .model import BioMambaModel


@dataclass
class ParamReport:
    """``groups`` maps a parameter name to ``(allocated, active)`` element counts.

    Only trainable tensors are counted. Sparse weights are active only where
    their mask is set; every other tensor is fully active.
    """

    groups: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def allocated(self) -> int:
        return sum(a for a, _ in self.groups.values())

    @property
    def active(self) -> int:
        return sum(b for _, b in self.groups.values())

    def by_prefix(self, prefix: str) -> tuple[int, int]:
        picked = [v for k, v in self.groups.items() if k == prefix or k.startswith(prefix + ".")]
        return sum(a for a, _ in picked), sum(b for _, b in picked)


def count_params(model: BioMambaModel) -> ParamReport:
    masks = {}
    for layer in model.sparse_layers():
        masks[id(layer.weight)] = layer.active
    report = ParamReport()
    seen = set()
    for name, t in named_parameters(model):
        if not t.requires_grad or id(t) in seen:
            continue
        seen.add(id(t))
        report.groups[name] = (t.size, masks.get(id(t), t.size))
    return report


@dataclass
class FlopReport:
    """Multiply-adds per forward pass of a batch.

    ``dense`` counts every weight of the sparse layers (what the dense
    kernels execute); ``active`` counts only masked-in weights.
    """

    batch: int
    modules: dict[str, int] = field(default_factory=dict)
    sparse_dense: int = 0
    sparse_active: int = 0

    @property
    def dense(self) -> int:
        return sum(self.modules.values()) + self.sparse_dense

    @property
    def active(self) -> int:
        return sum(self.modules.values()) + self.sparse_active


def fft_flops(n: int) -> int:
    """Real-transform estimate ``5 n log2 n`` for one length-``n`` window."""
    return int(5 * n * math.log2(n)) if n > 1 else 0


def count_flops(model: BioMambaModel, batch: int = 1) -> FlopReport:
    cfg = model.config
    d, di, n, k, r = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.conv_width, cfg.resolved_dt_rank
    c, t = cfg.n_channels, cfg.seq_len
    e = cfg.n_tokens
    rep = FlopReport(batch)
    if cfg.use_pse:
        res = cfg.resolution
        windows = c * cfg.n_segments
        rep.modules["fft"] = batch * windows * fft_flops(res.padded)
        rep.modules["spectral_embedding"] = batch * windows * res.n_bins * d
    if cfg.use_tde:
        rep.modules["temporal_embedding"] = batch * c * t * d
    per_token = (2 * d * di      # input and gate projections
                 + di * k        # depthwise conv
                 + 2 * di * r    # low-rank step size
                 + 2 * di * n    # B and C projections
                 + 3 * di * n    # scan: decay, input injection, readout
                 + di            # skip term
                 + di * d)       # output projection
    directions = 2 if cfg.bidirectional else 1
    rep.modules["mamba"] = batch * cfg.n_blocks * directions * e * per_token
    for layer in model.sparse_layers():
        rep.sparse_dense += batch * e * layer.mask.size
        rep.sparse_active += batch * e * layer.active
    rep.modules["head"] = batch * d * cfg.n_classes
    return rep
