"""Finite-difference suite over every differentiable op and the composed model.

Each check calls :func:`numerics.grad_check` on one tensor argument with a
scalar loss formed as a fixed random weighting of the op's output, so that
every output element contributes a distinct slope. Composite checks (mamba
block, bidirectional block, full loss) differentiate with respect to their
input activations on the toy model; parameter gradients are covered by the
per-op checks, which exercise every argument of every op.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import ModelConfig
from .embedding import spectro_temporal_embedding
from .model import (SparseFFN, bidirectional_mamba, biomamba_block, build_model, forward,
                    init_sparse_linear, sparse_ffn, sparse_linear)
from .numerics import Tensor, grad_check
from .spectral import FrequencyResolution, frames, rfft_magnitude
from .ssm import causal_depthwise_conv, mamba_block, selective_scan, selective_ssm
from .training import cross_entropy

MODULES = ("numerics", "spectral", "embedding", "ssm", "biomamba", "training")


def toy_config() -> ModelConfig:
    """B=2, T=32, C=3, D=16, N=8, two blocks."""
    return ModelConfig(seq_len=32, n_channels=3, n_classes=2, d_model=16, n_blocks=2,
                       d_state=8, window=16, hop=8, sparsity=0.5)


TOY_BATCH = 2


@dataclass
class CheckResult:
    module: str
    name: str
    error: float
    elements: int
    seconds: float


def _weighted(y: Tensor, rng: np.random.Generator) -> Tensor:
    return nx.sum_(nx.mul(y, Tensor(rng.standard_normal(y.shape))))


def _leaf(rng, *shape, low=None, high=None) -> Tensor:
    if low is None:
        return Tensor(rng.standard_normal(shape))
    return Tensor(rng.uniform(low, high, shape))


def _op_cases(rng: np.random.Generator):
    """Yield ``(module, name, f, x)`` where ``f(x)`` is a scalar loss."""
    def arg_cases(module, name, fn, args):
        # one case per argument, others held fixed
        for i in range(len(args)):
            probe_seed = int(rng.integers(2**32))

            def f(x, i=i, probe_seed=probe_seed):
                call = list(args)
                call[i] = x
                return _weighted(fn(*call), np.random.default_rng(probe_seed))
            label = name if len(args) == 1 else f"{name}[arg{i}]"
            yield module, label, f, args[i]

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 5)
    yield from arg_cases("numerics", "matmul", nx.matmul, [a, b])
    yield from arg_cases("numerics", "matmul_batched", nx.matmul, [_leaf(rng, 2, 3, 4), _leaf(rng, 4, 2)])
    yield from arg_cases("numerics", "add", nx.add, [_leaf(rng, 3, 4), _leaf(rng, 4)])
    yield from arg_cases("numerics", "sub", nx.sub, [_leaf(rng, 3, 4), _leaf(rng, 3, 1)])
    yield from arg_cases("numerics", "mul", nx.mul, [_leaf(rng, 3, 4), _leaf(rng, 4)])
    yield from arg_cases("numerics", "neg", nx.neg, [_leaf(rng, 5)])
    yield from arg_cases("numerics", "sigmoid", nx.sigmoid, [_leaf(rng, 6)])
    yield from arg_cases("numerics", "silu", nx.silu, [_leaf(rng, 6)])
    yield from arg_cases("numerics", "softplus", nx.softplus, [_leaf(rng, 6)])
    yield from arg_cases("numerics", "exp", nx.exp, [_leaf(rng, 6)])
    recip = _leaf(rng, 6, low=0.5, high=2.0)
    recip.data *= np.where(rng.random(6) < 0.5, -1.0, 1.0)
    yield from arg_cases("numerics", "reciprocal", nx.reciprocal, [recip])
    yield from arg_cases("numerics", "sum", lambda x: nx.sum_(x, axis=1), [_leaf(rng, 3, 4)])
    yield from arg_cases("numerics", "mean", lambda x: nx.mean(x, axis=0), [_leaf(rng, 3, 4)])
    yield from arg_cases("numerics", "reshape", lambda x: nx.reshape(x, (4, 3)), [_leaf(rng, 3, 4)])
    yield from arg_cases("numerics", "transpose", lambda x: nx.transpose(x, (2, 0, 1)), [_leaf(rng, 2, 3, 4)])
    yield from arg_cases("numerics", "flip", lambda x: nx.flip(x, 1), [_leaf(rng, 2, 3, 4)])
    yield from arg_cases("numerics", "concat", lambda x, y: nx.concat([x, y], axis=1),
                         [_leaf(rng, 2, 3), _leaf(rng, 2, 2)])
    yield from arg_cases("numerics", "layer_norm", nx.layer_norm,
                         [_leaf(rng, 2, 3, 5), _leaf(rng, 5), _leaf(rng, 5)])

    res = FrequencyResolution(6, 4)
    yield from arg_cases("spectral", "frames", lambda x: frames(x, res), [_leaf(rng, 2, 14, 2)])
    yield from arg_cases("spectral", "frames_hann", lambda x: frames(x, res, use_hann=True), [_leaf(rng, 2, 14, 2)])
    yield from arg_cases("spectral", "rfft_magnitude", rfft_magnitude, [_leaf(rng, 2, 3, 8)])

    bt, length, di, n = 2, 5, 3, 4
    scan_args = [
        _leaf(rng, bt, length, di),
        Tensor(np.log1p(np.exp(rng.standard_normal((bt, length, di))))),
        Tensor(-rng.uniform(0.5, 2.0, (di, n))),
        _leaf(rng, bt, length, n),
        _leaf(rng, bt, length, n),
        _leaf(rng, di),
    ]
    yield from arg_cases("ssm", "selective_scan", selective_scan, scan_args)
    yield from arg_cases("ssm", "causal_conv", causal_depthwise_conv,
                         [_leaf(rng, 2, 5, 3), _leaf(rng, 3, 4), _leaf(rng, 3)])

    x = _leaf(rng, 2, 6)
    layer = init_sparse_linear(rng, 6, 5, 0.5, int(rng.integers(2**31)))
    yield from arg_cases("biomamba", "sparse_linear[x]", lambda v: sparse_linear(v, layer), [x])
    yield from arg_cases("biomamba", "sparse_linear[weight]",
                         lambda v: sparse_linear(x, type(layer)(v, layer.bias, layer.mask)), [layer.weight])
    ffn = SparseFFN(init_sparse_linear(rng, 6, 12, 0.5, 1), init_sparse_linear(rng, 12, 6, 0.5, 2))
    yield from arg_cases("biomamba", "sparse_ffn", lambda v: sparse_ffn(v, ffn), [_leaf(rng, 2, 3, 6)])

    labels = rng.integers(0, 3, 4)
    yield "training", "cross_entropy", lambda z: cross_entropy(z, labels), _leaf(rng, 4, 3)


def _model_cases(cfg: ModelConfig, seed: int):
    model = build_model(cfg, seed)
    rng = np.random.default_rng([seed, 1])
    x = Tensor(rng.standard_normal((TOY_BATCH, cfg.seq_len, cfg.n_channels)))
    labels = rng.integers(0, cfg.n_classes, TOY_BATCH)
    z = Tensor(rng.standard_normal((TOY_BATCH, cfg.n_tokens, cfg.d_model)))
    u = Tensor(rng.standard_normal((TOY_BATCH, cfg.n_tokens, cfg.d_inner)))
    blk = model.blocks[0]
    probe = lambda y: _weighted(y, np.random.default_rng([seed, 2]))  # noqa: E731
    yield "ssm", "selective_ssm[u]", lambda v: probe(selective_ssm(v, blk.forward.ssm)), u
    yield "ssm", "mamba_block[z]", lambda v: probe(mamba_block(v, blk.forward)), z
    yield "embedding", "spectro_temporal[x]", \
        lambda v: probe(spectro_temporal_embedding(v, model.embedding, cfg.resolution, cfg.hann).tokens), x
    yield "biomamba", "bidirectional_mamba[z]", lambda v: probe(bidirectional_mamba(v, blk, cfg.ln_eps)), z
    yield "biomamba", "biomamba_block[z]", lambda v: probe(biomamba_block(v, blk, cfg.ln_eps)), z
    yield "biomamba", "model_loss[x]", lambda v: cross_entropy(forward(model, v), labels), x


def run_suite(cfg: ModelConfig | None = None, seed: int = 0, modules=None, h: float = 1e-5) -> list[CheckResult]:
    cfg = cfg or toy_config()
    cfg.validate()
    wanted = set(modules) if modules else set(MODULES)
    rng = np.random.default_rng(seed)
    results = []
    cases = list(_op_cases(rng)) + list(_model_cases(cfg, seed))
    for module, name, f, x in cases:
        if module not in wanted:
            continue
        t0 = time.perf_counter()
        err = grad_check(f, x, h=h)
        results.append(CheckResult(module, name, err, x.size, time.perf_counter() - t0))
    return results


def worst(results: list[CheckResult]) -> CheckResult | None:
    return max(results, key=lambda r: r.error, default=None)
