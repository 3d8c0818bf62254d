"""Timing harness for the scan kernel and the full forward pass."""
from __future__ import annotations

import gc
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .accounting import count_flops, count_params
from .config import ModelConfig
from .model import build_model, forward
from .numerics import no_grad

DEFAULT_LENGTHS = (512, 1024, 2048, 4096, 8192)
CSV_COLUMNS = ("component", "length", "median_ms", "params", "flops")


@dataclass
class BenchRow:
    component: str
    length: int
    median_ms: float
    params: int
    flops: int

    def csv(self) -> str:
        return f"{self.component},{self.length},{self.median_ms:.4f},{self.params},{self.flops}"


def median_ms(fn, repeat: int) -> float:
    """Median wall time in ms after one warm-up call; the collector is paused, as in timeit."""
    fn()
    gc.collect()
    enabled = gc.isenabled()
    gc.disable()
    try:
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) * 1e3)
    finally:
        if enabled:
            gc.enable()
    return statistics.median(times)


def scan_inputs(length: int, d_inner: int = 64, d_state: int = 16, batch: int = 1, seed: int = 0):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((batch, length, d_inner))
    delta = rng.uniform(0.001, 0.1, (batch, length, d_inner))
    a = -np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))
    b = rng.standard_normal((batch, length, d_state))
    c = rng.standard_normal((batch, length, d_state))
    d = np.ones(d_inner)
    return u, delta, a, b, c, d


def time_scan(length: int, repeat: int = 5, backend=None, d_inner: int = 64, d_state: int = 16) -> float:
    backend = backend or kernels
    args = scan_inputs(length, d_inner, d_state)
    return median_ms(lambda: backend.scan_forward(*args), repeat)


def bench_model_config(length: int) -> ModelConfig:
    return ModelConfig(seq_len=length, n_channels=2, n_classes=2, d_model=16, n_blocks=1,
                       d_state=8, window=128, hop=100)


def run(lengths=DEFAULT_LENGTHS, repeat: int = 5, d_inner: int = 64, d_state: int = 16) -> list[BenchRow]:
    rows = []
    scan_flops_per_step = 3 * d_inner * d_state
    for length in lengths:
        rows.append(BenchRow("scan", length, time_scan(length, repeat, d_inner=d_inner, d_state=d_state),
                             0, scan_flops_per_step * length))
    for length in lengths:
        model = build_model(bench_model_config(length), seed=0)
        x = np.random.default_rng(length).standard_normal((1, length, model.config.n_channels))

        def fwd():
            with no_grad():
                forward(model, x)
        rows.append(BenchRow("forward", length, median_ms(fwd, repeat),
                             count_params(model).active, count_flops(model, 1).dense))
    return rows


def scaling_exponent(lengths, times) -> float:
    """Slope of ``log(time)`` against ``log(length)`` by least squares."""
    slope, _ = np.polyfit(np.log(np.asarray(lengths, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)
