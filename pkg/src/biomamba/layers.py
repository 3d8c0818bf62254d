"""Parameter containers and the affine map shared by all modules."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .numerics import Tensor, add, matmul


@dataclass
class Linear:
    """Affine map ``x @ weight + bias`` with ``weight: [in, out]``."""

    weight: Tensor
    bias: Tensor | None = None

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True) -> Linear:
    weight = uniform_init(rng, fan_in, (fan_in, fan_out))
    b = uniform_init(rng, fan_in, (fan_out,)) if bias else None
    return Linear(weight, b)


def linear(x, p: Linear) -> Tensor:
    y = matmul(x, p.weight)
    return add(y, p.bias) if p.bias is not None else y


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses and lists in declaration order, yielding every Tensor."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}")


def named_masks(obj, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
    """Like :func:`named_parameters` but yields boolean numpy arrays (sparsity masks)."""
    if isinstance(obj, np.ndarray) and obj.dtype == np.bool_:
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from named_masks(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_masks(item, f"{prefix}.{i}")
