"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while gradient recording is enabled
appends one record to the thread-local :class:`ComputationTape`. Recording
order is a topological order of the graph, so :func:`backward` simply replays
the tape in reverse.

Values are stored as row-major ``numpy.float64`` arrays.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

EXP_CLAMP = 709.0

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional float64 array that can take part in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "saturated", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.saturated = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def flip(self, axis: int) -> "Tensor":
        return flip(self, axis)


# ---------------------------------------------------------------------------
# tape


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class ComputationTape:
    """Ordered log of executed operations and their local gradient rules."""

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.records.append(_Record(output, inputs, backward))

    def clear(self) -> None:
        self.records.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss is not connected to any tensor that requires grad")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self.records):
            g_out = grads.get(id(rec.output))
            if g_out is None:
                continue
            g_inputs = rec.backward(g_out)
            for inp, g in zip(rec.inputs, g_inputs):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    touched[key] = inp
        for key, t in touched.items():
            t.grad = np.ascontiguousarray(grads[key], dtype=np.float64)
        self.clear()


_local = threading.local()


def current_tape() -> ComputationTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = ComputationTape()
    return tape


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    previous = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = previous


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires-grad ancestor of ``loss``, then clear the tape."""
    current_tape().backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, inputs: Iterable[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of an operation and record it when needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per input.
    """
    inputs = tuple(inputs)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64, order="C")
    out.requires_grad = False
    out.grad = None
    out.saturated = False
    out.name = None
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        current_tape().record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b``.

    ``a`` may carry leading batch axes (``[..., m, k]``); ``b`` is a plain
    ``[k, n]`` matrix. The backward rules are ``dA = dY @ B.T`` and
    ``dB = A.T @ dY`` summed over the batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def _bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return make_op(out, (a, b), _bw)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def _bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), _bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return make_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    """``x * sigmoid(x)``."""
    a = as_tensor(a)
    s = _sigmoid(a.data)
    x = a.data
    return make_op(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),))


def softplus(a) -> Tensor:
    """``ln(1 + e^x)``, evaluated without overflow."""
    a = as_tensor(a)
    return make_op(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def exp(a) -> Tensor:
    """Elementwise ``e^x``; inputs above 709 are clamped and ``out.saturated`` is set."""
    a = as_tensor(a)
    over = a.data > EXP_CLAMP
    out_data = np.exp(np.minimum(a.data, EXP_CLAMP))

    def _bw(g):
        return (np.where(over, 0.0, g * out_data),)

    out = make_op(out_data, (a,), _bw)
    out.saturated = bool(over.any())
    return out


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data == 0.0):
        raise DomainError("reciprocal of zero")
    r = 1.0 / a.data
    return make_op(r, (a,), lambda g: (-g * r * r,))


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name to one of add, mul, silu, softplus, exp, reciprocal."""
    table = {
        "add": add, "mul": mul, "silu": silu,
        "softplus": softplus, "exp": exp, "reciprocal": reciprocal,
    }
    try:
        fn = table[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# reductions and layout


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op(out, (a,), _bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_op(out, (a,), _bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return make_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                   lambda g: (g.transpose(inverse),))


def flip(a, axis: int) -> Tensor:
    """Reverse the order of entries along ``axis``."""
    a = as_tensor(a)
    return make_op(np.flip(a.data, axis=axis).copy(), (a,),
                   lambda g: (np.flip(g, axis=axis).copy(),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(out, tensors, _bw)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(z, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize each token over the last axis, then apply ``gamma``/``beta``."""
    z, gamma, beta = as_tensor(z), as_tensor(gamma), as_tensor(beta)
    dim = z.shape[-1]
    if dim < 1 or gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeError(f"layer_norm: token shape {z.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise DomainError("layer_norm eps must be positive")
    mu = z.data.mean(axis=-1, keepdims=True)
    centered = z.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        g_beta = g.sum(axis=lead) if beta.requires_grad else None
        g_z = None
        if z.requires_grad:
            gx = g * gamma.data
            g_z = inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                             - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return g_z, g_gamma, g_beta

    return make_op(out, (z, gamma, beta), _bw)


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    max_elements: int | None = None,
    seed: int = 0,
) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` against central differences.

    Returns ``max |analytic - fd| / max(|fd|, 1e-8)`` over the checked
    elements. When ``max_elements`` is set, that many element indices are
    drawn (seeded) instead of sweeping the whole tensor.
    """
    return grad_check_many(lambda: f(x), [x], h=h, max_elements=max_elements, seed=seed)[0]


def grad_check_many(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_elements: int | None = None,
    seed: int = 0,
) -> list[float]:
    """Per-tensor version of :func:`grad_check` for a closure over several leaves."""
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
        p.grad = None
    try:
        current_tape().clear()
        loss = loss_fn()
        backward(loss)
        analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
        rng = np.random.default_rng(seed)
        errors = []
        with no_grad():
            for p, g in zip(params, analytic):
                flat = p.data.reshape(-1)
                idx = np.arange(flat.size)
                if max_elements is not None and flat.size > max_elements:
                    idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
                worst = 0.0
                for i in idx:
                    orig = flat[i]
                    flat[i] = orig + h
                    f_plus = loss_fn().item()
                    flat[i] = orig - h
                    f_minus = loss_fn().item()
                    flat[i] = orig
                    fd = (f_plus - f_minus) / (2.0 * h)
                    err = abs(g.reshape(-1)[i] - fd) / max(abs(fd), 1e-8)
                    worst = max(worst, err)
                errors.append(worst)
        return errors
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag

