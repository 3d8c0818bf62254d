"""Cross-entropy loss, Adam, and the seeded training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .errors import DataError
from .model import BioMambaModel, forward
from .numerics import Tensor, as_tensor, backward, make_op, no_grad

log = logging.getLogger(__name__)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return np.exp(_log_softmax(z))


def cross_entropy(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch (max-shifted)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    batch, k = logits.shape
    if labels.shape != (batch,):
        raise DataError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} at record {bad[0]} is outside [0, {k})")
    logp = _log_softmax(logits.data)
    loss = -logp[np.arange(batch), labels].mean()

    def _bw(g):
        grad = np.exp(logp)
        grad[np.arange(batch), labels] -= 1.0
        return (g * grad / batch,)

    return make_op(np.asarray(loss), (logits,), _bw)


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place. Parameters without a grad are skipped."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            continue
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def predict_proba(model: BioMambaModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            out.append(softmax(forward(model, x[start:start + batch_size])))
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.config.n_classes))


@dataclass
class TrainResult:
    model: BioMambaModel
    history: list[dict]
    best_epoch: int
    best_val_accuracy: float


def _snapshot(params: list[Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def train(model: BioMambaModel, train_x: np.ndarray, train_y: np.ndarray,
          val_x: np.ndarray, val_y: np.ndarray, cfg: TrainConfig, seed: int,
          on_epoch=None) -> TrainResult:
    """Minibatch Adam with per-epoch seeded shuffling; keeps the best-validation-accuracy weights.

    ``on_epoch(record)`` is called after every epoch with the history record.
    """
    from .metrics import classification_metrics, confusion_matrix

    if len(train_x) == 0:
        raise DataError("training split is empty")
    if len(val_x) == 0:
        raise DataError("validation split is empty")
    cfg.validate()
    params = model.parameters()
    state = AdamState()
    history: list[dict] = []
    best = (-1.0, 0, _snapshot(params))
    k = model.config.n_classes
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([seed, epoch]).permutation(len(train_x))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = cross_entropy(forward(model, train_x[idx]), train_y[idx])
            backward(loss)
            adam_step(params, state, cfg)
            total += loss.item() * len(idx)
            seen += len(idx)
        probs = predict_proba(model, val_x)
        cm = confusion_matrix(val_y, probs.argmax(axis=1), k)
        acc, _, _, f1 = classification_metrics(cm, weighted=cfg.weighted_f1)
        record = {
            "epoch": epoch,
            "train_loss": total / seen,
            "val_accuracy": acc,
            "val_f1": f1,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        }
        history.append(record)
        log.debug("epoch %d loss %.5f val_acc %.4f", epoch, record["train_loss"], acc)
        if on_epoch is not None:
            on_epoch(record)
        if acc > best[0]:
            best = (acc, epoch, _snapshot(params))
    for p, saved in zip(params, best[2]):
        p.data[...] = saved
    return TrainResult(model, history, best[1], best[0])
