"""Glue between datasets, configuration, training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .dataio import BiosignalDataset, Split, SplitSpec, subject_split
from .errors import ConfigError
from .metrics import MetricsReport, evaluate
from .model import BioMambaModel, build_model
from .training import TrainResult, predict_proba, train


def resolve(run: RunConfig, ds: BiosignalDataset) -> RunConfig:
    """Fill data-geometry keys left at 0 from the dataset and reject mismatches."""
    run = run.copy()
    m = run.model
    data = {"seq_len": ds.seq_len, "n_channels": ds.n_channels, "n_classes": ds.n_classes}
    for key, value in data.items():
        if getattr(m, key) == 0:
            setattr(m, key, value)
    want = (m.seq_len, m.n_channels, m.n_classes)
    have = (ds.seq_len, ds.n_channels, ds.n_classes)
    if want != have:
        raise ConfigError(f"config expects (T, C, K) = {want} but the data has {have}")
    m.validate()
    run.train.validate()
    return run


def _ids(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"bad subject list {text!r}") from None


def split_spec(run: RunConfig) -> SplitSpec:
    t = run.train
    return SplitSpec(t.val_fraction, t.test_fraction, run.seed, _ids(t.val_subjects), _ids(t.test_subjects))


def split(run: RunConfig, ds: BiosignalDataset) -> Split:
    return subject_split(ds, split_spec(run))


@dataclass
class RunOutput:
    run: RunConfig
    model: BioMambaModel
    result: TrainResult
    split: Split
    report: MetricsReport


def fit(run: RunConfig, ds: BiosignalDataset, on_epoch=None) -> RunOutput:
    """Resolve, split by subject, build, train, and score the best model on the test split."""
    run = resolve(run, ds)
    parts = split(run, ds)
    model = build_model(run.model, run.seed)
    result = train(model, parts.train.x, parts.train.labels, parts.val.x, parts.val.labels,
                   run.train, run.seed, on_epoch=on_epoch)
    report = score(model, parts.test, "test", run.train.weighted_f1)
    return RunOutput(run, model, result, parts, report)


def score(model: BioMambaModel, ds: BiosignalDataset, name: str, weighted: bool = False) -> MetricsReport:
    probs = predict_proba(model, ds.x)
    return evaluate(probs, ds.labels, split=name, weighted=weighted)


def pick(parts: Split, ds: BiosignalDataset, name: str) -> BiosignalDataset:
    if name == "all":
        return ds
    if name not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {name!r}; choose train, val, test or all")
    return getattr(parts, name)


HISTORY_COLUMNS = ("epoch", "train_loss", "val_accuracy", "val_f1", "wall_ms")


def history_csv(history: list[dict]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for rec in history:
        lines.append(",".join(repr(rec[k]) if isinstance(rec[k], float) else str(rec[k])
                              for k in HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"

