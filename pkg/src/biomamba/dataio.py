"""BSG1 dataset container, subject-wise splits, CSV import and a synthetic spectral task."""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContainerError, DataError

MAGIC = b"BSG1"
_HEADER = struct.Struct("<4s5I")  # magic, n_records, T, C, K, fs_mHz


@dataclass
class BiosignalDataset:
    """Records share one ``(T, C)`` shape; ``x`` is ``[n, T, C]`` float64."""

    x: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    n_classes: int
    fs_hz: float = 1.0
    modality: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        if self.x.ndim != 3:
            raise DataError(f"samples must be [n, T, C], got {self.x.shape}")
        n = len(self.x)
        if self.labels.shape != (n,) or self.subjects.shape != (n,):
            raise DataError(f"{n} samples but {self.labels.size} labels and {self.subjects.size} subject ids")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.n_classes))
        if bad.size:
            raise DataError(f"label {self.labels[bad[0]]} at record {bad[0]} is outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def seq_len(self) -> int:
        return self.x.shape[1]

    @property
    def n_channels(self) -> int:
        return self.x.shape[2]

    def subject_ids(self) -> list[int]:
        return sorted(set(self.subjects.tolist()))

    def subset(self, index) -> "BiosignalDataset":
        return BiosignalDataset(self.x[index], self.labels[index], self.subjects[index],
                                self.n_classes, self.fs_hz, self.modality)

    def by_subjects(self, ids) -> "BiosignalDataset":
        return self.subset(np.isin(self.subjects, list(ids)))


def _record_dtype(t: int, c: int) -> np.dtype:
    return np.dtype([("subject", "<u2"), ("label", "<u2"), ("x", "<f4", (t, c))])


def encode(ds: BiosignalDataset) -> bytes:
    n, t, c = ds.x.shape
    if ds.subjects.size and (ds.subjects.min() < 0 or ds.subjects.max() > 0xFFFF):
        raise DataError("subject ids must fit in 16 bits")
    if ds.n_classes > 0xFFFF:
        raise DataError("too many classes for a 16-bit label")
    rec = np.empty(n, dtype=_record_dtype(t, c))
    rec["subject"] = ds.subjects
    rec["label"] = ds.labels
    rec["x"] = ds.x
    fs_mhz = int(round(ds.fs_hz * 1000))
    return _HEADER.pack(MAGIC, n, t, c, ds.n_classes, fs_mhz) + rec.tobytes()


def decode(buf: bytes) -> BiosignalDataset:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise ContainerError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise ContainerError(f"header truncated: {len(buf)} of {_HEADER.size} bytes", len(buf))
    _, n, t, c, k, fs_mhz = _HEADER.unpack_from(buf)
    if t == 0 or c == 0:
        raise ContainerError(f"degenerate sample shape T={t}, C={c}", 8)
    if k < 1:
        raise ContainerError("K must be at least 1", 16)
    dtype = _record_dtype(t, c)
    need = _HEADER.size + n * dtype.itemsize
    if len(buf) < need:
        whole = (len(buf) - _HEADER.size) // dtype.itemsize
        raise ContainerError(
            f"truncated: record {whole} of {n} is incomplete (file is {len(buf)} bytes, need {need})",
            _HEADER.size + whole * dtype.itemsize)
    if len(buf) > need:
        raise ContainerError(f"{len(buf) - need} unexpected trailing bytes", need)
    rec = np.frombuffer(buf, dtype=dtype, count=n, offset=_HEADER.size)
    bad = np.flatnonzero(rec["label"] >= k)
    if bad.size:
        i = int(bad[0])
        raise ContainerError(f"record {i} has label {rec['label'][i]} but K={k}",
                             _HEADER.size + i * dtype.itemsize + 2)
    return BiosignalDataset(rec["x"].astype(np.float64), rec["label"].astype(np.int64),
                            rec["subject"].astype(np.int64), k, fs_mhz / 1000.0)


def write_container(path, ds: BiosignalDataset) -> None:
    """Write atomically: a temporary sibling file is renamed over ``path``."""
    path = Path(path)
    data = encode(ds)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path) -> BiosignalDataset:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return decode(buf)


@dataclass
class SplitSpec:
    """Fractions of subjects for validation and test, or explicit subject lists.

    When any list is non-empty the lists are used; an empty ``train_subjects``
    then means every subject not held out.
    """

    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0
    val_subjects: list[int] = field(default_factory=list)
    test_subjects: list[int] = field(default_factory=list)
    train_subjects: list[int] = field(default_factory=list)

    @property
    def explicit(self) -> bool:
        return bool(self.val_subjects or self.test_subjects or self.train_subjects)


@dataclass
class Split:
    train: BiosignalDataset
    val: BiosignalDataset
    test: BiosignalDataset
    train_subjects: list[int]
    val_subjects: list[int]
    test_subjects: list[int]


def _split_counts(n_subjects: int, val_fraction: float, test_fraction: float) -> tuple[int, int]:
    n_val = int(np.floor(val_fraction * n_subjects + 1e-9))
    n_test = int(np.floor(test_fraction * n_subjects + 1e-9))
    # a non-zero fraction always gets at least one subject
    if val_fraction > 0:
        n_val = max(n_val, 1)
    if test_fraction > 0:
        n_test = max(n_test, 1)
    return n_val, n_test


def subject_split(ds: BiosignalDataset, spec: SplitSpec) -> Split:
    subjects = ds.subject_ids()
    if spec.explicit:
        val, test = sorted(set(spec.val_subjects)), sorted(set(spec.test_subjects))
        held = set(val) | set(test)
        train = sorted(set(spec.train_subjects)) or [s for s in subjects if s not in held]
        for a, b, names in ((val, test, "validation and test"), (train, val, "train and validation"),
                            (train, test, "train and test")):
            overlap = set(a) & set(b)
            if overlap:
                raise ConfigError(f"subjects {sorted(overlap)} appear in both {names} lists")
        missing = (held | set(train)) - set(subjects)
        if missing:
            raise ConfigError(f"subjects {sorted(missing)} are not in the dataset")
    else:
        if len(subjects) < 3:
            raise ConfigError(f"fractional split needs at least 3 subjects, dataset has {len(subjects)}")
        n_val, n_test = _split_counts(len(subjects), spec.val_fraction, spec.test_fraction)
        if n_val + n_test >= len(subjects):
            raise ConfigError(f"fractions leave no training subjects out of {len(subjects)}")
        order = np.random.default_rng(spec.seed).permutation(subjects)
        val = sorted(order[:n_val].tolist())
        test = sorted(order[n_val:n_val + n_test].tolist())
        train = sorted(order[n_val + n_test:].tolist())
    return Split(ds.by_subjects(train), ds.by_subjects(val), ds.by_subjects(test), train, val, test)


def synth_spectral(n_subjects: int = 8, trials_per_subject: int = 100, seq_len: int = 256,
                   n_channels: int = 4, f_signal_hz: float = 10.0, fs_hz: float = 128.0,
                   snr: float = 3.0, seed: int = 0) -> BiosignalDataset:
    """Two-class task separable by spectrum but not by time-domain mean.

    Each subject gets ``trials_per_subject`` trials of each class. Class 1 is
    a tone at ``f_signal_hz`` with a uniform random phase per trial plus
    white noise; class 0 is white noise only. Both classes have unit expected
    power per sample, with ``snr`` the tone-to-noise power ratio. Each subject
    scales all its trials by a gain drawn from U[0.9, 1.1].
    """
    if not 0 < f_signal_hz < fs_hz / 2:
        raise ConfigError(f"signal frequency {f_signal_hz} Hz must lie in (0, {fs_hz / 2}) for fs={fs_hz} Hz")
    if n_subjects < 1 or trials_per_subject < 1 or seq_len < 1 or n_channels < 1:
        raise ConfigError("subjects, trials, T and C must all be positive")
    if snr < 0:
        raise ConfigError(f"snr must be non-negative, got {snr}")
    rng = np.random.default_rng(seed)
    if np.isinf(snr):
        amp, sigma = np.sqrt(2.0), 0.0
    else:
        amp, sigma = np.sqrt(2.0 * snr / (1.0 + snr)), np.sqrt(1.0 / (1.0 + snr))
    t = np.arange(seq_len) / fs_hz
    xs, ys, ss = [], [], []
    for subject in range(n_subjects):
        gain = rng.uniform(0.9, 1.1)
        labels = np.repeat([0, 1], trials_per_subject)
        rng.shuffle(labels)
        noise = rng.normal(0.0, 1.0, (len(labels), seq_len, n_channels))
        phase = rng.uniform(0.0, 2.0 * np.pi, len(labels))
        tone = np.sin(2.0 * np.pi * f_signal_hz * t[None, :] + phase[:, None])
        x = np.where(labels[:, None, None] == 1, amp * tone[:, :, None] + sigma * noise, noise)
        xs.append(gain * x)
        ys.append(labels)
        ss.append(np.full(len(labels), subject))
    return BiosignalDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(ss), 2, fs_hz, "synthetic")


def import_csv(index_path, fs_hz: float = 1.0, n_classes: int = 0) -> BiosignalDataset:
    """Load records listed in an index CSV with columns ``file,label,subject``.

    Each referenced file holds one record: one row per time step, one column
    per channel, optionally preceded by a header row. Relative paths resolve
    against the index file's directory. ``n_classes`` of 0 means max label + 1.
    """
    index_path = Path(index_path)
    try:
        with index_path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {index_path}: {exc}") from None
    if not rows:
        raise DataError(f"{index_path} lists no records")
    if not {"file", "label", "subject"} <= set(rows[0]):
        raise DataError(f"{index_path} needs columns file,label,subject; has {sorted(rows[0])}")
    xs, ys, ss = [], [], []
    for i, row in enumerate(rows):
        path = index_path.parent / row["file"]
        try:
            arr = _load_table(path)
            ys.append(int(row["label"]))
            ss.append(int(row["subject"]))
        except (OSError, ValueError) as exc:
            raise DataError(f"record {i} ({path}): {exc}") from None
        if xs and arr.shape != xs[0].shape:
            raise DataError(f"record {i} ({path}) has shape {arr.shape}, expected {xs[0].shape}")
        xs.append(arr)
    k = n_classes or max(ys) + 1
    return BiosignalDataset(np.stack(xs), ys, ss, k, fs_hz, "csv")


def _load_table(path: Path) -> np.ndarray:
    with path.open() as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        skip = 0
    except ValueError:
        skip = 1
    return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
