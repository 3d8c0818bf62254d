"""Model/training hyperparameters and the strict ``key = value`` run-config format."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .spectral import FrequencyResolution

ABLATIONS = ("no-pse", "no-tde", "no-bidir", "dense-ffn")


@dataclass
class ModelConfig:
    # data geometry; 0 means "take it from the dataset"
    seq_len: int = 0
    n_channels: int = 0
    n_classes: int = 0
    d_model: int = 128
    n_blocks: int = 6
    window: int = 128
    hop: int = 100
    sparsity: float = 0.7
    ffn_mult: int = 4
    d_state: int = 16
    expand: int = 2
    conv_width: int = 4
    dt_rank: int = 0  # 0 -> ceil(d_model / 16)
    dt_min: float = 0.001
    dt_max: float = 0.1
    ln_eps: float = 1e-5
    use_pse: bool = True
    use_tde: bool = True
    bidirectional: bool = True
    d_skip: bool = True
    hann: bool = False

    @property
    def resolution(self) -> FrequencyResolution:
        return FrequencyResolution(self.window, self.hop)

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def resolved_dt_rank(self) -> int:
        return self.dt_rank if self.dt_rank > 0 else math.ceil(self.d_model / 16)

    @property
    def n_segments(self) -> int:
        return self.resolution.n_segments(self.seq_len)

    @property
    def n_tokens(self) -> int:
        spectral = self.n_channels * self.n_segments if self.use_pse else 0
        return spectral + (self.n_channels if self.use_tde else 0)

    def validate(self) -> None:
        for name in ("seq_len", "n_channels", "d_model", "n_blocks", "ffn_mult",
                     "d_state", "expand", "conv_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if not (self.use_pse or self.use_tde):
            raise ConfigError("at least one of use_pse / use_tde must be enabled")
        if not 0.0 < self.dt_min <= self.dt_max:
            raise ConfigError(f"need 0 < dt_min <= dt_max, got {self.dt_min}, {self.dt_max}")
        if self.ln_eps <= 0:
            raise ConfigError("ln_eps must be positive")
        if self.use_pse:
            self.resolution.validate(self.seq_len)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    val_subjects: str = ""   # comma-separated ids; explicit split mode when set
    test_subjects: str = ""
    weighted_f1: bool = False

    def validate(self) -> None:
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 <= self.val_fraction < 1 and 0 <= self.test_fraction < 1
                and self.val_fraction + self.test_fraction < 1):
            raise ConfigError("val_fraction + test_fraction must lie in [0, 1)")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 2025

    def keys(self) -> list[str]:
        return [f.name for f in fields(ModelConfig)] + [f.name for f in fields(TrainConfig)] + ["seed"]

    def set(self, key: str, raw: str) -> None:
        for section in (self.model, self.train):
            names = {f.name: f for f in fields(section)}
            if key in names:
                setattr(section, key, _coerce(key, names[key].type, raw))
                return
        if key == "seed":
            self.seed = _coerce(key, "int", raw)
            return
        raise ConfigError(f"unknown config key {key!r}")

    def get(self, key: str):
        for section in (self.model, self.train):
            if any(f.name == key for f in fields(section)):
                return getattr(section, key)
        if key == "seed":
            return self.seed
        raise ConfigError(f"unknown config key {key!r}")

    def apply_ablation(self, name: str) -> None:
        if name == "no-pse":
            self.model.use_pse = False
        elif name == "no-tde":
            self.model.use_tde = False
        elif name == "no-bidir":
            self.model.bidirectional = False
        elif name == "dense-ffn":
            self.model.sparsity = 0.0
        else:
            raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        lines += [f"{key} = {_format(self.get(key))}" for key in self.keys()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def copy(self) -> "RunConfig":
        return dataclasses.replace(self, model=dataclasses.replace(self.model),
                                   train=dataclasses.replace(self.train))


def _coerce(key: str, type_name, raw: str):
    type_name = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if type_name == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} ({type_name})") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
