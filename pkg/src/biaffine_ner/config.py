"""Hyperparameters and their flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # encoder
    lstm_size: int = 200
    lstm_layers: int = 3
    lstm_dropout: float = 0.4
    lstm_dropout_mode: str = "inter_layer"    # inter_layer | recurrent
    # start/end heads
    ffnn_size: int = 150
    ffnn_dropout: float = 0.2
    ffnn_depth: int = 1
    ffnn_activation: str = "tanh"             # tanh | relu
    # inputs
    use_contextual: bool = False
    contextual_dim: int = 1024
    use_static: bool = True
    static_dim: int = 300
    finetune_static: bool = False
    use_char: bool = True
    char_cnn_size: int = 50
    char_filter_widths: tuple[int, ...] = (3, 4, 5)
    char_emb_size: int = 8
    embedding_dropout: float = 0.5
    # scorer
    use_biaffine: bool = True
    # optimisation
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    clip_norm: float = 5.0
    epochs: int = 50
    seed: int = 0
    init_scale: float = 0.1
    forget_bias: float = 1.0
    # model selection / stopping
    mode: str = "nested"                      # decode mode used for evaluation
    early_stop_metric: str = "none"           # none | dev_f1 | train_f1
    patience: int = 10
    eval_train: bool = False
    train_on_dev: bool = False                # train on train+dev (CoNLL recipe)

    def __post_init__(self):
        self.char_filter_widths = tuple(int(w) for w in self.char_filter_widths)
        self.validate()

    def validate(self) -> None:
        choices = {
            "lstm_dropout_mode": ("inter_layer", "recurrent"),
            "ffnn_activation": ("tanh", "relu"),
            "optimizer": ("adam",),
            "mode": ("nested", "flat"),
            "early_stop_metric": ("none", "dev_f1", "train_f1"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}={getattr(self, key)!r}; expected one of {', '.join(allowed)}")
        for key in ("lstm_dropout", "ffnn_dropout", "embedding_dropout"):
            if not 0.0 <= getattr(self, key) < 1.0:
                raise ConfigError(f"{key} must lie in [0, 1)")
        for key in ("lstm_size", "lstm_layers", "ffnn_size", "ffnn_depth", "batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if not (self.use_contextual or self.use_static or self.use_char):
            raise ConfigError("at least one of use_contextual/use_static/use_char must be enabled")
        if self.use_char and not self.char_filter_widths:
            raise ConfigError("char_filter_widths is empty")

    @property
    def char_dim(self) -> int:
        return self.char_cnn_size * len(self.char_filter_widths)

    @property
    def input_dim(self) -> int:
        return ((self.contextual_dim if self.use_contextual else 0)
                + (self.static_dim if self.use_static else 0)
                + (self.char_dim if self.use_char else 0))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["char_filter_widths"] = list(self.char_filter_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_value(key: str, raw: str) -> Any:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(int(v) for v in raw.strip("[]()").replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key} ({kind}): {raw!r}") from None


def apply_overrides(config: TrainConfig, pairs: list[str]) -> TrainConfig:
    """Apply ``key=value`` strings on top of ``config``."""
    changes = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        changes[key.strip()] = parse_value(key.strip(), raw)
    return config.replace(**changes)


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    """Read a flat ``key=value`` file; ``#`` starts a comment."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        pairs.append(line)
    return apply_overrides(base or TrainConfig(), pairs)


def save_config(config: TrainConfig, path: str | Path) -> None:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


PRESETS: dict[str, dict[str, Any]] = {
    # Train on train+dev, as done for the CoNLL corpora.
    "conll": {"mode": "flat", "train_on_dev": True},
    # No dev split: fixed 50 epochs, final model kept.
    "genia": {"mode": "nested", "epochs": 50, "early_stop_metric": "none"},
    "synthetic": {"use_contextual": False, "early_stop_metric": "train_f1",
                  "eval_train": True, "epochs": 200},
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})
