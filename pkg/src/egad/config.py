"""Run configuration: a flat YAML mapping with dotted keys.

Example file::

    run.seed: 3
    student.n_layers: 2
    train:
      learning_rate: 3.0e-4     # nested mappings are flattened to train.learning_rate

Precedence, lowest first: built-in defaults, ``--preset``, the file,
``--set key=value`` overrides, ``--seed``/``--out``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .trainer import DESK_LEARNING_RATE, TrainConfig

_MODEL_KEYS = ("d_model", "n_layers", "n_heads", "d_ff", "max_seq_len", "activation")
_TEACHER_TRAIN_KEYS = ("batch_size", "epochs", "learning_rate", "weight_decay", "max_steps")

DEFAULTS: dict[str, Any] = {
    "run.seed": 0,
    "run.out": "runs/default",
    "run.label": "",
    "run.teacher_checkpoint": "",
    "corpus.path": "",
    "corpus.val_fraction": 0.05,
    # the split is seeded separately so every run seed sees the same held-out set
    "corpus.split_seed": 0,
    "teacher.d_model": 128,
    "teacher.n_layers": 4,
    "teacher.n_heads": 4,
    "teacher.d_ff": 256,
    "teacher.max_seq_len": 64,
    "teacher.activation": "gelu",
    "student.d_model": 64,
    "student.n_layers": 2,
    "student.n_heads": 4,
    "student.d_ff": 128,
    "student.max_seq_len": 64,
    "student.activation": "gelu",
    "teacher_train.batch_size": 32,
    "teacher_train.epochs": 20,
    "teacher_train.learning_rate": 1e-3,
    "teacher_train.weight_decay": 1e-2,
    "teacher_train.max_steps": None,
}
DEFAULTS.update({f"train.{f.name}": f.default for f in fields(TrainConfig)})

PRESETS: dict[str, dict[str, Any]] = {
    "fidelity": {},
    "desk": {"train.learning_rate": DESK_LEARNING_RATE, "train.teacher_cache": True},
}

_NULLABLE = {"train.fixed_temperature", "train.max_steps", "teacher_train.max_steps"}
_FLOAT_NULLABLE = {"train.fixed_temperature"}


def _flatten(tree: Mapping, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _coerce(key: str, value: Any) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    if value is None:
        if key in _NULLABLE:
            return None
        raise ConfigError(f"{key} may not be null")
    if key in _NULLABLE:
        kind = float if key in _FLOAT_NULLABLE else int
    else:
        kind = type(default)
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} expects true/false, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{key} must be finite, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}")
    return value


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def update(self, overrides: Mapping[str, Any]) -> "RunConfig":
        for key, value in _flatten(overrides).items():
            self.values[key] = _coerce(key, value)
        return self

    @property
    def seed(self) -> int:
        return self.values["run.seed"]

    @property
    def out(self) -> str:
        return self.values["run.out"]

    def model_config(self, role: str, vocab_size: int) -> ModelConfig:
        kwargs = {k: self.values[f"{role}.{k}"] for k in _MODEL_KEYS}
        seed = self.seed if role == "teacher" else self.seed + 1
        try:
            return ModelConfig(vocab_size=vocab_size, seed=seed, **kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{role}: {exc}") from None

    def train_config(self) -> TrainConfig:
        kwargs = {f.name: self.values[f"train.{f.name}"] for f in fields(TrainConfig)}
        kwargs["seed"] = self.seed
        try:
            return TrainConfig(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"train: {exc}") from None

    def teacher_train_config(self) -> TrainConfig:
        kwargs = {k: self.values[f"teacher_train.{k}"] for k in _TEACHER_TRAIN_KEYS}
        try:
            return TrainConfig(seed=self.seed, **kwargs)
        except ConfigError as exc:
            raise ConfigError(f"teacher_train: {exc}") from None

    def validate(self) -> "RunConfig":
        self.train_config()
        self.teacher_train_config()
        self.model_config("teacher", 2)
        self.model_config("student", 2)
        if not 0 <= self.values["corpus.val_fraction"] < 1:
            raise ConfigError("corpus.val_fraction must lie in [0, 1)")
        if self.values["student.max_seq_len"] > self.values["teacher.max_seq_len"]:
            raise ConfigError("student.max_seq_len exceeds teacher.max_seq_len")
        return self


def parse_override(item: str) -> tuple[str, Any]:
    """Parse ``key=value``; the value is read as a YAML scalar."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key}: {exc}") from None
    return key.strip(), value


def load_config(path: str | os.PathLike | None = None, preset: str | None = None,
                overrides: list[str] | None = None) -> RunConfig:
    """Build a validated RunConfig; absent keys keep their defaults."""
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg.update(PRESETS[preset])
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                tree = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if tree is None:
            tree = {}
        if not isinstance(tree, Mapping):
            raise ConfigError(f"config {path} must be a mapping of keys to values")
        cfg.update(tree)
    for item in overrides or ():
        key, value = parse_override(item)
        cfg.update({key: value})
    return cfg.validate()
