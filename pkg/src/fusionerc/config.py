"""Flat run configuration shared by every CLI subcommand.

A config file is a single JSON object of scalar or list values. Keys map onto
the model, training, synthetic-data and extractor settings; anything else is
rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, get_type_hints

from .extractor import ExtractorConfig
from .losses import ExtractorLossConfig
from .model import ConfigError, ModelConfig
from .train import ExtractorTrainConfig, TrainConfig


@dataclass
class RunConfig:
    # model
    d_t: int = 32
    d_a: int = 16
    d_v: int = 16
    n_t: int = 1
    n_a: int = 1
    n_v: int = 1
    m: int = 5
    heads: int = 4
    hidden: Optional[int] = None
    n_classes: int = 7
    positional_encoding: bool = False
    fusion: str = "attention"
    modalities: Tuple[str, ...] = ("t", "a", "v")
    # training
    lr: float = 5e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_dialogs: int = 4
    dropout: float = 0.4
    val_fraction: float = 0.1
    stop_at_train_accuracy: Optional[float] = None
    seed: int = 0
    # synthetic corpora
    n_dialogs: int = 100
    k: int = 8
    separation: float = 3.0
    cross_modal_only: bool = False
    n_per_class: int = 40
    # extractor
    input_shape: Tuple[int, int, int] = (16, 16, 1)
    encoder_channels: Tuple[int, ...] = (16, 32, 64)
    representation_dim: int = 300
    normalize_output: bool = True
    extractor_steps: int = 200
    triplet_batch: int = 16
    extractor_lr: float = 1e-4
    extractor_weight_decay: float = 1e-6
    lambda_amt: float = 20.0
    lambda_cov: float = 5.0
    lambda_var: float = 1.0
    var_eps: float = 1e-4
    margin_gradient: bool = False

    def __post_init__(self):
        if not isinstance(self.modalities, str):
            self.modalities = ",".join(self.modalities)
        self.modalities = parse_modalities(self.modalities)
        self.input_shape = tuple(self.input_shape)
        self.encoder_channels = tuple(self.encoder_channels)

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in fields(cls)}

    def update(self, values: Dict[str, Any]) -> "RunConfig":
        unknown = set(values) - self.field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        hints = get_type_hints(RunConfig)
        for key, value in values.items():
            _check_type(key, value, hints[key])
        return dataclasses.replace(self, **values)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("modalities", "input_shape", "encoder_channels"):
            out[key] = list(out[key])
        return out

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig(d_t=self.d_t, d_a=self.d_a, d_v=self.d_v, n_t=self.n_t, n_a=self.n_a, n_v=self.n_v,
                          m=self.m, heads=self.heads, hidden=self.hidden, dropout=self.dropout,
                          n_classes=self.n_classes, positional_encoding=self.positional_encoding,
                          fusion=self.fusion, modalities=self.modalities, seed=self.seed)
        cfg.validate()
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, beta1=self.beta1, beta2=self.beta2,
                           adam_eps=self.adam_eps, epochs=self.epochs, batch_dialogs=self.batch_dialogs,
                           seed=self.seed, dropout=self.dropout, val_fraction=self.val_fraction,
                           stop_at_train_accuracy=self.stop_at_train_accuracy)

    def extractor_config(self) -> ExtractorConfig:
        return ExtractorConfig(input_shape=self.input_shape, encoder_channels=self.encoder_channels,
                               representation_dim=self.representation_dim,
                               normalize_output=self.normalize_output, seed=self.seed)

    def extractor_loss_config(self) -> ExtractorLossConfig:
        return ExtractorLossConfig(lambda_amt=self.lambda_amt, lambda_cov=self.lambda_cov,
                                   lambda_var=self.lambda_var, eps=self.var_eps,
                                   margin_gradient=self.margin_gradient)

    def extractor_train_config(self) -> ExtractorTrainConfig:
        return ExtractorTrainConfig(steps=self.extractor_steps, batch=self.triplet_batch, lr=self.extractor_lr,
                                    weight_decay=self.extractor_weight_decay, seed=self.seed)

    def dims(self) -> Tuple[int, int, int]:
        return self.d_t, self.d_a, self.d_v


def _check_type(key: str, value: Any, hint) -> None:
    text = str(hint)
    if value is None:
        if "Optional" in text or "None" in text:
            return
        raise ConfigError(f"config key {key!r} may not be null")
    if hint is bool or text.endswith("[bool]"):
        ok = isinstance(value, bool)
    elif hint is int or text.endswith("[int]"):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif hint is float or text.endswith("[float]"):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif hint is str:
        ok = isinstance(value, str)
    elif key == "modalities":
        ok = isinstance(value, (str, list, tuple))
    else:
        ok = isinstance(value, (list, tuple)) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    if not ok:
        raise ConfigError(f"config key {key!r} has invalid value {value!r}")


def parse_modalities(text: str) -> Tuple[str, ...]:
    mods = tuple(part.strip() for part in text.split(",") if part.strip())
    bad = [m for m in mods if m not in ("t", "a", "v")]
    if bad or not mods or len(set(mods)) != len(mods):
        raise ConfigError(f"modalities must be a comma list drawn from t,a,v without repeats, got {text!r}")
    return mods


def load_config_file(path) -> Dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a flat key/value object")
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: nested values are not allowed (keys: {', '.join(nested)})")
    return raw
