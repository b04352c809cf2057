"""Plain-text ``key = value`` run configuration.

One document carries both the model architecture (keys prefixed ``model.``)
and the training hyperparameters (bare keys). Data locations use the ``data.``
prefix and are resolved relative to the document's directory::

    # tiny desk-scale run
    model.preset = tiny
    model.vocab_size = 256
    steps = 500
    lr_initial = 0.005
    data.train = corpus.txt
    data.vocab = vocab.txt
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .masking import MaskConfig
from .model import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.1
    steps: int = 62_500
    warmup_steps: int = 1_000
    batch_size: int = 4_096
    seq_len: int = 256
    lr_initial: float = 0.005
    lr_final: float = 0.0005
    wd_initial: float = 0.02
    wd_final: float = 0.2
    tau_initial: float = 0.996
    tau_final: float = 1.0
    lamb_beta1: float = 0.9
    lamb_beta2: float = 0.98
    lamb_eps: float = 1e-6
    clip_norm: float = 2.0
    mask_budget: float = 0.15
    mask_p: float = 1 / 3
    max_span: int = 10
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.tau_initial <= self.tau_final <= 1:
            raise ValueError("need 0 < tau_initial <= tau_final <= 1")
        if self.steps < 1 or not 0 <= self.warmup_steps < self.steps:
            raise ValueError("need steps >= 1 and 0 <= warmup_steps < steps")
        if self.batch_size < 1 or self.seq_len < 1:
            raise ValueError("batch_size and seq_len must be positive")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def mask_config(self) -> MaskConfig:
        return MaskConfig(self.mask_budget, self.mask_p, self.max_span)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def small(cls, **overrides) -> "TrainConfig":
        base = dict(lr_initial=0.007, lr_final=0.0007, wd_initial=0.04, wd_final=0.4)
        return cls(**{**base, **overrides})


MODEL_PRESETS = {
    "base": dict(vocab_size=16384, hidden=768, heads=12, ff_inner=2048,
                 n_encoder_layers=12, n_decoder_layers=4),
    "small": dict(vocab_size=4096, hidden=384, heads=6, ff_inner=1024,
                  n_encoder_layers=12, n_decoder_layers=4),
    "tiny": dict(vocab_size=256, hidden=64, heads=4, ff_inner=128,
                 n_encoder_layers=2, n_decoder_layers=1, max_relative_distance=16,
                 seq_len=64, encoder_dropout=0.0, init_std=0.08),
}


def parse_value(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_document(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = parse_value(value)
    return values


def format_document(values: dict) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, float) and math.isfinite(value):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: dict

    @classmethod
    def from_mapping(cls, values: dict, base_dir: Path | None = None) -> "RunConfig":
        model_vals, train_vals, data = {}, {}, {}
        for key, value in values.items():
            if key.startswith("model."):
                model_vals[key[len("model."):]] = value
            elif key.startswith("data."):
                path = Path(str(value))
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                data[key[len("data."):]] = path
            else:
                train_vals[key] = value
        preset = model_vals.pop("preset", None)
        if preset is not None:
            if preset not in MODEL_PRESETS:
                raise ValueError(f"unknown model preset {preset!r}; choose from {sorted(MODEL_PRESETS)}")
            model_vals = {**MODEL_PRESETS[preset], **model_vals}
        model = ModelConfig.from_dict(model_vals)
        train_vals.setdefault("seq_len", model.seq_len)
        train = TrainConfig.from_dict(train_vals)
        if train.seq_len > model.seq_len:
            raise ValueError(f"training seq_len {train.seq_len} exceeds model.seq_len {model.seq_len}")
        return cls(model, train, data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_mapping(parse_document(path.read_text(encoding="utf-8")), path.parent)

    def to_document(self) -> str:
        values = {f"model.{k}": v for k, v in self.model.to_dict().items()}
        values.update(self.train.to_dict())
        values.update({f"data.{k}": str(v) for k, v in self.data.items()})
        return format_document(values)
