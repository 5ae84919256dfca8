"""Configuration dataclasses and schema-checked JSON loading.

Defaults mirror the full-scale setup (80 mel bins, 3 layers, 768-wide
attention, 12 heads, 200k steps); acceptance and desk runs override them
through a RunConfig JSON document. Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError

FUSION_STRATEGIES = (
    "none",
    "attention_only",
    "layer_only",
    "both_half_prob",
    "attention_then_layer",
    "layer_then_attention",
)


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {value}")


def _check_positive(name: str, value: int) -> None:
    if value <= 0:
        raise ConfigError(f"{name} must be positive, got {value}")


@dataclass
class ModelConfig:
    d_mel: int = 80
    layers: int = 3
    d_attn: int = 768
    heads: int = 12
    d_ff: int = 3072
    p_attn: float = 0.1
    lambda_attn: float = 0.9
    p_layer: float = 0.1
    lambda_layer: float = 0.9

    def validate(self) -> "ModelConfig":
        for name in ("d_mel", "layers", "d_attn", "heads", "d_ff"):
            _check_positive(name, getattr(self, name))
        if self.d_attn % self.heads != 0:
            raise ConfigError(
                f"d_attn ({self.d_attn}) must be divisible by heads ({self.heads})")
        for name in ("p_attn", "lambda_attn", "p_layer", "lambda_layer"):
            _check_unit(name, getattr(self, name))
        return self


@dataclass
class TrainConfig:
    total_steps: int = 200_000
    batch_size: int = 32
    learning_rate: float = 1e-4
    warmup_steps: int = -1  # -1: derive as 7% of total_steps
    seed: int = 1234
    checkpoint_interval: int = 10_000
    strategy: str = "attention_then_layer"
    loss_on_altered_only: bool = False

    def validate(self) -> "TrainConfig":
        for name in ("total_steps", "batch_size", "checkpoint_interval"):
            _check_positive(name, getattr(self, name))
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.strategy not in FUSION_STRATEGIES:
            raise ConfigError(
                f"unknown strategy '{self.strategy}', expected one of {FUSION_STRATEGIES}")
        if self.warmup_steps < -1:
            raise ConfigError(f"warmup_steps must be >= -1, got {self.warmup_steps}")
        return self

    @property
    def effective_warmup(self) -> int:
        if self.warmup_steps >= 0:
            return self.warmup_steps
        return max(1, int(round(0.07 * self.total_steps)))


@dataclass
class AlterationConfig:
    time_mask_ratio: float = 0.15
    time_block: int = 3
    channel_max: int = 8
    magnitude_noise_prob: float = 0.1
    noise_std: float = 0.2
    time_mask_mode: str = "zero"  # reserved; only zeroing is implemented

    def validate(self) -> "AlterationConfig":
        _check_unit("time_mask_ratio", self.time_mask_ratio)
        _check_unit("magnitude_noise_prob", self.magnitude_noise_prob)
        _check_positive("time_block", self.time_block)
        if self.channel_max < 0:
            raise ConfigError(f"channel_max must be >= 0, got {self.channel_max}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.time_mask_mode != "zero":
            raise ConfigError(f"unsupported time_mask_mode '{self.time_mask_mode}'")
        return self


@dataclass
class ProbeConfig:
    probe_kind: str = "linear"  # linear | one_hidden
    task_kind: str = "frame"    # frame | utterance
    classes: int = 41
    hidden_dim: int = 768
    steps: int = 20_000
    batch_size: int = 32
    learning_rate: float = 1e-4

    def validate(self) -> "ProbeConfig":
        if self.probe_kind not in ("linear", "one_hidden"):
            raise ConfigError(f"probe_kind must be linear|one_hidden, got '{self.probe_kind}'")
        if self.task_kind not in ("frame", "utterance"):
            raise ConfigError(f"task_kind must be frame|utterance, got '{self.task_kind}'")
        for name in ("classes", "hidden_dim", "steps", "batch_size"):
            _check_positive(name, getattr(self, name))
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        return self


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "alteration": AlterationConfig,
    "probe": ProbeConfig,
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    alteration: AlterationConfig = field(default_factory=AlterationConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def validate(self) -> "RunConfig":
        for section in _SECTIONS:
            getattr(self, section).validate()
        return self


def _dataclass_from_dict(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected an object, got {type(payload).__name__}")
    allowed = {f.name: f for f in fields(cls)}
    unknown = set(payload) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in payload.items():
        expected = allowed[key].type
        if expected == "int" or expected is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}.{key}: expected integer, got {value!r}")
        elif expected == "float" or expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key}: expected number, got {value!r}")
            value = float(value)
        elif expected == "bool" or expected is bool:
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected boolean, got {value!r}")
        elif expected == "str" or expected is str:
            if not isinstance(value, str):
                raise ConfigError(f"{where}.{key}: expected string, got {value!r}")
        kwargs[key] = value
    return cls(**kwargs)


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"run config: unknown sections {sorted(unknown)}")
    kwargs = {name: _dataclass_from_dict(cls, doc.get(name, {}), name)
              for name, cls in _SECTIONS.items()}
    return RunConfig(**kwargs).validate()


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(doc)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}
