"""Run configuration: a flat ``key = value`` text format with typed fields.

Every field has a default; unknown keys are rejected by name. The format is
dependency-free and diff-friendly:

    # desk run
    base_channels = 16
    scale = 2
    epochs = 10
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import DataError, UsageError
from .model import SCSNetConfig
from .training import AdamConfig, LossWeights


@dataclass
class RunConfig:
    # model
    base_channels: int = 64
    deep_channels: int = 256
    attn_qk_channels: int = 0  # 0 -> deep_channels // 8
    pyramid_levels: int = 3
    sr_blocks: int = 4
    cpm_hidden: int = 128
    # losses
    lambda_content: float = 10.0
    lambda_perceptual: float = 5.0
    lambda_adversarial: float = 1.0
    perceptual_weights: tuple = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
    symmetric_d_loss: bool = False
    # optimizer
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    # data / schedule
    data_dir: str = "data"
    seed: int = 0
    epochs: int = 1
    batch_size: int = 4
    scale: float = 4.0
    checkpoint_interval: int = 100
    max_steps: int = 0  # 0 = run every epoch to completion
    mode: str = "alternate"  # alternate | auto | ref

    def __post_init__(self):
        if self.mode not in ("alternate", "auto", "ref"):
            raise UsageError(f"mode must be alternate|auto|ref, got {self.mode!r}")
        if self.scale <= 1:
            raise UsageError(f"scale must exceed 1, got {self.scale}")
        if self.batch_size < 1 or self.epochs < 1 or self.checkpoint_interval < 1:
            raise UsageError("batch_size, epochs, checkpoint_interval must be >= 1")

    # -- sub-config views ---------------------------------------------------
    def model_config(self) -> SCSNetConfig:
        return SCSNetConfig(
            base_channels=self.base_channels,
            deep_channels=self.deep_channels,
            attn_qk_channels=self.attn_qk_channels,
            pyramid_levels=self.pyramid_levels,
            sr_blocks=self.sr_blocks,
            cpm_hidden=self.cpm_hidden,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_content=self.lambda_content,
            lambda_perceptual=self.lambda_perceptual,
            lambda_adversarial=self.lambda_adversarial,
            perceptual=tuple(self.perceptual_weights),
        )

    def adam_config(self) -> AdamConfig:
        return AdamConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.adam_eps,
            weight_decay=self.weight_decay,
        )

    def to_dict(self):
        d = asdict(self)
        d["perceptual_weights"] = list(self.perceptual_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "perceptual_weights" in d:
            d["perceptual_weights"] = tuple(d["perceptual_weights"])
        return cls(**d)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if typ == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "tuple":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise UsageError(f"config key '{key}': cannot parse value {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key: '{key}' (line {lineno})")
        values[key] = _convert(key, raw)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))
