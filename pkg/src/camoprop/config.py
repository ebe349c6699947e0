"""Run configuration: a flat key=value file with command-line overrides.

File grammar: one ``key = value`` per line, ``#`` starts a comment, blank
lines ignored. Values are parsed according to the field's declared type;
booleans accept true/false/1/0/yes/no. ``config_hash`` fingerprints the
fully-resolved configuration for the reproducibility stamp.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Unknown key, unparsable value, or inconsistent settings."""


@dataclass
class RunConfig:
    # reproducibility / locations
    seed: int = 0
    out_dir: str = "runs/default"
    data_dir: str = ""

    # model geometry
    image_size: int = 64
    downscale: int = 16
    embed_dim: int = 64
    attn_dim: int = 64
    affinity_dim: int = 128
    head_patch: int = 4
    activation: str = "gelu"

    # propagation variants
    use_affinity: bool = True
    train_pe: bool = True
    pin_first: bool = False

    # optimization
    batch_size: int = 4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    lr_factor: float = 0.5
    iter_multiplier: float = 0.1

    # per-stage schedules (iteration counts before the multiplier)
    warmup_lr: float = 1e-3
    warmup_iterations: int = 12000
    pretrain_lr: float = 4e-4
    pretrain_iterations: int = 7600
    pretrain_milestones: str = "3800"
    main_lr: float = 5e-5
    main_iterations: int = 2500
    main_milestones: str = ""

    # sampling / memory protocol
    memory_length: int = 2
    frames_per_sample: int = 3
    augment_ops: str = "affine,hflip,color_jitter,grayscale,gaussian_blur"
    warmup_prompt_prob: float = 0.5

    # losses
    w_focal: float = 20.0
    w_dice: float = 1.0
    w_iou: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    dice_smooth: float = 1.0
    bin_threshold: float = 0.5

    # synthetic data
    contrast: float = 0.9
    static_contrast: float = 0.75
    sequence_length: int = 8
    train_sequences: int = 8
    holdout_sequences: int = 4
    statics_count: int = 512
    statics_holdout: int = 16
    radius_lo: float = 7.0
    radius_hi: float = 12.0
    motion_x: float = 1.5
    motion_y: float = 1.0
    jitter_std: float = 0.4
    noise_octaves: int = 4
    texture_amplitude: float = 0.7

    def __post_init__(self):
        if self.image_size % self.downscale != 0:
            raise ConfigError(f"image_size {self.image_size} must be divisible "
                              f"by downscale {self.downscale}")
        if self.memory_length < 1:
            raise ConfigError(f"memory_length must be >= 1, got {self.memory_length}")
        if self.frames_per_sample < 2:
            raise ConfigError("frames_per_sample must be >= 2")
        if self.iter_multiplier <= 0:
            raise ConfigError("iter_multiplier must be positive")

    # ------------------------------------------------------------------
    def milestones(self, stage: str) -> list[int]:
        raw = getattr(self, f"{stage}_milestones", "")
        return [int(x) for x in raw.split(",") if x.strip()]

    def scaled_iterations(self, stage: str) -> int:
        return max(1, round(getattr(self, f"{stage}_iterations") * self.iter_multiplier))

    def scaled_milestones(self, stage: str) -> list[int]:
        return [max(1, round(m * self.iter_multiplier)) for m in self.milestones(stage)]

    def augment_list(self) -> tuple[str, ...]:
        return tuple(x.strip() for x in self.augment_ops.split(",") if x.strip())

    # ------------------------------------------------------------------
    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type if isinstance(f.type, type) else _resolve(f.type)
                for f in fields(cls)}

    @classmethod
    def from_file(cls, path: str | Path, overrides: list[str] | None = None) -> "RunConfig":
        pairs = _parse_lines(Path(path).read_text(encoding="utf-8").splitlines(),
                             where=str(path))
        cfg = cls()._apply(pairs)
        if overrides:
            cfg = cfg.with_overrides(overrides)
        return cfg

    def with_overrides(self, overrides: list[str]) -> "RunConfig":
        pairs = []
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            pairs.append((k.strip(), v.strip()))
        return self._apply(pairs)

    def _apply(self, pairs: list[tuple[str, str]]) -> "RunConfig":
        types = self.field_types()
        updates = {}
        for key, value in pairs:
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            updates[key] = _coerce(value, types[key], key)
        return dataclasses.replace(self, **updates)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


def _resolve(name: str) -> type:
    return {"int": int, "float": float, "bool": bool, "str": str}[name]


def _parse_lines(lines: list[str], where: str) -> list[tuple[str, str]]:
    pairs = []
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{n}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def _coerce(value: str, typ: type, key: str):
    try:
        if typ is bool:
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        return typ(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as "
                          f"{typ.__name__}") from None
