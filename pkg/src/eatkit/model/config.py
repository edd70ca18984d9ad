from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid architectural hyperparameters."""


def global_channels(channels: int, split_ratio: float, heads: int) -> int:
    """Channels routed to the attention path: round(p*C), floored to a multiple of ``heads``."""
    if not 0.0 <= split_ratio <= 1.0:
        raise ConfigError(f"split_ratio p must lie in [0, 1], got {split_ratio}")
    c_g = int(round(split_ratio * channels))
    adjusted = (c_g // heads) * heads
    if adjusted != c_g:
        log.info("global channels for C=%d, p=%s adjusted %d -> %d (multiple of %d heads)",
                 channels, split_ratio, c_g, adjusted, heads)
    return adjusted


@dataclass
class ModelConfig:
    stage_dims: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    stage_depths: list[int] = field(default_factory=lambda: [1, 1, 2, 1])
    stage_heads: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    split_ratio: float = 0.5
    local_kernel: int = 3
    msra_dilations: list[int] = field(default_factory=lambda: [1, 2, 3])
    stem_stride: int = 4
    num_classes: int = 4
    ffn_expansion: float = 4.0
    md_msa_enabled: bool = True
    modulation_bypass: bool = False
    in_channels: int = 3

    def __post_init__(self) -> None:
        for name in ("stage_dims", "stage_depths", "stage_heads", "msra_dilations"):
            setattr(self, name, [int(v) for v in getattr(self, name)])
        self.split_ratio = float(self.split_ratio)
        self.ffn_expansion = float(self.ffn_expansion)
        self.validate()

    @classmethod
    def mini(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """A very small network used for gradient checks and fast tests."""
        base = dict(stage_dims=[8, 8, 16, 16], stage_depths=[1, 1, 1, 1], stage_heads=[1, 1, 2, 2],
                    ffn_expansion=2.0, num_classes=3)
        base.update(overrides)
        return cls(**base)

    @property
    def reduction(self) -> int:
        """Total downsampling factor from input to the last stage."""
        return self.stem_stride * 2 ** (len(self.stage_dims) - 1)

    def validate(self) -> None:
        for name in ("stage_dims", "stage_depths", "stage_heads"):
            value = getattr(self, name)
            if len(value) != 4:
                raise ConfigError(f"{name} needs 4 entries (one per stage), got {value}")
        if any(d < 1 for d in self.stage_dims) or any(h < 1 for h in self.stage_heads):
            raise ConfigError("stage_dims and stage_heads must be positive")
        if any(d < 0 for d in self.stage_depths):
            raise ConfigError("stage_depths must be non-negative")
        if not 0.0 <= self.split_ratio <= 1.0:
            raise ConfigError(f"split_ratio p must lie in [0, 1], got {self.split_ratio}")
        if self.local_kernel < 1 or self.local_kernel % 2 == 0:
            raise ConfigError(f"local_kernel k must be a positive odd integer, got {self.local_kernel}")
        if not self.msra_dilations or any(d < 1 for d in self.msra_dilations):
            raise ConfigError(f"msra_dilations must be a nonempty list of positive ints, got {self.msra_dilations}")
        if self.stem_stride not in (1, 2, 4):
            raise ConfigError(f"stem_stride must be 1, 2 or 4, got {self.stem_stride}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.ffn_expansion <= 0:
            raise ConfigError("ffn_expansion must be positive")
        for i, (dim, heads) in enumerate(zip(self.stage_dims, self.stage_heads), start=1):
            if dim % heads:
                raise ConfigError(f"stage{i}: dim {dim} not divisible by {heads} heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)
