"""Model and pipeline configuration.

A single dataclass carries every knob: architecture widths, preprocessing
constants, regularization rates, the training protocol, and the ablation
switches.  It round-trips through JSON so a run is reproducible from its
config file plus a seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError

MBR_MODES = ("emit-only", "prob-gated", "off")


@dataclass
class ModelConfig:
    # architecture
    base_filters: int = 16
    stages: int = 5
    input_size: int = 256
    reduction: int = 4          # channel-gate bottleneck divisor
    heads: int = 8
    kernel_bank: int = 4        # candidate kernels in the dynamic token mixer
    ff_expand: int = 2          # bottleneck feed-forward widening factor
    dilations: tuple[int, ...] = (1, 4, 8, 12)
    dropout: float = 0.1        # conv stages
    gate_dropout: float = 0.1   # channel-gate hidden layer
    attn_dropout: float = 0.1   # attention block output
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    # ablation switches
    ccr: bool = True            # channel recalibration gates in the decoder
    dca: bool = True            # attention block at the bottleneck
    msas: bool = True           # multi-scale atrous block at the bottleneck
    mbr: str = "emit-only"      # boundary refinement: emit-only | prob-gated | off
    boundary_tau: float = 0.6

    # preprocessing
    hu_window: tuple[float, float] = (-250.0, 200.0)
    clahe_tiles: tuple[int, int] = (8, 8)
    clahe_clip: float = 2.0
    clahe_bins: int = 256

    # training protocol
    lr: float = 1e-5
    lr_decay: float = 0.65
    plateau_patience: int = 3
    l1: float = 1e-6
    l2: float = 1e-5
    batch_size: int = 4
    epochs: int = 50
    augment: bool = True
    rotate_degrees: float = 15.0
    zoom_range: tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        self.dilations = tuple(self.dilations)
        self.zoom_range = tuple(self.zoom_range)
        self.hu_window = tuple(self.hu_window)
        self.clahe_tiles = tuple(self.clahe_tiles)
        self.validate()

    # ----- derived sizes -----

    @property
    def bottleneck_channels(self) -> int:
        return self.base_filters * 2 ** (self.stages - 1)

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // 2**self.stages

    @property
    def token_count(self) -> int:
        return self.bottleneck_size**2

    def stage_filters(self, stage: int) -> int:
        """Filter count of conv stage ``stage`` (1-based): 2^(i-1) * base."""
        return self.base_filters * 2 ** (stage - 1)

    def validate(self) -> None:
        if self.stages < 1:
            raise ConfigError("stages must be >= 1")
        if self.input_size % 2**self.stages:
            raise ConfigError(
                f"input_size {self.input_size} not divisible by 2^{self.stages}"
            )
        if self.bottleneck_size < 1:
            raise ConfigError("too many stages for this input size")
        if self.bottleneck_channels % self.heads:
            raise ConfigError(
                f"heads={self.heads} must divide bottleneck width {self.bottleneck_channels}"
            )
        if any(2 * self.stage_filters(i) % self.reduction for i in range(1, self.stages + 1)):
            raise ConfigError(f"reduction={self.reduction} must divide every gate width")
        if self.bottleneck_channels % 2:
            raise ConfigError("bottleneck width must be even for the atrous block")
        for name in ("dropout", "gate_dropout", "attn_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {rate}")
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError(f"lr_decay must lie in (0, 1), got {self.lr_decay}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1")
        if self.mbr not in MBR_MODES:
            raise ConfigError(f"mbr must be one of {MBR_MODES}, got {self.mbr!r}")
        if not 0.0 <= self.boundary_tau <= 1.0:
            raise ConfigError("boundary_tau must lie in [0, 1]")
        if self.hu_window[0] >= self.hu_window[1]:
            raise ConfigError("hu_window must be (low, high) with low < high")
        if len(self.dilations) != 4 or any(d < 1 for d in self.dilations):
            # four branches at half width keep the doubled bottleneck shape
            raise ConfigError("dilations must be four positive rates")
        if self.kernel_bank < 1:
            raise ConfigError("kernel_bank must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 < self.zoom_range[0] <= self.zoom_range[1]:
            raise ConfigError("zoom_range must be increasing and positive")

    # ----- serialization -----

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("dilations", "zoom_range", "hu_window", "clahe_tiles"):
            out[key] = list(out[key])
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    def replace(self, **kwargs) -> "ModelConfig":
        return dataclasses.replace(self, **kwargs)

    def apply_ablation(self, tokens: str) -> "ModelConfig":
        """Disable blocks named in a comma list, e.g. ``dca,msas``."""
        cfg = self
        for token in filter(None, (t.strip() for t in tokens.split(","))):
            if token == "mbr":
                cfg = cfg.replace(mbr="off")
            elif token in ("ccr", "dca", "msas"):
                cfg = cfg.replace(**{token: False})
            else:
                raise ConfigError(f"unknown ablation switch {token!r}")
        return cfg
