"""Three-level visual encoding of expert feature streams.

Each level (spatial, temporal, object) owns a projection, an encoder block
that builds the modality-specific feature from the *other* two levels'
inputs, and a cross-modal block that conditions the level's own input on it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .attention import CrossModalBlock, EncoderBlock
from .errors import ConfigError, DimensionError
from .nn import Linear, Module
from .tensor import Tensor, concat, l2_normalize, mean_pool

log = logging.getLogger(__name__)

LEVELS = ("spatial", "temporal", "object")
STREAMS = ("S", "T", "O")  # 2D frames, 3D clips, RoI regions

_warned: set = set()


@dataclass
class ExpertFeatures:
    """Per-clip expert streams, one row per time step or region."""

    S: np.ndarray
    T: np.ndarray
    O: np.ndarray

    def __post_init__(self):
        widths = set()
        for name in STREAMS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise DimensionError(f"stream {name}: expected a non-empty matrix, got shape {arr.shape}")
            setattr(self, name, arr)
            widths.add(arr.shape[1])
        if len(widths) != 1:
            raise DimensionError(f"expert streams have different widths {sorted(widths)}")

    @property
    def width(self) -> int:
        return self.S.shape[1]

    def stream(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass(frozen=True)
class LevelConfig:
    """Which streams feed each level, and the axis they are joined along
    (0: stack as extra tokens, 1: join per-position features)."""

    sources: dict = field(default_factory=lambda: {"spatial": ("S",), "temporal": ("T",), "object": ("O",)})
    axis: int = 0

    def __post_init__(self):
        if set(self.sources) != set(LEVELS):
            raise ConfigError(f"level config must cover exactly {LEVELS}")
        for level, srcs in self.sources.items():
            if not srcs or any(s not in STREAMS for s in srcs):
                raise ConfigError(f"level {level}: invalid sources {srcs!r}")
        if self.axis not in (0, 1):
            raise ConfigError(f"concatenation axis must be 0 or 1, got {self.axis}")

    def input_width(self, level: str, feature_dim: int) -> int:
        n = len(self.sources[level])
        return feature_dim * n if self.axis == 1 else feature_dim


FEATURE_MODES = {
    # all three levels see only 2D frame features
    "2d": LevelConfig({lv: ("S",) for lv in LEVELS}, 0),
    # 2D and 3D joined along the sequence axis
    "2d3d-seq": LevelConfig({lv: ("S", "T") for lv in LEVELS}, 0),
    # 2D and 3D joined along the feature axis (double width)
    "2d3d-feat": LevelConfig({lv: ("S", "T") for lv in LEVELS}, 1),
    # one expert per level: 2D -> spatial, 3D -> temporal, RoI -> object
    "2d-3d-roi": LevelConfig(),
}
DEFAULT_FEATURE_MODE = "2d-3d-roi"


def level_config(mode: str) -> LevelConfig:
    try:
        return FEATURE_MODES[mode]
    except KeyError:
        raise ConfigError(f"unknown feature mode {mode!r}; choose from {sorted(FEATURE_MODES)}") from None


def level_input(f: ExpertFeatures, cfg: LevelConfig, level: str) -> np.ndarray:
    parts = [f.stream(s) for s in cfg.sources[level]]
    if len(parts) == 1:
        return parts[0]
    if cfg.axis == 1:
        n = min(p.shape[0] for p in parts)
        lengths = tuple(p.shape[0] for p in parts)
        if any(k != n for k in lengths) and (level, lengths) not in _warned:
            _warned.add((level, lengths))
            log.warning("level %s: truncating streams to %d rows for feature-axis concat", level, n)
        parts = [p[:n] for p in parts]
    return np.concatenate(parts, axis=cfg.axis)


@dataclass
class VisualEmbeddings:
    spatial: Tensor  # (d,), unit norm
    temporal: Tensor
    object: Tensor
    sequences: dict = field(default_factory=dict)  # level -> (n, d) before pooling

    def level(self, name: str) -> Tensor:
        return getattr(self, name)


class LevelUnit(Module):
    def __init__(self, rng, in_width: int, d_model: int, heads: int, ff_dim: int | None = None):
        self.proj = Linear(rng, in_width, d_model)
        self.encoder = EncoderBlock(rng, d_model, heads, ff_dim)
        self.cross = CrossModalBlock(rng, d_model, heads, ff_dim)


class VisualEncoder(Module):
    def __init__(self, rng: np.random.Generator, feature_dim: int, d_model: int, heads: int,
                 cfg: LevelConfig | None = None, ff_dim: int | None = None):
        self.cfg = cfg or LevelConfig()
        self.feature_dim = feature_dim
        self.units = {
            lv: LevelUnit(rng, self.cfg.input_width(lv, feature_dim), d_model, heads, ff_dim) for lv in LEVELS
        }

    def __call__(self, f: ExpertFeatures) -> VisualEmbeddings:
        return encode_visual(f, self.cfg, self)


def project_experts(f: ExpertFeatures, cfg: LevelConfig, p: VisualEncoder) -> dict[str, Tensor]:
    """Per-level affine projection of the (combined) expert streams to d_model."""
    out = {}
    for lv in LEVELS:
        x = level_input(f, cfg, lv)
        proj = p.units[lv].proj
        if x.shape[1] != proj.d_in:
            raise ConfigError(f"level {lv}: input width {x.shape[1]} but projection expects {proj.d_in}")
        out[lv] = proj(Tensor(x))
    return out


def encode_level(level: str, projected: dict[str, Tensor], p: VisualEncoder) -> Tensor:
    unit = p.units[level]
    others = concat([projected[lv] for lv in LEVELS if lv != level], axis=0)
    specific = unit.encoder(others)
    return unit.cross(specific, projected[level])


def encode_visual(f: ExpertFeatures, cfg: LevelConfig, p: VisualEncoder) -> VisualEmbeddings:
    projected = project_experts(f, cfg, p)
    sequences = {lv: encode_level(lv, projected, p) for lv in LEVELS}
    pooled = {lv: l2_normalize(mean_pool(seq, axis=0)) for lv, seq in sequences.items()}
    return VisualEmbeddings(sequences=sequences, **pooled)
