"""The full retrieval model: role-graph text encoder + three-level visual encoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .matching import MatchConfig, contrastive_loss, similarity_matrix
from .nn import Module
from .tensor import Tensor, no_grad
from .text import RoleGraph, RoleGraphEncoder, TextEmbeddings
from .visual import DEFAULT_FEATURE_MODE, ExpertFeatures, VisualEmbeddings, VisualEncoder, level_config


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 64
    word_dim: int = 32
    n_relations: int = 4
    d_model: int = 32
    heads: int = 4
    ff_dim: int | None = None  # defaults to 2 * d_model
    gcn_layers: int = 2
    feature_mode: str = DEFAULT_FEATURE_MODE
    seed: int = 0

    def __post_init__(self):
        for name in ("feature_dim", "word_dim", "n_relations", "d_model", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.gcn_layers < 0:
            raise ConfigError("gcn_layers must be >= 0")
        level_config(self.feature_mode)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        """Paper-scale widths: 2048-d experts, 300-d word vectors, 1024-d joint space."""
        base = dict(feature_dim=2048, word_dim=300, d_model=1024, heads=8)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


class RetrievalModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self.text = RoleGraphEncoder(rng, cfg.word_dim, cfg.d_model, cfg.n_relations, cfg.gcn_layers)
        self.visual = VisualEncoder(
            rng, cfg.feature_dim, cfg.d_model, cfg.heads, level_config(cfg.feature_mode), cfg.ff_dim
        )

    def embed_text(self, g: RoleGraph, word_vectors: np.ndarray) -> TextEmbeddings:
        return self.text(g, word_vectors)

    def embed_clip(self, f: ExpertFeatures) -> VisualEmbeddings:
        return self.visual(f)

    def scores(self, graphs, clips, word_vectors, match: MatchConfig | None = None) -> Tensor:
        texts = [self.embed_text(g, word_vectors) for g in graphs]
        visuals = [self.embed_clip(f) for f in clips]
        return similarity_matrix(texts, visuals, match)

    def loss(self, graphs, clips, word_vectors, match: MatchConfig | None = None) -> Tensor:
        """Ranking loss of a batch in which ``graphs[i]`` describes ``clips[i]``."""
        return contrastive_loss(self.scores(graphs, clips, word_vectors, match), match)


@dataclass
class SimilarityMatrix:
    scores: np.ndarray  # (n_captions, n_clips)
    caption_ids: list = field(default_factory=list)
    clip_ids: list = field(default_factory=list)


def score_matrix(graphs: dict, clips: dict, model: RetrievalModel, word_vectors: np.ndarray,
                 match: MatchConfig | None = None) -> SimilarityMatrix:
    """Caption-by-clip similarities for every pair, without recording gradients."""
    with no_grad():
        s = model.scores(list(graphs.values()), list(clips.values()), word_vectors, match)
    return SimilarityMatrix(s.data.copy(), list(graphs), list(clips))
