"""Three-level cosine matching and the margin ranking objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, ValidationError
from .tensor import (
    Tensor, as_tensor, concat, l2_normalize, matmul, max_pool, mean_pool, mul, relu, reshape, scale, stack,
    tensor_sum, transpose,
)
from .text import TextEmbeddings
from .visual import LEVELS, VisualEmbeddings

TEXT_ROLES = ("event", "actions", "entities")
DEFAULT_PAIRING = {"event": "spatial", "actions": "temporal", "entities": "object"}
MINING_MODES = ("hardest", "sum")

_MASKED = -1e30


@dataclass(frozen=True)
class MatchConfig:
    margin: float = 0.2
    pairing: dict = field(default_factory=lambda: dict(DEFAULT_PAIRING))
    mining: str = "hardest"

    def __post_init__(self):
        if not self.margin >= 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")
        if set(self.pairing) != set(TEXT_ROLES) or sorted(self.pairing.values()) != sorted(LEVELS):
            raise ConfigError(f"pairing must map {TEXT_ROLES} one-to-one onto {LEVELS}, got {self.pairing}")
        if self.mining not in MINING_MODES:
            raise ConfigError(f"mining must be one of {MINING_MODES}, got {self.mining!r}")


def parse_pairing(spec: str) -> dict:
    """``"event=spatial,actions=temporal,entities=object"`` -> dict."""
    try:
        pairing = dict(item.split("=", 1) for item in spec.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse pairing {spec!r}") from None
    MatchConfig(pairing=pairing)
    return pairing


def cosine_sim(v, c) -> Tensor:
    v, c = as_tensor(v), as_tensor(c)
    if not np.any(v.data) or not np.any(c.data):
        raise ContractError("cosine similarity of a zero vector is undefined")
    return tensor_sum(mul(l2_normalize(v), l2_normalize(c)))


def _cosine_matrix(rows: Tensor, cols: Tensor) -> Tensor:
    return matmul(l2_normalize(rows, axis=-1), transpose(l2_normalize(cols, axis=-1)))


def pair_similarity(t: TextEmbeddings, u: VisualEmbeddings, cfg: MatchConfig | None = None) -> Tensor:
    """Mean over the three levels of the mean phrase-to-level cosine."""
    cfg = cfg or MatchConfig()
    level_scores = []
    for role in TEXT_ROLES:
        phrases = t.role(role)
        if phrases.shape[0] == 0:
            raise ValidationError(f"caption has no {role} phrases")
        target = reshape(u.level(cfg.pairing[role]), (1, -1))
        level_scores.append(mean_pool(_cosine_matrix(phrases, target)))
    return mean_pool(stack(level_scores))


def similarity_matrix(texts: list[TextEmbeddings], visuals: list[VisualEmbeddings],
                      cfg: MatchConfig | None = None) -> Tensor:
    """``S[i, j] = pair_similarity(texts[i], visuals[j])`` as one differentiable tensor."""
    cfg = cfg or MatchConfig()
    total = None
    for role in TEXT_ROLES:
        blocks = [t.role(role) for t in texts]
        counts = [b.shape[0] for b in blocks]
        if min(counts) == 0:
            raise ValidationError(f"a caption has no {role} phrases")
        # row i averages caption i's phrase rows
        segment = np.zeros((len(texts), sum(counts)))
        start = 0
        for i, n in enumerate(counts):
            segment[i, start:start + n] = 1.0 / n
            start += n
        phrases = concat(blocks, axis=0)
        targets = stack([u.level(cfg.pairing[role]) for u in visuals])
        level = matmul(Tensor(segment), _cosine_matrix(phrases, targets))
        total = level if total is None else total + level
    return scale(total, 1.0 / len(TEXT_ROLES))


def contrastive_loss(scores, cfg: MatchConfig | None = None) -> Tensor:
    """Margin ranking loss over a batch whose diagonal holds the matched pairs.

    For positive ``(clip i, caption i)`` the caption negatives come from
    column i and the clip negatives from row i. Each bracket is clamped at
    zero; the batch loss is the mean over positives.
    """
    cfg = cfg or MatchConfig()
    scores = as_tensor(scores)
    n = scores.shape[0]
    if scores.ndim != 2 or scores.shape[1] != n:
        raise ContractError(f"contrastive_loss needs a square score matrix, got {scores.shape}")
    if n < 2:
        raise ContractError("contrastive_loss needs a batch of at least 2 pairs")
    eye = np.eye(n)
    positive = tensor_sum(mul(scores, eye), axis=1)
    if cfg.mining == "hardest":
        masked = scores + eye * _MASKED
        hardest_caption = max_pool(masked, axis=0)  # per clip i, over captions n != i
        hardest_clip = max_pool(masked, axis=1)  # per caption i, over clips n != i
        per_pair = relu(cfg.margin + hardest_caption - positive) + relu(cfg.margin + hardest_clip - positive)
    else:
        off = 1.0 - eye
        caption_neg = mul(relu(cfg.margin + scores - reshape(positive, (1, n))), off)
        clip_neg = mul(relu(cfg.margin + scores - reshape(positive, (n, 1))), off)
        per_pair = tensor_sum(caption_neg, axis=0) + tensor_sum(clip_neg, axis=1)
    return mean_pool(per_pair, axis=0)
