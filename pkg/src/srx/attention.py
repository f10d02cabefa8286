"""Multi-head dot-product attention and the two transformer blocks built on it.

``EncoderBlock`` produces the modality-specific feature from the non-target
streams; ``CrossModalBlock`` turns the target stream into the
modality-complement embedding by attending from the specific feature into it.
Both use post-norm residuals.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import LayerNorm, Linear, Module, uniform_param
from .tensor import Tensor, as_tensor, concat, matmul, mean_pool, relu, scale, softmax, transpose


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Row-stochastic weights ``softmax(q k^T / sqrt(d))`` over the keys."""
    q, k = as_tensor(q), as_tensor(k)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise DimensionError(f"attention: query {q.shape} and key {k.shape} widths differ")
    d = q.shape[1]
    return softmax(scale(matmul(q, transpose(k)), 1.0 / np.sqrt(d)), axis=-1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    v = as_tensor(v)
    if v.ndim != 2 or v.shape[0] != as_tensor(k).shape[0]:
        raise DimensionError(f"attention: key {as_tensor(k).shape} and value {v.shape} row counts differ")
    return matmul(attention_weights(q, k), v)


class MultiHeadAttention(Module):
    """Per-head query/key/value projections followed by an output projection."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int):
        if heads <= 0 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        d = d_model // heads
        self.w_q = [uniform_param(rng, d_model, (d_model, d)) for _ in range(heads)]
        self.w_k = [uniform_param(rng, d_model, (d_model, d)) for _ in range(heads)]
        self.w_v = [uniform_param(rng, d_model, (d_model, d)) for _ in range(heads)]
        self.w_o = uniform_param(rng, heads * d, (heads * d, d_model))

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def d_model(self) -> int:
        return self.w_o.shape[1]

    def __call__(self, q, k, v) -> Tensor:
        return multi_head(q, k, v, self)


def multi_head(q, k, v, p: MultiHeadAttention) -> Tensor:
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    for name, x in (("query", q), ("key", k), ("value", v)):
        if x.ndim != 2 or x.shape[1] != p.d_model:
            raise DimensionError(f"multi_head: {name} shape {x.shape} needs width {p.d_model}")
    heads = [
        scaled_dot_attention(matmul(q, wq), matmul(k, wk), matmul(v, wv))
        for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v)
    ]
    return matmul(concat(heads, axis=1), p.w_o)


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d_model: int, ff_dim: int):
        self.inner = Linear(rng, d_model, ff_dim)
        self.outer = Linear(rng, ff_dim, d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))


class EncoderBlock(Module):
    """Self-attention + feed-forward, each wrapped in residual and layer-norm."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int, ff_dim: int | None = None):
        self.attn = MultiHeadAttention(rng, d_model, heads)
        self.norm_attn = LayerNorm(d_model)
        self.ff = FeedForward(rng, d_model, ff_dim or 2 * d_model)
        self.norm_ff = LayerNorm(d_model)

    def __call__(self, f_e: Tensor) -> Tensor:
        return encoder_block(f_e, self)


def encoder_block(f_e, p: EncoderBlock) -> Tensor:
    f_e = as_tensor(f_e)
    z_e = p.norm_attn(p.attn(f_e, f_e, f_e) + f_e)
    return p.norm_ff(p.ff(z_e) + z_e)


class CrossModalBlock(Module):
    """Self-attention over the target stream, then cross-attention from the
    modality-specific feature into it, then feed-forward."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int, ff_dim: int | None = None):
        self.self_attn = MultiHeadAttention(rng, d_model, heads)
        self.norm_self = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(rng, d_model, heads)
        self.norm_cross = LayerNorm(d_model)
        self.ff = FeedForward(rng, d_model, ff_dim or 2 * d_model)
        self.norm_ff = LayerNorm(d_model)

    def __call__(self, s_e: Tensor, target: Tensor) -> Tensor:
        return cross_modal_block(s_e, target, self)


def cross_modal_block(s_e, target, p: CrossModalBlock) -> Tensor:
    """Complement embedding of ``target`` (n rows) conditioned on ``s_e`` (m rows).

    Queries come from ``s_e``; keys and values from the self-attended target
    ``z``. The residual is ``z``, so the output has n rows. When m != n the
    m attended rows are averaged and added to every position of ``z``.
    """
    s_e, target = as_tensor(s_e), as_tensor(target)
    z = p.norm_self(p.self_attn(target, target, target) + target)
    attended = p.cross_attn(s_e, z, z)
    if attended.shape[0] != z.shape[0]:
        attended = mean_pool(attended, axis=0)
    c_e = p.norm_cross(attended + z)
    return p.norm_ff(p.ff(c_e) + c_e)
