import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import attention_loop, multi_head_loop
from srx.attention import (
    CrossModalBlock,
    EncoderBlock,
    MultiHeadAttention,
    attention_weights,
    cross_modal_block,
    encoder_block,
    multi_head,
    scaled_dot_attention,
)
from srx.errors import ConfigError, DimensionError
from srx.tensor import Tensor


def test_identical_keys_give_uniform_average():
    q = np.array([[1.0, 2.0]])
    k = np.ones((3, 2))
    v = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    np.testing.assert_allclose(scaled_dot_attention(q, k, v).data, [[1.0, 1.0]], atol=1e-15)


def test_one_hot_limit_selects_matching_value():
    q = np.array([[1000.0, 0.0]])
    k = np.array([[1.0, 0.0], [0.0, 1.0]])
    v = np.array([[7.0, 8.0], [-1.0, -2.0]])
    np.testing.assert_allclose(scaled_dot_attention(q, k, v).data, [[7.0, 8.0]])


@pytest.mark.parametrize("seed", range(5))
def test_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m, d, dv = rng.integers(1, 6, size=4)
    q, k, v = rng.standard_normal((n, d)), rng.standard_normal((m, d)), rng.standard_normal((m, dv))
    expected = attention_loop(q.tolist(), k.tolist(), v.tolist())
    np.testing.assert_allclose(scaled_dot_attention(q, k, v).data, expected, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 10_000))
def test_weights_are_row_stochastic(n, m, d, seed):
    rng = np.random.default_rng(seed)
    w = attention_weights(rng.standard_normal((n, d)) * 5, rng.standard_normal((m, d)) * 5).data
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 10_000))
def test_key_value_permutation_invariance(n, m, seed):
    rng = np.random.default_rng(seed)
    q, k, v = rng.standard_normal((n, 3)), rng.standard_normal((m, 3)), rng.standard_normal((m, 2))
    perm = rng.permutation(m)
    np.testing.assert_allclose(
        scaled_dot_attention(q, k, v).data, scaled_dot_attention(q, k[perm], v[perm]).data, atol=1e-12
    )


def test_shape_errors():
    with pytest.raises(DimensionError):
        scaled_dot_attention(np.ones((2, 3)), np.ones((4, 2)), np.ones((4, 3)))
    with pytest.raises(DimensionError):
        scaled_dot_attention(np.ones((2, 3)), np.ones((4, 3)), np.ones((5, 3)))


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        MultiHeadAttention(np.random.default_rng(0), 10, 3)


def test_multi_head_matches_loop_oracle():
    rng = np.random.default_rng(11)
    p = MultiHeadAttention(rng, 8, 4)
    q, kv = rng.standard_normal((3, 8)), rng.standard_normal((5, 8))
    expected = multi_head_loop(
        q.tolist(), kv.tolist(), kv.tolist(),
        [w.data.tolist() for w in p.w_q], [w.data.tolist() for w in p.w_k],
        [w.data.tolist() for w in p.w_v], p.w_o.data.tolist(),
    )
    np.testing.assert_allclose(multi_head(q, kv, kv, p).data, expected, atol=1e-10)


def test_multi_head_decomposes_into_single_heads():
    # output = sum over heads of head_i @ (the rows of W_O belonging to head i)
    rng = np.random.default_rng(12)
    p = MultiHeadAttention(rng, 12, 3)
    x = rng.standard_normal((4, 12))
    d = 4
    parts = []
    for i in range(3):
        h = scaled_dot_attention(x @ p.w_q[i].data, x @ p.w_k[i].data, x @ p.w_v[i].data).data
        parts.append(h @ p.w_o.data[i * d:(i + 1) * d])
    np.testing.assert_allclose(multi_head(x, x, x, p).data, sum(parts), atol=1e-12)


def test_multi_head_width_check():
    p = MultiHeadAttention(np.random.default_rng(0), 8, 2)
    with pytest.raises(DimensionError):
        multi_head(np.ones((2, 6)), np.ones((2, 8)), np.ones((2, 8)), p)


def _layer_norm(x, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(x.var(axis=1, keepdims=True) + eps)


def test_encoder_block_composition():
    rng = np.random.default_rng(13)
    p = EncoderBlock(rng, 8, 2)
    x = rng.standard_normal((5, 8))
    z = _layer_norm(multi_head(x, x, x, p.attn).data + x)
    ff = np.maximum(z @ p.ff.inner.weight.data + p.ff.inner.bias.data, 0) @ p.ff.outer.weight.data + p.ff.outer.bias.data
    np.testing.assert_allclose(encoder_block(x, p).data, _layer_norm(ff + z), atol=1e-12)


def test_encoder_block_is_permutation_equivariant():
    rng = np.random.default_rng(14)
    p = EncoderBlock(rng, 8, 4)
    x = rng.standard_normal((6, 8))
    perm = rng.permutation(6)
    np.testing.assert_allclose(encoder_block(x[perm], p).data, encoder_block(x, p).data[perm], atol=1e-12)


def test_encoder_block_output_shape_and_norm():
    rng = np.random.default_rng(15)
    out = encoder_block(rng.standard_normal((3, 16)), EncoderBlock(rng, 16, 4)).data
    assert out.shape == (3, 16)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)


def test_cross_modal_block_composition_aligned():
    rng = np.random.default_rng(16)
    p = CrossModalBlock(rng, 8, 2)
    s, f = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))
    z = _layer_norm(multi_head(f, f, f, p.self_attn).data + f)
    c = _layer_norm(multi_head(s, z, z, p.cross_attn).data + z)
    ff = np.maximum(c @ p.ff.inner.weight.data + p.ff.inner.bias.data, 0) @ p.ff.outer.weight.data + p.ff.outer.bias.data
    np.testing.assert_allclose(cross_modal_block(s, f, p).data, _layer_norm(ff + c), atol=1e-12)


def test_cross_modal_block_unequal_lengths_keep_target_rows():
    rng = np.random.default_rng(17)
    p = CrossModalBlock(rng, 8, 2)
    s, f = rng.standard_normal((3, 8)), rng.standard_normal((6, 8))
    out = cross_modal_block(s, f, p).data
    assert out.shape == (6, 8)
    # the pooled query summary is order-free
    np.testing.assert_allclose(cross_modal_block(s[::-1], f, p).data, out, atol=1e-12)


def test_cross_modal_block_depends_on_query():
    rng = np.random.default_rng(18)
    p = CrossModalBlock(rng, 8, 2)
    f = rng.standard_normal((4, 8))
    a = cross_modal_block(rng.standard_normal((4, 8)), f, p).data
    b = cross_modal_block(rng.standard_normal((4, 8)), f, p).data
    assert not np.allclose(a, b)


def test_blocks_backpropagate_to_every_parameter():
    rng = np.random.default_rng(19)
    p = CrossModalBlock(rng, 8, 2)
    s = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    out = cross_modal_block(s, rng.standard_normal((5, 8)), p)
    (out * rng.standard_normal(out.shape)).sum().backward()
    for name, t in p.named_parameters():
        assert np.any(t.grad != 0), name
    assert np.any(s.grad != 0)
