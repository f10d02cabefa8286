"""Finite-difference verification of every differentiable operation.

Each registered check builds a small random instance from a seed and returns
the scalar function to differentiate together with the tensors whose
gradients are compared. Non-scalar op outputs are reduced with a fixed random
readout so no gradient direction is trivially zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import CrossModalBlock, EncoderBlock, MultiHeadAttention, cross_modal_block, encoder_block, multi_head, scaled_dot_attention
from .matching import MatchConfig, contrastive_loss, pair_similarity, similarity_matrix
from .model import ModelConfig, RetrievalModel
from .tensor import Tensor, finite_diff_grad, no_grad
from .text import Edge, Node, RoleGraph, RoleGraphEncoder, encode_text, gcn_layer
from .visual import FEATURE_MODES, ExpertFeatures, VisualEncoder, encode_visual

STEP = 1e-5
TOLERANCE = 1e-4
# denominators below this are treated as this (gradients that are ~0 in both routes)
SCALE_FLOOR = 1e-6


def relative_error(analytic, numeric, floor: float = SCALE_FLOOR) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float
    coords: int
    passed: bool


def check_function(fn: Callable[[], Tensor], wrt: list[Tensor], rng: np.random.Generator,
                   max_coords: int | None = None, step: float = STEP) -> tuple[float, int]:
    """Max relative error between backprop and central differences over ``wrt``."""
    for t in wrt:
        t.zero_grad()
    out = fn()
    out.backward()
    analytic = [t.grad.copy() for t in wrt]
    errors, used = [], 0
    for t, grad in zip(wrt, analytic):
        size = t.data.size
        if max_coords is None or size <= max_coords:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, max_coords, replace=False)

        def f(arr, t=t):
            saved = t.data
            t.data = arr
            try:
                with no_grad():
                    return fn().item()
            finally:
                t.data = saved

        numeric = finite_diff_grad(f, t.data, step, indices=coords)
        errors.append(relative_error(grad.reshape(-1)[coords], numeric))
        used += len(coords)
    return max(errors), used


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _readout(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    weights = rng.standard_normal(out.shape)
    return lambda y: T.tensor_sum(T.mul(y, weights))


def _op_case(op, *leaves):
    """Wrap ``op`` applied to ``leaves`` with a random linear readout."""
    def build(rng):
        with no_grad():
            probe = op(*leaves)
        read = _readout(probe, rng)
        return (lambda: read(op(*leaves))), list(leaves)
    return build


def _case_matmul(rng):
    return _op_case(T.matmul, _leaf(rng, 4, 5), _leaf(rng, 5, 3))(rng)


def _case_add(rng):
    return _op_case(T.add, _leaf(rng, 3, 4), _leaf(rng, 4))(rng)


def _case_sub(rng):
    return _op_case(T.sub, _leaf(rng, 3, 1), _leaf(rng, 3, 4))(rng)


def _case_mul(rng):
    return _op_case(T.mul, _leaf(rng, 3, 4), _leaf(rng, 1, 4))(rng)


def _case_scale(rng):
    return _op_case(lambda x: T.scale(x, -1.7), _leaf(rng, 3, 4))(rng)


def _case_transpose(rng):
    return _op_case(T.transpose, _leaf(rng, 3, 5))(rng)


def _case_relu(rng):
    x = _leaf(rng, 4, 5)
    # keep entries away from the kink
    x.data = np.where(np.abs(x.data) < 0.05, 0.5, x.data)
    return _op_case(T.relu, x)(rng)


def _case_softmax(rng):
    return _op_case(lambda x: T.softmax(x, axis=-1), _leaf(rng, 3, 5, scale=2.0))(rng)


def _case_softmax_axis0(rng):
    return _op_case(lambda x: T.softmax(x, axis=0), _leaf(rng, 4, 3))(rng)


def _case_layer_norm(rng):
    gain = Tensor(1.0 + 0.3 * rng.standard_normal(6), requires_grad=True)
    return _op_case(T.layer_norm, _leaf(rng, 3, 6), gain, _leaf(rng, 6))(rng)


def _case_concat(rng):
    return _op_case(lambda a, b: T.concat([a, b], axis=0), _leaf(rng, 2, 3), _leaf(rng, 4, 3))(rng)


def _case_concat_axis1(rng):
    return _op_case(lambda a, b: T.concat([a, b], axis=1), _leaf(rng, 2, 3), _leaf(rng, 2, 5))(rng)


def _case_take(rng):
    return _op_case(lambda x: T.take(x, [2, 0, 2]), _leaf(rng, 4, 3))(rng)


def _case_reshape(rng):
    return _op_case(lambda x: T.reshape(x, (6, 2)), _leaf(rng, 3, 4))(rng)


def _case_stack(rng):
    return _op_case(lambda a, b: T.stack([a, b]), _leaf(rng, 4), _leaf(rng, 4))(rng)


def _case_sum(rng):
    return _op_case(lambda x: T.tensor_sum(x, axis=1), _leaf(rng, 3, 4))(rng)


def _case_mean_pool(rng):
    return _op_case(lambda x: T.mean_pool(x, axis=0), _leaf(rng, 5, 4))(rng)


def _case_max_pool(rng):
    return _op_case(lambda x: T.max_pool(x, axis=0), _leaf(rng, 5, 4))(rng)


def _case_l2_normalize(rng):
    return _op_case(lambda x: T.l2_normalize(x, axis=-1), _leaf(rng, 3, 5))(rng)


def _case_shared_subexpression(rng):
    x = _leaf(rng, 3, 3)

    def fn():
        y = T.matmul(x, x)
        return T.tensor_sum(T.mul(T.add(y, x), T.relu(y) + 2.0))
    return fn, [x]


def _case_attention(rng):
    return _op_case(scaled_dot_attention, _leaf(rng, 3, 4), _leaf(rng, 5, 4), _leaf(rng, 5, 4))(rng)


def _module_leaves(module) -> list[Tensor]:
    return module.parameters()


def _perturb_norms(module, rng):
    """Move layer-norm gains/biases off 1/0 so their gradients are generic."""
    for name, p in module.named_parameters():
        if name.endswith("gain"):
            p.data = 1.0 + 0.2 * rng.standard_normal(p.shape)
        elif name.split(".")[-1] == "bias" and "norm" in name:
            p.data = 0.2 * rng.standard_normal(p.shape)


def _case_multi_head(rng):
    p = MultiHeadAttention(rng, 8, 2)
    q, k = _leaf(rng, 3, 8), _leaf(rng, 4, 8)
    v = _leaf(rng, 4, 8)
    with no_grad():
        read = _readout(multi_head(q, k, v, p), rng)
    return (lambda: read(multi_head(q, k, v, p))), [q, k, v] + _module_leaves(p)


def _case_encoder_block(rng):
    p = EncoderBlock(rng, 8, 2)
    _perturb_norms(p, rng)
    x = _leaf(rng, 5, 8)
    with no_grad():
        read = _readout(encoder_block(x, p), rng)
    return (lambda: read(encoder_block(x, p))), [x] + _module_leaves(p)


def _cross_case(m, n):
    def build(rng):
        p = CrossModalBlock(rng, 8, 2)
        _perturb_norms(p, rng)
        s_e, f = _leaf(rng, m, 8), _leaf(rng, n, 8)
        with no_grad():
            read = _readout(cross_modal_block(s_e, f, p), rng)
        return (lambda: read(cross_modal_block(s_e, f, p))), [s_e, f] + _module_leaves(p)
    return build


def toy_graph() -> RoleGraph:
    """Five-node caption: event, two verbs, two nouns, three relation types."""
    nodes = [
        Node("ev", "event", (0, 1, 2, 3, 4)),
        Node("v1", "action", (1,)),
        Node("v2", "action", (2, 5)),
        Node("n1", "entity", (3,)),
        Node("n2", "entity", (4, 6)),
    ]
    edges = [Edge("v1", "ev", 0), Edge("v2", "ev", 0), Edge("v1", "n1", 1), Edge("v2", "n2", 2), Edge("v1", "n2", 1)]
    return RoleGraph(nodes, edges, n_relations=3).validate()


def _case_gcn_layer(rng):
    g = toy_graph()
    d = 6
    states = _leaf(rng, len(g), d)
    w_t, w_r, u = _leaf(rng, d, d, scale=0.4), _leaf(rng, 3, d), _leaf(rng, d, d, scale=0.4)
    with no_grad():
        read = _readout(gcn_layer(states, g, w_t, w_r, u), rng)
    return (lambda: read(gcn_layer(states, g, w_t, w_r, u))), [states, w_t, w_r, u]


def _case_encode_text(rng):
    g = toy_graph()
    wv = rng.standard_normal((7, 5))
    p = RoleGraphEncoder(rng, 5, 6, 3, layers=2)

    def fn():
        emb = encode_text(g, wv, p)
        return T.tensor_sum(T.mul(T.concat([T.reshape(emb.event, (1, -1)), emb.actions, emb.entities], 0), weights))
    weights = rng.standard_normal((5, 6))
    return fn, _module_leaves(p)


def toy_features(rng, width: int, lengths=(3, 2, 4)) -> ExpertFeatures:
    return ExpertFeatures(*(rng.standard_normal((n, width)) for n in lengths))


def _visual_case(mode):
    def build(rng):
        p = VisualEncoder(rng, 6, 8, 2, FEATURE_MODES[mode])
        _perturb_norms(p, rng)
        f = toy_features(rng, 6)
        weights = rng.standard_normal((3, 8))

        def fn():
            e = encode_visual(f, p.cfg, p)
            return T.tensor_sum(T.mul(T.stack([e.spatial, e.temporal, e.object]), weights))
        return fn, _module_leaves(p)
    return build


def _random_embeddings(rng, d=6):
    from .text import TextEmbeddings
    from .visual import VisualEmbeddings
    text = TextEmbeddings(_leaf(rng, d), _leaf(rng, 2, d), _leaf(rng, 3, d))
    vis = VisualEmbeddings(_leaf(rng, d), _leaf(rng, d), _leaf(rng, d))
    return text, vis


def _case_pair_similarity(rng):
    t, u = _random_embeddings(rng)
    leaves = [t.event, t.actions, t.entities, u.spatial, u.temporal, u.object]
    return (lambda: pair_similarity(t, u)), leaves


def _case_similarity_matrix(rng):
    pairs = [_random_embeddings(rng) for _ in range(3)]
    texts, vis = [p[0] for p in pairs], [p[1] for p in pairs]
    weights = rng.standard_normal((3, 3))
    leaves = [x for t in texts for x in (t.event, t.actions, t.entities)]
    leaves += [x for u in vis for x in (u.spatial, u.temporal, u.object)]
    return (lambda: T.tensor_sum(T.mul(similarity_matrix(texts, vis), weights))), leaves


def _loss_case(mining):
    def build(rng):
        s = Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
        cfg = MatchConfig(margin=0.2, mining=mining)
        return (lambda: contrastive_loss(s, cfg)), [s]
    return build


def end_to_end_model(rng, mode="2d-3d-roi"):
    """Tiny model plus a 3-pair batch drawn from ``rng``."""
    cfg = ModelConfig(feature_dim=6, word_dim=5, n_relations=3, d_model=8, heads=2,
                      feature_mode=mode, seed=int(rng.integers(2**31)))
    model = RetrievalModel(cfg)
    _perturb_norms(model, rng)
    wv = rng.standard_normal((7, 5))
    graphs = [toy_graph() for _ in range(3)]
    # vary the captions by permuting the word table rows they point at
    graph_wv = [wv[rng.permutation(7)] for _ in range(3)]
    clips = [toy_features(rng, 6, tuple(rng.integers(1, 4, size=3))) for _ in range(3)]
    return model, graphs, graph_wv, clips


def end_to_end_loss(model, graphs, graph_wv, clips, match=None):
    texts = [model.embed_text(g, wv) for g, wv in zip(graphs, graph_wv)]
    visuals = [model.embed_clip(f) for f in clips]
    return contrastive_loss(similarity_matrix(texts, visuals, match), match)


def _case_end_to_end(rng):
    model, graphs, graph_wv, clips = end_to_end_model(rng)
    return (lambda: end_to_end_loss(model, graphs, graph_wv, clips)), model.parameters()


# name -> (builder, max coordinates per tensor or None for all)
REGISTRY: dict[str, tuple[Callable, int | None]] = {
    "matmul": (_case_matmul, None),
    "add": (_case_add, None),
    "sub": (_case_sub, None),
    "mul": (_case_mul, None),
    "scale": (_case_scale, None),
    "transpose": (_case_transpose, None),
    "relu": (_case_relu, None),
    "softmax": (_case_softmax, None),
    "softmax_axis0": (_case_softmax_axis0, None),
    "layer_norm": (_case_layer_norm, None),
    "concat": (_case_concat, None),
    "concat_axis1": (_case_concat_axis1, None),
    "take": (_case_take, None),
    "reshape": (_case_reshape, None),
    "stack": (_case_stack, None),
    "sum": (_case_sum, None),
    "mean_pool": (_case_mean_pool, None),
    "max_pool": (_case_max_pool, None),
    "l2_normalize": (_case_l2_normalize, None),
    "shared_subexpression": (_case_shared_subexpression, None),
    "scaled_dot_attention": (_case_attention, None),
    "multi_head": (_case_multi_head, None),
    "encoder_block": (_case_encoder_block, 12),
    "cross_modal_block": (_cross_case(3, 4), 12),
    "cross_modal_block_aligned": (_cross_case(4, 4), 12),
    "gcn_layer": (_case_gcn_layer, None),
    "encode_text": (_case_encode_text, 12),
    "pair_similarity": (_case_pair_similarity, None),
    "similarity_matrix": (_case_similarity_matrix, None),
    "contrastive_loss_hardest": (_loss_case("hardest"), None),
    "contrastive_loss_sum": (_loss_case("sum"), None),
    "end_to_end_loss": (_case_end_to_end, 1),
}
for _mode in FEATURE_MODES:
    REGISTRY[f"encode_visual[{_mode}]"] = (_visual_case(_mode), 1)


def run_check(name: str, seed: int, tolerance: float = TOLERANCE) -> CheckResult:
    build, max_coords = REGISTRY[name]
    rng = np.random.default_rng([seed, sum(name.encode())])
    fn, wrt = build(rng)
    if name == "end_to_end_loss":
        error, used = end_to_end_check(fn, wrt, rng)
    else:
        error, used = check_function(fn, wrt, rng, max_coords)
    return CheckResult(name, seed, error, used, bool(error < tolerance))


def end_to_end_check(fn, params, rng, n_random: int = 100) -> tuple[float, int]:
    """One coordinate of every parameter tensor plus ``n_random`` coordinates
    drawn uniformly over all parameters."""
    for p in params:
        p.zero_grad()
    fn().backward()
    sizes = np.array([p.data.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = [(i, int(rng.integers(s))) for i, s in enumerate(sizes)]
    for flat in rng.choice(offsets[-1], n_random, replace=False):
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        picks.append((i, int(flat - offsets[i])))
    analytic, numeric = [], []
    for i, j in picks:
        p = params[i]
        analytic.append(p.grad.reshape(-1)[j])

        def f(arr, p=p):
            saved = p.data
            p.data = arr
            try:
                with no_grad():
                    return fn().item()
            finally:
                p.data = saved
        numeric.append(finite_diff_grad(f, p.data, STEP, indices=[j])[0])
    return relative_error(np.array(analytic), np.array(numeric)), len(picks)


def run_suite(seeds=range(10), names=None, tolerance: float = TOLERANCE, corrupt: str | None = None):
    """Run every registered check for every seed.

    ``corrupt`` names a primitive whose backward rule is deliberately scaled,
    to confirm the suite notices.
    """
    names = list(REGISTRY) if names is None else list(names)
    results = []
    started = time.perf_counter()
    for name in names:
        for seed in seeds:
            if corrupt is not None:
                with T.corrupt_gradient(corrupt):
                    results.append(run_check(name, seed, tolerance))
            else:
                results.append(run_check(name, seed, tolerance))
    return results, time.perf_counter() - started


def summarise(results) -> list[tuple[str, float, bool]]:
    by_name: dict[str, list[CheckResult]] = {}
    for r in results:
        by_name.setdefault(r.name, []).append(r)
    return [(name, max(r.error for r in rs), all(r.passed for r in rs)) for name, rs in by_name.items()]


def format_summary(results, elapsed: float | None = None) -> str:
    lines = [f"{'operation':<32} {'max rel err':>12}  result"]
    for name, err, ok in summarise(results):
        lines.append(f"{name:<32} {err:12.3e}  {'PASS' if ok else 'FAIL'}")
    if elapsed is not None:
        lines.append(f"elapsed {elapsed:.1f}s")
    return "\n".join(lines)
