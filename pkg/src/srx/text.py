"""Caption encoding over semantic-role graphs.

A caption is parsed (upstream) into one event node for the whole sentence,
action nodes for its verbs and entity nodes for their arguments, linked by
typed relation edges. Node states start from averaged word vectors and are
refined by a residual graph convolution whose per-edge transform is a shared
matrix modulated by a relation-specific vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError
from .nn import Linear, Module, uniform_param
from .tensor import Tensor, add, as_tensor, l2_normalize, matmul, mul, reshape, scale, softmax, take, transpose

ROLES = ("event", "action", "entity")

# additive mask for non-neighbours; exp() of it underflows to exactly zero
_MASKED = -1e30


@dataclass(frozen=True)
class Node:
    id: object
    role: str
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class Edge:
    src: object
    dst: object
    relation: int


@dataclass
class RoleGraph:
    """A parsed caption. Edges are undirected for message passing."""

    nodes: list[Node]
    edges: list[Edge]
    n_relations: int | None = None
    caption_id: str | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = [n if isinstance(n, Node) else Node(n[0], n[1], tuple(n[2])) for n in self.nodes]
        self.edges = [e if isinstance(e, Edge) else Edge(*e) for e in self.edges]
        self._index = {n.id: i for i, n in enumerate(self.nodes)}

    def __len__(self):
        return len(self.nodes)

    def index(self, node_id) -> int:
        return self._index[node_id]

    def role_indices(self, role: str) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.role == role]

    def neighbours(self, node_id) -> list[tuple[object, int]]:
        """``(neighbour id, relation)`` pairs of ``node_id``, in edge order."""
        out = []
        for e in self.edges:
            if e.src == node_id:
                out.append((e.dst, e.relation))
            elif e.dst == node_id:
                out.append((e.src, e.relation))
        return out

    def validate(self) -> "RoleGraph":
        if len(self._index) != len(self.nodes):
            raise ValidationError("node ids must be unique")
        for n in self.nodes:
            if n.role not in ROLES:
                raise ValidationError(f"node {n.id!r}: unknown role {n.role!r}")
            if not n.tokens:
                raise ValidationError(f"node {n.id!r}: a node needs at least one token")
        events = self.role_indices("event")
        if len(events) != 1:
            raise ValidationError(f"exactly one event node required, found {len(events)}")
        if not self.role_indices("action"):
            raise ValidationError("caption has no action (verb) nodes")
        if not self.role_indices("entity"):
            raise ValidationError("caption has no entity nodes")
        pairs = set()
        for e in self.edges:
            for end in (e.src, e.dst):
                if end not in self._index:
                    raise ValidationError(f"edge {e.src!r}-{e.dst!r} refers to unknown node {end!r}")
            if e.src == e.dst:
                raise ValidationError(f"self-loop on node {e.src!r}")
            if not isinstance(e.relation, (int, np.integer)) or e.relation < 0:
                raise ValidationError(f"edge {e.src!r}-{e.dst!r}: relation must be a non-negative int")
            if self.n_relations is not None and e.relation >= self.n_relations:
                raise ValidationError(
                    f"edge {e.src!r}-{e.dst!r}: relation {e.relation} >= vocabulary size {self.n_relations}"
                )
            key = frozenset((e.src, e.dst))
            if key in pairs:
                raise ValidationError(f"duplicate edge between {e.src!r} and {e.dst!r}")
            pairs.add(key)
        event_id = self.nodes[events[0]].id
        roles = {n.id: n.role for n in self.nodes}
        for n in self.nodes:
            linked = {roles[other] for other, _ in self.neighbours(n.id)}
            if n.role == "action" and event_id not in {o for o, _ in self.neighbours(n.id)}:
                raise ValidationError(f"action node {n.id!r} must be connected to the event node")
            if n.role == "entity" and "action" not in linked:
                raise ValidationError(f"entity node {n.id!r} must be connected to an action node")
        return self

    def adjacency(self) -> dict[int, np.ndarray]:
        """Symmetric 0/1 adjacency matrices keyed by relation id."""
        n = len(self.nodes)
        mats: dict[int, np.ndarray] = {}
        for e in self.edges:
            a = mats.setdefault(int(e.relation), np.zeros((n, n)))
            i, j = self._index[e.src], self._index[e.dst]
            a[i, j] = a[j, i] = 1.0
        return mats


@dataclass
class TextEmbeddings:
    """Unit-norm role embeddings of one caption (rows are phrases)."""

    event: Tensor  # (d,)
    actions: Tensor  # (n_actions, d)
    entities: Tensor  # (n_entities, d)

    def role(self, name: str) -> Tensor:
        return {"event": reshape(self.event, (1, -1)), "actions": self.actions, "entities": self.entities}[name]


class RoleGraphEncoder(Module):
    def __init__(self, rng: np.random.Generator, word_dim: int, d_model: int, n_relations: int, layers: int = 2):
        self.node_init = Linear(rng, word_dim, d_model)
        self.w_t = [uniform_param(rng, d_model, (d_model, d_model)) for _ in range(layers)]
        self.w_r = uniform_param(rng, n_relations, (n_relations, d_model))
        self.scorer = uniform_param(rng, d_model, (d_model, d_model))

    @property
    def layers(self) -> int:
        return len(self.w_t)

    @property
    def n_relations(self) -> int:
        return self.w_r.shape[0]

    def __call__(self, g: RoleGraph, word_vectors: np.ndarray) -> TextEmbeddings:
        return encode_text(g, word_vectors, self)


def mean_token_vectors(g: RoleGraph, word_vectors: np.ndarray) -> np.ndarray:
    rows = []
    for n in g.nodes:
        for t in n.tokens:
            if not 0 <= t < len(word_vectors):
                raise ValidationError(f"node {n.id!r}: token id {t} is not in the word-vector table")
        rows.append(word_vectors[list(n.tokens)].mean(axis=0))
    return np.stack(rows)


def init_node_embeddings(g: RoleGraph, word_vectors: np.ndarray, node_init: Linear) -> Tensor:
    word_vectors = np.asarray(word_vectors, dtype=np.float64)
    if word_vectors.ndim != 2 or word_vectors.shape[1] != node_init.d_in:
        raise DimensionError(
            f"word vectors {word_vectors.shape} do not match node projection input {node_init.d_in}"
        )
    return node_init(Tensor(mean_token_vectors(g, word_vectors)))


def neighbour_weights(states: Tensor, adjacency: np.ndarray, scorer: Tensor) -> Tensor:
    """Attention of every node over its neighbourhood; zero rows for isolated nodes."""
    d = states.shape[1]
    keys = matmul(states, scorer)
    scores = scale(matmul(keys, transpose(keys)), 1.0 / np.sqrt(d))
    return mul(softmax(add(scores, np.where(adjacency > 0, 0.0, _MASKED)), axis=-1), adjacency)


def gcn_layer(states: Tensor, g: RoleGraph, w_t: Tensor, w_r: Tensor, scorer: Tensor, adjacency=None) -> Tensor:
    """One residual update: each node adds its attention-weighted neighbour
    messages, a message being the shared transform of the neighbour state
    scaled elementwise by the edge's relation vector."""
    states = as_tensor(states)
    if states.shape[0] != len(g):
        raise DimensionError(f"gcn_layer: {states.shape[0]} node states for a {len(g)}-node graph")
    adjacency = g.adjacency() if adjacency is None else adjacency
    if not adjacency:
        return states
    full = sum(adjacency.values())
    beta = neighbour_weights(states, full, scorer)
    transformed = matmul(states, w_t)
    update = None
    for rel in sorted(adjacency):
        msg = mul(matmul(mul(beta, adjacency[rel]), transformed), take(w_r, rel))
        update = msg if update is None else update + msg
    return states + update


def encode_text(g: RoleGraph, word_vectors: np.ndarray, p: RoleGraphEncoder) -> TextEmbeddings:
    states = init_node_embeddings(g, word_vectors, p.node_init)
    adjacency = g.adjacency()
    for w_t in p.w_t:
        states = gcn_layer(states, g, w_t, p.w_r, p.scorer, adjacency)
    states = l2_normalize(states, axis=-1)
    return TextEmbeddings(
        event=take(states, g.role_indices("event")[0]),
        actions=take(states, g.role_indices("action")),
        entities=take(states, g.role_indices("entity")),
    )
