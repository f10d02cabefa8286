"""Encode one caption graph and look at what the graph convolution does."""
# %%

import numpy as np

from srx.tensor import Tensor
from srx.text import Edge, Node, RoleGraph, RoleGraphEncoder, encode_text, neighbour_weights

np.set_printoptions(precision=3, suppress=True)

# %%
# "someone cuts an onion and pours oil": one event, two actions, two entities.
# Token ids index a toy word-vector table.
nodes = [
    Node("s", "event", (0, 1, 2)),
    Node("cut", "action", (1,)),
    Node("pour", "action", (3,)),
    Node("onion", "entity", (2,)),
    Node("oil", "entity", (4,)),
]
edges = [Edge("cut", "s", 0), Edge("pour", "s", 0), Edge("cut", "onion", 1), Edge("pour", "oil", 1)]
g = RoleGraph(nodes, edges, n_relations=2).validate()

rng = np.random.default_rng(0)
word_vectors = rng.standard_normal((5, 8))
enc = RoleGraphEncoder(rng, word_dim=8, d_model=6, n_relations=2, layers=2)

# %%
emb = encode_text(g, word_vectors, enc)
print("event  ", emb.event.data)
print("actions", emb.actions.data, sep="\n")
print("entities", emb.entities.data, sep="\n")

# every output row has unit length
print("norms:", np.linalg.norm(emb.actions.data, axis=1))

# %%
# Attention over neighbours: each row sums to one over the node's edges.
states = enc.node_init(Tensor(rng.standard_normal((5, 8))))
linked = (sum(g.adjacency().values()) > 0).astype(float)
weights = neighbour_weights(states, linked, enc.scorer)
print(weights.data)
