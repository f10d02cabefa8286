"""Loop-level reference implementations used as independent oracles.

Written with plain Python floats and explicit loops so they share no code
path with the vectorised package.
"""

import math


def softmax_list(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def attention_loop(q, k, v):
    n, d = len(q), len(q[0])
    m, dv = len(k), len(v[0])
    out = []
    for i in range(n):
        scores = []
        for j in range(m):
            dot = 0.0
            for t in range(d):
                dot += q[i][t] * k[j][t]
            scores.append(dot / math.sqrt(d))
        w = softmax_list(scores)
        row = []
        for c in range(dv):
            acc = 0.0
            for j in range(m):
                acc += w[j] * v[j][c]
            row.append(acc)
        out.append(row)
    return out


def matmul_loop(a, b):
    return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def multi_head_loop(q, k, v, w_q, w_k, w_v, w_o):
    """Per-head projections, loop attention, concatenation, output projection."""
    heads = [
        attention_loop(matmul_loop(q, wq), matmul_loop(k, wk), matmul_loop(v, wv))
        for wq, wk, wv in zip(w_q, w_k, w_v)
    ]
    joined = [sum((h[i] for h in heads), []) for i in range(len(q))]
    return matmul_loop(joined, w_o)


def gcn_loop(states, edges, n_relations, w_t, w_r, scorer):
    """One residual relation-typed graph-attention update, node by node.

    ``edges`` is a list of (i, j, relation) with node indices; each edge
    carries messages both ways.
    """
    n, d = len(states), len(states[0])
    rel = {}
    for i, j, r in edges:
        rel[(i, j)] = r
        rel[(j, i)] = r
    keys = matmul_loop(states, scorer)
    transformed = matmul_loop(states, w_t)
    out = []
    for i in range(n):
        nbrs = sorted(j for (a, j) in rel if a == i)
        new = list(states[i])
        if nbrs:
            logits = [sum(keys[i][t] * keys[j][t] for t in range(d)) / math.sqrt(d) for j in nbrs]
            beta = softmax_list(logits)
            for b, j in zip(beta, nbrs):
                r = rel[(i, j)]
                for t in range(d):
                    new[t] += b * w_r[r][t] * transformed[j][t]
        out.append(new)
    return out


def encode_text_loop(token_lists, word_vectors, node_w, node_b, edges, n_relations, w_ts, w_r, scorer):
    """Node init from averaged word vectors, stacked graph layers, unit rows."""
    states = []
    for toks in token_lists:
        avg = [sum(word_vectors[t][c] for t in toks) / len(toks) for c in range(len(word_vectors[0]))]
        states.append([sum(avg[c] * node_w[c][j] for c in range(len(avg))) + node_b[j] for j in range(len(node_b))])
    for w_t in w_ts:
        states = gcn_loop(states, edges, n_relations, w_t, w_r, scorer)
    return [[x / math.sqrt(sum(y * y for y in row)) for x in row] for row in states]


def ranks_loop(scores, truth_cols):
    """1-based pessimistic ranks: candidates scoring at least the true one."""
    out = []
    for row, c in zip(scores, truth_cols):
        out.append(sum(1 for s in row if s >= row[c]))
    return out
