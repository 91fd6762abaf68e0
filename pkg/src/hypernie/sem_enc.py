"""Semantic channel: sparse-chunked hypergraph transformer.

Attention is evaluated only on incidence entries. Each layer runs

* hyperedge update: ``h_e = W_oe . concat_h sum_{v in e} softmax_v(q_v . k_e / sqrt(d)) v_v``
* node update:      ``m_v = W_on . concat_h sum_{e ni v} softmax_e(q_v . k_e / sqrt(d)) v_e``
* ``h_next = BN2(h + FFN(BN1(h + m)))`` with a GELU feed-forward.

Queries always come from nodes and keys from hyperedges; values come from
the side being aggregated. Hyperedge states start as projected type
embeddings. The coordinate list is streamed in chunks of ``chunk_size``
entries, so transient memory scales with the chunk rather than ``N * E``.

:func:`dense_attention_oracle` evaluates the same model through a masked
dense ``heads x N x E`` score buffer and is meant for tests and benchmarks.
"""

from __future__ import annotations

import numpy as np

from .numsub import tensor as T
from .numsub.memory import note_alloc
from .numsub.nn import BatchNorm, Embedding, Linear, Module
from .numsub.segment import pair_scores, segment_softmax, segment_weighted_sum
from .numsub.tensor import Tensor, record

DENSE_GUARD = 10 ** 6
DEFAULT_CHUNK = 2000


class SahgtLayer(Module):
    def __init__(self, hidden, heads, rng, dtype=np.float32, ffn_mult=2):
        if hidden % heads:
            raise ValueError(f"hidden width {hidden} not divisible by {heads} heads")
        self.hidden, self.heads, self.d_head = hidden, heads, hidden // heads
        self.wq = Linear(hidden, hidden, rng, dtype, bias=False)
        self.wk = Linear(hidden, hidden, rng, dtype, bias=False)
        self.wv = Linear(hidden, hidden, rng, dtype, bias=False)
        self.out_edge = Linear(hidden, hidden, rng, dtype)
        self.out_node = Linear(hidden, hidden, rng, dtype)
        self.bn1 = BatchNorm(hidden, dtype)
        self.bn2 = BatchNorm(hidden, dtype)
        self.ffn1 = Linear(hidden, ffn_mult * hidden, rng, dtype)
        self.ffn2 = Linear(ffn_mult * hidden, hidden, rng, dtype)

    @property
    def scale(self):
        return 1.0 / float(np.sqrt(self.d_head))

    def split(self, x):
        return x.reshape(x.shape[0], self.heads, self.d_head)

    def ffn(self, x):
        return self.ffn2(T.gelu(self.ffn1(x)))


def sparse_attention_edge_update(node_states, edge_states, pairs, layer: SahgtLayer,
                                 chunk_size=DEFAULT_CHUNK):
    """Per-hyperedge attention over incident nodes: (E, heads, d_head), pre-projection."""
    q = layer.split(layer.wq(node_states))
    k = layer.split(layer.wk(edge_states))
    v = layer.split(layer.wv(node_states))
    scores = pair_scores(q, k, pairs.rows, pairs.cols, layer.scale, chunk_size)
    alpha = segment_softmax(scores, pairs.cols, pairs.n_cols, chunk_size)
    return segment_weighted_sum(alpha, v, pairs.rows, pairs.cols, pairs.n_cols, chunk_size)


def sparse_attention_node_update(node_states, edge_states, pairs, layer: SahgtLayer,
                                 chunk_size=DEFAULT_CHUNK):
    """Per-node attention over incident hyperedges; isolated nodes get zeros."""
    q = layer.split(layer.wq(node_states))
    k = layer.split(layer.wk(edge_states))
    v = layer.split(layer.wv(edge_states))
    scores = pair_scores(q, k, pairs.rows, pairs.cols, layer.scale, chunk_size)
    alpha = segment_softmax(scores, pairs.rows, pairs.n_rows, chunk_size)
    return segment_weighted_sum(alpha, v, pairs.cols, pairs.rows, pairs.n_rows, chunk_size)


def dense_masked_attention(q: Tensor, k: Tensor, v: Tensor, mask, scale, over: str) -> Tensor:
    """Masked dense attention through one (heads, N, E) score buffer.

    ``over="nodes"`` normalizes each hyperedge column over its nodes and
    returns (E, heads, d); ``over="edges"`` normalizes each node row over its
    hyperedges and returns (N, heads, d). Empty groups yield zeros.
    """
    Q, K, V = q.data, k.data, v.data
    axis = 1 if over == "nodes" else 2
    A = np.einsum("nhd,ehd->hne", Q, K)
    note_alloc("dense_scores", A)
    A *= scale
    A[:, ~mask] = -np.inf
    top = A.max(axis=axis, keepdims=True)
    top[~np.isfinite(top)] = 0.0
    A -= top
    np.exp(A, out=A)
    denom = A.sum(axis=axis, keepdims=True)
    denom[denom == 0] = 1.0
    A /= denom
    if over == "nodes":
        out = np.einsum("hne,nhd->ehd", A, V)
    else:
        out = np.einsum("hne,ehd->nhd", A, V)

    def bw(g):
        if over == "nodes":
            dA = np.einsum("ehd,nhd->hne", g, V)
            dV = np.einsum("hne,ehd->nhd", A, g)
        else:
            dA = np.einsum("nhd,ehd->hne", g, V)
            dV = np.einsum("hne,nhd->ehd", A, g)
        dA -= (A * dA).sum(axis=axis, keepdims=True)
        dA *= A
        dQ = np.einsum("hne,ehd->nhd", dA, K) * scale
        dK = np.einsum("hne,nhd->ehd", dA, Q) * scale
        return dQ, dK, dV

    return record(out, (q, k, v), bw)


def dense_attention_edge_update(node_states, edge_states, mask, layer: SahgtLayer):
    q = layer.split(layer.wq(node_states))
    k = layer.split(layer.wk(edge_states))
    v = layer.split(layer.wv(node_states))
    return dense_masked_attention(q, k, v, mask, layer.scale, "nodes")


def dense_attention_node_update(node_states, edge_states, mask, layer: SahgtLayer):
    q = layer.split(layer.wq(node_states))
    k = layer.split(layer.wk(edge_states))
    v = layer.split(layer.wv(edge_states))
    return dense_masked_attention(q, k, v, mask, layer.scale, "edges")


def sahgt_layer(h, h_e, pairs, layer: SahgtLayer, chunk_size=DEFAULT_CHUNK, mask=None):
    """One layer; returns (next node states, refreshed hyperedge states).

    Passing a dense boolean ``mask`` switches both attention stages to the
    dense reference path.
    """
    N, E = pairs.n_rows, pairs.n_cols
    if mask is None:
        m_e = sparse_attention_edge_update(h, h_e, pairs, layer, chunk_size)
    else:
        m_e = dense_attention_edge_update(h, h_e, mask, layer)
    h_e = layer.out_edge(m_e.reshape(E, layer.hidden))
    if mask is None:
        m_v = sparse_attention_node_update(h, h_e, pairs, layer, chunk_size)
    else:
        m_v = dense_attention_node_update(h, h_e, mask, layer)
    m_v = layer.out_node(m_v.reshape(N, layer.hidden))
    h_next = layer.bn2(h + layer.ffn(layer.bn1(h + m_v)))
    return h_next, h_e


class SemanticEncoder(Module):
    def __init__(self, in_dim, hidden, heads, layers, n_types, type_dim, rng,
                 dtype=np.float32, chunk_size=DEFAULT_CHUNK):
        if layers < 1:
            raise ValueError("layers must be >= 1")
        self.hidden, self.chunk_size = hidden, chunk_size
        self.inp = Linear(in_dim, hidden, rng, dtype)
        self.type_emb = Embedding(n_types, type_dim, rng, dtype)
        self.edge_inp = Linear(type_dim, hidden, rng, dtype)
        self.layers = [SahgtLayer(hidden, heads, rng, dtype) for _ in range(layers)]
        self.out = Linear(hidden, 1, rng, dtype)

    def __call__(self, hg, X2, e_type_ids, chunk_size=None, dense=False):
        """Returns ``(z_semantic, s_semantic)``."""
        X2 = T.as_tensor(X2, self.inp.weight.dtype)
        pairs = hg.pairs
        mask = None
        if dense:
            if hg.n_nodes * hg.n_hyperedges > DENSE_GUARD:
                raise MemoryError(f"dense path refused: N*E = {hg.n_nodes * hg.n_hyperedges} "
                                  f"exceeds guard {DENSE_GUARD}")
            mask = pairs.to_dense()
        C = chunk_size or self.chunk_size
        h = self.inp(X2)
        h_e = self.edge_inp(self.type_emb(e_type_ids))
        for layer in self.layers:
            h, h_e = sahgt_layer(h, h_e, pairs, layer, C, mask)
        return h, self.out(h).reshape(hg.n_nodes)


def sem_forward(hg, X2, e_type_ids, encoder: SemanticEncoder, chunk_size=None):
    return encoder(hg, X2, e_type_ids, chunk_size)


def dense_attention_oracle(hg, X2, e_type_ids, encoder: SemanticEncoder):
    return encoder(hg, X2, e_type_ids, dense=True)
