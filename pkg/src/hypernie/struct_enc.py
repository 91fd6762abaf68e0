"""Structural channel: multi-head hypergraph attention over the HHKG.

Node states are held as ``(N, heads, width)`` tensors. One layer runs

1. node -> hyperedge attention: every hyperedge attends over its incident
   nodes with logits ``LeakyReLU(a . [s(i) || phi(p_e) || s_prev(e)])``;
2. hyperedge -> node attention: every node attends over its incident
   hyperedges with ``LeakyReLU(a . [s(e) || phi(p_e) || s_prev(i)])``;
3. ``s_next = LayerNorm(attended + FFN(s_prev))``.

The predicate ``p_e`` is the hyperedge's type id; ``phi`` embeds it and maps
it to the head width. Layer-0 hyperedge states are the mean of their
incident nodes' initial states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numsub import tensor as T
from .numsub.nn import Embedding, LayerNorm, Linear, Module, Parameter, dropout, xavier_uniform
from .numsub.segment import segment_softmax, segment_weighted_sum
from .numsub.tensor import Tensor


@dataclass
class StructOutput:
    z_struct: Tensor   # N x width, head-averaged final states
    s_struct: Tensor   # N importance logits
    attention: list = field(default_factory=list)  # (alpha_node_to_edge, alpha_edge_to_node) per layer


def _head_dot(states: Tensor, vec: Tensor) -> Tensor:
    """(rows, heads, width) . (heads, width) -> (rows, heads)."""
    return (states * vec).sum(axis=-1)


def _predicate_logits(phi_e: Tensor, vec: Tensor) -> Tensor:
    """(E, width) . (heads, width) -> (E, heads)."""
    return T.matmul(phi_e, vec.T)


def node_to_edge(s_nodes, s_edges_prev, phi_e, hg, att, slope=0.2, drop=0.0, rng=None,
                 training=False):
    """Aggregate node states into hyperedges; returns (edge states, alpha)."""
    rows, cols = hg.rows, hg.cols
    logits = (T.gather(_head_dot(s_nodes, att[:, 0]), rows)
              + T.gather(_predicate_logits(phi_e, att[:, 1]) + _head_dot(s_edges_prev, att[:, 2]),
                         cols))
    alpha = segment_softmax(T.leaky_relu(logits, slope), cols, hg.n_hyperedges)
    weights = dropout(alpha, drop, rng, training) if rng is not None else alpha
    return segment_weighted_sum(weights, s_nodes, rows, cols, hg.n_hyperedges), alpha


def edge_to_node(s_edges, s_nodes_prev, phi_e, hg, att, slope=0.2, drop=0.0, rng=None,
                 training=False):
    """Aggregate hyperedge states back into nodes; isolated nodes get zeros."""
    rows, cols = hg.rows, hg.cols
    logits = (T.gather(_head_dot(s_edges, att[:, 0]) + _predicate_logits(phi_e, att[:, 1]), cols)
              + T.gather(_head_dot(s_nodes_prev, att[:, 2]), rows))
    alpha = segment_softmax(T.leaky_relu(logits, slope), rows, hg.n_nodes)
    weights = dropout(alpha, drop, rng, training) if rng is not None else alpha
    return segment_weighted_sum(weights, s_edges, cols, rows, hg.n_nodes), alpha


class HgatLayer(Module):
    def __init__(self, heads, width, type_dim, rng, dtype=np.float32, ffn_on_attended=False):
        self.heads, self.width = heads, width
        # a_{h,l} split into its three concatenation slots
        self.att = Parameter(xavier_uniform(rng, 3 * width, 1, dtype, shape=(heads, 3, width)))
        self.phi = Linear(type_dim, width, rng, dtype)
        H = heads * width
        self.ffn1 = Linear(H, H, rng, dtype)
        self.ffn2 = Linear(H, H, rng, dtype)
        self.norm = LayerNorm(H, dtype)
        self.ffn_on_attended = ffn_on_attended

    def ffn(self, x):
        return self.ffn2(T.gelu(self.ffn1(x)))

    def __call__(self, s_prev, e_prev, type_feats, hg, drop=0.0, rng=None):
        phi_e = self.phi(type_feats)
        s_e, a_ne = node_to_edge(s_prev, e_prev, phi_e, hg, self.att, drop=drop, rng=rng,
                                 training=self.training)
        s_att, a_en = edge_to_node(s_e, s_prev, phi_e, hg, self.att, drop=drop, rng=rng,
                                   training=self.training)
        N, H = hg.n_nodes, self.heads * self.width
        att_flat = s_att.reshape(N, H)
        ffn_in = att_flat if self.ffn_on_attended else s_prev.reshape(N, H)
        s_next = self.norm(att_flat + self.ffn(ffn_in)).reshape(N, self.heads, self.width)
        return s_next, s_e, (a_ne, a_en)


def hgat_layer(s_prev, e_prev, hg, e_type_ids, layer: HgatLayer, type_table, drop=0.0, rng=None):
    """Functional form of one layer: returns (node states, edge states)."""
    s_next, s_e, _ = layer(s_prev, e_prev, type_table(e_type_ids), hg, drop, rng)
    return s_next, s_e


def mean_pool_edges(s_nodes, hg):
    """Mean of incident node states per hyperedge."""
    sizes = hg.edge_sizes()
    w = np.repeat(1.0 / sizes, sizes).astype(s_nodes.dtype)
    w = np.broadcast_to(w[:, None], (hg.nnz, s_nodes.shape[1])).copy()
    return segment_weighted_sum(Tensor(w), s_nodes, hg.rows, hg.cols, hg.n_hyperedges)


class StructuralEncoder(Module):
    def __init__(self, in_dim, hidden, heads, layers, n_types, type_dim, rng,
                 dtype=np.float32, dropout=0.3, ffn_on_attended=False):
        if heads < 1 or layers < 1:
            raise ValueError("heads and layers must be >= 1")
        self.heads, self.hidden, self.dropout = heads, hidden, dropout
        self.hsa = Linear(in_dim, heads * hidden, rng, dtype)
        self.type_emb = Embedding(n_types, type_dim, rng, dtype)
        self.layers = [HgatLayer(heads, hidden, type_dim, rng, dtype, ffn_on_attended)
                       for _ in range(layers)]
        self.out = Linear(hidden, 1, rng, dtype)

    def init_heads(self, X1) -> Tensor:
        """Per-head affine maps of the input features, concatenated: (N, heads*hidden)."""
        return self.hsa(X1)

    def __call__(self, hg, X1, e_type_ids, rng=None) -> StructOutput:
        X1 = T.as_tensor(X1, self.hsa.weight.dtype)
        N = hg.n_nodes
        s = self.init_heads(X1).reshape(N, self.heads, self.hidden)
        e = mean_pool_edges(s, hg)
        type_feats = self.type_emb(e_type_ids)
        attention = []
        for layer in self.layers:
            s, e, alphas = layer(s, e, type_feats, hg, self.dropout, rng)
            attention.append(alphas)
        z = s.mean(axis=1)
        return StructOutput(z, self.out(z).reshape(N), attention)


def struct_forward(hg, X1, e_type_ids, encoder: StructuralEncoder, rng=None) -> StructOutput:
    return encoder(hg, X1, e_type_ids, rng)
