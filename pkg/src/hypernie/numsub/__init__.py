"""Numerical substrate: reverse-mode tape, dense kernels, segment ops."""

from .gradcheck import grad_check
from .memory import alloc_log, measure_peak, note_alloc
from .nn import (BatchNorm, Embedding, LayerNorm, Linear, Module, Parameter, dropout, gelu,
                 layer_norm, leaky_relu, matmul)
from .optim import Adam, adam_step
from .segment import (CooPairs, chunked_map_reduce, iter_chunks, n_chunks, pair_scores,
                      scatter_softmax, segment_softmax, segment_weighted_sum)
from .tensor import Tensor, as_tensor, no_grad

__all__ = [
    "Adam", "BatchNorm", "CooPairs", "Embedding", "LayerNorm", "Linear", "Module", "Parameter",
    "Tensor", "adam_step", "alloc_log", "as_tensor", "chunked_map_reduce", "dropout", "gelu",
    "grad_check", "iter_chunks", "layer_norm", "leaky_relu", "matmul", "measure_peak",
    "n_chunks", "no_grad", "note_alloc", "pair_scores", "scatter_softmax", "segment_softmax",
    "segment_weighted_sum",
]
