"""Segment reductions over coordinate-list incidence, streamed in chunks.

All kernels walk the coordinate list in fixed-size chunks and reduce into
per-segment accumulators with ``np.add.at`` / ``np.maximum.at``. Those
ufunc methods apply updates strictly in entry order, so the result of every
reduction is bit-identical for any chunk size.

Transient memory is bounded by the chunk: nothing here ever allocates an
``n_rows x n_cols`` array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .memory import note_alloc
from .tensor import Tensor, record


@dataclass(frozen=True)
class CooPairs:
    """(row, col) incidence entries sorted by (col, row), no duplicates."""

    rows: np.ndarray
    cols: np.ndarray
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.rows.shape != self.cols.shape:
            raise ValueError("rows and cols must be aligned")
        if len(self.rows):
            key = self.cols.astype(np.int64) * max(self.n_rows, 1) + self.rows
            if np.any(np.diff(key) <= 0):
                raise ValueError("CooPairs entries must be strictly sorted by (col, row)")
            if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
                raise ValueError("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
                raise ValueError("col index out of range")

    @classmethod
    def from_unsorted(cls, rows, cols, n_rows, n_cols):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        key = np.unique(cols * max(n_rows, 1) + rows)
        return cls(key % max(n_rows, 1), key // max(n_rows, 1), n_rows, n_cols)

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), dtype=bool)
        out[self.rows, self.cols] = True
        return out


def iter_chunks(n: int, chunk_size: int):
    if chunk_size < 1:
        raise ValueError(f"chunk size must be >= 1, got {chunk_size}")
    for start in range(0, n, chunk_size):
        yield slice(start, min(start + chunk_size, n))


def n_chunks(n: int, chunk_size: int) -> int:
    return -(-n // chunk_size) if n else 0


def chunked_map_reduce(n_entries, chunk_size, fn, segment_ids, n_segments,
                       reduce="sum", out_shape=(), dtype=np.float64):
    """Stream ``fn(chunk_slice)`` over entries and reduce per segment.

    ``fn`` returns the per-entry values for one chunk; ``reduce`` is ``"sum"``
    or ``"max"``. Returns ``(result, chunks_processed)``.
    """
    if reduce == "sum":
        out = np.zeros((n_segments,) + tuple(out_shape), dtype=dtype)
        op = np.add
    elif reduce == "max":
        out = np.full((n_segments,) + tuple(out_shape), -np.inf, dtype=dtype)
        op = np.maximum
    else:
        raise ValueError(f"unknown reduction {reduce!r}")
    count = 0
    for sl in iter_chunks(n_entries, chunk_size):
        op.at(out, segment_ids[sl], fn(sl))
        count += 1
    return out, count


def scatter_softmax(values, segment_ids, n_segments, chunk_size=None):
    """Softmax of ``values`` within each segment (numpy in, numpy out).

    Two streaming passes: per-segment max, then exp-sum; a final in-place
    division normalizes. Segments with no entries produce no outputs.
    """
    values = np.asarray(values)
    segment_ids = np.asarray(segment_ids)
    nnz = len(values)
    C = chunk_size or max(nnz, 1)
    tail = values.shape[1:]
    seg_max, _ = chunked_map_reduce(nnz, C, lambda sl: values[sl], segment_ids,
                                    n_segments, "max", tail, values.dtype)
    out = np.empty_like(values)
    denom = np.zeros((n_segments,) + tail, dtype=values.dtype)
    for sl in iter_chunks(nnz, C):
        e = np.exp(values[sl] - seg_max[segment_ids[sl]])
        np.add.at(denom, segment_ids[sl], e)
        out[sl] = e
    for sl in iter_chunks(nnz, C):
        out[sl] /= denom[segment_ids[sl]]
    return out


def _segment_dot(a, b, segment_ids, n_segments, chunk_size):
    """Per-segment sum of elementwise products of aligned entry arrays."""
    acc, _ = chunked_map_reduce(len(a), chunk_size, lambda sl: a[sl] * b[sl],
                                segment_ids, n_segments, "sum", a.shape[1:], a.dtype)
    return acc


# tape ops ------------------------------------------------------------------


def segment_softmax(x: Tensor, segment_ids, n_segments: int, chunk_size=None) -> Tensor:
    segment_ids = np.asarray(segment_ids)
    C = chunk_size or max(len(segment_ids), 1)
    alpha = scatter_softmax(x.data, segment_ids, n_segments, C)

    def bw(g):
        inner = _segment_dot(alpha, g, segment_ids, n_segments, C)
        out = np.empty_like(g)
        for sl in iter_chunks(len(g), C):
            out[sl] = alpha[sl] * (g[sl] - inner[segment_ids[sl]])
        return (out,)

    return record(alpha, (x,), bw)


def pair_scores(q: Tensor, k: Tensor, q_index, k_index, scale: float, chunk_size=None) -> Tensor:
    """``out[j, h] = scale * <q[q_index[j], h, :], k[k_index[j], h, :]>``.

    ``q`` and ``k`` are (rows, heads, width); only nnz scores are formed.
    """
    qd, kd = q.data, k.data
    scale = float(scale)
    q_index = np.asarray(q_index)
    k_index = np.asarray(k_index)
    nnz = len(q_index)
    C = chunk_size or max(nnz, 1)
    out = np.empty((nnz, qd.shape[1]), dtype=qd.dtype)
    note_alloc("pair_scores", out)
    for sl in iter_chunks(nnz, C):
        np.einsum("nhd,nhd->nh", qd[q_index[sl]], kd[k_index[sl]], out=out[sl])
        out[sl] *= scale

    def bw(g):
        gq = np.zeros_like(qd)
        gk = np.zeros_like(kd)
        for sl in iter_chunks(nnz, C):
            w = (g[sl] * scale)[:, :, None]
            np.add.at(gq, q_index[sl], w * kd[k_index[sl]])
            np.add.at(gk, k_index[sl], w * qd[q_index[sl]])
        return gq, gk

    return record(out, (q, k), bw)


def segment_weighted_sum(alpha: Tensor, x: Tensor, src_index, segment_ids, n_segments: int,
                         chunk_size=None) -> Tensor:
    """``out[seg[j], h, :] += alpha[j, h] * x[src[j], h, :]`` streamed in chunks.

    ``alpha`` is (nnz, heads), ``x`` is (rows, heads, width).
    """
    ad, xd = alpha.data, x.data
    src_index = np.asarray(src_index)
    segment_ids = np.asarray(segment_ids)
    nnz = len(src_index)
    C = chunk_size or max(nnz, 1)
    def weighted(sl):
        rows = xd[src_index[sl]]
        rows *= ad[sl][:, :, None]
        return rows

    out, _ = chunked_map_reduce(nnz, C, weighted, segment_ids, n_segments, "sum",
                                xd.shape[1:], xd.dtype)

    def bw(g):
        ga = np.empty_like(ad)
        gx = np.zeros_like(xd)
        for sl in iter_chunks(nnz, C):
            gs = g[segment_ids[sl]]
            ga[sl] = np.einsum("nhd,nhd->nh", gs, xd[src_index[sl]])
            np.add.at(gx, src_index[sl], ad[sl][:, :, None] * gs)
        return ga, gx

    return record(out, (alpha, x), bw)
