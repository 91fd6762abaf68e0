"""Sparse vs dense attention benchmarks and chunk-size sweeps.

Peak memory is measured on the host with ``tracemalloc`` (bytes allocated
above the baseline while the measured call runs). It stands in for the
device-memory columns one would collect on a GPU, and every report labels
it as ``peak_bytes_host``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..hhkg import Hypergraph
from ..numsub.memory import measure_peak
from ..numsub.tensor import Tensor, no_grad
from ..sem_enc import (DENSE_GUARD, SemanticEncoder, dense_attention_edge_update,
                       dense_attention_node_update, sparse_attention_edge_update,
                       sparse_attention_node_update)


def random_hypergraph(n_nodes, n_edges, density, seed=0) -> Hypergraph:
    """Bernoulli incidence with every hyperedge holding at least two nodes."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_nodes, n_edges)) < density
    for e in range(n_edges):
        short = 2 - int(mask[:, e].sum())
        if short > 0:
            free = np.flatnonzero(~mask[:, e])
            mask[rng.choice(free, short, replace=False), e] = True
    cols, rows = np.nonzero(mask.T)
    n_types = max(1, min(4, n_edges))
    type_ids = np.arange(n_edges) % n_types
    return Hypergraph(n_nodes, n_edges, rows.astype(np.int64), cols.astype(np.int64),
                      [(t,) for t in range(n_types)], type_ids.astype(np.int64), "random")


def attention_stage(hg, encoder: SemanticEncoder, X2, e_type_ids, dense=False, chunk_size=None):
    """Run layer 0's two attention stages once under ``no_grad``; returns the messages."""
    layer = encoder.layers[0]
    with no_grad():
        h = encoder.inp(Tensor(np.asarray(X2, dtype=layer.wq.weight.dtype)))
        h_e = encoder.edge_inp(encoder.type_emb(e_type_ids))
    pairs = hg.pairs
    mask = pairs.to_dense() if dense else None
    C = chunk_size or encoder.chunk_size

    def run():
        with no_grad():
            if dense:
                m_e = dense_attention_edge_update(h, h_e, mask, layer)
                m_v = dense_attention_node_update(h, h_e, mask, layer)
            else:
                m_e = sparse_attention_edge_update(h, h_e, pairs, layer, C)
                m_v = sparse_attention_node_update(h, h_e, pairs, layer, C)
        return m_e.data, m_v.data

    return run


def _forward_backward(hg, encoder, X2, e_type_ids, dense, chunk_size):
    encoder.train()
    z, s = encoder(hg, X2, e_type_ids, chunk_size=chunk_size, dense=dense)
    loss = (s * s).mean() + (z * z).mean()
    encoder.zero_grad()
    loss.backward()
    return z.data.copy(), s.data.copy()


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    shape: dict = field(default_factory=dict)

    def sweep(self):
        return [r for r in self.rows if r["mode"] == "sparse_sweep"]

    def to_tsv(self, config_echo="") -> str:
        lines = ["# peak_bytes_host: tracemalloc peak above baseline (host proxy for device memory)"]
        lines += [f"# shape\t{k}={v}" for k, v in self.shape.items()]
        lines += [f"# config\t{ln}" for ln in config_echo.splitlines() if ln.strip()]
        lines += [f"# note\t{n}" for n in self.notes]
        lines.append("mode\tchunk_size\ttime_seconds\tpeak_bytes_host\tmax_abs_delta")
        for r in self.rows:
            lines.append(f"{r['mode']}\t{r['chunk_size']}\t{r['time_seconds']:.6f}\t"
                         f"{r['peak_bytes']}\t{r['max_abs_delta']:.3e}")
        return "\n".join(lines) + "\n"

    def series_tsv(self) -> str:
        return "".join(f"{r['chunk_size']}\t{r['time_seconds']:.6f}\t{r['peak_bytes']}\n"
                       for r in self.sweep())


def bench(hg, features, encoder: SemanticEncoder, modes=("dense", "sparse"),
          chunk_sweep=(10, 100, 1000), repeats=3) -> BenchReport:
    """Time forward+backward of the semantic channel and record peak host bytes.

    Dense mode is skipped with a note when ``N * E`` exceeds the guard.
    Deltas are max-abs differences of the semantic logits against the
    sparse run at the encoder's default chunk size.
    """
    X2, type_ids = features.X2, features.e_type_ids
    report = BenchReport(shape={"n_nodes": hg.n_nodes, "n_hyperedges": hg.n_hyperedges,
                                "nnz": hg.nnz, "density": hg.nnz / (hg.n_nodes * hg.n_hyperedges)})
    state = encoder.state_dict()

    def measure(dense, C):
        encoder.load_state_dict(state)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            z, s = _forward_backward(hg, encoder, X2, type_ids, dense, C)
            times.append(time.perf_counter() - t0)
        encoder.load_state_dict(state)
        _, peak = measure_peak(_forward_backward, hg, encoder, X2, type_ids, dense, C)
        encoder.load_state_dict(state)
        return min(times), peak, s

    _, _, ref = measure(False, None)
    for mode in modes:
        if mode == "dense":
            if hg.n_nodes * hg.n_hyperedges > DENSE_GUARD:
                report.notes.append(f"dense skipped: N*E={hg.n_nodes * hg.n_hyperedges} "
                                    f"> guard {DENSE_GUARD}")
                continue
            t, peak, s = measure(True, None)
        elif mode == "sparse":
            t, peak, s = measure(False, None)
        else:
            raise ValueError(f"unknown bench mode {mode!r}")
        report.rows.append({"mode": mode, "chunk_size": encoder.chunk_size if mode == "sparse"
                            else hg.nnz, "time_seconds": t, "peak_bytes": peak,
                            "max_abs_delta": float(np.abs(s - ref).max())})
    for C in chunk_sweep:
        t, peak, s = measure(False, int(C))
        report.rows.append({"mode": "sparse_sweep", "chunk_size": int(C), "time_seconds": t,
                            "peak_bytes": peak, "max_abs_delta": float(np.abs(s - ref).max())})
    return report
