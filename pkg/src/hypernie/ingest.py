"""Features, labels, splits and synthetic instances.

Feature files come in two flavours:

* text: first line ``N d``, then ``N`` rows of ``d`` whitespace-separated reals;
* binary: magic ``HHKF``, little-endian u64 ``N``, u64 ``d``, then ``N*d``
  little-endian float64 values in row-major order.

:func:`load_features` detects the flavour from the first four bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation.pagerank import pagerank, pagerank_from_edges
from .hhkg import DataError, Hypergraph, KnowledgeGraph, _data_lines, build_hypergraph

FEATURE_MAGIC = b"HHKF"
SPLITS = ("train", "val", "test")


@dataclass
class FeatureBundle:
    X1: np.ndarray          # structural features, N x d1
    X2: np.ndarray          # semantic features, N x d2
    e_type_ids: np.ndarray  # per-hyperedge type id
    n_types: int

    def __post_init__(self):
        for name in ("X1", "X2"):
            m = getattr(self, name)
            if m.ndim != 2 or m.shape[1] == 0:
                raise DataError(f"{name} must be a non-empty 2-D matrix, got {m.shape}")
            if not np.isfinite(m).all():
                raise DataError(f"{name} contains non-finite entries")
        if len(self.X1) != len(self.X2):
            raise DataError(f"X1 has {len(self.X1)} rows but X2 has {len(self.X2)}")
        if self.n_types < 1:
            raise DataError("need at least one hyperedge type")

    def check(self, hg: Hypergraph):
        if len(self.X1) != hg.n_nodes:
            raise DataError(f"feature rows {len(self.X1)} != n_nodes {hg.n_nodes}")
        if len(self.e_type_ids) != hg.n_hyperedges:
            raise DataError("e_type_ids must have one entry per hyperedge")


@dataclass
class LabelSet:
    node_ids: np.ndarray
    scores: np.ndarray
    split: np.ndarray   # 'train' / 'val' / 'test' per entry
    fold: np.ndarray    # 0..k_folds-1 per entry
    order: np.ndarray   # seeded permutation of entries, drives fold-local splits
    k_folds: int
    ratios: tuple = (7, 1, 2)

    def __post_init__(self):
        if np.any(self.scores < 0) or not np.isfinite(self.scores).all():
            raise DataError("importance scores must be finite and nonnegative")
        if len(np.unique(self.node_ids)) != len(self.node_ids):
            raise DataError("duplicate node ids in label set")

    def __len__(self):
        return len(self.node_ids)

    def nodes(self, split: str) -> np.ndarray:
        return self.node_ids[self.split == split]

    def fold_split(self, f: int):
        """(train, val, test) node ids for fold ``f``.

        The test part is fold ``f``; the remaining entries are divided into
        train and val with the train:val proportion of ``ratios``.
        """
        if not 0 <= f < self.k_folds:
            raise ValueError(f"fold {f} out of range 0..{self.k_folds - 1}")
        rest = [i for i in self.order if self.fold[i] != f]
        r_train, r_val, _ = self.ratios
        n_val = int(round(len(rest) * r_val / (r_train + r_val)))
        val = np.array(sorted(rest[:n_val]), dtype=np.int64)
        train = np.array(sorted(rest[n_val:]), dtype=np.int64)
        test = np.flatnonzero(self.fold == f)
        return self.node_ids[train], self.node_ids[val], self.node_ids[test]

    def canonical_split(self):
        return tuple(self.nodes(s) for s in SPLITS)

    def score_vector(self, n_nodes: int) -> np.ndarray:
        out = np.full(n_nodes, np.nan)
        out[self.node_ids] = self.scores
        return out


# feature files -----------------------------------------------------------------


def save_features(path, X, binary=True):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be a matrix")
    if binary:
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<QQ", *X.shape))
            fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{X.shape[0]} {X.shape[1]}\n")
            for row in X:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_matrix_block(fh, X):
    X = np.asarray(X, dtype=np.float64)
    fh.write(FEATURE_MAGIC)
    fh.write(struct.pack("<QQ", *X.shape))
    fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())


def read_matrix_block(fh, where="stream"):
    if fh.read(4) != FEATURE_MAGIC:
        raise DataError(f"{where}: bad matrix magic")
    header = fh.read(16)
    if len(header) != 16:
        raise DataError(f"{where}: truncated matrix header")
    n, d = struct.unpack("<QQ", header)
    raw = fh.read(8 * n * d)
    if len(raw) != 8 * n * d:
        raise DataError(f"{where}: truncated matrix body ({len(raw)} of {8 * n * d} bytes)")
    return np.frombuffer(raw, dtype="<f8").reshape(n, d).astype(np.float64)


def load_features(path, expected_rows=None) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FEATURE_MAGIC:
        with open(path, "rb") as fh:
            X = read_matrix_block(fh, str(path))
            if fh.read(1):
                raise DataError(f"{path}: trailing bytes after matrix")
        if not np.isfinite(X).all():
            bad = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise DataError(f"{path}: non-finite value in row {bad}")
    else:
        X = _load_text_features(path)
    if expected_rows is not None and len(X) != expected_rows:
        raise DataError(f"{path}: expected {expected_rows} rows, file declares {len(X)}")
    return X


def _load_text_features(path) -> np.ndarray:
    rows, shape = [], None
    for lineno, line in _data_lines(path):
        tokens = line.split()
        if shape is None:
            if len(tokens) != 2 or not all(t.isdigit() for t in tokens):
                raise DataError(f"{path}:{lineno}: header must be 'N d'")
            shape = (int(tokens[0]), int(tokens[1]))
            continue
        if len(tokens) != shape[1]:
            raise DataError(f"{path}:{lineno}: expected {shape[1]} values, got {len(tokens)}")
        try:
            vals = [float(t) for t in tokens]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric token") from None
        if not all(np.isfinite(vals)):
            raise DataError(f"{path}:{lineno}: non-finite value")
        rows.append(vals)
    if shape is None:
        raise DataError(f"{path}: empty feature file")
    if len(rows) != shape[0]:
        raise DataError(f"{path}: header declares {shape[0]} rows, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(shape)


def load_labels(path, kg: KnowledgeGraph):
    """Read ``node<TAB>score`` lines; returns (node_ids, scores)."""
    index = {name: i for i, name in enumerate(kg.node_names)}
    ids, scores = [], []
    for lineno, line in _data_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected node<TAB>score")
        name, raw = parts[0].strip(), parts[1].strip()
        if name not in index:
            raise DataError(f"{path}:{lineno}: unknown node {name!r}")
        try:
            s = float(raw)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric score {raw!r}") from None
        if not np.isfinite(s) or s < 0:
            raise DataError(f"{path}:{lineno}: score must be finite and >= 0")
        ids.append(index[name])
        scores.append(s)
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate node in label file")
    return np.array(ids, dtype=np.int64), np.array(scores, dtype=np.float64)


def write_labels(path, kg: KnowledgeGraph, node_ids, scores):
    with open(path, "w", encoding="utf-8") as fh:
        for i, s in zip(np.asarray(node_ids).tolist(), np.asarray(scores).tolist()):
            fh.write(f"{kg.node_names[i]}\t{s!r}\n")


# derived features --------------------------------------------------------------


def structural_features(kg: KnowledgeGraph, hg: Hypergraph, standardize=True) -> np.ndarray:
    """Per-node columns: log1p(degree), log1p(in), log1p(out), log1p(hyperedge
    memberships), PageRank. Columns are z-scored unless ``standardize`` is off;
    a constant column becomes all zeros.
    """
    n = kg.n_nodes
    h, t = kg.triples[:, 0], kg.triples[:, 2]
    out_deg = np.bincount(h, minlength=n).astype(np.float64)
    in_deg = np.bincount(t, minlength=n).astype(np.float64)
    member = np.bincount(hg.rows, minlength=n).astype(np.float64)
    X = np.column_stack([np.log1p(in_deg + out_deg), np.log1p(in_deg), np.log1p(out_deg),
                         np.log1p(member), pagerank(kg)])
    if standardize:
        X = X - X.mean(axis=0)
        std = X.std(axis=0)
        X = X / np.where(std > 0, std, 1.0)
    return X


def make_features(kg, hg, X2) -> FeatureBundle:
    return FeatureBundle(structural_features(kg, hg), np.asarray(X2, dtype=np.float64),
                         hg.type_ids.copy(), hg.n_types)


def make_splits(node_ids, scores, ratios=(7, 1, 2), k_folds=3, seed=0) -> LabelSet:
    """Seeded canonical split at ``ratios`` plus a balanced ``k_folds`` partition."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n = len(node_ids)
    if n < max(k_folds, 1) or n < 1:
        raise DataError(f"need at least {k_folds} labeled nodes, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    total = float(sum(ratios))
    n_train = int(round(n * ratios[0] / total))
    n_val = int(round(n * ratios[1] / total))
    split = np.empty(n, dtype=object)
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    fold = np.empty(n, dtype=np.int64)
    fold[order] = np.arange(n) % k_folds
    return LabelSet(node_ids, scores, split.astype(str), fold, order, k_folds, tuple(ratios))


# synthetic instances -----------------------------------------------------------


def bipartite_pagerank(kg: KnowledgeGraph, damping=0.85) -> np.ndarray:
    """PageRank on the undirected expansion of the triples."""
    h, t = kg.triples[:, 0], kg.triples[:, 2]
    return pagerank_from_edges(kg.n_nodes, np.concatenate([h, t]), np.concatenate([t, h]),
                               damping)


def gen_synthetic(n_users, n_items, n_relations, avg_degree=5.0, seed=0, d_semantic=16,
                  noise=0.1, grouping="relation_item"):
    """Random user -> item knowledge graph with ground-truth importance.

    Item popularity follows a power law. Labels are the bipartite PageRank
    times log-normal noise (``sigma = noise``) on every node that appears in
    a triple. ``X2`` mixes the clean log-label signal into a low-rank random
    projection plus isotropic noise.
    """
    if min(n_users, n_items, n_relations) < 1:
        raise ValueError("all counts must be >= 1")
    rng = np.random.default_rng(seed)
    pop = 1.0 / np.arange(1, n_items + 1) ** 1.1
    pop = pop[rng.permutation(n_items)]
    pop /= pop.sum()
    triples = []
    for u in range(n_users):
        deg = min(n_items, 1 + rng.poisson(max(avg_degree - 1.0, 0.0)))
        items = rng.choice(n_items, size=deg, replace=False, p=pop)
        rels = rng.integers(0, n_relations, size=deg)
        triples.extend((u, int(r), n_users + int(i)) for i, r in zip(items, rels))
    names = [f"u{i}" for i in range(n_users)] + [f"i{j}" for j in range(n_items)]
    types = np.r_[np.zeros(n_users, dtype=np.int64), np.ones(n_items, dtype=np.int64)]
    kg = KnowledgeGraph.from_triples(triples, len(names), n_relations, types, names,
                                     [f"r{k}" for k in range(n_relations)])
    hg = build_hypergraph(kg, grouping)

    clean = bipartite_pagerank(kg)
    labeled = np.flatnonzero(np.bincount(kg.triples[:, [0, 2]].ravel(), minlength=kg.n_nodes))
    scores = clean[labeled] * np.exp(noise * rng.standard_normal(len(labeled)))

    signal = np.log(clean)
    signal = (signal - signal.mean()) / (signal.std() or 1.0)
    rank = 3
    X2 = (np.outer(signal, rng.standard_normal(d_semantic))
          + rng.standard_normal((kg.n_nodes, rank)) @ rng.standard_normal((rank, d_semantic))
          + 0.5 * rng.standard_normal((kg.n_nodes, d_semantic)))
    features = make_features(kg, hg, X2)
    labels = make_splits(labeled, scores, seed=seed)
    return kg, features, labels
