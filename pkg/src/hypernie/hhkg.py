"""Knowledge-graph storage and higher-order hypergraph construction.

A triple ``(u, r, i)`` reads "head ``u`` is linked to tail item ``i`` by
relation ``r``". Two groupings are supported:

``relation``
    one hyperedge per relation: every head and tail of that relation.
``relation_item``
    one hyperedge per (relation, tail item): the item plus every head linked
    to it through that relation.

Each hyperedge is typed by the sorted set of relations observed between any
two of its members, and each distinct type tuple gets a dense id.
"""

from __future__ import annotations

import io
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numsub.segment import CooPairs

log = logging.getLogger(__name__)

GROUPINGS = ("relation", "relation_item")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class KnowledgeGraph:
    node_names: list
    node_types: np.ndarray
    relation_names: list
    triples: np.ndarray  # (M, 3) int64: head, relation, tail

    def __post_init__(self):
        self.node_types = np.asarray(self.node_types, dtype=np.int64)
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        if len(self.node_types) != len(self.node_names):
            raise DataError("node_types must align with node_names")
        if len(self.triples):
            h, r, t = self.triples.T
            if min(h.min(), t.min()) < 0 or max(h.max(), t.max()) >= self.n_nodes:
                raise DataError("triple references an unknown node id")
            if r.min() < 0 or r.max() >= self.n_relations:
                raise DataError("triple references an unknown relation id")

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @classmethod
    def from_triples(cls, triples, n_nodes=None, n_relations=None, node_types=None,
                     node_names=None, relation_names=None):
        """Build from integer triples, dropping duplicate (h, r, t) rows."""
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if len(arr):
            arr = np.unique(arr, axis=0)
        if n_nodes is None:
            n_nodes = int(max(arr[:, 0].max(), arr[:, 2].max()) + 1) if len(arr) else 0
        if n_relations is None:
            n_relations = int(arr[:, 1].max() + 1) if len(arr) else 0
        node_names = node_names or [str(i) for i in range(n_nodes)]
        relation_names = relation_names or [str(i) for i in range(n_relations)]
        if node_types is None:
            node_types = np.zeros(n_nodes, dtype=np.int64)
        return cls(list(node_names), node_types, list(relation_names), arr)


@dataclass
class Hypergraph:
    n_nodes: int
    n_hyperedges: int
    rows: np.ndarray       # node id per incidence entry, sorted by (edge, node)
    cols: np.ndarray       # hyperedge id per incidence entry
    type_tuples: list      # type id -> sorted relation tuple
    type_ids: np.ndarray   # hyperedge id -> type id
    grouping: str = "relation_item"
    dropped: int = 0
    keys: list = field(default_factory=list)  # (relation, item) or (relation,) per hyperedge

    @property
    def nnz(self) -> int:
        return len(self.rows)

    @property
    def n_types(self) -> int:
        return len(self.type_tuples)

    @property
    def pairs(self) -> CooPairs:
        return CooPairs(self.rows, self.cols, self.n_nodes, self.n_hyperedges)

    def edge_tuple(self, e: int) -> tuple:
        return self.type_tuples[self.type_ids[e]]

    def edge_nodes(self, e: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.cols, [e, e + 1])
        return self.rows[lo:hi]

    def node_edges(self) -> list:
        out = [[] for _ in range(self.n_nodes)]
        for v, e in zip(self.rows.tolist(), self.cols.tolist()):
            out[v].append(e)
        return out

    def edge_sizes(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.n_hyperedges)

    def node_degrees(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.n_nodes)


def build_hypergraph(kg: KnowledgeGraph, grouping: str = "relation_item") -> Hypergraph:
    """Group triples into hyperedges and assign hyperedge type ids."""
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")
    if len(kg.triples) == 0:
        raise DataError("empty graph")

    order = np.lexsort((kg.triples[:, 2], kg.triples[:, 0], kg.triples[:, 1]))
    members = defaultdict(set)
    for h, r, t in kg.triples[order].tolist():
        key = (r,) if grouping == "relation" else (r, t)
        members[key].update((h, t))

    keys, edge_sets, dropped = [], [], 0
    for key in sorted(members):
        nodes = members[key]
        if len(nodes) < 2:
            dropped += 1
            continue
        keys.append(key)
        edge_sets.append(np.fromiter(sorted(nodes), dtype=np.int64, count=len(nodes)))
    if dropped:
        log.warning("dropped %d single-node hyperedge(s)", dropped)
    if not edge_sets:
        raise DataError("empty graph: every hyperedge collapsed to a single node")

    cols = np.repeat(np.arange(len(edge_sets), dtype=np.int64), [len(s) for s in edge_sets])
    rows = np.concatenate(edge_sets)

    tuples = _edge_type_tuples(kg, rows, cols, len(edge_sets), kg.n_nodes)
    type_of, type_tuples = {}, []
    type_ids = np.empty(len(edge_sets), dtype=np.int64)
    for e, tup in enumerate(tuples):
        if tup not in type_of:
            type_of[tup] = len(type_tuples)
            type_tuples.append(tup)
        type_ids[e] = type_of[tup]

    return Hypergraph(kg.n_nodes, len(edge_sets), rows, cols, type_tuples, type_ids,
                      grouping, dropped, keys)


def _edge_type_tuples(kg, rows, cols, n_edges, n_nodes):
    """For every hyperedge, relations of triples with head and tail inside it."""
    node_edges = [[] for _ in range(n_nodes)]
    for v, e in zip(rows.tolist(), cols.tolist()):
        node_edges[v].append(e)
    node_edge_sets = [frozenset(x) for x in node_edges]
    found = [set() for _ in range(n_edges)]
    for h, r, t in kg.triples.tolist():
        a, b = node_edge_sets[h], node_edge_sets[t]
        if len(b) < len(a):
            a, b = b, a
        for e in a:
            if e in b:
                found[e].add(r)
    return [tuple(sorted(s)) for s in found]


def hyperedge_type_tuple(e: int, kg: KnowledgeGraph, hg: Hypergraph) -> tuple:
    """Sorted, deduplicated relation ids among triples inside hyperedge ``e``."""
    inside = np.zeros(kg.n_nodes, dtype=bool)
    inside[hg.edge_nodes(e)] = True
    h, r, t = kg.triples.T
    return tuple(sorted(set(r[inside[h] & inside[t]].tolist())))


def hypergraph_stats(hg: Hypergraph) -> dict:
    if hg.n_hyperedges == 0:
        raise DataError("empty graph")
    return {
        "n_nodes": hg.n_nodes,
        "n_hyperedges": hg.n_hyperedges,
        "nnz": hg.nnz,
        "max_edge_size": int(hg.edge_sizes().max()),
        "density": hg.nnz / (hg.n_nodes * hg.n_hyperedges),
        "n_types": hg.n_types,
        "dropped": hg.dropped,
    }


# text ingestion --------------------------------------------------------------


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def read_triples(paths, node_types_path=None) -> KnowledgeGraph:
    """Parse ``head<TAB>relation<TAB>tail`` files into a :class:`KnowledgeGraph`.

    Node and relation ids are assigned in first-seen order across ``paths``.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    node_ids, rel_ids, triples = {}, {}, []
    for path in paths:
        for lineno, line in _data_lines(path):
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise DataError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail")
            h, r, t = (p.strip() for p in parts)
            hi = node_ids.setdefault(h, len(node_ids))
            ri = rel_ids.setdefault(r, len(rel_ids))
            ti = node_ids.setdefault(t, len(node_ids))
            triples.append((hi, ri, ti))
    types = np.zeros(len(node_ids), dtype=np.int64)
    if node_types_path is not None:
        type_vocab = {}
        for lineno, line in _data_lines(node_types_path):
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{node_types_path}:{lineno}: expected node<TAB>type")
            name, tag = parts[0].strip(), parts[1].strip()
            if name not in node_ids:
                node_ids[name] = len(node_ids)
                types = np.append(types, 0)
            if tag.lstrip("-").isdigit():
                tid = int(tag)
            else:
                tid = type_vocab.setdefault(tag, len(type_vocab))
            types[node_ids[name]] = tid
    return KnowledgeGraph.from_triples(
        triples, n_nodes=len(node_ids), n_relations=len(rel_ids), node_types=types,
        node_names=list(node_ids), relation_names=list(rel_ids))


def write_triples(kg: KnowledgeGraph, path, node_types_path=None):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triples.tolist():
            fh.write(f"{kg.node_names[h]}\t{kg.relation_names[r]}\t{kg.node_names[t]}\n")
    if node_types_path is not None:
        with open(node_types_path, "w", encoding="utf-8") as fh:
            for name, tag in zip(kg.node_names, kg.node_types.tolist()):
                fh.write(f"{name}\t{tag}\n")


# binary container --------------------------------------------------------------
#
#   magic   b"HHKG", u32 version (=1)
#   u64 len + utf-8 JSON-free header text: "grouping=<g>\tdropped=<n>\n"
#   strings block: node names, relation names (u64 count, then u64 len + utf-8 each)
#   i64 arrays (u64 length prefix): node_types, triples (flattened), rows, cols, type_ids
#   type tuples: u64 count, then per tuple u64 len + i64 relation ids
#   config echo: u64 len + utf-8 text
#
# All integers little-endian.

HG_MAGIC = b"HHKG"


def _w_u64(fh, n):
    fh.write(struct.pack("<Q", n))


def _w_str(fh, s):
    b = s.encode("utf-8")
    _w_u64(fh, len(b))
    fh.write(b)


def _w_arr(fh, a):
    a = np.ascontiguousarray(a, dtype="<i8").reshape(-1)
    _w_u64(fh, len(a))
    fh.write(a.tobytes())


def _r_u64(fh):
    raw = fh.read(8)
    if len(raw) != 8:
        raise DataError("truncated hypergraph file")
    return struct.unpack("<Q", raw)[0]


def _r_str(fh):
    n = _r_u64(fh)
    return fh.read(n).decode("utf-8")


def _r_arr(fh):
    n = _r_u64(fh)
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise DataError("truncated hypergraph file")
    return np.frombuffer(raw, dtype="<i8").astype(np.int64)


def save_hypergraph(path, kg: KnowledgeGraph, hg: Hypergraph, config_echo: str = ""):
    buf = io.BytesIO()
    buf.write(HG_MAGIC)
    buf.write(struct.pack("<I", 1))
    _w_str(buf, f"grouping={hg.grouping}\tdropped={hg.dropped}\n")
    for names in (kg.node_names, kg.relation_names):
        _w_u64(buf, len(names))
        for s in names:
            _w_str(buf, s)
    for arr in (kg.node_types, kg.triples, hg.rows, hg.cols, hg.type_ids):
        _w_arr(buf, arr)
    _w_u64(buf, len(hg.type_tuples))
    for tup in hg.type_tuples:
        _w_arr(buf, np.asarray(tup, dtype=np.int64))
    _w_str(buf, config_echo)
    Path(path).write_bytes(buf.getvalue())


def load_hypergraph(path):
    """Return ``(kg, hg, config_echo)`` from a container written by :func:`save_hypergraph`."""
    with open(path, "rb") as fh:
        if fh.read(4) != HG_MAGIC:
            raise DataError(f"{path}: not a hypergraph file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise DataError(f"{path}: unsupported version {version}")
        header = dict(kv.split("=", 1) for kv in _r_str(fh).strip().split("\t"))
        names = []
        for _ in range(2):
            names.append([_r_str(fh) for _ in range(_r_u64(fh))])
        node_types, triples, rows, cols, type_ids = (_r_arr(fh) for _ in range(5))
        type_tuples = [tuple(_r_arr(fh).tolist()) for _ in range(_r_u64(fh))]
        echo = _r_str(fh)
    kg = KnowledgeGraph(names[0], node_types, names[1], triples.reshape(-1, 3))
    hg = Hypergraph(kg.n_nodes, len(type_ids), rows, cols, type_tuples, type_ids,
                    header["grouping"], int(header["dropped"]))
    return kg, hg, echo
