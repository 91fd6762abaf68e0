import numpy as np
import pytest

from hypernie.hhkg import KnowledgeGraph, build_hypergraph
from hypernie.ingest import gen_synthetic


def tiny_kg():
    """u1 -r1-> i1, u2 -r1-> i1, u1 -r2-> i2 over nodes (u1, u2, i1, i2)."""
    return KnowledgeGraph.from_triples(
        [(0, 0, 2), (1, 0, 2), (0, 1, 3)], n_nodes=4, n_relations=2,
        node_types=[0, 0, 1, 1], node_names=["u1", "u2", "i1", "i2"],
        relation_names=["r1", "r2"])


def random_hypergraph_instance(seed, n_nodes=None, n_edges=None, density=None):
    from hypernie.evaluation.bench import random_hypergraph
    rng = np.random.default_rng(seed)
    n_nodes = n_nodes or int(rng.integers(4, 65))
    n_edges = n_edges or int(rng.integers(2, 33))
    density = density or float(rng.uniform(0.05, 0.5))
    return random_hypergraph(n_nodes, n_edges, density, seed)


@pytest.fixture
def tiny():
    kg = tiny_kg()
    return kg, build_hypergraph(kg, "relation")


@pytest.fixture(scope="session")
def small_synth():
    """12-node synthetic instance used by the gradient and training checks."""
    return gen_synthetic(8, 4, 2, avg_degree=2, seed=1)


@pytest.fixture(scope="session")
def mid_synth():
    kg, features, labels = gen_synthetic(60, 30, 3, avg_degree=4, seed=2)
    return kg, build_hypergraph(kg), features, labels


def make_hg(edges, n_nodes, type_ids=None):
    """Hypergraph from explicit node lists (bypasses the triple builder)."""
    from hypernie.hhkg import Hypergraph
    rows = np.concatenate([np.sort(np.asarray(e, dtype=np.int64)) for e in edges])
    cols = np.repeat(np.arange(len(edges)), [len(e) for e in edges]).astype(np.int64)
    type_ids = np.zeros(len(edges), dtype=np.int64) if type_ids is None \
        else np.asarray(type_ids, dtype=np.int64)
    n_types = int(type_ids.max()) + 1
    return Hypergraph(n_nodes, len(edges), rows, cols, [(t,) for t in range(n_types)], type_ids)


def permute_hg(hg, pi):
    """Relabel node v as pi[v]; hyperedge order is kept."""
    edges = [pi[hg.edge_nodes(e)] for e in range(hg.n_hyperedges)]
    return make_hg(edges, hg.n_nodes, hg.type_ids)
