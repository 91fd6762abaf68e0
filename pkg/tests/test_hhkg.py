import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypernie.hhkg import (DataError, KnowledgeGraph, build_hypergraph, hyperedge_type_tuple,
                           hypergraph_stats, load_hypergraph, read_triples, save_hypergraph,
                           write_triples)

from conftest import tiny_kg


def oracle_groups(triples, grouping):
    """Independent hash-set grouping pass; returns {key: frozenset(nodes)}."""
    groups = {}
    for h, r, t in triples:
        key = r if grouping == "relation" else (r, t)
        groups.setdefault(key, set()).update({h, t})
    return {k: frozenset(v) for k, v in groups.items() if len(v) >= 2}


def oracle_tuple(nodes, triples):
    """Nested loop over every ordered pair in the hyperedge against the triple table."""
    table = set(map(tuple, triples))
    relations = sorted({r for _, r, _ in table})
    found = set()
    for a, b in itertools.product(sorted(nodes), repeat=2):
        for r in relations:
            if (a, r, b) in table:
                found.add(r)
    return tuple(sorted(found))


def edge_sets(hg):
    return [frozenset(hg.edge_nodes(e).tolist()) for e in range(hg.n_hyperedges)]


def random_kg(rng, n_triples=None, n_nodes=None, n_rel=None):
    n_nodes = n_nodes or int(rng.integers(2, 40))
    n_rel = n_rel or int(rng.integers(1, 6))
    m = n_triples or int(rng.integers(1, 501))
    triples = np.column_stack([rng.integers(0, n_nodes, m), rng.integers(0, n_rel, m),
                               rng.integers(0, n_nodes, m)])
    return KnowledgeGraph.from_triples(triples, n_nodes, n_rel)


class TestBuild:
    def test_relation_grouping_example(self, tiny):
        kg, hg = tiny
        assert edge_sets(hg) == [frozenset({0, 1, 2}), frozenset({0, 3})]

    def test_single_triple(self):
        kg = KnowledgeGraph.from_triples([(0, 0, 1)], 2, 1)
        for grouping in ("relation", "relation_item"):
            hg = build_hypergraph(kg, grouping)
            assert edge_sets(hg) == [frozenset({0, 1})]

    def test_relation_item_groups_heads_around_items(self):
        kg = KnowledgeGraph.from_triples([(0, 0, 3), (1, 0, 3), (2, 0, 4), (0, 1, 3)], 5, 2)
        hg = build_hypergraph(kg, "relation_item")
        assert edge_sets(hg) == [frozenset({0, 1, 3}), frozenset({2, 4}), frozenset({0, 3})]

    def test_empty_graph(self):
        kg = KnowledgeGraph.from_triples(np.zeros((0, 3)), 3, 1)
        with pytest.raises(DataError, match="empty graph"):
            build_hypergraph(kg)

    def test_self_loop_relation_dropped_with_warning(self, caplog):
        kg = KnowledgeGraph.from_triples([(0, 0, 1), (2, 1, 2)], 3, 2)
        with caplog.at_level(logging.WARNING):
            hg = build_hypergraph(kg, "relation")
        assert hg.dropped == 1
        assert edge_sets(hg) == [frozenset({0, 1})]
        assert "dropped 1" in caplog.text

    def test_duplicate_triples_removed(self):
        kg = KnowledgeGraph.from_triples([(0, 0, 1), (0, 0, 1), (1, 0, 0)], 2, 1)
        assert len(kg.triples) == 2

    def test_unknown_grouping(self, tiny):
        with pytest.raises(ValueError):
            build_hypergraph(tiny[0], "meta")

    def test_random_200_triples_against_oracle(self):
        rng = np.random.default_rng(5)
        kg = random_kg(rng, n_triples=200, n_nodes=30, n_rel=5)
        hg = build_hypergraph(kg, "relation")
        expected = oracle_groups(kg.triples.tolist(), "relation")
        assert edge_sets(hg) == [expected[k] for k in sorted(expected)]


class TestTypeTuples:
    def test_single_relation_edge(self, tiny):
        kg, hg = tiny
        assert hyperedge_type_tuple(0, kg, hg) == (0,)
        assert hyperedge_type_tuple(1, kg, hg) == (1,)

    def test_multi_relation_order_invariant(self):
        a = [(0, 2, 3), (1, 0, 3), (0, 0, 3)]
        for triples in (a, a[::-1]):
            kg = KnowledgeGraph.from_triples(triples, 4, 3)
            hg = build_hypergraph(kg, "relation_item")
            # hyperedge (r0, item 3) holds {0, 1, 3}; pair (0, 3) is also linked by r2
            assert hg.edge_tuple(0) == (0, 2)

    def test_equal_ids_iff_equal_tuples(self):
        rng = np.random.default_rng(11)
        kg = random_kg(rng, 300, 25, 4)
        hg = build_hypergraph(kg)
        for a, b in itertools.combinations(range(hg.n_hyperedges), 2):
            assert (hg.type_ids[a] == hg.type_ids[b]) == (hg.edge_tuple(a) == hg.edge_tuple(b))

    def test_one_relation_one_type(self):
        from hypernie.ingest import gen_synthetic
        kg, features, _ = gen_synthetic(20, 10, 1, seed=0)
        assert features.n_types == 1


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10 ** 6), st.sampled_from(["relation", "relation_item"]))
    def test_permutation_invariance(self, seed, grouping):
        rng = np.random.default_rng(seed)
        kg = random_kg(rng, int(rng.integers(1, 80)), 12, 3)
        shuffled = KnowledgeGraph.from_triples(kg.triples[rng.permutation(len(kg.triples))],
                                               kg.n_nodes, kg.n_relations)
        try:
            a = build_hypergraph(kg, grouping)
        except DataError:
            return
        b = build_hypergraph(shuffled, grouping)
        np.testing.assert_array_equal(a.rows, b.rows)
        np.testing.assert_array_equal(a.cols, b.cols)
        assert a.type_tuples == b.type_tuples

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_invariants(self, seed):
        rng = np.random.default_rng(seed)
        kg = random_kg(rng, int(rng.integers(1, 100)), 15, 4)
        try:
            hg = build_hypergraph(kg)
        except DataError:
            return
        key = hg.cols * hg.n_nodes + hg.rows
        assert np.all(np.diff(key) > 0)          # sorted by (edge, node), no duplicates
        assert hg.edge_sizes().min() >= 2
        for tup in hg.type_tuples:
            assert list(tup) == sorted(set(tup))
        # coverage: every node in a non-self-loop triple sits in some hyperedge
        touched = {v for h, _, t in kg.triples.tolist() if h != t for v in (h, t)}
        assert touched <= set(hg.rows.tolist())

    def test_idempotent(self):
        kg = random_kg(np.random.default_rng(2), 400, 30, 5)
        a, b = build_hypergraph(kg), build_hypergraph(kg)
        assert a.rows.tobytes() == b.rows.tobytes() and a.cols.tobytes() == b.cols.tobytes()


class TestStats:
    def test_tiny(self, tiny):
        stats = hypergraph_stats(tiny[1])
        assert (stats["n_nodes"], stats["n_hyperedges"], stats["nnz"]) == (4, 2, 5)
        assert stats["density"] == 5 / 8
        assert stats["max_edge_size"] == 3


class TestIO:
    def test_read_triples_first_seen_ids(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("# comment\nu1\tr1\ti1\nu2\tr1\ti1\n\nu1\tr2\ti2\n")
        kg = read_triples(p)
        assert kg.node_names == ["u1", "i1", "u2", "i2"]
        assert kg.relation_names == ["r1", "r2"]
        assert len(kg.triples) == 3

    def test_parse_error_line_number(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("u1\tr1\ti1\nbroken line\n")
        with pytest.raises(DataError, match=":2:"):
            read_triples(p)

    def test_node_types_file(self, tmp_path):
        (tmp_path / "t.tsv").write_text("u1\tr1\ti1\n")
        (tmp_path / "n.tsv").write_text("u1\tuser\ni1\titem\nlonely\tuser\n")
        kg = read_triples(tmp_path / "t.tsv", tmp_path / "n.tsv")
        assert kg.node_names == ["u1", "i1", "lonely"]
        assert kg.node_types.tolist() == [0, 1, 0]

    def test_text_round_trip(self, tmp_path):
        kg = tiny_kg()
        write_triples(kg, tmp_path / "t.tsv", tmp_path / "n.tsv")
        back = read_triples(tmp_path / "t.tsv", tmp_path / "n.tsv")
        named = {(kg.node_names[h], kg.relation_names[r], kg.node_names[t])
                 for h, r, t in kg.triples.tolist()}
        named_back = {(back.node_names[h], back.relation_names[r], back.node_names[t])
                      for h, r, t in back.triples.tolist()}
        assert named == named_back

    def test_binary_container_round_trip(self, tmp_path):
        kg = random_kg(np.random.default_rng(9), 150, 20, 3)
        hg = build_hypergraph(kg)
        save_hypergraph(tmp_path / "g.hhkg", kg, hg, "x = 1\n")
        kg2, hg2, echo = load_hypergraph(tmp_path / "g.hhkg")
        assert echo == "x = 1\n"
        np.testing.assert_array_equal(hg.rows, hg2.rows)
        np.testing.assert_array_equal(hg.type_ids, hg2.type_ids)
        assert hg.type_tuples == hg2.type_tuples
        np.testing.assert_array_equal(kg.triples, kg2.triples)
        save_hypergraph(tmp_path / "h.hhkg", kg2, hg2, echo)
        assert (tmp_path / "g.hhkg").read_bytes() == (tmp_path / "h.hhkg").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(DataError):
            load_hypergraph(tmp_path / "x")
