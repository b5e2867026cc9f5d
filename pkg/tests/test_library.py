"""Library graph construction, stats, and sampling tests."""

from __future__ import annotations

import random
from collections import Counter

import pytest

from libfixtures import (
    connected_in_kind,
    make_member,
    oracle_edge_kind,
    oracle_stats,
    pairwise_unconnected,
    random_library,
)
from rvsyn.library import (
    DanglingFunction,
    EdgeKind,
    LibraryGraph,
    SampleSpec,
    SamplingExhausted,
    Strategy,
    build,
    load_library,
    pick_functions,
    resolve_strategy,
    sample_nodes,
    save_library,
    stats,
    STATS_ROW_NAMES,
)
from rvsyn.records import ComputationalGraph, FunctionNode, GraphOrigin, Subject


def node_with(node_id: str, origins: set[str], topic: Subject | None) -> FunctionNode:
    idx = int(node_id.split("-")[1])
    return FunctionNode(id=node_id, members=[make_member(idx, 0, origins, topic)])


def graphs_for(nodes: list[FunctionNode]) -> list[ComputationalGraph]:
    by_gid: dict[str, list] = {}
    for node in nodes:
        for fn in node.members:
            for gid in fn.origin_graph_ids:
                by_gid.setdefault(gid, []).append(fn)
    return [
        ComputationalGraph(id=gid, functions=fns, main_source="def main():\n    print(0)\n", origin=GraphOrigin.DECOMPOSED)
        for gid, fns in sorted(by_gid.items())
    ]


class TestBuild:
    def test_cooccurrence_edge(self):
        nodes = [
            node_with("node-0001", {"g-1"}, Subject.ALGEBRA),
            node_with("node-0002", {"g-1"}, Subject.GEOMETRY),
        ]
        lib = build(nodes, graphs_for(nodes))
        assert lib.edge_kind("node-0001", "node-0002") == EdgeKind.CO_OCCURRENCE

    def test_topic_edge_when_no_cooccurrence(self):
        nodes = [
            node_with("node-0001", {"g-1"}, Subject.NUMBER_THEORY),
            node_with("node-0002", {"g-2"}, Subject.NUMBER_THEORY),
        ]
        lib = build(nodes, graphs_for(nodes))
        assert lib.edge_kind("node-0001", "node-0002") == EdgeKind.TOPIC

    def test_no_edge_when_nothing_shared(self):
        nodes = [
            node_with("node-0001", {"g-1"}, Subject.ALGEBRA),
            node_with("node-0002", {"g-2"}, Subject.GEOMETRY),
        ]
        lib = build(nodes, graphs_for(nodes))
        assert lib.edge_kind("node-0001", "node-0002") is None

    def test_precedence_no_topic_edge_where_cooccurrence_holds(self):
        nodes = [
            node_with("node-0001", {"g-1"}, Subject.ALGEBRA),
            node_with("node-0002", {"g-1"}, Subject.ALGEBRA),
        ]
        lib = build(nodes, graphs_for(nodes))
        kinds = {k for (a, b, k) in lib.edges}
        assert kinds == {EdgeKind.CO_OCCURRENCE}

    def test_no_self_loops_single_pair_edges(self):
        lib, _, _ = random_library(40, random.Random(1))
        seen = set()
        for a, b, _ in lib.edges:
            assert a != b
            assert a < b
            assert (a, b) not in seen
            seen.add((a, b))

    def test_dangling_function(self):
        nodes = [node_with("node-0001", {"g-1"}, None)]
        stranger = make_member(99, 0, {"g-1"}, None)
        graphs = [
            ComputationalGraph(id="g-1", functions=[stranger], main_source="def main():\n    print(0)\n", origin=GraphOrigin.DECOMPOSED)
        ]
        with pytest.raises(DanglingFunction):
            build(nodes, graphs)

    def test_cooccurrence_index_populated(self):
        nodes = [
            node_with("node-0001", {"g-1", "g-2"}, None),
            node_with("node-0002", {"g-1"}, None),
        ]
        lib = build(nodes, graphs_for(nodes))
        fn1 = nodes[0].members[0]
        assert lib.cooccurrence_index[fn1.id] == {"g-1", "g-2"}

    def test_edge_typing_matches_oracle(self):
        for seed in (2, 3, 4):
            lib, nodes, _ = random_library(60, random.Random(seed))
            for i, u in enumerate(nodes):
                for v in nodes[i + 1 :]:
                    assert lib.edge_kind(u.id, v.id) == oracle_edge_kind(u, v), (u.id, v.id)


class TestStats:
    def test_hand_computed_four_node_fixture(self):
        # 4 nodes; one CB edge (a,b); c shares a topic with d.
        nodes = [
            node_with("node-0001", {"g-1"}, None),
            node_with("node-0002", {"g-1"}, None),
            node_with("node-0003", {"g-3"}, Subject.PRECALCULUS),
            node_with("node-0004", {"g-4"}, Subject.PRECALCULUS),
        ]
        lib = build(nodes, graphs_for(nodes))
        s = stats(lib)
        assert s.cb_component_count == 3
        assert s.cb_largest_component == 2
        assert s.cb_avg_degree == pytest.approx(0.5)
        assert s.tb_component_count == 3
        assert s.tb_largest_component == 2
        assert s.tb_avg_degree == pytest.approx(0.5)

    def test_empty_graph_all_zero(self):
        lib = LibraryGraph(nodes={}, edges=set())
        s = stats(lib)
        assert s.cb_component_count == 0
        assert s.cb_largest_component == 0
        assert s.cb_avg_degree == 0.0

    def test_single_node_library(self):
        nodes = [node_with("node-0001", {"g-1"}, Subject.ALGEBRA)]
        lib = build(nodes, graphs_for(nodes))
        s = stats(lib)
        assert s.cb_component_count == 1
        assert s.tb_avg_degree == 0.0

    def test_matches_oracle_on_random_libraries(self):
        for seed in (5, 6):
            lib, _, _ = random_library(80, random.Random(seed))
            s = stats(lib)
            expected = oracle_stats(lib)
            assert s.cb_component_count == expected["cb_component_count"]
            assert s.cb_largest_component == expected["cb_largest_component"]
            assert s.cb_avg_degree == pytest.approx(expected["cb_avg_degree"])
            assert s.tb_component_count == expected["tb_component_count"]
            assert s.tb_largest_component == expected["tb_largest_component"]
            assert s.tb_avg_degree == pytest.approx(expected["tb_avg_degree"])

    def test_report_uses_exact_row_names(self):
        lib, _, _ = random_library(10, random.Random(7))
        rows = stats(lib).rows()
        assert tuple(rows.keys()) == STATS_ROW_NAMES


@pytest.fixture(scope="module")
def lib():
    graph, _, _ = random_library(60, random.Random(8))
    return graph


class TestSampling:
    def test_cooccurrence_samples_connected(self, lib):
        for seed in range(300):
            spec = SampleSpec(strategy=Strategy.CO_OCCURRENCE, node_count=2 + seed % 2, rng_seed=seed)
            ids = [n.id for n in sample_nodes(lib, spec)]
            assert len(set(ids)) == spec.node_count
            assert connected_in_kind(lib, ids, EdgeKind.CO_OCCURRENCE)

    def test_topic_samples_connected(self, lib):
        for seed in range(300):
            spec = SampleSpec(strategy=Strategy.TOPIC, node_count=2 + seed % 2, rng_seed=seed)
            ids = [n.id for n in sample_nodes(lib, spec)]
            assert connected_in_kind(lib, ids, EdgeKind.TOPIC)

    def test_edgeless_samples_unconnected(self, lib):
        for seed in range(300):
            spec = SampleSpec(strategy=Strategy.EDGELESS, node_count=3, rng_seed=seed)
            ids = [n.id for n in sample_nodes(lib, spec)]
            assert len(set(ids)) == 3
            assert pairwise_unconnected(lib, ids)

    def test_single_node_no_connectivity_requirement(self, lib):
        for strategy in (Strategy.CO_OCCURRENCE, Strategy.TOPIC, Strategy.EDGELESS, Strategy.MIXED):
            nodes = sample_nodes(lib, SampleSpec(strategy=strategy, node_count=1, rng_seed=1))
            assert len(nodes) == 1

    def test_deterministic_per_seed(self, lib):
        spec = SampleSpec(strategy=Strategy.MIXED, node_count=3, rng_seed=1234)
        a = [n.id for n in sample_nodes(lib, spec)]
        b = [n.id for n in sample_nodes(lib, spec)]
        assert a == b

    def test_mixed_resolves_uniformly(self):
        counts = Counter(
            resolve_strategy(SampleSpec(strategy=Strategy.MIXED, node_count=2, rng_seed=seed)).strategy
            for seed in range(3000)
        )
        for strategy in (Strategy.CO_OCCURRENCE, Strategy.TOPIC, Strategy.EDGELESS):
            assert abs(counts[strategy] / 3000 - 1 / 3) < 0.03

    def test_exhaustion_on_impossible_edgeless(self):
        # Two nodes joined by an edge: no edgeless pair exists.
        nodes = [
            node_with("node-0001", {"g-1"}, None),
            node_with("node-0002", {"g-1"}, None),
        ]
        lib = build(nodes, graphs_for(nodes))
        with pytest.raises(SamplingExhausted):
            sample_nodes(lib, SampleSpec(strategy=Strategy.EDGELESS, node_count=2, rng_seed=0))

    def test_exhaustion_when_no_edges_of_kind(self):
        nodes = [
            node_with("node-0001", {"g-1"}, None),
            node_with("node-0002", {"g-2"}, None),
        ]
        lib = build(nodes, graphs_for(nodes))
        with pytest.raises(SamplingExhausted):
            sample_nodes(lib, SampleSpec(strategy=Strategy.CO_OCCURRENCE, node_count=2, rng_seed=0))

    def test_empty_library_rejected(self):
        with pytest.raises(ValueError):
            sample_nodes(LibraryGraph(nodes={}, edges=set()), SampleSpec(strategy=Strategy.MIXED, node_count=1, rng_seed=0))

    def test_node_count_validation(self):
        with pytest.raises(ValueError):
            SampleSpec(strategy=Strategy.MIXED, node_count=0, rng_seed=0)


class TestPickFunctions:
    def test_single_member(self):
        node = node_with("node-0001", {"g-1"}, None)
        assert pick_functions([node], rng_seed=0) == [node.members[0]]

    def test_one_per_node(self):
        _, nodes, _ = random_library(6, random.Random(9))
        picked = pick_functions(nodes, rng_seed=5)
        assert len(picked) == len(nodes)
        for node, fn in zip(nodes, picked):
            assert fn in node.members

    def test_deterministic(self):
        _, nodes, _ = random_library(6, random.Random(10))
        assert pick_functions(nodes, rng_seed=7) == pick_functions(nodes, rng_seed=7)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pick_functions([], rng_seed=0)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        lib, _, _ = random_library(25, random.Random(11))
        path = tmp_path / "library.json"
        save_library(lib, path)
        loaded = load_library(path)
        assert set(loaded.nodes) == set(lib.nodes)
        assert loaded.edges == lib.edges
        assert loaded.cooccurrence_index == lib.cooccurrence_index

    def test_schema_version_checked(self, tmp_path):
        path = tmp_path / "library.json"
        path.write_text('{"schema_version": 999, "nodes": [], "edges": [], "cooccurrence_index": {}}', encoding="utf-8")
        with pytest.raises(ValueError):
            load_library(path)
