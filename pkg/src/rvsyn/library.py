"""The graph-format function library: typed edges, stats, and node sampling.

Edges are typed with a strict precedence: a co-occurrence edge (some member
functions appeared together in one source graph) beats a topic edge (members
share a subject label without ever co-occurring); pairs satisfying neither
stay unconnected. Sampling walks those edge types to assemble node sets for
graph regeneration.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .records import ComputationalGraph, FunctionNode, OperationFunction

LIBRARY_SCHEMA_VERSION = 1

STATS_ROW_NAMES = (
    "CB Connected Components Number",
    "CB Largest Connected Component Size",
    "CB Average Degree per Node",
    "TB Connected Components Number",
    "TB Largest Connected Component Size",
    "TB Average Degree per Node",
)


class DanglingFunction(ValueError):
    """A source graph references a function that is in no node."""


class SamplingExhausted(RuntimeError):
    """Bounded sampling attempts ran out before a valid set was found."""


class EdgeKind(enum.Enum):
    CO_OCCURRENCE = "CoOccurrence"
    TOPIC = "Topic"


class Strategy(enum.Enum):
    CO_OCCURRENCE = "CoOccurrence"
    TOPIC = "Topic"
    EDGELESS = "Edgeless"
    MIXED = "Mixed"


@dataclass(frozen=True)
class SampleSpec:
    strategy: Strategy
    node_count: int
    rng_seed: int

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")


@dataclass
class GraphStats:
    cb_component_count: int
    cb_largest_component: int
    cb_avg_degree: float
    tb_component_count: int
    tb_largest_component: int
    tb_avg_degree: float

    def rows(self) -> dict[str, float]:
        return {
            STATS_ROW_NAMES[0]: self.cb_component_count,
            STATS_ROW_NAMES[1]: self.cb_largest_component,
            STATS_ROW_NAMES[2]: self.cb_avg_degree,
            STATS_ROW_NAMES[3]: self.tb_component_count,
            STATS_ROW_NAMES[4]: self.tb_largest_component,
            STATS_ROW_NAMES[5]: self.tb_avg_degree,
        }

    def render_table(self) -> str:
        width = max(len(n) for n in STATS_ROW_NAMES)
        lines = ["Metric".ljust(width) + "  Value", "-" * (width + 8)]
        for name, value in self.rows().items():
            shown = f"{value:g}" if isinstance(value, float) else str(value)
            lines.append(name.ljust(width) + "  " + shown)
        return "\n".join(lines) + "\n"


@dataclass
class LibraryGraph:
    nodes: dict[str, FunctionNode]
    edges: set[tuple[str, str, EdgeKind]]
    cooccurrence_index: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._adjacency: dict[EdgeKind, dict[str, list[str]]] | None = None

    def node_ids(self) -> list[str]:
        return sorted(self.nodes)

    def edge_kind(self, u: str, v: str) -> EdgeKind | None:
        if u == v:
            return None
        a, b = min(u, v), max(u, v)
        for kind in EdgeKind:
            if (a, b, kind) in self.edges:
                return kind
        return None

    def adjacency(self, kind: EdgeKind) -> dict[str, list[str]]:
        """Sorted adjacency lists per edge kind, built lazily and cached."""
        if self._adjacency is None:
            adj: dict[EdgeKind, dict[str, list[str]]] = {k: {nid: [] for nid in self.nodes} for k in EdgeKind}
            for a, b, k in sorted(self.edges, key=lambda e: (e[0], e[1], e[2].value)):
                adj[k][a].append(b)
                adj[k][b].append(a)
            self._adjacency = adj
        return self._adjacency[kind]


def build(
    nodes: list[FunctionNode],
    graphs: list[ComputationalGraph],
    labels: dict[str, object] | None = None,
) -> LibraryGraph:
    """Construct the typed library graph over merged function nodes.

    ``labels`` is accepted for callers that label at build time; the usual
    path sets topics on the member functions during the label stage.
    """
    node_by_id = {n.id: n for n in nodes}
    fn_to_node: dict[str, str] = {}
    for node in nodes:
        for fn in node.members:
            fn_to_node[fn.id] = node.id

    cooccurrence_index: dict[str, set[str]] = {}
    graph_members: dict[str, set[str]] = {}
    for graph in graphs:
        for fn in graph.functions:
            if fn.id not in fn_to_node:
                raise DanglingFunction(f"graph {graph.id} references unknown function {fn.id} ({fn.name})")
            cooccurrence_index.setdefault(fn.id, set()).add(graph.id)
            graph_members.setdefault(graph.id, set()).add(fn_to_node[fn.id])

    edges: set[tuple[str, str, EdgeKind]] = set()
    cb_pairs: set[tuple[str, str]] = set()
    for members in graph_members.values():
        ordered = sorted(members)
        for i, u in enumerate(ordered):
            for v in ordered[i + 1 :]:
                cb_pairs.add((u, v))
    for u, v in cb_pairs:
        edges.add((u, v, EdgeKind.CO_OCCURRENCE))

    by_topic: dict[str, list[str]] = {}
    for node in nodes:
        for topic in node.topics:
            by_topic.setdefault(topic.value, []).append(node.id)
    for node_ids in by_topic.values():
        ordered = sorted(set(node_ids))
        for i, u in enumerate(ordered):
            for v in ordered[i + 1 :]:
                if (u, v) not in cb_pairs:
                    edges.add((u, v, EdgeKind.TOPIC))

    return LibraryGraph(nodes=node_by_id, edges=edges, cooccurrence_index=cooccurrence_index)


def _components(node_ids: list[str], adj: dict[str, list[str]]) -> list[set[str]]:
    seen: set[str] = set()
    components = []
    for start in node_ids:
        if start in seen:
            continue
        stack = [start]
        comp = {start}
        seen.add(start)
        while stack:
            current = stack.pop()
            for neighbor in adj[current]:
                if neighbor not in comp:
                    comp.add(neighbor)
                    seen.add(neighbor)
                    stack.append(neighbor)
        components.append(comp)
    return components


def stats(graph: LibraryGraph) -> GraphStats:
    """Per-edge-kind component counts, largest component, and average degree."""
    node_ids = graph.node_ids()
    values = {}
    for kind in EdgeKind:
        adj = graph.adjacency(kind)
        comps = _components(node_ids, adj)
        edge_count = sum(1 for e in graph.edges if e[2] == kind)
        values[kind] = (
            len(comps),
            max((len(c) for c in comps), default=0),
            (2 * edge_count / len(node_ids)) if node_ids else 0.0,
        )
    cb, tb = values[EdgeKind.CO_OCCURRENCE], values[EdgeKind.TOPIC]
    return GraphStats(
        cb_component_count=cb[0],
        cb_largest_component=cb[1],
        cb_avg_degree=cb[2],
        tb_component_count=tb[0],
        tb_largest_component=tb[1],
        tb_avg_degree=tb[2],
    )


WALK_RESTART_LIMIT = 1000
EDGELESS_ATTEMPT_LIMIT = 1000


def _walk_sample(graph: LibraryGraph, kind: EdgeKind, node_count: int, rng: random.Random) -> list[str]:
    adj = graph.adjacency(kind)
    starts = [nid for nid in graph.node_ids() if adj[nid]]
    if not starts:
        raise SamplingExhausted(f"no {kind.value} edges to walk")
    step_budget = 100 * node_count
    for _ in range(WALK_RESTART_LIMIT):
        current = rng.choice(starts)
        collected = [current]
        collected_set = {current}
        for _ in range(step_budget):
            if len(collected) == node_count:
                return collected
            current = rng.choice(adj[current])
            if current not in collected_set:
                collected_set.add(current)
                collected.append(current)
        if len(collected) == node_count:
            return collected
    raise SamplingExhausted(f"no connected {kind.value} set of size {node_count} found")


def resolve_strategy(spec: SampleSpec) -> SampleSpec:
    """Collapse Mixed to a concrete strategy, uniformly, deterministically per seed."""
    if spec.strategy != Strategy.MIXED:
        return spec
    rng = random.Random(spec.rng_seed)
    concrete = rng.choice([Strategy.CO_OCCURRENCE, Strategy.TOPIC, Strategy.EDGELESS])
    return SampleSpec(strategy=concrete, node_count=spec.node_count, rng_seed=spec.rng_seed)


def sample_nodes(graph: LibraryGraph, spec: SampleSpec) -> list[FunctionNode]:
    """Draw a node set under one strategy, deterministically per rng seed.

    CoOccurrence/Topic collect distinct nodes along a random walk over edges
    of that kind (the set is connected in that subgraph); Edgeless rejection-
    samples until the set is pairwise unconnected under both kinds.
    """
    if not graph.nodes:
        raise ValueError("library graph is empty")
    spec = resolve_strategy(spec)
    rng = random.Random(spec.rng_seed)
    strategy = spec.strategy

    all_ids = graph.node_ids()
    if spec.node_count == 1:
        return [graph.nodes[rng.choice(all_ids)]]

    if strategy in (Strategy.CO_OCCURRENCE, Strategy.TOPIC):
        kind = EdgeKind.CO_OCCURRENCE if strategy == Strategy.CO_OCCURRENCE else EdgeKind.TOPIC
        ids = _walk_sample(graph, kind, spec.node_count, rng)
        return [graph.nodes[i] for i in ids]

    if len(all_ids) < spec.node_count:
        raise SamplingExhausted(f"only {len(all_ids)} nodes available")
    for _ in range(EDGELESS_ATTEMPT_LIMIT):
        ids = rng.sample(all_ids, spec.node_count)
        if all(graph.edge_kind(u, v) is None for i, u in enumerate(ids) for v in ids[i + 1 :]):
            return [graph.nodes[i] for i in ids]
    raise SamplingExhausted(f"no edgeless set of size {spec.node_count} within {EDGELESS_ATTEMPT_LIMIT} attempts")


def pick_functions(nodes: list[FunctionNode], rng_seed: int) -> list[OperationFunction]:
    """One uniformly chosen member function per node."""
    if not nodes:
        raise ValueError("nodes must be non-empty")
    rng = random.Random(rng_seed)
    return [rng.choice(node.members) for node in nodes]


def save_library(graph: LibraryGraph, path: str | Path) -> None:
    payload = {
        "schema_version": LIBRARY_SCHEMA_VERSION,
        "nodes": [graph.nodes[nid].to_dict() for nid in graph.node_ids()],
        "edges": sorted([a, b, k.value] for a, b, k in graph.edges),
        "cooccurrence_index": {fn_id: sorted(gids) for fn_id, gids in sorted(graph.cooccurrence_index.items())},
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_library(path: str | Path) -> LibraryGraph:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("schema_version")
    if version != LIBRARY_SCHEMA_VERSION:
        raise ValueError(f"unsupported library schema version {version!r}")
    nodes = {d["id"]: FunctionNode.from_dict(d) for d in payload["nodes"]}
    edges = {(a, b, EdgeKind(k)) for a, b, k in payload["edges"]}
    index = {fn_id: set(gids) for fn_id, gids in payload["cooccurrence_index"].items()}
    return LibraryGraph(nodes=nodes, edges=edges, cooccurrence_index=index)
