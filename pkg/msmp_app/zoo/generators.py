"""
Seeded synthetic datasets for the shipped models.

Sample i draws from its own generator seeded with `seed ^ i`, so samples can
be produced in any order. Every fifth sample (i % 5 == 4) goes to
`validation/`, the rest to `train/`. Features are divided by the scales
recorded in `manifest.json`; labels stay in natural units.
"""
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import networkx as nx
import numpy as np

from ..dataset import MANIFEST_NAME, HeterogeneousGraph, dump_graph, graph_from_networkx
from ..exceptions import GenerationError
from . import oracles

logger = logging.getLogger(__name__)

VALIDATION_EVERY = 5


@dataclass(frozen=True)
class TopologyGenConfig:
    min_nodes: int = 5
    max_nodes: int = 10
    edge_probability: float = 0.3
    min_weight: int = 1
    max_weight: int = 10
    min_capacity: float = 10.0
    max_capacity: float = 40.0
    min_flows: int = 2
    max_flows: int = 8
    min_traffic: float = 0.5
    max_traffic: float = 5.0
    seed: int = 0
    count: int = 100
    max_retries: int = 200

    def check(self) -> None:
        problems = []
        if not 2 <= self.min_nodes <= self.max_nodes:
            problems.append(f"node range [{self.min_nodes}, {self.max_nodes}] needs 2 <= min <= max")
        if not 0.0 < self.edge_probability <= 1.0:
            problems.append(f"edge_probability {self.edge_probability} outside (0, 1]")
        if not 1 <= self.min_weight <= self.max_weight:
            problems.append(f"weight range [{self.min_weight}, {self.max_weight}] needs 1 <= min <= max")
        if not 0.0 < self.min_capacity <= self.max_capacity:
            problems.append(f"capacity range [{self.min_capacity}, {self.max_capacity}] needs 0 < min <= max")
        if not 1 <= self.min_flows <= self.max_flows:
            problems.append(f"flow range [{self.min_flows}, {self.max_flows}] needs 1 <= min <= max")
        if not 0.0 <= self.min_traffic <= self.max_traffic or self.max_traffic <= 0.0:
            problems.append(f"traffic range [{self.min_traffic}, {self.max_traffic}] needs 0 <= min <= max, max > 0")
        if self.count < 1 or self.max_retries < 1:
            problems.append("count and max_retries must be >= 1")
        if problems:
            raise GenerationError("; ".join(problems))


def sample_rng(config: TopologyGenConfig, index: int) -> np.random.Generator:
    return np.random.default_rng(config.seed ^ index)


def random_topology(config: TopologyGenConfig, rng: np.random.Generator) -> nx.Graph:
    """Connected G(n, p) graph on nodes 0..n-1, redrawn until connected."""
    n = int(rng.integers(config.min_nodes, config.max_nodes + 1))
    for _ in range(config.max_retries):
        G = nx.gnp_random_graph(n, config.edge_probability, seed=int(rng.integers(2**32)))
        if nx.is_connected(G):
            return G
    raise GenerationError(f"no connected {n}-node graph at edge_probability {config.edge_probability} "
                          f"after {config.max_retries} draws")


def _weighted_query(config: TopologyGenConfig, rng: np.random.Generator) -> tuple[nx.Graph, int, int]:
    """A weighted topology and a source/target pair joined by exactly one shortest path."""
    for _ in range(config.max_retries):
        G = random_topology(config, rng)
        for u, v in G.edges:
            G.edges[u, v]["weight"] = int(rng.integers(config.min_weight, config.max_weight + 1))
        source, target = (int(x) for x in rng.choice(G.number_of_nodes(), size=2, replace=False))
        paths = list(nx.all_shortest_paths(G, source, target, weight="weight"))
        if len(paths) == 1:
            return G, source, target
    raise GenerationError(f"no source/target pair with a unique shortest path after {config.max_retries} draws")


# ─── Shortest path ──────────────────────────────────────────────────────────

def label_shortest_path_sample(G: nx.Graph, source, target, weight_scale: float, name: str = "") -> HeterogeneousGraph:
    """
    node/edge sample of a weighted topology: one `edge` node per link, wired
    both ways to its endpoints; edge label 1 iff on the Dijkstra path.
    """
    path = nx.dijkstra_path(G, source, target, weight="weight")
    on_path = {frozenset(hop) for hop in zip(path, path[1:])}
    H = nx.DiGraph()
    for u in sorted(G.nodes):
        H.add_node(f"n{u}", entity="node",
                   features={"is_source": float(u == source), "is_target": float(u == target)})
    labels = {}
    for u, v in sorted(tuple(sorted(e)) for e in G.edges):
        edge_id = f"e{u}_{v}"
        H.add_node(edge_id, entity="edge", features={"weight": G.edges[u, v]["weight"] / weight_scale})
        for endpoint in (f"n{u}", f"n{v}"):
            H.add_edge(endpoint, edge_id)
            H.add_edge(edge_id, endpoint)
        labels[edge_id] = float(frozenset((u, v)) in on_path)
    return graph_from_networkx(H, {"on_path": labels}, name)


def shortest_path_sample(config: TopologyGenConfig, index: int) -> HeterogeneousGraph:
    G, source, target = _weighted_query(config, sample_rng(config, index))
    return label_shortest_path_sample(G, source, target, config.max_weight, sample_name(index))


# ─── RouteNet ───────────────────────────────────────────────────────────────

def build_routenet_sample(
    capacities: dict[tuple, float],
    routes: list[tuple[list, float]],
    capacity_scale: float,
    traffic_scale: float,
    name: str = "",
) -> HeterogeneousGraph:
    """
    link/path sample from directed link capacities and (node route, traffic)
    flows. link -> path edges carry the hop index as position; path -> link
    edges carry none.
    """
    load = {link: 0.0 for link in capacities}
    for route, traffic in routes:
        for hop in zip(route, route[1:]):
            load[hop] += traffic
    H = nx.DiGraph()
    for (u, v), capacity in sorted(capacities.items()):
        H.add_node(f"l{u}_{v}", entity="link", features={"capacity": capacity / capacity_scale})
    delays = {}
    for i, (route, traffic) in enumerate(routes):
        path_id = f"p{i}"
        H.add_node(path_id, entity="path", features={"traffic": traffic / traffic_scale})
        hops = list(zip(route, route[1:]))
        for position, (u, v) in enumerate(hops):
            H.add_edge(f"l{u}_{v}", path_id, position=position)
            H.add_edge(path_id, f"l{u}_{v}")
        delays[path_id] = oracles.path_delay([capacities[h] for h in hops], [load[h] for h in hops])
    return graph_from_networkx(H, {"delay": delays}, name)


def routenet_sample(config: TopologyGenConfig, index: int) -> HeterogeneousGraph:
    rng = sample_rng(config, index)
    G = random_topology(config, rng)
    capacities = {}
    for u, v in sorted(G.edges):
        for hop in ((u, v), (v, u)):
            capacities[hop] = float(rng.uniform(config.min_capacity, config.max_capacity))
    flows = int(rng.integers(config.min_flows, config.max_flows + 1))
    pairs = [tuple(int(x) for x in rng.choice(G.number_of_nodes(), size=2, replace=False)) for _ in range(flows)]
    routes = [nx.shortest_path(G, s, t) for s, t in pairs]
    for _ in range(config.max_retries):
        traffic = [float(rng.uniform(config.min_traffic, config.max_traffic)) for _ in routes]
        load = {hop: 0.0 for hop in capacities}
        for route, amount in zip(routes, traffic):
            for hop in zip(route, route[1:]):
                load[hop] += amount
        if all(load[hop] < capacities[hop] for hop in capacities):
            return build_routenet_sample(capacities, list(zip(routes, traffic)), config.max_capacity,
                                         config.max_traffic, sample_name(index))
    raise GenerationError(f"sample {index}: traffic saturates a link in every one of {config.max_retries} draws")


# ─── GQNN ───────────────────────────────────────────────────────────────────

def label_gqnn_sample(G: nx.Graph, source, target, weight_scale: float, name: str = "") -> HeterogeneousGraph:
    """
    router/interface expansion: router u owns interface i{u}_{v} for every
    neighbour v. Edges: router <-> own interface, interface <-> peer
    interface. Interface label 1 iff the path leaves u towards v.
    """
    path = nx.dijkstra_path(G, source, target, weight="weight")
    hops = set(zip(path, path[1:]))
    H = nx.DiGraph()
    for u in sorted(G.nodes):
        H.add_node(f"r{u}", entity="router",
                   features={"is_source": float(u == source), "is_target": float(u == target)})
    labels = {}
    for u, v in sorted(G.edges):
        for a, b in ((u, v), (v, u)):
            H.add_node(f"i{a}_{b}", entity="interface", features={"weight": G.edges[a, b]["weight"] / weight_scale})
            labels[f"i{a}_{b}"] = float((a, b) in hops)
    for u, v in sorted(G.edges):
        for a, b in ((u, v), (v, u)):
            H.add_edge(f"r{a}", f"i{a}_{b}")
            H.add_edge(f"i{a}_{b}", f"r{a}")
            H.add_edge(f"i{a}_{b}", f"i{b}_{a}")
    return graph_from_networkx(H, {"on_path": labels}, name)


def gqnn_sample(config: TopologyGenConfig, index: int) -> HeterogeneousGraph:
    G, source, target = _weighted_query(config, sample_rng(config, index))
    return label_gqnn_sample(G, source, target, config.max_weight, sample_name(index))


# ─── Writers ────────────────────────────────────────────────────────────────

def sample_name(index: int) -> str:
    return f"sample_{index:05d}.json"


def split_of(index: int) -> str:
    return "validation" if index % VALIDATION_EVERY == VALIDATION_EVERY - 1 else "train"


def _write_dataset(
    task: str,
    config: TopologyGenConfig,
    out_dir: str | Path,
    build: Callable[[TopologyGenConfig, int], HeterogeneousGraph],
    feature_scales: dict,
    oracle: str,
) -> list[Path]:
    config.check()
    out_dir = Path(out_dir)
    written: list[Path] = []
    counts = {"train": 0, "validation": 0}
    for index in range(config.count):
        split = split_of(index)
        target = out_dir / split / sample_name(index)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(dump_graph(build(config, index)), encoding="utf-8")
        counts[split] += 1
        written.append(target)
    for split, count in counts.items():
        logger.info("%s: wrote %d %s samples to %s", task, count, split, out_dir / split)
    manifest = {
        "task": task,
        "config": asdict(config),
        "splits": counts,
        "feature_scales": feature_scales,
        "oracle": oracle,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return written


def gen_shortest_path_dataset(config: TopologyGenConfig, out_dir: str | Path) -> list[Path]:
    return _write_dataset("shortest_path", config, out_dir, shortest_path_sample,
                          {"edge": {"weight": config.max_weight}}, oracles.SHORTEST_PATH_RULE)


def gen_routenet_dataset(config: TopologyGenConfig, out_dir: str | Path) -> list[Path]:
    return _write_dataset("routenet", config, out_dir, routenet_sample,
                          {"link": {"capacity": config.max_capacity}, "path": {"traffic": config.max_traffic}},
                          oracles.DELAY_FORMULA)


def gen_gqnn_dataset(config: TopologyGenConfig, out_dir: str | Path) -> list[Path]:
    return _write_dataset("gqnn", config, out_dir, gqnn_sample,
                          {"interface": {"weight": config.max_weight}}, oracles.SHORTEST_PATH_RULE)


GENERATORS = {
    "shortest_path": gen_shortest_path_dataset,
    "routenet": gen_routenet_dataset,
    "gqnn": gen_gqnn_dataset,
}
