"""
Ground truth for the synthetic datasets, recomputed from a sample file alone.

The shortest-path oracle enumerates every simple path instead of running
Dijkstra, so it shares no code path with the generators.
"""
from collections.abc import Iterable

import networkx as nx

from ..dataset import HeterogeneousGraph

DELAY_FORMULA = "delay(path) = sum over links of 1 / (capacity - load), load = sum of traffic routed over the link"
SHORTEST_PATH_RULE = "label = 1 iff the edge lies on the unique minimum-weight source -> target path"


def link_delay(capacity: float, load: float) -> float:
    if load >= capacity:
        raise ValueError(f"load {load} saturates capacity {capacity}")
    return 1.0 / (capacity - load)


def path_delay(capacities: Iterable[float], loads: Iterable[float]) -> float:
    return sum(link_delay(c, l) for c, l in zip(capacities, loads, strict=True))


def minimum_weight_paths(G: nx.Graph, source, target, weight: str = "weight") -> list[list]:
    """Every simple source -> target path of minimum total weight, by enumeration."""
    best, paths = None, []
    for path in nx.all_simple_paths(G, source, target):
        cost = sum(G.edges[u, v][weight] for u, v in zip(path, path[1:]))
        if best is None or cost < best:
            best, paths = cost, [path]
        elif cost == best:
            paths.append(path)
    return paths


def _flagged(graph: HeterogeneousGraph, entity: str, feature: str):
    return next(n.id for n in graph.nodes if n.entity == entity and n.features.get(feature) == 1.0)


def shortest_path_labels(graph: HeterogeneousGraph) -> dict[str, float]:
    """Per `edge` node: 1.0 iff it lies on the minimum-weight path between the flagged nodes."""
    endpoints: dict[str, list[str]] = {}
    for link in graph.edges:
        if graph.node(link.source).entity == "node" and graph.node(link.target).entity == "edge":
            endpoints.setdefault(link.target, []).append(link.source)
    G = nx.Graph()
    for edge_id, (u, v) in endpoints.items():
        G.add_edge(u, v, weight=graph.node(edge_id).features["weight"], id=edge_id)
    paths = minimum_weight_paths(G, _flagged(graph, "node", "is_source"), _flagged(graph, "node", "is_target"))
    if len(paths) != 1:
        raise ValueError(f"{graph.name}: {len(paths)} minimum-weight paths, expected exactly one")
    on_path = {G.edges[u, v]["id"] for u, v in zip(paths[0], paths[0][1:])}
    return {edge_id: float(edge_id in on_path) for edge_id in endpoints}


def interface_labels(graph: HeterogeneousGraph) -> dict[str, float]:
    """Per interface: 1.0 iff the routed path leaves its router through it."""
    owner: dict[str, str] = {}
    peer: dict[str, str] = {}
    for link in graph.edges:
        source, target = graph.node(link.source), graph.node(link.target)
        if source.entity == "interface" and target.entity == "router":
            owner[source.id] = target.id
        elif source.entity == "interface" and target.entity == "interface":
            peer[source.id] = target.id
    G = nx.Graph()
    for interface, other in peer.items():
        G.add_edge(owner[interface], owner[other], weight=graph.node(interface).features["weight"])
    paths = minimum_weight_paths(G, _flagged(graph, "router", "is_source"), _flagged(graph, "router", "is_target"))
    if len(paths) != 1:
        raise ValueError(f"{graph.name}: {len(paths)} minimum-weight paths, expected exactly one")
    hops = set(zip(paths[0], paths[0][1:]))
    return {interface: float((owner[interface], owner[peer[interface]]) in hops) for interface in peer}


def routenet_delays(graph: HeterogeneousGraph, capacity_scale: float, traffic_scale: float) -> dict[str, float]:
    """Per path: analytic delay from the (de-normalized) capacities and traffic in the file."""
    route: dict[str, list[tuple[int, str]]] = {}
    for link in graph.edges:
        if graph.node(link.source).entity == "link" and graph.node(link.target).entity == "path":
            route.setdefault(link.target, []).append((link.position, link.source))
    traffic = {p: graph.node(p).features["traffic"] * traffic_scale for p in route}
    load: dict[str, float] = {}
    for path_id, hops in route.items():
        for _, link_id in hops:
            load[link_id] = load.get(link_id, 0.0) + traffic[path_id]
    delays = {}
    for path_id, hops in route.items():
        links = [link_id for _, link_id in sorted(hops)]
        capacities = [graph.node(l).features["capacity"] * capacity_scale for l in links]
        delays[path_id] = path_delay(capacities, [load[l] for l in links])
    return delays
