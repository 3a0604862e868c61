"""
Heterogeneous graph samples in node-link JSON.

    {"nodes":  [{"id": "p0", "entity": "path", "features": {"traffic": 0.7}}, ...],
     "links":  [{"source": "l0", "target": "p0", "position": 0}, ...],
     "labels": {"delay": {"p0": 0.16}}}

One graph per file; a dataset split is a directory of such files. NetworkX's
`directed`/`multigraph`/`graph` keys are accepted and ignored, and `edges`
is accepted in place of `links`.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import networkx as nx
import numpy as np

from .exceptions import DatasetError
from .schema import IDENTIFIER, AggregationKind, ModelDescription, OutputLevel
from .validator import DatasetSchema, LabelSchema, infer_dataflow

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

FeatureValue = float | tuple[float, ...]


def arity(value: FeatureValue) -> int:
    return len(value) if isinstance(value, tuple) else 1


def as_row(value: FeatureValue) -> list[float]:
    return list(value) if isinstance(value, tuple) else [value]


# ─── Domain types ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class GraphNode:
    id: str
    entity: str
    features: Mapping[str, FeatureValue] = field(default_factory=dict)


@dataclass(frozen=True)
class GraphEdge:
    source: str
    target: str
    position: int | None = None


@dataclass(frozen=True)
class HeterogeneousGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]
    # label name -> {node id: value} (per-node) or value (global)
    labels: Mapping[str, Any] = field(default_factory=dict)
    name: str = field(default="", compare=False)

    @cached_property
    def _by_entity(self) -> dict[str, tuple[str, ...]]:
        grouped: dict[str, list[str]] = {}
        for node in self.nodes:
            grouped.setdefault(node.entity, []).append(node.id)
        return {entity: tuple(sorted(ids)) for entity, ids in grouped.items()}

    @cached_property
    def _index(self) -> dict[str, GraphNode]:
        return {node.id: node for node in self.nodes}

    @cached_property
    def _rows(self) -> dict[str, int]:
        return {node_id: row for ids in self._by_entity.values() for row, node_id in enumerate(ids)}

    @property
    def entities(self) -> set[str]:
        return set(self._by_entity)

    def entity_nodes(self, entity: str) -> tuple[str, ...]:
        """Node ids of `entity` in ascending id order: the row order of its state matrix."""
        return self._by_entity.get(entity, ())

    def node(self, node_id: str) -> GraphNode:
        return self._index[node_id]

    def row_of(self, node_id: str) -> int:
        return self._rows[node_id]


# ─── Loading ────────────────────────────────────────────────────────────────

def _fail(graph_name: str, message: str) -> DatasetError:
    prefix = f"{graph_name}: " if graph_name else ""
    return DatasetError(f"{prefix}{message}")


def _node_id(value, path: str, name: str) -> str:
    if isinstance(value, bool) or not isinstance(value, (str, int)) or value == "":
        raise _fail(name, f"node id must be a non-empty string at {path}, got {value!r}")
    return str(value)


def _finite(value, path: str, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(name, f"expected a number at {path}, got {value!r}")
    if not math.isfinite(value):
        raise _fail(name, f"non-finite value {value!r} at {path}")
    return float(value)


def _value(value, path: str, name: str) -> FeatureValue:
    if isinstance(value, list):
        if not value:
            raise _fail(name, f"empty list at {path}")
        return tuple(_finite(v, f"{path}[{i}]", name) for i, v in enumerate(value))
    return _finite(value, path, name)


def _mapping(value, path: str, name: str) -> dict:
    if not isinstance(value, dict):
        raise _fail(name, f"{path} must be an object")
    return value


def _list(value, path: str, name: str) -> list:
    if not isinstance(value, list):
        raise _fail(name, f"{path} must be a list")
    return value


def graph_from_payload(payload: Mapping, name: str = "") -> HeterogeneousGraph:
    """Validate decoded node-link data and build the graph."""
    payload = _mapping(payload, "document", name)
    nodes: list[GraphNode] = []
    entity_of: dict[str, str] = {}
    for i, raw in enumerate(_list(payload.get("nodes", []), "nodes", name)):
        path = f"nodes[{i}]"
        raw = _mapping(raw, path, name)
        node_id = _node_id(raw.get("id"), f"{path}.id", name)
        if node_id in entity_of:
            raise _fail(name, f"duplicate node id '{node_id}' at {path}.id")
        entity = raw.get("entity")
        if not isinstance(entity, str) or not IDENTIFIER.match(entity):
            raise _fail(name, f"entity must be an identifier at {path}.entity, got {entity!r}")
        features = {
            str(key): _value(value, f"{path}.features.{key}", name)
            for key, value in _mapping(raw.get("features", {}), f"{path}.features", name).items()
        }
        entity_of[node_id] = entity
        nodes.append(GraphNode(node_id, entity, features))

    links_key = "links" if "links" in payload or "edges" not in payload else "edges"
    edges: list[GraphEdge] = []
    positions: set[tuple[str, str, int]] = set()
    for i, raw in enumerate(_list(payload.get(links_key, []), links_key, name)):
        path = f"{links_key}[{i}]"
        raw = _mapping(raw, path, name)
        endpoints = []
        for end in ("source", "target"):
            node_id = _node_id(raw.get(end), f"{path}.{end}", name)
            if node_id not in entity_of:
                raise _fail(name, f"unknown node id '{node_id}' at {path}.{end}")
            endpoints.append(node_id)
        source, target = endpoints
        position = raw.get("position")
        if position is not None:
            if isinstance(position, bool) or not isinstance(position, int) or position < 0:
                raise _fail(name, f"position must be a non-negative integer at {path}.position, got {position!r}")
            key = (target, entity_of[source], position)
            if key in positions:
                raise _fail(name, f"duplicate position {position} at {path}.position for target '{target}' "
                                  f"and source entity '{entity_of[source]}'")
            positions.add(key)
        edges.append(GraphEdge(source, target, position))

    labels: dict[str, Any] = {}
    for label, raw in _mapping(payload.get("labels", {}), "labels", name).items():
        path = f"labels.{label}"
        if isinstance(raw, dict):
            per_node = {}
            for node_id, value in raw.items():
                if node_id not in entity_of:
                    raise _fail(name, f"unknown node id '{node_id}' at {path}")
                per_node[node_id] = _value(value, f"{path}.{node_id}", name)
            labels[str(label)] = per_node
        else:
            labels[str(label)] = _value(raw, path, name)
    return HeterogeneousGraph(tuple(nodes), tuple(edges), labels, name)


def load_graph(json_text: str, name: str = "") -> HeterogeneousGraph:
    try:
        payload = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise _fail(name, f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return graph_from_payload(payload, name)


def load_graph_file(path: str | Path) -> HeterogeneousGraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"{path.name}: cannot read sample: {exc}") from exc
    return load_graph(text, path.name)


def _plain(value: FeatureValue):
    return list(value) if isinstance(value, tuple) else value


def graph_to_payload(graph: HeterogeneousGraph) -> dict:
    def label(value):
        if isinstance(value, Mapping):
            return {node_id: _plain(v) for node_id, v in value.items()}
        return _plain(value)

    links = []
    for edge in graph.edges:
        link = {"source": edge.source, "target": edge.target}
        if edge.position is not None:
            link["position"] = edge.position
        links.append(link)
    return {
        "directed": True,
        "multigraph": False,
        "graph": {},
        "nodes": [
            {"id": n.id, "entity": n.entity, "features": {k: _plain(v) for k, v in n.features.items()}}
            for n in graph.nodes
        ],
        "links": links,
        "labels": {name: label(value) for name, value in graph.labels.items()},
    }


def dump_graph(graph: HeterogeneousGraph) -> str:
    return json.dumps(graph_to_payload(graph))


# ─── NetworkX bridge ────────────────────────────────────────────────────────

def graph_from_networkx(G: nx.DiGraph, labels: Mapping | None = None, name: str = "") -> HeterogeneousGraph:
    """
    Nodes need an `entity` attribute and may carry `features`; edges may carry
    `position`. Labels default to G.graph["labels"].
    """
    payload = {
        "nodes": [
            {"id": node_id, "entity": data.get("entity"), "features": dict(data.get("features", {}))}
            for node_id, data in G.nodes(data=True)
        ],
        "links": [
            {"source": u, "target": v, **({"position": d["position"]} if "position" in d else {})}
            for u, v, d in G.edges(data=True)
        ],
        "labels": dict(labels if labels is not None else G.graph.get("labels", {})),
    }
    return graph_from_payload(json.loads(json.dumps(payload, default=_json_default)), name)


def _json_default(value):
    # numpy scalars and arrays left on NetworkX attributes
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def graph_to_networkx(graph: HeterogeneousGraph) -> nx.DiGraph:
    G = nx.DiGraph(labels=dict(graph.labels))
    for node in graph.nodes:
        G.add_node(node.id, entity=node.entity, features=dict(node.features))
    for edge in graph.edges:
        attrs = {} if edge.position is None else {"position": edge.position}
        G.add_edge(edge.source, edge.target, **attrs)
    return G


# ─── Staged adjacency ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class SourceAdjacency:
    """
    Edges from one source entity into a destination entity. `senders[i]`
    sends to `receivers[i]`; receivers ascend and each receiver's senders
    follow the group order (position for ordered aggregation, else node id).
    """
    entity: str
    senders: np.ndarray
    receivers: np.ndarray

    def counts(self, destination_count: int) -> np.ndarray:
        return np.bincount(self.receivers, minlength=destination_count)


@dataclass(frozen=True)
class PassingAdjacency:
    destination_entity: str
    destination_ids: tuple[str, ...]
    sources: tuple[SourceAdjacency, ...]

    @property
    def destination_count(self) -> int:
        return len(self.destination_ids)

    def sender_lists(self) -> list[list[list[int]]]:
        """[destination row][source index] -> sender rows, in group order."""
        lists = [[[] for _ in self.sources] for _ in self.destination_ids]
        for k, source in enumerate(self.sources):
            for sender, receiver in zip(source.senders.tolist(), source.receivers.tolist()):
                lists[receiver][k].append(sender)
        return lists


@dataclass(frozen=True)
class StagedAdjacency:
    stages: tuple[tuple[PassingAdjacency, ...], ...]

    def passing(self, stage: int, index: int) -> PassingAdjacency:
        return self.stages[stage][index]


def build_staged_adjacency(graph: HeterogeneousGraph, model: ModelDescription) -> StagedAdjacency:
    incoming: dict[tuple[str, str], list[GraphEdge]] = {}
    for edge in graph.edges:
        key = (graph.node(edge.source).entity, graph.node(edge.target).entity)
        incoming.setdefault(key, []).append(edge)

    stages = []
    for stage in model.message_passing.stages:
        passings = []
        for mp in stage.message_passings:
            ordered = mp.aggregation.kind == AggregationKind.ORDERED
            sources = []
            for source in mp.sources:
                edges = incoming.get((source.name, mp.destination_entity), [])
                if ordered:
                    for edge in edges:
                        if edge.position is None:
                            raise _fail(graph.name, f"destination node '{edge.target}' needs ordered messages "
                                                    f"but the edge from '{edge.source}' has no position")
                    edges = sorted(edges, key=lambda e: (graph.row_of(e.target), e.position))
                else:
                    edges = sorted(edges, key=lambda e: (graph.row_of(e.target), e.source))
                sources.append(SourceAdjacency(
                    source.name,
                    np.array([graph.row_of(e.source) for e in edges], dtype=np.int64),
                    np.array([graph.row_of(e.target) for e in edges], dtype=np.int64),
                ))
            passings.append(PassingAdjacency(
                mp.destination_entity, graph.entity_nodes(mp.destination_entity), tuple(sources),
            ))
        stages.append(tuple(passings))
    return StagedAdjacency(tuple(stages))


# ─── Feature and label binding ──────────────────────────────────────────────

def initial_states(graph: HeterogeneousGraph, model: ModelDescription) -> dict[str, np.ndarray]:
    """Per entity, an [n_nodes, state_dimension] matrix of concatenated, zero-padded features."""
    states = {}
    for entity in model.entities:
        ids = graph.entity_nodes(entity.name)
        matrix = np.zeros((len(ids), entity.state_dimension))
        for row, node_id in enumerate(ids):
            features = graph.node(node_id).features
            values: list[float] = []
            for feature in entity.features:
                if feature not in features:
                    raise _fail(graph.name, f"node '{node_id}' of entity '{entity.name}' lacks feature '{feature}'")
                values.extend(as_row(features[feature]))
            if len(values) > entity.state_dimension:
                raise _fail(graph.name, f"node '{node_id}' needs {len(values)} > "
                                        f"{entity.state_dimension} state slots")
            matrix[row, :len(values)] = values
        states[entity.name] = matrix
    return states


def bind_labels(graph: HeterogeneousGraph, model: ModelDescription) -> np.ndarray:
    """Label matrix shaped like the readout output: one row per output node, or one row."""
    readout = model.readout
    label = readout.output_label
    if label not in graph.labels:
        raise _fail(graph.name, f"label '{label}' is missing")
    raw = graph.labels[label]
    if readout.output_level == OutputLevel.GLOBAL:
        if isinstance(raw, Mapping):
            raise _fail(graph.name, f"label '{label}' is per-node but the readout is global")
        rows = [as_row(raw)]
    else:
        if not isinstance(raw, Mapping):
            raise _fail(graph.name, f"label '{label}' is global but the readout is per-node")
        entity = infer_dataflow(model).output.entity
        rows = []
        for node_id in graph.entity_nodes(entity):
            if node_id not in raw:
                raise _fail(graph.name, f"label '{label}' has no value for node '{node_id}'")
            rows.append(as_row(raw[node_id]))
    if any(len(r) != readout.output_dimension for r in rows):
        raise _fail(graph.name, f"label '{label}' values must have arity {readout.output_dimension}")
    return np.array(rows, dtype=np.float64).reshape(len(rows), readout.output_dimension)


# ─── Directories ────────────────────────────────────────────────────────────

def list_samples(directory: str | Path) -> list[Path]:
    """Sample files of a split in ascending file-name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory}: not a directory")
    files = sorted(p for p in directory.glob("*.json") if p.name != MANIFEST_NAME)
    if not files:
        raise DatasetError(f"no samples found in {directory}")
    return files


def infer_schema(directory: str | Path, limit: int | None = None) -> DatasetSchema:
    """
    Union of features and labels over the samples of `directory` (the first
    `limit` files when given). A feature or label whose arity differs between
    files is a fault naming both files.
    """
    features: dict[str, dict[str, int]] = {}
    labels: dict[str, LabelSchema] = {}
    edge_kinds: set[tuple[str, str]] = set()
    first_seen: dict[tuple, tuple[int, str]] = {}

    def record(key: tuple, value: int, what: str, sample: str):
        known, origin = first_seen.setdefault(key, (value, sample))
        if known != value:
            raise DatasetError(f"{what} has arity {known} in {origin} but {value} in {sample}")

    for path in list_samples(directory)[:limit]:
        graph = load_graph_file(path)
        for node in graph.nodes:
            available = features.setdefault(node.entity, {})
            for feature, value in node.features.items():
                record(("feature", node.entity, feature), arity(value),
                       f"feature '{feature}' of entity '{node.entity}'", path.name)
                available[feature] = arity(value)
        for edge in graph.edges:
            edge_kinds.add((graph.node(edge.source).entity, graph.node(edge.target).entity))
        for label, raw in graph.labels.items():
            if isinstance(raw, Mapping):
                if not raw:
                    continue
                entities = {graph.node(node_id).entity for node_id in raw}
                if len(entities) > 1:
                    raise DatasetError(f"{path.name}: label '{label}' spans entities {sorted(entities)}")
                width = {arity(v) for v in raw.values()}
                if len(width) > 1:
                    raise DatasetError(f"{path.name}: label '{label}' mixes arities {sorted(width)}")
                schema = LabelSchema(width.pop(), entities.pop())
            else:
                schema = LabelSchema(arity(raw), None)
            record(("label", label), schema.arity, f"label '{label}'", path.name)
            previous = labels.setdefault(label, schema)
            if previous.entity != schema.entity:
                raise DatasetError(f"label '{label}' is attached to {previous.entity or 'the graph'} in "
                                   f"{first_seen[('label', label)][1]} but to {schema.entity or 'the graph'} "
                                   f"in {path.name}")
    logger.info("inferred schema from %s: entities %s, labels %s", directory, sorted(features), sorted(labels))
    return DatasetSchema(features, labels, frozenset(edge_kinds))
