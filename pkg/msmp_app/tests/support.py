"""
Shared fixtures: a small known-good model, sample payloads, random
model/graph builders and a loop-by-loop reference interpreter.
"""
import json
from pathlib import Path

import numpy as np

from ..autodiff import Tape, backward
from ..dataset import HeterogeneousGraph, graph_from_payload
from ..layers import GRU_GATES, ParameterStore, init_parameters, parameter_name
from ..schema import (
    AggregationKind,
    AggregationSpec,
    EntityDef,
    InitOp,
    LayerDef,
    MessagePassingDef,
    MessageSpec,
    ModelDescription,
    NNDef,
    ReadoutDef,
    ReadoutOp,
    SourceSpec,
    StageDef,
    StageMessagePassing,
    UpdateSpec,
    parse_model_description,
)

# ─── A small link/path model ────────────────────────────────────────────────

ENTITIES = """\
entities:
- name: link
  state_dimension: 4
  initial_state:
  - type: build_state
    input: [capacity]
- name: path
  state_dimension: 4
  initial_state:
  - type: build_state
    input: [traffic]
"""

MESSAGE_PASSING = """\
message_passing:
  num_iterations: 2
  stages:
  - stage_message_passings:
    - destination_entity: path
      source_entities:
      - name: link
        message:
        - type: direct_assignment
      aggregation:
      - type: ordered
      update:
        type: neural_network
        nn_name: path_update
  - stage_message_passings:
    - destination_entity: link
      source_entities:
      - name: path
        message:
        - type: direct_assignment
      aggregation:
      - type: sum
      update:
        type: neural_network
        nn_name: link_update
"""

READOUT = """\
readout:
  output_label: delay
  pipeline:
  - type: neural_network
    input: [path]
    nn_name: readout
"""

NETWORKS = """\
neural_networks:
- name: path_update
  architecture: recurrent
  layers:
  - type: gru_cell
    units: 4
- name: link_update
  architecture: feed_forward
  layers:
  - type: dense
    units: 4
    activation: tanh
- name: readout
  architecture: feed_forward
  layers:
  - type: dense
    units: 3
    activation: relu
  - type: dense
    units: 1
    activation: linear
loss: mse
"""

LINK_PATH_MODEL = ENTITIES + MESSAGE_PASSING + READOUT + NETWORKS


def parse(text: str) -> ModelDescription:
    parsed = parse_model_description(text)
    if isinstance(parsed, list):
        raise AssertionError("model did not parse: " + "; ".join(d.format() for d in parsed))
    return parsed


def link_path_payload(delays=(0.5, 0.25)) -> dict:
    """Two links, two paths: p0 crosses l0 then l1, p1 crosses l1 only."""
    return {
        "directed": True,
        "multigraph": False,
        "graph": {},
        "nodes": [
            {"id": "l0", "entity": "link", "features": {"capacity": 0.4}},
            {"id": "l1", "entity": "link", "features": {"capacity": 0.8}},
            {"id": "p0", "entity": "path", "features": {"traffic": 0.7}},
            {"id": "p1", "entity": "path", "features": {"traffic": 0.2}},
        ],
        "links": [
            {"source": "l0", "target": "p0", "position": 0},
            {"source": "l1", "target": "p0", "position": 1},
            {"source": "l1", "target": "p1", "position": 0},
            {"source": "p0", "target": "l0"},
            {"source": "p0", "target": "l1"},
            {"source": "p1", "target": "l1"},
        ],
        "labels": {"delay": {"p0": delays[0], "p1": delays[1]}},
    }


def write_split(directory: Path, payloads) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, payload in enumerate(payloads):
        path = directory / f"sample_{i:05d}.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        paths.append(path)
    return paths


def conditioned_points(f, draw, count: int = 100, floor: float = 1e-3) -> list[np.ndarray]:
    """
    `count` points from `draw()` at which every backward gradient component of
    `f` is exactly zero or at least `floor` in magnitude. Near-zero components
    make a relative error meaningless.
    """
    points = []
    for _ in range(count * 20):
        point = draw()
        tape = Tape()
        x = tape.leaf(point)
        magnitude = np.abs(backward(tape, f(x))[x.node_id])
        if np.all((magnitude == 0.0) | (magnitude >= floor)):
            points.append(point)
            if len(points) == count:
                return points
    raise AssertionError(f"only {len(points)} of {count} points had well-conditioned gradients")


def perturbed(params: ParameterStore, seed: int, scale: float = 0.5) -> ParameterStore:
    """Same names and shapes, every entry redrawn (biases included)."""
    rng = np.random.default_rng(seed)
    return params.replace({name: rng.normal(0.0, scale, size=params[name].shape) for name in sorted(params)})


# ─── Random tiny models and conforming graphs ───────────────────────────────

_ACTIVATION_CHOICES = ("relu", "sigmoid", "tanh", "selu", "linear")
REDUCTIONS = ("sum", "mean", "min", "max")


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.networks: list[NNDef] = []

    def pick(self, options):
        return options[int(self.rng.integers(len(options)))]

    def feed_forward(self, units: int) -> str:
        name = f"nn{len(self.networks)}"
        depth = int(self.rng.integers(1, 3))
        layers = [LayerDef("dense", int(self.rng.integers(2, 4)), self.pick(_ACTIVATION_CHOICES))
                  for _ in range(depth - 1)]
        layers.append(LayerDef("dense", units, self.pick(_ACTIVATION_CHOICES)))
        self.networks.append(NNDef(name, "feed_forward", tuple(layers)))
        return name

    def recurrent(self, units: int) -> str:
        name = f"nn{len(self.networks)}"
        self.networks.append(NNDef(name, "recurrent", (LayerDef("gru_cell", units),)))
        return name


def random_model(rng: np.random.Generator, kinds=None) -> ModelDescription:
    """
    Entities a/b (dims 2-3, one scalar feature each), 1-2 stages, T in 1..3,
    aggregation drawn from `kinds` (default: all six).
    """
    kinds = kinds or tuple(AggregationKind.values)
    b = _Builder(rng)
    dims = {"a": int(rng.integers(2, 4)), "b": int(rng.integers(2, 4))}
    entities = (
        EntityDef("a", dims["a"], (InitOp("build_state", ("x",)),)),
        EntityDef("b", dims["b"], (InitOp("build_state", ("y",)),)),
    )
    stages = []
    for _ in range(int(rng.integers(1, 3))):
        destinations = [str(e) for e in rng.permutation(["a", "b"])[: int(rng.integers(1, 3))]]
        passings = []
        for destination in destinations:
            kind = b.pick(kinds)
            if kind == AggregationKind.ORDERED:
                sources = [b.pick(["a", "b"])]
            else:
                sources = [str(e) for e in rng.permutation(["a", "b"])[: int(rng.integers(1, 3))]]
            message_dim = int(rng.integers(2, 4))
            specs = []
            for source in sources:
                if dims[source] == message_dim and rng.random() < 0.5:
                    specs.append(SourceSpec(source, MessageSpec("direct_assignment")))
                else:
                    specs.append(SourceSpec(source, MessageSpec("neural_network", b.feed_forward(message_dim))))
            if kind == AggregationKind.ORDERED or rng.random() < 0.5:
                update = b.recurrent(dims[destination])
            else:
                update = b.feed_forward(dims[destination])
            passings.append(StageMessagePassing(destination, tuple(specs), AggregationSpec(kind),
                                                UpdateSpec("neural_network", update)))
        stages.append(StageDef(tuple(passings)))

    entity = b.pick(["a", "b"])
    shape = int(rng.integers(4))
    if shape == 0:
        pipeline = (ReadoutOp("neural_network", (entity,), "out", b.feed_forward(1)),)
        level = "per_node"
    elif shape == 1:
        pool = b.pick(["pooling_sum", "pooling_mean", "pooling_max"])
        pipeline = (
            ReadoutOp(pool, (entity,), "pooled"),
            ReadoutOp("neural_network", ("pooled",), "out", b.feed_forward(1)),
        )
        level = "global"
    elif shape == 2:
        pipeline = (
            ReadoutOp("neural_network", (entity,), "query", b.feed_forward(dims[entity])),
            ReadoutOp("elementwise_product", (entity, "query"), "product"),
            ReadoutOp("neural_network", ("product",), "out", b.feed_forward(1)),
        )
        level = "per_node"
    else:
        pipeline = (
            ReadoutOp("neural_network", (entity,), "extra", b.feed_forward(2)),
            ReadoutOp("concat_states", (entity, "extra"), "joined"),
            ReadoutOp("neural_network", ("joined",), "out", b.feed_forward(1)),
        )
        level = "per_node"
    return ModelDescription(
        entities=entities,
        message_passing=MessagePassingDef(int(rng.integers(1, 4)), tuple(stages)),
        readout=ReadoutDef(pipeline, "target", level, 1),
        neural_networks=tuple(b.networks),
        loss="mse",
    )


def random_graph(rng: np.random.Generator, model: ModelDescription) -> HeterogeneousGraph:
    """
    At most 6 nodes. Every (source, destination) entity pair feeding a concat
    gets exactly one sender per destination; min/max/ordered pairs at least one.
    """
    counts = {"a": int(rng.integers(1, 4)), "b": int(rng.integers(1, 4))}
    ids = {e: [f"{e}{i}" for i in range(n)] for e, n in counts.items()}
    needs: dict[tuple[str, str], str] = {}
    for stage in model.message_passing.stages:
        for mp in stage.message_passings:
            for source in mp.sources:
                pair = (source.name, mp.destination_entity)
                kind = mp.aggregation.kind
                if kind == AggregationKind.CONCAT:
                    needs[pair] = "one"
                elif kind in ("min", "max", "ordered") and needs.get(pair) != "one":
                    needs[pair] = "some"
                else:
                    needs.setdefault(pair, "any")
    links = []
    for (source, destination), need in sorted(needs.items()):
        for target in ids[destination]:
            pool = ids[source]
            if need == "one":
                size = 1
            elif need == "some":
                size = int(rng.integers(1, len(pool) + 1))
            else:
                size = int(rng.integers(0, len(pool) + 1))
            senders = [pool[i] for i in rng.permutation(len(pool))[:size]]
            for position, sender in enumerate(senders):
                links.append({"source": sender, "target": target, "position": position})
    nodes = [{"id": i, "entity": "a", "features": {"x": float(rng.normal())}} for i in ids["a"]]
    nodes += [{"id": i, "entity": "b", "features": {"y": float(rng.normal())}} for i in ids["b"]]
    rng.shuffle(nodes)
    return graph_from_payload({"nodes": nodes, "links": links, "labels": {}}, "random")


def random_case(seed: int, kinds=None):
    rng = np.random.default_rng(seed)
    model = random_model(rng, kinds)
    graph = random_graph(rng, model)
    params = perturbed(init_parameters(model, seed), seed + 1000)
    return model, graph, params


# ─── Reference interpreter ──────────────────────────────────────────────────

def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.where(x > 0, x, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if name == "tanh":
        return np.tanh(x)
    if name == "selu":
        alpha, lam = 1.6732632423543772, 1.0507009873554805
        return lam * np.where(x > 0, x, alpha * (np.exp(np.minimum(x, 0.0)) - 1.0))
    return x


def _dense(nn: NNDef, params: ParameterStore, x: np.ndarray) -> np.ndarray:
    for i, layer in enumerate(nn.layers):
        x = _activate(layer.activation, x @ params[parameter_name(nn.name, i, "kernel")]
                      + params[parameter_name(nn.name, i, "bias")])
    return x


def _gru(nn: NNDef, params: ParameterStore, h: np.ndarray, x: np.ndarray) -> np.ndarray:
    w = {f"{k}_{g}": params[parameter_name(nn.name, 0, f"{k}_{g}")]
         for k in ("kernel", "recurrent", "bias") for g in GRU_GATES}
    z = 1.0 / (1.0 + np.exp(-(x @ w["kernel_z"] + w["bias_z"] + h @ w["recurrent_z"])))
    r = 1.0 / (1.0 + np.exp(-(x @ w["kernel_r"] + w["bias_r"] + h @ w["recurrent_r"])))
    candidate = np.tanh(x @ w["kernel_h"] + w["bias_h"] + (r * h) @ w["recurrent_h"])
    return (1.0 - z) * h + z * candidate


def reference_forward(model: ModelDescription, graph: HeterogeneousGraph, params: ParameterStore) -> np.ndarray:
    """Node-by-node, edge-by-edge evaluation with no batching or segment ops."""
    states: dict[str, np.ndarray] = {}
    for entity in model.entities:
        for node in graph.nodes:
            if node.entity != entity.name:
                continue
            values = []
            for feature in entity.features:
                value = node.features[feature]
                values.extend(value if isinstance(value, tuple) else [value])
            row = np.zeros(entity.state_dimension)
            row[:len(values)] = values
            states[node.id] = row

    def senders(source_entity: str, target: str, ordered: bool) -> list[str]:
        edges = [e for e in graph.edges
                 if e.target == target and graph.node(e.source).entity == source_entity]
        key = (lambda e: e.position) if ordered else (lambda e: e.source)
        return [e.source for e in sorted(edges, key=key)]

    for _ in range(model.message_passing.num_iterations):
        for stage in model.message_passing.stages:
            written = {}
            for mp in stage.message_passings:
                kind = mp.aggregation.kind
                update_nn = model.nn(mp.update.nn_name)
                for target in sorted(n.id for n in graph.nodes if n.entity == mp.destination_entity):
                    h = states[target]
                    per_source = []
                    for source in mp.sources:
                        messages = []
                        for sender in senders(source.name, target, kind == "ordered"):
                            if source.message.kind == "direct_assignment":
                                messages.append(states[sender])
                            else:
                                joined = np.concatenate([states[sender], h])
                                messages.append(_dense(model.nn(source.message.nn_name), params, joined))
                        per_source.append(messages)
                    if kind == "ordered":
                        for message in per_source[0]:
                            h = _gru(update_nn, params, h, message)
                        written[target] = h
                        continue
                    if kind == "concat":
                        m = np.concatenate([messages[0] for messages in per_source])
                    else:
                        pooled = [m for messages in per_source for m in messages]
                        dim = _message_dim(model, mp)
                        if kind == "sum":
                            m = np.zeros(dim)
                            for message in pooled:
                                m = m + message
                        elif kind == "mean":
                            m = np.zeros(dim)
                            for message in pooled:
                                m = m + message
                            m = m * (1.0 / len(pooled)) if pooled else m
                        elif kind == "max":
                            m = np.max(np.stack(pooled), axis=0)
                        else:
                            m = np.min(np.stack(pooled), axis=0)
                    if update_nn.is_recurrent:
                        written[target] = _gru(update_nn, params, h, m)
                    else:
                        written[target] = _dense(update_nn, params, np.concatenate([h, m]))
            states.update(written)

    values: dict[str, tuple[str | None, list[np.ndarray]]] = {}
    for entity in model.entities:
        ids = sorted(n.id for n in graph.nodes if n.entity == entity.name)
        values[entity.name] = (entity.name, [states[i] for i in ids])
    result = None
    for op in model.readout.pipeline:
        operands = [values[name] for name in op.operands]
        entity, rows = operands[0]
        if op.kind.startswith("pooling_"):
            if op.kind == "pooling_sum":
                pooled = np.zeros(rows[0].shape)
                for row in rows:
                    pooled = pooled + row
            elif op.kind == "pooling_mean":
                pooled = np.zeros(rows[0].shape)
                for row in rows:
                    pooled = pooled + row
                pooled = pooled * (1.0 / len(rows))
            else:
                pooled = np.max(np.stack(rows), axis=0)
            result = (None, [pooled])
        elif op.kind == "neural_network":
            result = (entity, [_dense(model.nn(op.nn_name), params, row) for row in rows])
        elif op.kind == "elementwise_product":
            result = (entity, [x * y for x, y in zip(rows, operands[1][1])])
        else:
            result = (entity, [np.concatenate(parts) for parts in zip(*(o[1] for o in operands))])
        values[op.output_name] = result
    return np.stack(result[1])


def _message_dim(model: ModelDescription, mp: StageMessagePassing) -> int:
    source = mp.sources[0]
    if source.message.kind == "direct_assignment":
        return model.entity(source.name).state_dimension
    return model.nn(source.message.nn_name).output_dimension
