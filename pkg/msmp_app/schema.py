"""
Model description data model and YAML front end.

A model file declares the entities of a heterogeneous graph, one
message-passing iteration split into sequential stages, a readout pipeline and
the neural networks those sections reference:

    entities:
    - name: link
      state_dimension: 32
      initial_state:
      - type: build_state
        input: [capacity]
    - name: path
      state_dimension: 32
      initial_state:
      - type: build_state
        input: [traffic]
    message_passing:
      num_iterations: 8
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
            nn_name: recurrent1
    readout:
      output_label: delay
      pipeline:
      - type: neural_network
        input: [path]
        nn_name: readout1
    neural_networks:
    - name: recurrent1
      architecture: recurrent
      layers:
      - type: gru_cell
        units: 32
    - name: readout1
      architecture: feed_forward
      layers:
      - type: dense
        units: 1
        activation: linear

The lexical and syntactic phases happen here; semantic checks live in
validator.py.
"""
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

import graphviz
import yaml
from django.db import models

from .diagnostics import Diagnostic, in_document_order

IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


# ─── Closed vocabularies ────────────────────────────────────────────────────

class InitKind(models.TextChoices):
    BUILD_STATE = "build_state", "Build state"


class MessageKind(models.TextChoices):
    DIRECT_ASSIGNMENT = "direct_assignment", "Direct assignment"
    NEURAL_NETWORK = "neural_network", "Neural network"


class AggregationKind(models.TextChoices):
    SUM = "sum", "Sum"
    MEAN = "mean", "Mean"
    MIN = "min", "Min"
    MAX = "max", "Max"
    ORDERED = "ordered", "Ordered"
    CONCAT = "concat", "Concat"


class UpdateKind(models.TextChoices):
    NEURAL_NETWORK = "neural_network", "Neural network"


class ReadoutKind(models.TextChoices):
    POOLING_SUM = "pooling_sum", "Pooling sum"
    POOLING_MEAN = "pooling_mean", "Pooling mean"
    POOLING_MAX = "pooling_max", "Pooling max"
    NEURAL_NETWORK = "neural_network", "Neural network"
    ELEMENTWISE_PRODUCT = "elementwise_product", "Element-wise product"
    CONCAT_STATES = "concat_states", "Concat states"


class Architecture(models.TextChoices):
    FEED_FORWARD = "feed_forward", "Feed forward"
    RECURRENT = "recurrent", "Recurrent"


class LayerKind(models.TextChoices):
    DENSE = "dense", "Dense"
    GRU_CELL = "gru_cell", "GRU cell"


class Activation(models.TextChoices):
    RELU = "relu", "ReLU"
    SIGMOID = "sigmoid", "Sigmoid"
    TANH = "tanh", "Tanh"
    SELU = "selu", "SELU"
    LINEAR = "linear", "Linear"


class OutputLevel(models.TextChoices):
    PER_NODE = "per_node", "Per node"
    GLOBAL = "global", "Global"


class LossKind(models.TextChoices):
    MSE = "mse", "Mean squared error"
    MAE = "mae", "Mean absolute error"
    BINARY_CROSS_ENTROPY = "binary_cross_entropy", "Binary cross-entropy"


POOLING_KINDS = (ReadoutKind.POOLING_SUM, ReadoutKind.POOLING_MEAN, ReadoutKind.POOLING_MAX)

DEFAULT_ACTIVATION = Activation.RELU
DEFAULT_LOSS = LossKind.MSE
DEFAULT_OUTPUT_LEVEL = OutputLevel.PER_NODE
DEFAULT_OUTPUT_DIMENSION = 1


# ─── Domain types ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class InitOp:
    kind: str
    input: tuple[str, ...]


@dataclass(frozen=True)
class EntityDef:
    name: str
    state_dimension: int
    initial_state: tuple[InitOp, ...]

    @property
    def features(self) -> tuple[str, ...]:
        """Feature names in the order build_state concatenates them."""
        return tuple(name for op in self.initial_state for name in op.input)


@dataclass(frozen=True)
class MessageSpec:
    kind: str
    nn_name: str | None = None


@dataclass(frozen=True)
class SourceSpec:
    name: str
    message: MessageSpec


@dataclass(frozen=True)
class AggregationSpec:
    kind: str


@dataclass(frozen=True)
class UpdateSpec:
    kind: str
    nn_name: str


@dataclass(frozen=True)
class StageMessagePassing:
    destination_entity: str
    sources: tuple[SourceSpec, ...]
    aggregation: AggregationSpec
    update: UpdateSpec


@dataclass(frozen=True)
class StageDef:
    message_passings: tuple[StageMessagePassing, ...]


@dataclass(frozen=True)
class MessagePassingDef:
    num_iterations: int
    stages: tuple[StageDef, ...]


@dataclass(frozen=True)
class ReadoutOp:
    kind: str
    operands: tuple[str, ...]
    output_name: str
    nn_name: str | None = None


@dataclass(frozen=True)
class ReadoutDef:
    pipeline: tuple[ReadoutOp, ...]
    output_label: str
    output_level: str = DEFAULT_OUTPUT_LEVEL
    output_dimension: int = DEFAULT_OUTPUT_DIMENSION


@dataclass(frozen=True)
class LayerDef:
    kind: str
    units: int
    activation: str | None = None


@dataclass(frozen=True)
class NNDef:
    name: str
    architecture: str
    layers: tuple[LayerDef, ...]

    @property
    def output_dimension(self) -> int:
        return self.layers[-1].units

    @property
    def is_recurrent(self) -> bool:
        return self.architecture == Architecture.RECURRENT


@dataclass(frozen=True)
class ModelDescription:
    entities: tuple[EntityDef, ...]
    message_passing: MessagePassingDef
    readout: ReadoutDef
    neural_networks: tuple[NNDef, ...]
    loss: str = DEFAULT_LOSS
    # document path -> 1-based source line; not part of model identity
    locations: Mapping[str, int] = field(default_factory=dict, compare=False, repr=False)

    def entity(self, name: str) -> EntityDef | None:
        return next((e for e in self.entities if e.name == name), None)

    def nn(self, name: str | None) -> NNDef | None:
        return next((n for n in self.neural_networks if n.name == name), None)

    def line_of(self, path: str) -> int | None:
        """Line of `path`, falling back to the closest located ancestor."""
        while path:
            if path in self.locations:
                return self.locations[path]
            path = re.sub(r"(\.[^.\[\]]+|\[\d+\])$", "", path)
        return None


# ─── Parser ─────────────────────────────────────────────────────────────────

class _DocumentReader:
    """
    Walks the composed YAML node tree, building domain objects and collecting
    one diagnostic per fault. A faulty section yields None and reading
    continues with its siblings.
    """

    def __init__(self, loader: yaml.SafeLoader):
        self.loader = loader
        self.diagnostics: list[Diagnostic] = []
        self.locations: dict[str, int] = {}

    # ── primitives ──

    def _error(self, code: str, message: str, path: str, node: yaml.Node | None) -> None:
        line = node.start_mark.line + 1 if node is not None else None
        self.diagnostics.append(Diagnostic.error(code, message, path, line))

    def _mark(self, path: str, node: yaml.Node) -> None:
        self.locations[path] = node.start_mark.line + 1

    def _mapping(self, node, path, required=(), optional=()) -> dict[str, yaml.Node] | None:
        where = path or "document"
        if not isinstance(node, yaml.MappingNode):
            self._error("invalid-type", f"{where} must be a mapping", path, node)
            return None
        self._mark(path, node)
        fields: dict[str, yaml.Node] = {}
        for key_node, value_node in node.value:
            key = key_node.value if isinstance(key_node, yaml.ScalarNode) else None
            key_path = f"{path}.{key}" if path else str(key)
            if key in fields:
                self._error("duplicate-key", f"key '{key}' appears twice in {where}", key_path, key_node)
                continue
            if key not in required and key not in optional:
                self._error("unknown-key", f"unknown key '{key}' in {where}", key_path, key_node)
                continue
            fields[key] = value_node
            self._mark(key_path, value_node)
        for name in required:
            if name not in fields:
                self._error("missing-field", f"missing required field '{name}' in {where}", path, node)
        return fields

    def _sequence(self, node, path, what: str) -> list[yaml.Node] | None:
        if not isinstance(node, yaml.SequenceNode):
            self._error("invalid-type", f"{path} must be a list", path, node)
            return None
        if not node.value:
            self._error("empty-list", f"model must declare at least one {what}", path, node)
            return None
        return list(node.value)

    def _scalar(self, node) -> Any:
        if not isinstance(node, yaml.ScalarNode):
            return node
        try:
            return self.loader.construct_object(node, deep=True)
        except yaml.YAMLError:
            return node.value

    def _identifier(self, node, path) -> str | None:
        value = self._scalar(node)
        if not isinstance(value, str) or not IDENTIFIER.match(value):
            self._error("invalid-identifier", f"{path} must be an identifier, got {value!r}", path, node)
            return None
        return value

    def _positive_int(self, node, path) -> int | None:
        value = self._scalar(node)
        if isinstance(value, bool) or not isinstance(value, int):
            self._error("invalid-type", f"{path} must be an integer, got {value!r}", path, node)
            return None
        if value < 1:
            self._error("invalid-value", f"{path} must be >= 1, got {value}", path, node)
            return None
        return value

    def _choice(self, node, path, choices: type[models.TextChoices], what: str) -> str | None:
        value = self._scalar(node)
        if not isinstance(value, str) or value not in choices.values:
            self._error("unknown-kind", f"unknown {what} kind '{value}'", path, node)
            return None
        return choices(value)

    def _single(self, node, path, what: str) -> yaml.Node | None:
        """Unwrap the one-element lists used for `message` and `aggregation`."""
        items = self._sequence(node, path, what)
        if items is None:
            return None
        if len(items) != 1:
            self._error("list-length", f"{path} must list exactly one entry, got {len(items)}", path, node)
            return None
        return items[0]

    def _identifier_list(self, node, path, what: str) -> tuple[str, ...] | None:
        items = self._sequence(node, path, what)
        if items is None:
            return None
        names = [self._identifier(item, f"{path}[{i}]") for i, item in enumerate(items)]
        return None if None in names else tuple(names)

    def _each(self, node, path, what, read) -> tuple | None:
        items = self._sequence(node, path, what)
        if items is None:
            return None
        built = [read(item, f"{path}[{i}]") for i, item in enumerate(items)]
        return None if None in built else tuple(built)

    # ── sections ──

    def read_model(self, root) -> ModelDescription | None:
        fields = self._mapping(
            root, "",
            required=("entities", "message_passing", "readout", "neural_networks"),
            optional=("loss",),
        )
        if fields is None:
            return None
        entities = self._each(fields["entities"], "entities", "entity", self.read_entity) \
            if "entities" in fields else None
        message_passing = self.read_message_passing(fields["message_passing"], "message_passing") \
            if "message_passing" in fields else None
        readout = self.read_readout(fields["readout"], "readout") if "readout" in fields else None
        networks = self.read_networks(fields["neural_networks"]) if "neural_networks" in fields else None
        loss = self._choice(fields["loss"], "loss", LossKind, "loss") if "loss" in fields else DEFAULT_LOSS
        if None in (entities, message_passing, readout, networks, loss):
            return None
        return ModelDescription(entities, message_passing, readout, networks, loss, self.locations)

    def read_entity(self, node, path) -> EntityDef | None:
        fields = self._mapping(node, path, required=("name", "state_dimension", "initial_state"))
        if fields is None or len(fields) < 3:
            return None
        name = self._identifier(fields["name"], f"{path}.name")
        dimension = self._positive_int(fields["state_dimension"], f"{path}.state_dimension")
        initial = self._each(fields["initial_state"], f"{path}.initial_state", "initial-state op", self.read_init_op)
        if None in (name, dimension, initial):
            return None
        return EntityDef(name, dimension, initial)

    def read_init_op(self, node, path) -> InitOp | None:
        fields = self._mapping(node, path, required=("type", "input"))
        if fields is None or len(fields) < 2:
            return None
        kind = self._choice(fields["type"], f"{path}.type", InitKind, "initial-state")
        features = self._sequence(fields["input"], f"{path}.input", "input feature")
        names = None
        if features is not None:
            names = []
            for i, item in enumerate(features):
                value = self._scalar(item)
                if not isinstance(value, str) or not value:
                    self._error("invalid-type", f"feature names must be non-empty strings, got {value!r}",
                                f"{path}.input[{i}]", item)
                    names = None
                    break
                names.append(value)
        if kind is None or names is None:
            return None
        return InitOp(kind, tuple(names))

    def read_message_passing(self, node, path) -> MessagePassingDef | None:
        fields = self._mapping(node, path, required=("num_iterations", "stages"))
        if fields is None or len(fields) < 2:
            return None
        iterations = self._positive_int(fields["num_iterations"], f"{path}.num_iterations")
        stages = self._each(fields["stages"], f"{path}.stages", "stage", self.read_stage)
        if iterations is None or stages is None:
            return None
        return MessagePassingDef(iterations, stages)

    def read_stage(self, node, path) -> StageDef | None:
        fields = self._mapping(node, path, required=("stage_message_passings",))
        if not fields:
            return None
        passings = self._each(
            fields["stage_message_passings"], f"{path}.stage_message_passings",
            "stage message passing", self.read_stage_message_passing,
        )
        return StageDef(passings) if passings is not None else None

    def read_stage_message_passing(self, node, path) -> StageMessagePassing | None:
        fields = self._mapping(
            node, path, required=("destination_entity", "source_entities", "aggregation", "update"),
        )
        if fields is None or len(fields) < 4:
            return None
        destination = self._identifier(fields["destination_entity"], f"{path}.destination_entity")
        sources = self._each(fields["source_entities"], f"{path}.source_entities", "source entity", self.read_source)
        aggregation = self.read_aggregation(fields["aggregation"], f"{path}.aggregation")
        update = self.read_update(fields["update"], f"{path}.update")
        if None in (destination, sources, aggregation, update):
            return None
        return StageMessagePassing(destination, sources, aggregation, update)

    def read_source(self, node, path) -> SourceSpec | None:
        fields = self._mapping(node, path, required=("name", "message"))
        if fields is None or len(fields) < 2:
            return None
        name = self._identifier(fields["name"], f"{path}.name")
        message_node = self._single(fields["message"], f"{path}.message", "message")
        message = self.read_message(message_node, f"{path}.message[0]") if message_node is not None else None
        if name is None or message is None:
            return None
        return SourceSpec(name, message)

    def read_message(self, node, path) -> MessageSpec | None:
        fields = self._mapping(node, path, required=("type",), optional=("nn_name",))
        if not fields or "type" not in fields:
            return None
        kind = self._choice(fields["type"], f"{path}.type", MessageKind, "message")
        if kind is None:
            return None
        nn_name = self._nn_reference(fields, path, needed=kind == MessageKind.NEURAL_NETWORK, node=node)
        if nn_name is False:
            return None
        return MessageSpec(kind, nn_name)

    def read_aggregation(self, node, path) -> AggregationSpec | None:
        item = self._single(node, path, "aggregation")
        if item is None:
            return None
        fields = self._mapping(item, f"{path}[0]", required=("type",))
        if not fields:
            return None
        kind = self._choice(fields["type"], f"{path}[0].type", AggregationKind, "aggregation")
        return AggregationSpec(kind) if kind is not None else None

    def read_update(self, node, path) -> UpdateSpec | None:
        fields = self._mapping(node, path, required=("type", "nn_name"))
        if fields is None or len(fields) < 2:
            return None
        kind = self._choice(fields["type"], f"{path}.type", UpdateKind, "update")
        nn_name = self._identifier(fields["nn_name"], f"{path}.nn_name")
        if kind is None or nn_name is None:
            return None
        return UpdateSpec(kind, nn_name)

    def _nn_reference(self, fields, path, needed: bool, node) -> str | None | bool:
        """nn_name is present exactly when the op kind needs one; False marks a fault."""
        if needed and "nn_name" not in fields:
            self._error("missing-field", f"missing required field 'nn_name' in {path}", path, node)
            return False
        if not needed and "nn_name" in fields:
            self._error("unexpected-field", f"'nn_name' is only allowed on neural_network ops in {path}",
                        f"{path}.nn_name", fields["nn_name"])
            return False
        if not needed:
            return None
        name = self._identifier(fields["nn_name"], f"{path}.nn_name")
        return False if name is None else name

    def read_readout(self, node, path) -> ReadoutDef | None:
        fields = self._mapping(
            node, path,
            required=("pipeline", "output_label"),
            optional=("output_level", "output_dimension"),
        )
        if fields is None or "pipeline" not in fields or "output_label" not in fields:
            return None
        pipeline = self._each(fields["pipeline"], f"{path}.pipeline", "readout op", self.read_readout_op)
        label = self._identifier(fields["output_label"], f"{path}.output_label")
        level = DEFAULT_OUTPUT_LEVEL
        if "output_level" in fields:
            level = self._choice(fields["output_level"], f"{path}.output_level", OutputLevel, "output level")
        dimension = DEFAULT_OUTPUT_DIMENSION
        if "output_dimension" in fields:
            dimension = self._positive_int(fields["output_dimension"], f"{path}.output_dimension")
        if None in (pipeline, label, level, dimension):
            return None
        return ReadoutDef(pipeline, label, level, dimension)

    def read_readout_op(self, node, path) -> ReadoutOp | None:
        fields = self._mapping(node, path, required=("type", "input"), optional=("nn_name", "output_name"))
        if fields is None or "type" not in fields or "input" not in fields:
            return None
        kind = self._choice(fields["type"], f"{path}.type", ReadoutKind, "readout")
        operands = self._identifier_list(fields["input"], f"{path}.input", "readout operand")
        output_name = f"readout_{path.rsplit('[', 1)[-1].rstrip(']')}"
        if "output_name" in fields:
            output_name = self._identifier(fields["output_name"], f"{path}.output_name")
        if kind is None:
            return None
        nn_name = self._nn_reference(fields, path, needed=kind == ReadoutKind.NEURAL_NETWORK, node=node)
        if nn_name is False or operands is None or output_name is None:
            return None
        return ReadoutOp(kind, operands, output_name, nn_name)

    def read_networks(self, node) -> tuple[NNDef, ...] | None:
        if isinstance(node, yaml.SequenceNode) and not node.value:
            return ()
        return self._each(node, "neural_networks", "neural network", self.read_network)

    def read_network(self, node, path) -> NNDef | None:
        fields = self._mapping(node, path, required=("name", "architecture", "layers"))
        if fields is None or len(fields) < 3:
            return None
        name = self._identifier(fields["name"], f"{path}.name")
        architecture = self._choice(fields["architecture"], f"{path}.architecture", Architecture, "architecture")
        layers = self._each(fields["layers"], f"{path}.layers", "layer", self.read_layer)
        if None in (name, architecture, layers):
            return None
        return NNDef(name, architecture, layers)

    def read_layer(self, node, path) -> LayerDef | None:
        fields = self._mapping(node, path, required=("type", "units"), optional=("activation",))
        if fields is None or "type" not in fields or "units" not in fields:
            return None
        kind = self._choice(fields["type"], f"{path}.type", LayerKind, "layer")
        units = self._positive_int(fields["units"], f"{path}.units")
        activation = None
        if kind == LayerKind.DENSE:
            activation = DEFAULT_ACTIVATION
            if "activation" in fields:
                activation = self._choice(fields["activation"], f"{path}.activation", Activation, "activation")
        elif kind is not None and "activation" in fields:
            self._error("unexpected-field", f"'activation' applies to dense layers only in {path}",
                        f"{path}.activation", fields["activation"])
            return None
        if kind is None or units is None or (kind == LayerKind.DENSE and activation is None):
            return None
        return LayerDef(kind, units, activation)


def parse_model_description(yaml_text: str) -> ModelDescription | list[Diagnostic]:
    """
    Parse a YAML model description.

    Returns the populated ModelDescription (defaults filled in) or the list of
    syntactic diagnostics, each with its document path and line.
    """
    loader = yaml.SafeLoader(yaml_text)
    try:
        try:
            root = loader.get_single_node()
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark or exc.context_mark
            line = mark.line + 1 if mark is not None else None
            return [Diagnostic.error("yaml-syntax", f"malformed YAML: {exc.problem or exc}", "", line)]
        except yaml.YAMLError as exc:
            return [Diagnostic.error("yaml-syntax", f"malformed YAML: {exc}")]
        if root is None:
            return [Diagnostic.error("missing-field", "model document is empty", "", 1)]
        reader = _DocumentReader(loader)
        model = reader.read_model(root)
    finally:
        loader.dispose()
    if reader.diagnostics or model is None:
        return in_document_order(reader.diagnostics) or [
            Diagnostic.error("invalid-type", "model document could not be read", "", 1)
        ]
    return model


# ─── Serialization ──────────────────────────────────────────────────────────

def model_to_dict(model: ModelDescription) -> dict:
    """Plain-data form with every default written out, in the YAML layout."""
    def message(spec: MessageSpec) -> dict:
        out = {"type": str(spec.kind)}
        if spec.nn_name is not None:
            out["nn_name"] = spec.nn_name
        return out

    def readout_op(op: ReadoutOp) -> dict:
        out = {"type": str(op.kind), "input": list(op.operands), "output_name": op.output_name}
        if op.nn_name is not None:
            out["nn_name"] = op.nn_name
        return out

    def layer(spec: LayerDef) -> dict:
        out = {"type": str(spec.kind), "units": spec.units}
        if spec.activation is not None:
            out["activation"] = str(spec.activation)
        return out

    return {
        "entities": [
            {
                "name": e.name,
                "state_dimension": e.state_dimension,
                "initial_state": [{"type": str(op.kind), "input": list(op.input)} for op in e.initial_state],
            }
            for e in model.entities
        ],
        "message_passing": {
            "num_iterations": model.message_passing.num_iterations,
            "stages": [
                {
                    "stage_message_passings": [
                        {
                            "destination_entity": mp.destination_entity,
                            "source_entities": [
                                {"name": s.name, "message": [message(s.message)]} for s in mp.sources
                            ],
                            "aggregation": [{"type": str(mp.aggregation.kind)}],
                            "update": {"type": str(mp.update.kind), "nn_name": mp.update.nn_name},
                        }
                        for mp in stage.message_passings
                    ]
                }
                for stage in model.message_passing.stages
            ],
        },
        "readout": {
            "output_label": model.readout.output_label,
            "output_level": str(model.readout.output_level),
            "output_dimension": model.readout.output_dimension,
            "pipeline": [readout_op(op) for op in model.readout.pipeline],
        },
        "neural_networks": [
            {"name": n.name, "architecture": str(n.architecture), "layers": [layer(l) for l in n.layers]}
            for n in model.neural_networks
        ],
        "loss": str(model.loss),
    }


def dump_model_description(model: ModelDescription) -> str:
    return yaml.safe_dump(model_to_dict(model), sort_keys=False, default_flow_style=False)


# ─── Visualization ──────────────────────────────────────────────────────────

def export_msmp_dot(model: ModelDescription) -> str:
    """
    DOT digraph of the MSMP graph: one node per entity (declaration order) and
    one edge per source -> destination pair per stage, labelled with the stage
    index, message kind (with its NN as `kind(nn)`), aggregation kind and
    update NN.
    """
    dot = graphviz.Digraph(
        name="msmp",
        graph_attr={"rankdir": "LR", "label": f"T = {model.message_passing.num_iterations}"},
        node_attr={"shape": "box"},
    )
    for entity in model.entities:
        dot.node(entity.name, label=f"{entity.name} [{entity.state_dimension}]")
    for stage_index, stage in enumerate(model.message_passing.stages, start=1):
        for mp in stage.message_passings:
            for source in mp.sources:
                message = source.message.kind
                if source.message.nn_name:
                    message = f"{message}({source.message.nn_name})"
                dot.edge(
                    source.name,
                    mp.destination_entity,
                    label=f"stage {stage_index}: {message} / {mp.aggregation.kind} / {mp.update.nn_name}",
                )
    return dot.source
