"""
Semantic analysis of model descriptions.

Faults come back as Diagnostic lists in document order; an empty error set
means the model compiles. Dimensions are inferred along the dataflow:

  * message dim = source state_dimension (direct_assignment) or the message
    NN's final units; message NN input = source dim + destination dim
  * aggregated dim = message dim, except concat (sum of per-source dims)
  * feed-forward update input = destination dim + aggregated dim, output must
    equal the destination state_dimension; a recurrent update takes the
    aggregated dim as input and its units must equal state_dimension
"""
from dataclasses import dataclass, field

from .diagnostics import Diagnostic, has_errors, in_document_order
from .exceptions import ValidationFailed
from .schema import (
    POOLING_KINDS,
    AggregationKind,
    Activation,
    Architecture,
    LayerKind,
    LossKind,
    MessageKind,
    ModelDescription,
    OutputLevel,
    ReadoutKind,
)


@dataclass(frozen=True)
class LabelSchema:
    arity: int
    entity: str | None = None   # None for graph-level labels


@dataclass(frozen=True)
class DatasetSchema:
    """Feature names/arities per entity, labels, and (source, target) entity pairs seen on edges."""
    features: dict[str, dict[str, int]] = field(default_factory=dict)
    labels: dict[str, LabelSchema] = field(default_factory=dict)
    edge_kinds: frozenset[tuple[str, str]] = frozenset()

    @property
    def entities(self) -> set[str]:
        return set(self.features)


@dataclass(frozen=True)
class Operand:
    """Shape of a readout value: per-row dimension and the entity its rows belong to."""
    dimension: int
    entity: str | None


@dataclass
class Dataflow:
    nn_inputs: dict[str, int] = field(default_factory=dict)
    operands: dict[str, Operand] = field(default_factory=dict)
    output: Operand | None = None


class _SemanticPass:
    def __init__(self, model: ModelDescription):
        self.model = model
        self.diagnostics: list[Diagnostic] = []
        self.flow = Dataflow()
        self.used_nns: set[str] = set()
        self.dims = {e.name: e.state_dimension for e in model.entities}

    def error(self, code: str, message: str, path: str) -> None:
        self.diagnostics.append(Diagnostic.error(code, message, path, self.model.line_of(path)))

    def warning(self, code: str, message: str, path: str) -> None:
        self.diagnostics.append(Diagnostic.warning(code, message, path, self.model.line_of(path)))

    def run(self) -> list[Diagnostic]:
        self.check_declarations()
        self.check_networks()
        self.check_message_passing()
        self.check_readout()
        self.check_unused()
        return in_document_order(self.diagnostics)

    # ── declarations ──

    def check_declarations(self) -> None:
        seen: set[str] = set()
        for i, entity in enumerate(self.model.entities):
            if entity.name in seen:
                self.error("duplicate-entity", f"entity '{entity.name}' is declared twice", f"entities[{i}].name")
            seen.add(entity.name)
            features = entity.features
            if len(features) > entity.state_dimension:
                self.error(
                    "state-overflow",
                    f"entity '{entity.name}' reads {len(features)} features into "
                    f"state_dimension {entity.state_dimension}",
                    f"entities[{i}].initial_state",
                )
        seen.clear()
        for i, nn in enumerate(self.model.neural_networks):
            if nn.name in seen:
                self.error("duplicate-nn", f"neural network '{nn.name}' is declared twice",
                           f"neural_networks[{i}].name")
            seen.add(nn.name)

    def check_networks(self) -> None:
        for i, nn in enumerate(self.model.neural_networks):
            path = f"neural_networks[{i}]"
            kinds = [layer.kind for layer in nn.layers]
            if nn.architecture == Architecture.RECURRENT:
                if kinds != [LayerKind.GRU_CELL]:
                    self.error("recurrent-layers",
                               f"recurrent NN '{nn.name}' must contain exactly one gru_cell layer", f"{path}.layers")
            elif LayerKind.GRU_CELL in kinds:
                index = kinds.index(LayerKind.GRU_CELL)
                self.error("layer-architecture-mismatch",
                           f"feed_forward NN '{nn.name}' cannot contain a gru_cell layer",
                           f"{path}.layers[{index}].type")

    def _nn(self, name: str, path: str, role: str):
        nn = self.model.nn(name)
        if nn is None:
            self.error("unknown-nn", f"{role} references undeclared neural network '{name}'", path)
            return None
        self.used_nns.add(name)
        return nn

    def _require_input(self, nn, dimension: int, path: str) -> None:
        known = self.flow.nn_inputs.setdefault(nn.name, dimension)
        if known != dimension:
            self.error("nn-input-mismatch",
                       f"neural network '{nn.name}' is fed {dimension} inputs here but {known} elsewhere", path)

    # ── message passing ──

    def check_message_passing(self) -> None:
        for s, stage in enumerate(self.model.message_passing.stages):
            destinations: set[str] = set()
            for m, mp in enumerate(stage.message_passings):
                path = f"message_passing.stages[{s}].stage_message_passings[{m}]"
                destination_dim = self.dims.get(mp.destination_entity)
                if destination_dim is None:
                    self.error("unknown-entity", f"undeclared destination entity '{mp.destination_entity}'",
                               f"{path}.destination_entity")
                elif mp.destination_entity in destinations:
                    self.error("duplicate-destination",
                               f"entity '{mp.destination_entity}' is updated twice in stage {s + 1}",
                               f"{path}.destination_entity")
                destinations.add(mp.destination_entity)
                message_dims = self.check_sources(mp, path, destination_dim)
                aggregated = self.check_aggregation(mp, path, message_dims)
                self.check_update(mp, path, destination_dim, aggregated)

    def check_sources(self, mp, path, destination_dim) -> list[int | None]:
        dims: list[int | None] = []
        for j, source in enumerate(mp.sources):
            source_path = f"{path}.source_entities[{j}]"
            source_dim = self.dims.get(source.name)
            if source_dim is None:
                self.error("unknown-entity", f"undeclared source entity '{source.name}'", f"{source_path}.name")
            if source.message.kind == MessageKind.DIRECT_ASSIGNMENT:
                dims.append(source_dim)
                continue
            nn = self._nn(source.message.nn_name, f"{source_path}.message[0].nn_name", "message")
            if nn is None:
                dims.append(None)
                continue
            if nn.is_recurrent:
                self.error("message-nn-recurrent", f"message NN '{nn.name}' must be feed_forward",
                           f"{source_path}.message[0].nn_name")
            if source_dim is not None and destination_dim is not None:
                self._require_input(nn, source_dim + destination_dim, f"{source_path}.message[0].nn_name")
            dims.append(nn.output_dimension)
        return dims

    def check_aggregation(self, mp, path, message_dims) -> int | None:
        kind = mp.aggregation.kind
        aggregation_path = f"{path}.aggregation[0].type"
        if kind == AggregationKind.ORDERED:
            if len(mp.sources) != 1:
                self.error("ordered-multiple-sources",
                           f"ordered aggregation takes exactly one source entity, got {len(mp.sources)}",
                           aggregation_path)
                return None
            update_nn = self.model.nn(mp.update.nn_name)
            if update_nn is not None and not update_nn.is_recurrent:
                self.error("ordered-needs-recurrent",
                           f"ordered aggregation needs a recurrent update NN, '{update_nn.name}' is feed_forward",
                           aggregation_path)
        if None in message_dims:
            return None
        if kind == AggregationKind.CONCAT:
            return sum(message_dims)
        if len(set(message_dims)) > 1:
            self.error("message-dim-mismatch",
                       f"{kind} aggregation needs equal message dimensions, got {message_dims}", aggregation_path)
            return None
        return message_dims[0]

    def check_update(self, mp, path, destination_dim, aggregated) -> None:
        update_path = f"{path}.update.nn_name"
        nn = self._nn(mp.update.nn_name, update_path, "update")
        if nn is None or destination_dim is None:
            return
        if nn.is_recurrent:
            if aggregated is not None:
                self._require_input(nn, aggregated, update_path)
        elif aggregated is not None:
            self._require_input(nn, destination_dim + aggregated, update_path)
        if nn.output_dimension != destination_dim:
            self.error(
                "state-dim-mismatch",
                f"update NN '{nn.name}' produces {nn.output_dimension} but entity "
                f"'{mp.destination_entity}' has state_dimension {destination_dim}",
                update_path,
            )

    # ── readout ──

    def check_readout(self) -> None:
        readout = self.model.readout
        names = {e.name: Operand(e.state_dimension, e.name) for e in self.model.entities}
        later = {op.output_name: i for i, op in enumerate(readout.pipeline)}
        result: Operand | None = None
        for i, op in enumerate(readout.pipeline):
            path = f"readout.pipeline[{i}]"
            if op.output_name in names:
                self.error("duplicate-operand", f"readout output '{op.output_name}' shadows an existing name",
                           f"{path}.output_name")
            operands = []
            for k, name in enumerate(op.operands):
                if name in names:
                    operands.append(names[name])
                elif later.get(name, -1) >= i:
                    self.error("readout-cycle", f"readout op {i} reads '{name}' before it is produced",
                               f"{path}.input[{k}]")
                    operands.append(None)
                else:
                    self.error("unknown-operand", f"readout operand '{name}' is neither an entity nor an output",
                               f"{path}.input[{k}]")
                    operands.append(None)
            result = self.readout_result(op, operands, path)
            if result is not None:
                names[op.output_name] = result
                self.flow.operands[op.output_name] = result
        if result is None:
            return
        self.flow.output = result
        final_path = f"readout.pipeline[{len(readout.pipeline) - 1}]"
        if result.dimension != readout.output_dimension:
            self.error("readout-output-mismatch",
                       f"readout produces {result.dimension} values per row but label "
                       f"'{readout.output_label}' has arity {readout.output_dimension}", final_path)
        per_node = result.entity is not None
        if per_node != (readout.output_level == OutputLevel.PER_NODE):
            produced = "per-node" if per_node else "global"
            self.error("readout-level-mismatch",
                       f"readout declares output_level {readout.output_level} but produces a {produced} value",
                       final_path)
        last = readout.pipeline[-1]
        final_nn = self.model.nn(last.nn_name) if last.kind == ReadoutKind.NEURAL_NETWORK else None
        if self.model.loss == LossKind.BINARY_CROSS_ENTROPY and (
            final_nn is None or final_nn.layers[-1].activation != Activation.SIGMOID
        ):
            self.warning("unbounded-probability",
                         "binary_cross_entropy expects the readout to end in a sigmoid layer", final_path)

    def readout_result(self, op, operands, path) -> Operand | None:
        expected = {ReadoutKind.ELEMENTWISE_PRODUCT: 2}.get(op.kind, 1)
        if op.kind == ReadoutKind.CONCAT_STATES:
            if len(operands) < 2:
                self.error("operand-count", f"concat_states needs at least 2 operands, got {len(operands)}",
                           f"{path}.input")
                return None
        elif len(operands) != expected:
            self.error("operand-count", f"{op.kind} takes exactly {expected} operand(s), got {len(operands)}",
                       f"{path}.input")
            return None
        if None in operands:
            return None
        first = operands[0]
        if op.kind in POOLING_KINDS:
            if first.entity is None:
                self.error("operand-row-mismatch", f"{op.kind} needs per-node states, got a global value",
                           f"{path}.input[0]")
                return None
            return Operand(first.dimension, None)
        if op.kind == ReadoutKind.NEURAL_NETWORK:
            nn = self._nn(op.nn_name, f"{path}.nn_name", "readout")
            if nn is None:
                return None
            if nn.is_recurrent:
                self.error("readout-nn-recurrent", f"readout NN '{nn.name}' must be feed_forward", f"{path}.nn_name")
                return None
            self._require_input(nn, first.dimension, f"{path}.nn_name")
            return Operand(nn.output_dimension, first.entity)
        if any(o.entity != first.entity for o in operands):
            self.error("operand-row-mismatch",
                       f"{op.kind} operands must have the same rows, got {[o.entity for o in operands]}",
                       f"{path}.input")
            return None
        if op.kind == ReadoutKind.ELEMENTWISE_PRODUCT:
            if operands[0].dimension != operands[1].dimension:
                self.error("operand-dim-mismatch",
                           f"elementwise_product needs equal dimensions, got "
                           f"{operands[0].dimension} and {operands[1].dimension}", f"{path}.input")
                return None
            return first
        return Operand(sum(o.dimension for o in operands), first.entity)

    def check_unused(self) -> None:
        for i, nn in enumerate(self.model.neural_networks):
            if nn.name not in self.used_nns:
                self.warning("unused-nn", f"neural network '{nn.name}' is never referenced",
                             f"neural_networks[{i}].name")


def validate_semantics(model: ModelDescription) -> list[Diagnostic]:
    return _SemanticPass(model).run()


def require_valid(model: ModelDescription) -> list[Diagnostic]:
    """Semantic diagnostics of a model that compiles; ValidationFailed otherwise."""
    diagnostics = validate_semantics(model)
    if has_errors(diagnostics):
        raise ValidationFailed(diagnostics)
    return diagnostics


def infer_dataflow(model: ModelDescription) -> Dataflow:
    """NN input dimensions and readout operand shapes of a (valid) model."""
    semantic = _SemanticPass(model)
    semantic.run()
    return semantic.flow


def validate_dataset(model: ModelDescription, schema: DatasetSchema) -> list[Diagnostic]:
    diagnostics: list[Diagnostic] = []

    def report(factory, code, message, path):
        diagnostics.append(factory(code, message, path, model.line_of(path)))

    for i, entity in enumerate(model.entities):
        path = f"entities[{i}]"
        if entity.name not in schema.features:
            report(Diagnostic.warning, "missing-entity",
                   f"entity '{entity.name}' does not occur in the dataset", f"{path}.name")
            continue
        available = schema.features[entity.name]
        total = 0
        for j, op in enumerate(entity.initial_state):
            for k, feature in enumerate(op.input):
                if feature not in available:
                    report(Diagnostic.error, "missing-feature",
                           f"feature '{feature}' of entity '{entity.name}' is missing from the dataset",
                           f"{path}.initial_state[{j}].input[{k}]")
                else:
                    total += available[feature]
        if total > entity.state_dimension:
            report(Diagnostic.error, "state-overflow",
                   f"features of '{entity.name}' need {total} > {entity.state_dimension} state slots",
                   f"{path}.state_dimension")

    readout = model.readout
    label = schema.labels.get(readout.output_label)
    if label is None:
        report(Diagnostic.error, "missing-label",
               f"label '{readout.output_label}' is missing from the dataset", "readout.output_label")
    else:
        if label.arity != readout.output_dimension:
            report(Diagnostic.error, "label-arity-mismatch",
                   f"label '{readout.output_label}' has arity {label.arity}, readout produces "
                   f"{readout.output_dimension}", "readout.output_label")
        per_node = label.entity is not None
        if per_node != (readout.output_level == OutputLevel.PER_NODE):
            report(Diagnostic.error, "label-level-mismatch",
                   f"label '{readout.output_label}' is {'per-node' if per_node else 'global'} but readout "
                   f"output_level is {readout.output_level}", "readout.output_level")
        output = infer_dataflow(model).output
        if per_node and output is not None and output.entity not in (None, label.entity):
            report(Diagnostic.error, "label-entity-mismatch",
                   f"label '{readout.output_label}' is attached to '{label.entity}' nodes but the readout "
                   f"predicts one row per '{output.entity}' node", "readout.output_label")
    return in_document_order(diagnostics)
