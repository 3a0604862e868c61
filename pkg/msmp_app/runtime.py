"""
Execution of a compiled model on one graph.

Each of the T iterations runs the stages in declared order. Message passings
of one stage all read the states as of stage entry and their updates land
together when the stage ends. Messages are computed per edge, grouped by
destination row and reduced with segment ops; ordered groups are padded to
the longest sequence and fed step by step to the recurrent update.
"""
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .dataset import (
    HeterogeneousGraph,
    PassingAdjacency,
    SourceAdjacency,
    StagedAdjacency,
    build_staged_adjacency,
    initial_states,
)
from .exceptions import AggregationError, LayerError
from .layers import ParameterStore, apply_feed_forward, apply_gru_cell
from .schema import (
    AggregationKind,
    MessageKind,
    ModelDescription,
    OutputLevel,
    ReadoutKind,
    StageMessagePassing,
)
from .validator import infer_dataflow

logger = logging.getLogger(__name__)

StateMap = dict[str, Tensor]
Weights = Mapping[str, Tensor]


@dataclass(frozen=True)
class AggregatedMessages:
    """
    m_v for every destination row. Reductions and concat fill `values`
    ([n, dim]); ordered aggregation fills `steps` (step t -> [n, dim]) and
    `masks` (step t -> 1.0 where row n has a t-th message).
    """
    kind: str
    values: Tensor | None = None
    steps: tuple[Tensor, ...] = ()
    masks: tuple[np.ndarray, ...] = field(default=())

    def sequence(self, row: int) -> list[np.ndarray]:
        return [step.data[row] for step, mask in zip(self.steps, self.masks) if mask[row]]


# ─── Message ────────────────────────────────────────────────────────────────

def compute_messages(
    states: StateMap,
    adjacency: SourceAdjacency,
    mp: StageMessagePassing,
    source_index: int,
    model: ModelDescription,
    weights: Weights,
) -> Tensor:
    """[n_edges, dim] messages of one source entity, in the adjacency's edge order."""
    spec = mp.sources[source_index].message
    senders = ad.gather_rows(states[adjacency.entity], adjacency.senders)
    if spec.kind == MessageKind.DIRECT_ASSIGNMENT:
        return senders
    receivers = ad.gather_rows(states[mp.destination_entity], adjacency.receivers)
    return apply_feed_forward(model.nn(spec.nn_name), weights, ad.concat([senders, receivers], axis=1))


# ─── Aggregation ────────────────────────────────────────────────────────────

def _empty_groups(adjacency: PassingAdjacency, counts: np.ndarray, kind: str) -> None:
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        node_id = adjacency.destination_ids[empty[0]]
        raise AggregationError(
            f"{kind} aggregation has no identity: destination '{node_id}' of entity "
            f"'{adjacency.destination_entity}' received no messages"
        )


def aggregate(messages: list[Tensor], adjacency: PassingAdjacency, kind: str) -> AggregatedMessages:
    """
    Reduce per-source message tensors to one m_v per destination. Groups pool
    the sources in declaration order; sum/mean of an empty group are zeros,
    every other kind faults on it.
    """
    count = adjacency.destination_count
    per_source = [source.counts(count) for source in adjacency.sources]
    counts = np.sum(per_source, axis=0) if per_source else np.zeros(count, dtype=np.int64)

    if kind == AggregationKind.CONCAT:
        for source, source_counts in zip(adjacency.sources, per_source):
            wrong = np.flatnonzero(source_counts != 1)
            if wrong.size:
                node_id = adjacency.destination_ids[wrong[0]]
                raise AggregationError(
                    f"concat aggregation needs exactly one '{source.entity}' message per destination; "
                    f"'{node_id}' received {source_counts[wrong[0]]}"
                )
        # one message per receiver and receivers ascend, so row i belongs to destination i
        return AggregatedMessages(kind, values=ad.concat(messages, axis=1))

    pooled = ad.concat(messages, axis=0) if len(messages) > 1 else messages[0]
    receivers = np.concatenate([source.receivers for source in adjacency.sources])

    if kind == AggregationKind.SUM:
        return AggregatedMessages(kind, values=ad.segment_sum(pooled, receivers, count))
    if kind == AggregationKind.MEAN:
        factors = np.divide(1.0, counts, out=np.zeros(count), where=counts > 0)
        return AggregatedMessages(kind, values=ad.scale_rows(ad.segment_sum(pooled, receivers, count), factors))
    if kind in (AggregationKind.MIN, AggregationKind.MAX):
        _empty_groups(adjacency, counts, kind)
        reduce = ad.segment_max if kind == AggregationKind.MAX else ad.segment_min
        return AggregatedMessages(kind, values=reduce(pooled, receivers, count))
    if kind == AggregationKind.ORDERED:
        _empty_groups(adjacency, counts, kind)
        offsets = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64) if count else counts
        steps, masks = [], []
        for t in range(int(counts.max()) if count else 0):
            present = counts > t
            steps.append(ad.gather_rows(pooled, np.where(present, offsets + t, 0)))
            masks.append(present.astype(np.float64))
        return AggregatedMessages(kind, steps=tuple(steps), masks=tuple(masks))
    raise AggregationError(f"unsupported aggregation kind '{kind}'")


# ─── Update ─────────────────────────────────────────────────────────────────

def update(
    states: StateMap,
    aggregated: AggregatedMessages,
    mp: StageMessagePassing,
    model: ModelDescription,
    weights: Weights,
) -> Tensor:
    nn = model.nn(mp.update.nn_name)
    h = states[mp.destination_entity]
    if aggregated.kind == AggregationKind.ORDERED:
        if not nn.is_recurrent:
            raise LayerError(f"{nn.name}: ordered aggregation needs a recurrent update NN")
        for step, mask in zip(aggregated.steps, aggregated.masks):
            gate = ad.constant(np.repeat(mask[:, None], h.shape[1], axis=1))
            stepped = apply_gru_cell(nn, weights, h, step)
            # rows whose sequence already ended keep their state
            h = ad.add(ad.mul(gate, stepped), ad.mul(ad.constant(1.0 - gate.data), h))
        return h
    if nn.is_recurrent:
        return apply_gru_cell(nn, weights, h, aggregated.values)
    return apply_feed_forward(nn, weights, ad.concat([h, aggregated.values], axis=1))


# ─── Message passing ────────────────────────────────────────────────────────

def run_stage(
    model: ModelDescription,
    stage_index: int,
    states: StateMap,
    adjacency: StagedAdjacency,
    weights: Weights,
) -> StateMap:
    """One stage: every message passing reads `states`; results replace them together."""
    stage = model.message_passing.stages[stage_index]
    written: StateMap = {}
    for m, mp in enumerate(stage.message_passings):
        passing = adjacency.passing(stage_index, m)
        messages = [
            compute_messages(states, source, mp, k, model, weights)
            for k, source in enumerate(passing.sources)
        ]
        aggregated = aggregate(messages, passing, mp.aggregation.kind)
        written[mp.destination_entity] = update(states, aggregated, mp, model, weights)
    return {**states, **written}


def run_message_passing(
    model: ModelDescription,
    graph: HeterogeneousGraph,
    weights: Weights,
    adjacency: StagedAdjacency | None = None,
) -> StateMap:
    adjacency = adjacency or build_staged_adjacency(graph, model)
    states: StateMap = {name: ad.constant(matrix) for name, matrix in initial_states(graph, model).items()}
    for iteration in range(model.message_passing.num_iterations):
        for stage_index in range(len(model.message_passing.stages)):
            states = run_stage(model, stage_index, states, adjacency, weights)
        logger.debug("%s: iteration %d done", graph.name or "graph", iteration + 1)
    return states


# ─── Readout ────────────────────────────────────────────────────────────────

def _pool(kind: str, value: Tensor, operand: str) -> Tensor:
    rows, dim = value.shape
    if kind == ReadoutKind.POOLING_SUM:
        pooled = ad.reduce_sum(value, axis=0)
    elif kind == ReadoutKind.POOLING_MEAN:
        pooled = ad.scale(ad.reduce_sum(value, axis=0), 1.0 / rows if rows else 0.0)
    else:
        if rows == 0:
            raise AggregationError(f"pooling_max over '{operand}' has no rows")
        pooled = ad.reduce_max(value, axis=0)
    return ad.reshape(pooled, (1, dim))


def run_readout(model: ModelDescription, states: StateMap, graph: HeterogeneousGraph, weights: Weights) -> Tensor:
    """
    Evaluate the readout pipeline. Per-node values have one row per node of
    their entity; global values are a single row.
    """
    values: dict[str, Tensor] = dict(states)
    result = None
    for op in model.readout.pipeline:
        operands = [values[name] for name in op.operands]
        if op.kind in (ReadoutKind.POOLING_SUM, ReadoutKind.POOLING_MEAN, ReadoutKind.POOLING_MAX):
            result = _pool(op.kind, operands[0], op.operands[0])
        elif op.kind == ReadoutKind.NEURAL_NETWORK:
            result = apply_feed_forward(model.nn(op.nn_name), weights, operands[0])
        elif op.kind == ReadoutKind.ELEMENTWISE_PRODUCT:
            result = ad.mul(operands[0], operands[1])
        else:
            result = ad.concat(operands, axis=1)
        values[op.output_name] = result
    return result


# ─── Whole model ────────────────────────────────────────────────────────────

def run_model(
    model: ModelDescription,
    graph: HeterogeneousGraph,
    weights: Weights,
    adjacency: StagedAdjacency | None = None,
) -> Tensor:
    """Predictions on whatever tape `weights` are bound to."""
    states = run_message_passing(model, graph, weights, adjacency)
    return run_readout(model, states, graph, weights)


def forward(model: ModelDescription, graph: HeterogeneousGraph, params: ParameterStore,
            tape: Tape | None = None) -> Tensor:
    """initial_states -> message passing -> readout; recorded on `tape` when one is given."""
    weights = params.bind(tape) if tape is not None else params.constants()
    return run_model(model, graph, weights)


def prediction_record(model: ModelDescription, graph: HeterogeneousGraph, predictions: np.ndarray) -> dict:
    """`{"graph": name, "predictions": {node id: value} | value}`; values are floats or lists."""
    def value(row: np.ndarray):
        return float(row[0]) if row.shape[0] == 1 else [float(v) for v in row]

    if model.readout.output_level == OutputLevel.GLOBAL:
        return {"graph": graph.name, "predictions": value(predictions[0])}
    entity = infer_dataflow(model).output.entity
    ids = graph.entity_nodes(entity)
    return {"graph": graph.name, "predictions": {node_id: value(predictions[i]) for i, node_id in enumerate(ids)}}
