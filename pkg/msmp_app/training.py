"""
Losses, Adam, and the train / evaluate loops.

Each optimizer step averages the per-sample gradients of one accumulation
group. Per-sample work runs on a thread pool (eager mode) or as a Celery
group of `compute_sample_gradients` tasks; either way results are reduced in
sample order, so a run is a pure function of (model, dataset, config).
"""
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from django.conf import settings

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .dataset import HeterogeneousGraph, bind_labels, infer_schema, list_samples, load_graph_file
from .diagnostics import has_errors
from .exceptions import (
    CheckpointError,
    ConfigError,
    DatasetError,
    LossError,
    MsmpError,
    OptimizerError,
    ValidationFailed,
)
from .layers import ParameterStore, atomic_write_text, init_parameters
from .runtime import forward, run_model
from .schema import LossKind, ModelDescription, dump_model_description
from .validator import validate_dataset, validate_semantics

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
RELATIVE_FLOOR = 1e-9
ACCURACY_THRESHOLD = 0.5
LATEST_POINTER = "latest"
METRICS_LOG = "metrics.jsonl"


# ─── Configuration ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    group_size: int = 16
    checkpoint_dir: str = "checkpoints"
    validation_every: int = 1

    @classmethod
    def from_settings(cls, overrides: dict | None = None, seed: int | None = None) -> "TrainConfig":
        """settings.MSMPC_TRAINING, then `overrides`, then `seed`; validated by TrainConfigSerializer."""
        from .serializers import TrainConfigSerializer

        data = {**settings.MSMPC_TRAINING, **(overrides or {})}
        if seed is not None:
            data["seed"] = seed
        serializer = TrainConfigSerializer(data=data)
        if not serializer.is_valid():
            errors = {key: [str(e) for e in value] for key, value in serializer.errors.items()}
            raise ConfigError(f"invalid training configuration: {errors}", errors)
        return cls(**serializer.validated_data)


def worker_threads() -> int:
    """settings.MSMPC_THREADS as a positive int, or ConfigError."""
    from .serializers import WorkerSettingsSerializer

    serializer = WorkerSettingsSerializer(data={"threads": settings.MSMPC_THREADS})
    if not serializer.is_valid():
        errors = {"MSMPC_THREADS": [str(e) for e in serializer.errors["threads"]]}
        raise ConfigError(f"invalid worker configuration: {errors}", errors)
    return serializer.validated_data["threads"]


@dataclass(frozen=True)
class Metrics:
    loss: float
    mre: float
    accuracy: float | None = None


# ─── Loss ───────────────────────────────────────────────────────────────────

def _flatten(t: Tensor) -> Tensor:
    return ad.reshape(t, (t.data.size,))


def compute_loss(predictions: Tensor, labels: np.ndarray, kind: str) -> Tensor:
    """Scalar loss averaged over every predicted element."""
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape != labels.shape:
        raise LossError(f"predictions have shape {predictions.shape} but labels have shape {labels.shape}")
    count = labels.size
    if count == 0:
        raise LossError("nothing to score: predictions are empty")
    targets = ad.constant(labels)
    if kind == LossKind.MSE:
        error = ad.sub(predictions, targets)
        return ad.scale(ad.reduce_sum(_flatten(ad.mul(error, error))), 1.0 / count)
    if kind == LossKind.MAE:
        return ad.scale(ad.reduce_sum(_flatten(ad.absolute(ad.sub(predictions, targets)))), 1.0 / count)
    if kind == LossKind.BINARY_CROSS_ENTROPY:
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise LossError("binary_cross_entropy labels must be 0 or 1")
        p = ad.clip(predictions, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
        ones = ad.constant(np.ones(labels.shape))
        likelihood = ad.add(
            ad.mul(targets, ad.log(p)),
            ad.mul(ad.constant(1.0 - labels), ad.log(ad.sub(ones, p))),
        )
        return ad.scale(ad.reduce_sum(_flatten(likelihood)), -1.0 / count)
    raise LossError(f"unknown loss kind '{kind}'")


# ─── Metrics ────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Outcome:
    """Predictions, labels and loss of one sample."""
    predictions: np.ndarray
    labels: np.ndarray
    loss: float


def summarize(outcomes: Sequence[Outcome]) -> Metrics:
    """
    loss: mean per-sample loss. mre: mean over predicted elements of
    |y^ - y| / max(|y|, 1e-9). accuracy: share of elements whose prediction,
    thresholded at 0.5 (ties count as 1), equals the label; only defined when
    every label is 0 or 1.
    """
    if not outcomes:
        raise DatasetError("no samples to summarize")
    predictions = np.concatenate([o.predictions.reshape(-1) for o in outcomes])
    labels = np.concatenate([o.labels.reshape(-1) for o in outcomes])
    relative = np.abs(predictions - labels) / np.maximum(np.abs(labels), RELATIVE_FLOOR)
    accuracy = None
    if labels.size and np.all((labels == 0.0) | (labels == 1.0)):
        accuracy = float(np.mean((predictions >= ACCURACY_THRESHOLD) == (labels == 1.0)))
    return Metrics(
        loss=float(np.mean([o.loss for o in outcomes])),
        mre=float(np.mean(relative)) if relative.size else 0.0,
        accuracy=accuracy,
    )


# ─── Optimizer ──────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class AdamState:
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[ParameterStore, AdamState]:
    """One bias-corrected Adam update over every parameter."""
    missing = sorted(set(params) - set(grads))
    if missing:
        raise OptimizerError(f"no gradient for parameters {missing}")
    step = state.step + 1
    first, second, updated = {}, {}, {}
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise OptimizerError(f"gradient for '{name}' has shape {g.shape}, parameter has {params[name].shape}")
        m = config.beta1 * state.first.get(name, 0.0) + (1.0 - config.beta1) * g
        v = config.beta2 * state.second.get(name, 0.0) + (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** step)
        v_hat = v / (1.0 - config.beta2 ** step)
        updated[name] = params[name] - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
        first[name], second[name] = m, v
    return params.replace(updated), AdamState(step, first, second)


# ─── Per-sample gradients ───────────────────────────────────────────────────

@dataclass(frozen=True)
class SampleGradients:
    loss: float
    gradients: dict[str, np.ndarray]

    def to_payload(self) -> dict:
        return {"loss": self.loss, "gradients": ParameterStore(self.gradients).to_payload()}

    @classmethod
    def from_payload(cls, payload: dict) -> "SampleGradients":
        return cls(float(payload["loss"]), dict(ParameterStore.from_payload(payload["gradients"]).tensors))


def sample_gradients(model: ModelDescription, params: ParameterStore, graph: HeterogeneousGraph) -> SampleGradients:
    tape = Tape()
    weights = params.bind(tape)
    predictions = run_model(model, graph, weights)
    loss = compute_loss(predictions, bind_labels(graph, model), model.loss)
    if loss.tape is not tape:
        # predictions do not depend on any parameter
        return SampleGradients(float(loss.data), {n: np.zeros_like(params[n]) for n in params})
    grads = ad.backward(tape, loss)
    return SampleGradients(float(loss.data), {name: grads[w.node_id] for name, w in weights.items()})


def _sample_from_file(model: ModelDescription, params: ParameterStore, path: Path) -> SampleGradients:
    try:
        return sample_gradients(model, params, load_graph_file(path))
    except DatasetError:
        raise
    except MsmpError as exc:
        raise DatasetError(f"{path.name}: {exc}") from exc


def group_gradients(model: ModelDescription, params: ParameterStore, paths: Sequence[Path]) -> list[SampleGradients]:
    """Per-sample gradients of one accumulation group, in the order of `paths`."""
    if settings.CELERY_TASK_ALWAYS_EAGER:
        with ThreadPoolExecutor(max_workers=worker_threads()) as pool:
            return list(pool.map(lambda path: _sample_from_file(model, params, path), paths))

    from celery import group

    from .tasks import compute_sample_gradients

    model_yaml = dump_model_description(model)
    payload = params.to_payload()
    job = group(compute_sample_gradients.s(model_yaml, payload, str(path)) for path in paths)
    return [SampleGradients.from_payload(result) for result in job.apply_async().get()]


def mean_gradients(results: Sequence[SampleGradients]) -> dict[str, np.ndarray]:
    total: dict[str, np.ndarray] = {}
    for result in results:
        for name, grad in result.gradients.items():
            total[name] = total[name] + grad if name in total else grad.copy()
    return {name: grad / len(results) for name, grad in total.items()}


# ─── Loops ──────────────────────────────────────────────────────────────────

@dataclass
class TrainResult:
    params: ParameterStore
    history: list[dict]
    steps: int


def evaluate(model: ModelDescription, params: ParameterStore, directory: str | Path) -> Metrics:
    """Metrics over every sample of `directory` in ascending file-name order."""
    outcomes = []
    for path in list_samples(directory):
        graph = load_graph_file(path)
        predictions = forward(model, graph, params)
        labels = bind_labels(graph, model)
        loss = compute_loss(predictions, labels, model.loss)
        outcomes.append(Outcome(predictions.numpy(), labels, float(loss.data)))
    return summarize(outcomes)


def resolve_checkpoint(path: str | Path) -> Path:
    """A checkpoint file, or the file a checkpoint directory's `latest` pointer names."""
    path = Path(path)
    if not path.is_dir():
        return path
    pointer = path / LATEST_POINTER
    try:
        return path / pointer.read_text(encoding="utf-8").strip()
    except OSError as exc:
        raise CheckpointError(f"{path} has no readable '{LATEST_POINTER}' pointer: {exc}") from exc


def _has_samples(directory: Path) -> bool:
    try:
        return bool(list_samples(directory))
    except DatasetError:
        return False


def train(model: ModelDescription, dataset_root: str | Path, config: TrainConfig) -> TrainResult:
    """
    Train on `<root>/train`, validating on `<root>/validation` when present.
    Writes `epoch_<n>.json`, the `latest` pointer and one metrics.jsonl line
    per epoch under config.checkpoint_dir.

    metrics.jsonl is append-only: retraining into the same directory keeps the
    earlier runs' lines and adds its own after them, while same-numbered
    checkpoints and `latest` are overwritten.
    """
    worker_threads()
    root = Path(dataset_root)
    train_files = list_samples(root / "train")
    validation_dir = root / "validation"
    validate_on = validation_dir if _has_samples(validation_dir) else None

    diagnostics = validate_semantics(model) + validate_dataset(model, infer_schema(root / "train"))
    if has_errors(diagnostics):
        raise ValidationFailed(diagnostics)

    checkpoint_dir = Path(config.checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    log_path = checkpoint_dir / METRICS_LOG

    params = init_parameters(model, config.seed)
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    logger.info("training on %d samples for %d epochs (group size %d)",
                len(train_files), config.epochs, config.group_size)

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_files))
        losses: list[float] = []
        for start in range(0, len(order), config.group_size):
            paths = [train_files[i] for i in order[start:start + config.group_size]]
            results = group_gradients(model, params, paths)
            params, state = adam_step(params, mean_gradients(results), state, config)
            losses.extend(r.loss for r in results)

        record = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                  "val_loss": None, "val_mre": None, "val_accuracy": None}
        if validate_on is not None and epoch % config.validation_every == 0:
            metrics = evaluate(model, params, validate_on)
            record.update(val_loss=metrics.loss, val_mre=metrics.mre, val_accuracy=metrics.accuracy)
        record["wall_ms"] = round((time.perf_counter() - started) * 1000.0, 3)

        checkpoint = params.save(checkpoint_dir / f"epoch_{epoch}.json")
        atomic_write_text(checkpoint_dir / LATEST_POINTER, checkpoint.name + "\n")
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
        history.append(record)
        logger.info("epoch %d: train_loss=%.6g val_loss=%s val_mre=%s val_accuracy=%s",
                    epoch, record["train_loss"], record["val_loss"], record["val_mre"], record["val_accuracy"])

    return TrainResult(params, history, state.step)
