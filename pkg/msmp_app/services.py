import json
import logging
from pathlib import Path

import yaml

from .dataset import MANIFEST_NAME, infer_schema, list_samples, load_graph_file
from .diagnostics import Diagnostic, has_errors
from .exceptions import ConfigError, DatasetError, ValidationFailed
from .layers import ParameterStore, atomic_write_text, check_compatible
from .runtime import forward, prediction_record
from .schema import ModelDescription, export_msmp_dot, parse_model_description
from .training import Metrics, TrainConfig, TrainResult, evaluate, resolve_checkpoint, train
from .validator import validate_dataset, validate_semantics
from .zoo.generators import GENERATORS, TopologyGenConfig

logger = logging.getLogger(__name__)


# ─── Models ─────────────────────────────────────────────────────────────────

def read_model(path: str | Path) -> tuple[ModelDescription | None, list[Diagnostic]]:
    """
    Parse and semantically check a model file.
    Returns (model, diagnostics); model is None when parsing failed.
    """
    parsed = parse_model_description(Path(path).read_text(encoding="utf-8"))
    if isinstance(parsed, list):
        return None, parsed
    return parsed, validate_semantics(parsed)


def load_model(path: str | Path) -> ModelDescription:
    """A compilable model, or ValidationFailed carrying every diagnostic."""
    model, diagnostics = read_model(path)
    if model is None or has_errors(diagnostics):
        raise ValidationFailed(diagnostics)
    for diagnostic in diagnostics:
        logger.warning("%s", diagnostic.format(str(path)))
    return model


def check_against_data(model: ModelDescription, data_root: str | Path) -> list[Diagnostic]:
    return validate_dataset(model, infer_schema(sample_dir(data_root, "train")))


# ─── Data ───────────────────────────────────────────────────────────────────

def sample_dir(data: str | Path, preferred: str) -> Path:
    """`data` itself when it holds samples, else its `preferred` split."""
    data = Path(data)
    if any(p.name != MANIFEST_NAME for p in data.glob("*.json")):
        return data
    if (data / preferred).is_dir():
        return data / preferred
    raise DatasetError(f"no samples found in {data} or {data / preferred}")


def load_params(model: ModelDescription, checkpoint: str | Path) -> ParameterStore:
    params = ParameterStore.load(resolve_checkpoint(checkpoint))
    check_compatible(model, params)
    return params


def read_train_overrides(config_path: str | Path | None) -> dict:
    if config_path is None:
        return {}
    try:
        overrides = yaml.safe_load(Path(config_path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{config_path}: malformed YAML: {exc}") from exc
    if overrides is None:
        return {}
    if not isinstance(overrides, dict):
        raise ConfigError(f"{config_path}: training overrides must be a mapping")
    return overrides


# ─── Subcommand bodies ──────────────────────────────────────────────────────

def run_training(model_path, data_root, config_path=None, seed=None, checkpoint_dir=None) -> TrainResult:
    model = load_model(model_path)
    overrides = read_train_overrides(config_path)
    if checkpoint_dir is not None:
        overrides["checkpoint_dir"] = str(checkpoint_dir)
    config = TrainConfig.from_settings(overrides, seed=seed)
    return train(model, data_root, config)


def predict_dataset(model_path, data, checkpoint, out) -> int:
    """One JSON prediction record per sample, one per line, in file-name order."""
    model = load_model(model_path)
    params = load_params(model, checkpoint)
    lines = []
    for path in list_samples(sample_dir(data, "validation")):
        graph = load_graph_file(path)
        lines.append(json.dumps(prediction_record(model, graph, forward(model, graph, params).numpy())))
    atomic_write_text(out, "".join(line + "\n" for line in lines))
    logger.info("wrote %d predictions to %s", len(lines), out)
    return len(lines)


def evaluate_dataset(model_path, data, checkpoint) -> Metrics:
    model = load_model(model_path)
    return evaluate(model, load_params(model, checkpoint), sample_dir(data, "validation"))


def write_dot(model_path, out) -> Path:
    return atomic_write_text(out, export_msmp_dot(load_model(model_path)))


def generate(task: str, out, **options) -> list[Path]:
    config = TopologyGenConfig(**{k: v for k, v in options.items() if v is not None})
    return GENERATORS[task](config, out)
