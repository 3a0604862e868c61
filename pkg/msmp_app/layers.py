"""
Feed-forward stacks and the GRU cell the model DSL can reference.

Parameters live in a ParameterStore under `nn_name/layer_<i>/<kind>`; the
apply_* functions read them as tape-bound Tensors so the same code serves
inference and training.
"""
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .exceptions import CheckpointError, LayerError
from .schema import Activation, LayerKind, ModelDescription, NNDef

logger = logging.getLogger(__name__)

GRU_GATES = ("z", "r", "h")

_ACTIVATIONS = {
    Activation.RELU: ad.relu,
    Activation.SIGMOID: ad.sigmoid,
    Activation.TANH: ad.tanh,
    Activation.SELU: ad.selu,
    Activation.LINEAR: lambda t: t,
}


def parameter_name(nn_name: str, layer: int, kind: str) -> str:
    return f"{nn_name}/layer_{layer}/{kind}"


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write to a temp file in the target directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


@dataclass(frozen=True)
class ParameterStore:
    """Named trainable arrays. Shapes are fixed once the store is built."""
    tensors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for value in self.tensors.values():
            value.flags.writeable = False

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: value.shape for name, value in self.tensors.items()}

    def count(self) -> int:
        return int(sum(value.size for value in self.tensors.values()))

    def merge(self, other: "ParameterStore") -> "ParameterStore":
        clash = set(self.tensors) & set(other.tensors)
        if clash:
            raise LayerError(f"parameter names defined twice: {sorted(clash)}")
        return ParameterStore({**self.tensors, **other.tensors})

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ParameterStore":
        """New store with some arrays swapped for same-shaped ones."""
        merged = dict(self.tensors)
        for name, value in updates.items():
            if name not in merged:
                raise LayerError(f"unknown parameter '{name}'")
            if value.shape != merged[name].shape:
                raise LayerError(f"parameter '{name}' has shape {merged[name].shape}, got {value.shape}")
            merged[name] = np.array(value, dtype=np.float64)
        return ParameterStore(merged)

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        """Register every array as a leaf of `tape` (sorted by name)."""
        return {name: tape.leaf(self.tensors[name]) for name in sorted(self.tensors)}

    def constants(self) -> dict[str, Tensor]:
        return {name: Tensor(value) for name, value in self.tensors.items()}

    # ── checkpoint format: {name: {"shape": [...], "values": [row-major floats]}} ──

    def to_payload(self) -> dict:
        return {
            name: {"shape": list(value.shape), "values": value.reshape(-1).tolist()}
            for name, value in sorted(self.tensors.items())
        }

    @classmethod
    def from_payload(cls, payload: Mapping) -> "ParameterStore":
        tensors = {}
        for name, entry in payload.items():
            try:
                shape = tuple(int(d) for d in entry["shape"])
                values = np.array(entry["values"], dtype=np.float64)
                tensors[name] = values.reshape(shape)
            except (KeyError, TypeError, ValueError) as exc:
                raise CheckpointError(f"parameter '{name}' is malformed: {exc}") from exc
        return cls(tensors)

    def save(self, path: str | Path) -> Path:
        return atomic_write_text(path, json.dumps(self.to_payload()))

    @classmethod
    def load(cls, path: str | Path) -> "ParameterStore":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise CheckpointError(f"checkpoint {path} must be a JSON object")
        return cls.from_payload(payload)


# ─── Initialization ─────────────────────────────────────────────────────────

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def build_parameters(nn: NNDef, input_dim: int, rng_seed: int) -> ParameterStore:
    """
    Glorot-uniform kernels and zero biases for every layer of `nn`.
    A gru_cell gets kernel_{z,r,h} (input x units), recurrent_{z,r,h}
    (units x units) and bias_{z,r,h}. Same seed, same arrays.
    """
    if input_dim < 1:
        raise LayerError(f"{nn.name}: input dimension must be >= 1, got {input_dim}")
    rng = np.random.default_rng(rng_seed)
    tensors: dict[str, np.ndarray] = {}
    fan_in = input_dim
    for i, layer in enumerate(nn.layers):
        if layer.kind == LayerKind.DENSE:
            tensors[parameter_name(nn.name, i, "kernel")] = _glorot(rng, fan_in, layer.units)
            tensors[parameter_name(nn.name, i, "bias")] = np.zeros(layer.units)
        else:
            for gate in GRU_GATES:
                tensors[parameter_name(nn.name, i, f"kernel_{gate}")] = _glorot(rng, fan_in, layer.units)
            for gate in GRU_GATES:
                tensors[parameter_name(nn.name, i, f"recurrent_{gate}")] = _glorot(rng, layer.units, layer.units)
            for gate in GRU_GATES:
                tensors[parameter_name(nn.name, i, f"bias_{gate}")] = np.zeros(layer.units)
        fan_in = layer.units
    return ParameterStore(tensors)


def init_parameters(model: ModelDescription, seed: int) -> ParameterStore:
    """Parameters for every NN the model references; NN i is seeded with seed + i."""
    from .validator import infer_dataflow

    inputs = infer_dataflow(model).nn_inputs
    store = ParameterStore()
    for i, nn in enumerate(model.neural_networks):
        if nn.name not in inputs:
            logger.warning("neural network '%s' is unused; no parameters built", nn.name)
            continue
        store = store.merge(build_parameters(nn, inputs[nn.name], seed + i))
    logger.info("initialized %d parameters across %d tensors", store.count(), len(store))
    return store


def check_compatible(model: ModelDescription, params: ParameterStore) -> None:
    """Raise CheckpointError unless `params` has exactly the model's names and shapes."""
    expected = init_parameters(model, seed=0).shapes
    actual = params.shapes
    if expected != actual:
        missing = sorted(set(expected) - set(actual))
        extra = sorted(set(actual) - set(expected))
        wrong = sorted(n for n in set(expected) & set(actual) if expected[n] != actual[n])
        raise CheckpointError(f"checkpoint does not match model: missing={missing} extra={extra} reshaped={wrong}")


# ─── Application ────────────────────────────────────────────────────────────

def _weight(weights: Mapping[str, Tensor], nn: NNDef, layer: int, kind: str) -> Tensor:
    name = parameter_name(nn.name, layer, kind)
    try:
        return weights[name]
    except KeyError:
        raise LayerError(f"{nn.name}: parameter '{name}' is not bound") from None


def _affine(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, kernel), ad.repeat_rows(bias, x.shape[0]))


def apply_feed_forward(nn: NNDef, weights: Mapping[str, Tensor], inputs: Tensor) -> Tensor:
    """Row-wise dense stack: [n, d] -> [n, units of the last layer]."""
    x = inputs
    for i, layer in enumerate(nn.layers):
        if layer.kind != LayerKind.DENSE:
            raise LayerError(f"{nn.name}: layer {i} is a {layer.kind}, not a dense layer")
        kernel = _weight(weights, nn, i, "kernel")
        if x.data.ndim != 2 or x.shape[1] != kernel.shape[0]:
            raise LayerError(f"{nn.name}: layer {i} expects {kernel.shape[0]} inputs, got shape {x.shape}")
        x = _ACTIVATIONS[layer.activation](_affine(x, kernel, _weight(weights, nn, i, "bias")))
    return x


def apply_gru_cell(nn: NNDef, weights: Mapping[str, Tensor], state: Tensor, inputs: Tensor) -> Tensor:
    """
    One GRU step on [n, u] states and [n, d] inputs:
        z = σ(x Wz + h Uz + bz)       r = σ(x Wr + h Ur + br)
        h~ = tanh(x Wh + (r ⊙ h) Uh + bh)
        h' = (1 − z) ⊙ h + z ⊙ h~
    """
    kernel_z = _weight(weights, nn, 0, "kernel_z")
    units = kernel_z.shape[1]
    if inputs.data.ndim != 2 or inputs.shape[1] != kernel_z.shape[0]:
        raise LayerError(f"{nn.name}: expects {kernel_z.shape[0]} inputs, got shape {inputs.shape}")
    if state.data.ndim != 2 or state.shape != (inputs.shape[0], units):
        raise LayerError(f"{nn.name}: expects state shape ({inputs.shape[0]}, {units}), got {state.shape}")

    def gate(name: str, h: Tensor) -> Tensor:
        return ad.add(
            _affine(inputs, _weight(weights, nn, 0, f"kernel_{name}"), _weight(weights, nn, 0, f"bias_{name}")),
            ad.matmul(h, _weight(weights, nn, 0, f"recurrent_{name}")),
        )

    z = ad.sigmoid(gate("z", state))
    r = ad.sigmoid(gate("r", state))
    candidate = ad.tanh(gate("h", ad.mul(r, state)))
    keep = ad.sub(ad.constant(np.ones(z.shape)), z)
    return ad.add(ad.mul(keep, state), ad.mul(z, candidate))
