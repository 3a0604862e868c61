"""
Exception hierarchy for the compiler.

Model descriptions report their faults as Diagnostic lists; everything below
is raised for faults that stop a computation outright.
"""


class MsmpError(Exception):
    """Base class for every fault raised by msmp_app."""


class ShapeError(MsmpError, ValueError):
    """A tensor op received operands whose shapes do not conform."""


class TapeError(MsmpError, RuntimeError):
    """Misuse of a tape: foreign operands, non-scalar loss, non-determinism."""


class LayerError(MsmpError, ValueError):
    """An NN was applied to inputs that do not match its built dimensions."""


class DatasetError(MsmpError, ValueError):
    """A sample file or dataset directory is malformed or inconsistent."""


class AggregationError(MsmpError, RuntimeError):
    """A destination node cannot be aggregated (no identity for its group)."""


class LossError(MsmpError, ValueError):
    """Predictions and labels cannot be compared."""


class OptimizerError(MsmpError, ValueError):
    """Gradients do not line up with the parameters being optimized."""


class CheckpointError(MsmpError, ValueError):
    """A checkpoint file is unreadable or does not match the model."""


class ConfigError(MsmpError, ValueError):
    """Training configuration overrides were rejected."""

    def __init__(self, message: str, errors: dict | None = None):
        super().__init__(message)
        self.errors = errors or {}


class GenerationError(MsmpError, ValueError):
    """A synthetic dataset cannot be produced from the given configuration."""


class ValidationFailed(MsmpError):
    """A model (or model + dataset pair) has error-severity diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        errors = [d for d in self.diagnostics if d.is_error]
        first = errors[0].message if errors else "no details"
        super().__init__(f"model has {len(errors)} error(s); first: {first}")
