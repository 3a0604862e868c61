import json
from dataclasses import dataclass
from typing import Iterable

from django.db import models


class Severity(models.TextChoices):
    ERROR = "error", "Error"
    WARNING = "warning", "Warning"


@dataclass(frozen=True)
class Diagnostic:
    """
    One finding about a model description or a model/dataset pair.

    `path` is a document path such as `entities[0].state_dimension`; `line`
    is 1-based and present whenever the finding maps onto YAML source text.
    """
    severity: str
    code: str
    message: str
    path: str = ""
    line: int | None = None

    def __post_init__(self):
        if not self.message:
            raise ValueError("diagnostic message must be non-empty")

    @classmethod
    def error(cls, code: str, message: str, path: str = "", line: int | None = None) -> "Diagnostic":
        return cls(Severity.ERROR, code, message, path, line)

    @classmethod
    def warning(cls, code: str, message: str, path: str = "", line: int | None = None) -> "Diagnostic":
        return cls(Severity.WARNING, code, message, path, line)

    @property
    def is_error(self) -> bool:
        return self.severity == Severity.ERROR

    def format(self, source: str = "") -> str:
        where = source or "<model>"
        if self.line is not None:
            where = f"{where}:{self.line}"
        location = f" ({self.path})" if self.path else ""
        return f"{where}: {self.severity}[{self.code}]{location}: {self.message}"


def has_errors(diagnostics: Iterable[Diagnostic]) -> bool:
    return any(d.is_error for d in diagnostics)


def in_document_order(diagnostics: Iterable[Diagnostic]) -> list[Diagnostic]:
    """Stable sort by source line; unlocated findings keep their relative order at the end."""
    indexed = list(enumerate(diagnostics))
    indexed.sort(key=lambda pair: (pair[1].line is None, pair[1].line or 0, pair[0]))
    return [d for _, d in indexed]


def to_json_lines(diagnostics: Iterable[Diagnostic]) -> str:
    """One JSON object per diagnostic: severity, code, message, path, line."""
    from .serializers import DiagnosticSerializer

    rows = DiagnosticSerializer(list(diagnostics), many=True).data
    return "".join(json.dumps(dict(row), sort_keys=False) + "\n" for row in rows)


def format_diagnostics(diagnostics: Iterable[Diagnostic], source: str = "") -> str:
    return "\n".join(d.format(source) for d in diagnostics)
