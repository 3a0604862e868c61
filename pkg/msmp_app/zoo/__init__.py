from pathlib import Path

MODELS_DIR = Path(__file__).resolve().parent / "models"

SHIPPED_MODELS = ("routenet", "gqnn", "shortest_path")


def model_path(name: str) -> Path:
    """Path of a shipped model description, e.g. model_path("routenet")."""
    if name not in SHIPPED_MODELS:
        raise KeyError(f"no shipped model '{name}'; choose from {', '.join(SHIPPED_MODELS)}")
    return MODELS_DIR / f"{name}.yaml"
