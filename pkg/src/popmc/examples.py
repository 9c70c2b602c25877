"""Access to the bundled case-study models."""

from importlib import resources

from .model import Model, parse_model

NAMES = ("toggle_switch", "exclusive_switch", "enzymatic", "moran")


def model_text(name: str) -> str:
    return resources.files(__package__).joinpath("models", f"{name}.gcm").read_text("utf-8")


def load_example(name: str) -> Model:
    if name not in NAMES:
        raise KeyError(f"unknown example model {name!r}; choose from {', '.join(NAMES)}")
    return parse_model(model_text(name))
