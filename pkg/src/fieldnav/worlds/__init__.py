"""Bundled world files for fixtures, demos, and the acceptance suite."""

from importlib import resources

from ..simworld import World, load_world

BUNDLED = ("field", "corridor", "small", "plot")


def world_path(name: str):
    """Traversable resource path of a bundled world file."""
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled world {name!r}; have {BUNDLED}")
    return resources.files(__package__) / f"{name}.world"


def load(name: str) -> World:
    return load_world(world_path(name).read_text())
