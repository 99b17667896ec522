"""Bundled domain fixtures (regenerate with tools/make_fixtures.py)."""

from importlib import resources
from pathlib import Path

FIXTURES = ("unit_square.csv", "blob500.obj", "two_clusters.csv")


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled fixture file."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {FIXTURES}")
    return Path(resources.files(__package__) / name)
