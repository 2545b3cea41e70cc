"""Bundled system files for the three reference case studies."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

NAMES = ("vdp", "perturbed2d", "seven_dim")


def path(name: str) -> Path:
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in NAMES:
        raise KeyError(f"no bundled system {name!r}; choose from {', '.join(NAMES)}")
    return Path(str(resources.files(__name__).joinpath(f"{stem}.json")))


def load(name: str):
    from ..zubov import load_spec

    return load_spec(path(name))[0]
