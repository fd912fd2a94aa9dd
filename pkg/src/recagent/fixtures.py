"""Paths to the data files shipped inside the package: the games-toy catalog
fixture, the hand-written seed demonstrations, and the authored synthetic
dialogues used by the dataset exporter."""

from __future__ import annotations

from pathlib import Path

_DATA = Path(__file__).parent / "data"


def games_toy_paths() -> tuple[str, str]:
    base = _DATA / "games_toy"
    return str(base / "items.csv"), str(base / "interactions.csv")


def seed_demos_path() -> str:
    return str(_DATA / "seed_demos.jsonl")


def synthetic_dialogues_path() -> str:
    return str(_DATA / "synthetic_dialogues.jsonl")
