from __future__ import annotations

import pytest

from recagent.catalog import build_catalog, ingest_catalog
from recagent.fixtures import games_toy_paths, seed_demos_path
from recagent.planner import DemoStore
from recagent.recmodels import build_itemcf
from recagent.toolkit import default_registry


@pytest.fixture(scope="session")
def games_toy():
    return ingest_catalog(*games_toy_paths())


@pytest.fixture(scope="session")
def games_toy_model(games_toy):
    return build_itemcf(games_toy.splits.train, games_toy.item_count)


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def seed_store():
    return DemoStore.load(seed_demos_path())


def make_items(n: int, **overrides):
    """Synthetic item rows: distinct titles, optional per-field overrides
    (callables of the index)."""
    rows = []
    for i in range(n):
        row = {
            "id": i,
            "title": f"Item {i:04d}",
            "tags": "Tag",
            "price": 10.0,
            "release_date": "2020-01-01",
            "description": f"synthetic item {i}",
        }
        for key, fn in overrides.items():
            row[key] = fn(i)
        rows.append(row)
    return rows


def catalog_with_popularity(popularity: list[int]):
    """Catalog whose train-split popularity equals ``popularity`` exactly:
    each interaction gets its own single-interaction user, so every
    interaction lands in the train split."""
    items = make_items(len(popularity))
    interactions = []
    user = 0
    for item_id, count in enumerate(popularity):
        for _ in range(count):
            interactions.append((user, item_id, 1000 + user))
            user += 1
    return build_catalog(items, interactions)


@pytest.fixture()
def toy3_model():
    """The 3-user/3-item example: u1:{A,B}, u2:{A,B}, u3:{A,C} with
    A=0, B=1, C=2 (plus an interaction-free D=3)."""
    from recagent.catalog import Interaction

    train = [
        Interaction(1, 0, 1),
        Interaction(1, 1, 2),
        Interaction(2, 0, 3),
        Interaction(2, 1, 4),
        Interaction(3, 0, 5),
        Interaction(3, 2, 6),
    ]
    return build_itemcf(train, 4)
