"""Item catalog: CSV ingestion, read-only SQL surface, leave-one-out split.

The catalog is immutable after ingestion. Item ids are remapped to a dense
0..N-1 range (original ids kept in a side map) so downstream models can index
arrays directly. A private in-memory SQLite database backs the SQL tools; the
exposed table is named ``items``.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import re
import sqlite3
import threading
from dataclasses import dataclass, field

from .errors import IngestError, PolicyError, SqlSyntaxError

logger = logging.getLogger(__name__)

ITEMS_COLUMNS = ["id", "title", "tags", "price", "release_date", "description"]
INTERACTIONS_COLUMNS = ["user_id", "item_id", "timestamp"]

# Read-only guard: single SELECT statement, none of these tokens anywhere.
# Token-level by design; a denylist word inside a string literal is rejected
# too, which errs on the safe side for an LLM-facing boundary.
_FORBIDDEN_TOKENS = {"INSERT", "UPDATE", "DELETE", "DROP", "ALTER", "ATTACH", "PRAGMA"}
_WORD_RE = re.compile(r"[A-Za-z_]+")


@dataclass(frozen=True)
class Item:
    """One catalog item. ``id`` is the dense internal id."""

    id: int
    original_id: int
    title: str
    tags: tuple[str, ...]
    price: float
    release_date: str
    description: str
    popularity: int = 0


@dataclass(frozen=True, order=True)
class Interaction:
    user_id: int
    item_id: int
    timestamp: int


@dataclass
class SplitResult:
    """Leave-one-out partition of the interaction set."""

    train: list[Interaction]
    valid: list[Interaction]
    test: list[Interaction]

    def all_interactions(self) -> list[Interaction]:
        return self.train + self.valid + self.test


@dataclass
class ResultTable:
    """Rows from ``execute_sql``; column order preserved."""

    columns: list[str]
    rows: list[dict[str, object]]

    def __len__(self) -> int:
        return len(self.rows)


class Catalog:
    """Immutable item/interaction store with a read-only SQL view.

    Safe to share across concurrent sessions: SQL access is serialized with
    an internal lock, and the SQLite connection is opened query-only.
    """

    def __init__(self, items: list[Item], interactions: list[Interaction], splits: SplitResult):
        self.items = items
        self.interactions = interactions
        self.splits = splits
        self.original_ids = {item.id: item.original_id for item in items}
        self._by_original = {item.original_id: item.id for item in items}
        self._by_title = {_title_key(item.title): item.id for item in items}
        self._sql_lock = threading.Lock()
        self._conn = _build_sql_store(items)

    @property
    def item_count(self) -> int:
        return len(self.items)

    def title_of(self, item_id: int) -> str:
        return self.items[item_id].title

    def resolve_title(self, title: str) -> int | None:
        """Exact case-insensitive title lookup; None when absent."""
        return self._by_title.get(_title_key(title))

    def dense_id(self, original_id: int) -> int | None:
        return self._by_original.get(original_id)

    def table_info(self) -> str:
        """Schema description injected into prompts as the table info slot."""
        return (
            "CREATE TABLE items (\n"
            "    id INTEGER PRIMARY KEY,  -- internal integer id\n"
            "    title TEXT,              -- item title, unique\n"
            "    tags TEXT,               -- '|'-separated tag list\n"
            "    price REAL,              -- price in currency units\n"
            "    release_date TEXT,       -- ISO date YYYY-MM-DD\n"
            "    description TEXT,        -- short free-text description\n"
            "    popularity INTEGER       -- training interaction count\n"
            ")\n"
            f"/* {len(self.items)} rows */"
        )

    def query(self, sql: str) -> ResultTable:
        with self._sql_lock:
            try:
                cursor = self._conn.execute(sql)
                columns = [c[0] for c in cursor.description or []]
                rows = [dict(zip(columns, r)) for r in cursor.fetchall()]
            except sqlite3.Error as exc:
                raise SqlSyntaxError(str(exc)) from exc
        return ResultTable(columns=columns, rows=rows)


def _title_key(title: str) -> str:
    return title.strip().casefold()


def check_read_only(sql: str) -> None:
    """Raise PolicyError unless ``sql`` is a single SELECT statement free of
    write/DDL tokens."""
    stripped = sql.strip()
    if not stripped:
        raise PolicyError("empty query")
    body = stripped.rstrip(";").strip()
    if ";" in body:
        raise PolicyError("multiple SQL statements are not allowed")
    first = _WORD_RE.search(body)
    if first is None or first.group(0).upper() != "SELECT":
        raise PolicyError("only SELECT statements are allowed")
    for word in _WORD_RE.findall(body):
        if word.upper() in _FORBIDDEN_TOKENS:
            raise PolicyError(f"forbidden keyword: {word.upper()}")


def sql_uses_limit(sql: str) -> bool:
    return any(word.upper() == "LIMIT" for word in _WORD_RE.findall(sql))


def execute_sql(catalog: Catalog, query: str) -> ResultTable:
    """Run a guarded read-only query against the ``items`` table."""
    check_read_only(query)
    return catalog.query(query.strip().rstrip(";"))


def _build_sql_store(items: list[Item]) -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:", check_same_thread=False)
    conn.execute(
        "CREATE TABLE items ("
        "id INTEGER PRIMARY KEY, title TEXT, tags TEXT, price REAL, "
        "release_date TEXT, description TEXT, popularity INTEGER)"
    )
    conn.execute("CREATE TABLE item_tags (item_id INTEGER, tag TEXT)")
    conn.executemany(
        "INSERT INTO items VALUES (?, ?, ?, ?, ?, ?, ?)",
        [
            (i.id, i.title, "|".join(i.tags), i.price, i.release_date, i.description, i.popularity)
            for i in items
        ],
    )
    conn.executemany(
        "INSERT INTO item_tags VALUES (?, ?)",
        [(i.id, tag) for i in items for tag in i.tags],
    )
    conn.commit()
    conn.execute("PRAGMA query_only = ON")
    return conn


def split_interactions(interactions: list[Interaction]) -> SplitResult:
    """Leave-one-out split over raw interactions.

    Per user with at least 3 interactions: last (by timestamp, ties broken by
    item id ascending) goes to test, second-to-last to valid, the rest to
    train. Users with fewer interactions go entirely to train.
    """
    by_user: dict[int, list[Interaction]] = {}
    for inter in interactions:
        by_user.setdefault(inter.user_id, []).append(inter)
    train: list[Interaction] = []
    valid: list[Interaction] = []
    test: list[Interaction] = []
    for user_id in sorted(by_user):
        history = sorted(by_user[user_id], key=lambda x: (x.timestamp, x.item_id))
        if len(history) < 3:
            train.extend(history)
            continue
        train.extend(history[:-2])
        valid.append(history[-2])
        test.append(history[-1])
    return SplitResult(train=train, valid=valid, test=test)


def split_leave_one_out(catalog: Catalog) -> SplitResult:
    return split_interactions(catalog.interactions)


def build_catalog(
    items_raw: list[dict[str, object]], interactions_raw: list[tuple[int, int, int]]
) -> Catalog:
    """Assemble a catalog from already-parsed rows.

    ``items_raw`` dicts carry the items-CSV fields (``tags`` may be a list or
    a '|'-joined string). Ids are remapped densely in ascending original-id
    order; popularity is the item's count in the train split.
    """
    seen_titles: dict[str, int] = {}
    seen_ids: set[int] = set()
    parsed: list[dict[str, object]] = []
    for row in items_raw:
        original_id = int(row["id"])  # type: ignore[arg-type]
        title = str(row["title"]).strip()
        if original_id in seen_ids:
            raise IngestError(f"duplicate item id {original_id}")
        seen_ids.add(original_id)
        key = _title_key(title)
        if key in seen_titles:
            raise IngestError(
                f"duplicate title {title!r} for ids {seen_titles[key]} and {original_id}"
            )
        seen_titles[key] = original_id
        tags = row.get("tags", [])
        if isinstance(tags, str):
            tags = [t.strip() for t in tags.split("|") if t.strip()]
        price = float(row.get("price", 0.0))  # type: ignore[arg-type]
        if price < 0:
            raise IngestError(f"negative price for item id {original_id}")
        release_date = str(row.get("release_date", "1970-01-01"))
        _validate_date(release_date, original_id)
        parsed.append(
            {
                "original_id": original_id,
                "title": title,
                "tags": tuple(tags),
                "price": price,
                "release_date": release_date,
                "description": str(row.get("description", "")),
            }
        )

    parsed.sort(key=lambda r: r["original_id"])  # type: ignore[arg-type, return-value]
    dense_of = {r["original_id"]: i for i, r in enumerate(parsed)}

    interactions: list[Interaction] = []
    for user_id, item_original, timestamp in interactions_raw:
        if item_original not in dense_of:
            raise IngestError(f"interaction references unknown item id {item_original}")
        interactions.append(
            Interaction(user_id=int(user_id), item_id=dense_of[item_original], timestamp=int(timestamp))
        )

    splits = split_interactions(interactions)
    popularity = [0] * len(parsed)
    for inter in splits.train:
        popularity[inter.item_id] += 1

    items = [
        Item(
            id=i,
            original_id=r["original_id"],  # type: ignore[arg-type]
            title=r["title"],  # type: ignore[arg-type]
            tags=r["tags"],  # type: ignore[arg-type]
            price=r["price"],  # type: ignore[arg-type]
            release_date=r["release_date"],  # type: ignore[arg-type]
            description=r["description"],  # type: ignore[arg-type]
            popularity=popularity[i],
        )
        for i, r in enumerate(parsed)
    ]
    return Catalog(items=items, interactions=interactions, splits=splits)


def _validate_date(value: str, item_id: int) -> None:
    try:
        dt.date.fromisoformat(value)
    except ValueError as exc:
        raise IngestError(f"bad release_date {value!r} for item id {item_id}") from exc


def ingest_catalog(items_path: str, interactions_path: str) -> Catalog:
    """Load the two CSV files and assemble a catalog.

    Raises IngestError naming the line number for any malformed row.
    """
    items_raw: list[dict[str, object]] = []
    try:
        items_fh = open(items_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {items_path}: {exc}") from exc
    with items_fh as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, ITEMS_COLUMNS, items_path)
        for row in reader:
            line = reader.line_num
            try:
                int(row["id"])
                float(row["price"])
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{items_path}:{line}: malformed row ({exc})") from exc
            if not (row["title"] or "").strip():
                raise IngestError(f"{items_path}:{line}: empty title")
            items_raw.append(dict(row))

    interactions_raw: list[tuple[int, int, int]] = []
    try:
        inters_fh = open(interactions_path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {interactions_path}: {exc}") from exc
    with inters_fh as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, INTERACTIONS_COLUMNS, interactions_path)
        for row in reader:
            line = reader.line_num
            try:
                interactions_raw.append(
                    (int(row["user_id"]), int(row["item_id"]), int(row["timestamp"]))
                )
            except (TypeError, ValueError) as exc:
                raise IngestError(f"{interactions_path}:{line}: malformed row ({exc})") from exc

    try:
        return build_catalog(items_raw, interactions_raw)
    except IngestError:
        raise
    except (TypeError, ValueError) as exc:
        raise IngestError(str(exc)) from exc


def _require_columns(fieldnames: list[str] | None, expected: list[str], path: str) -> None:
    if fieldnames is None or [c.strip() for c in fieldnames] != expected:
        raise IngestError(
            f"{path}:1: header must be exactly {','.join(expected)} (got {fieldnames})"
        )
