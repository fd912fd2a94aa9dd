"""In-domain models behind the retrieval and ranking tools.

Item-to-item similarity is cosine over binary user co-occurrence: an item is
a binary vector over users, and

    sim(a, b) = |users(a) ∩ users(b)| / sqrt(|users(a)| * |users(b)|)

Items with no interactions score 0 against everything (including themselves).
The candidate ranker is schema-driven (popularity / similarity / preference)
and is deliberately pluggable: anything honoring ``rank_candidates``'s
contract (ordering minus unwanted, deterministic ties) can replace it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .catalog import Catalog, Interaction
from .errors import InputError, ModelCacheError

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1

SCHEMA_POPULARITY = "popularity"
SCHEMA_SIMILARITY = "similarity"
SCHEMA_PREFERENCE = "preference"
RANK_SCHEMAS = (SCHEMA_POPULARITY, SCHEMA_SIMILARITY, SCHEMA_PREFERENCE)


class SimilarityModel:
    """Item-item cosine similarity over a binary item x user incidence matrix."""

    def __init__(self, incidence: sparse.csr_matrix):
        self.incidence = incidence
        self.item_count = incidence.shape[0]
        counts = np.asarray(incidence.sum(axis=1)).ravel()
        self.norms = np.sqrt(counts)

    def similarity(self, a: int, b: int) -> float:
        if self.norms[a] == 0 or self.norms[b] == 0:
            return 0.0
        overlap = self.incidence[a].multiply(self.incidence[b]).sum()
        return float(overlap / (self.norms[a] * self.norms[b]))

    def score_by_seeds(self, seeds: list[int], candidates: list[int]) -> np.ndarray:
        """Mean cosine similarity of each candidate to the seed set.

        Seeds are scored like any candidate (a seed scores 1 against itself
        when it has interactions).
        """
        if not seeds:
            raise InputError("seed list is empty")
        if not candidates:
            return np.zeros(0)
        seed_rows = self.incidence[list(seeds)]
        cand_rows = self.incidence[list(candidates)]
        overlap = np.asarray((seed_rows @ cand_rows.T).todense(), dtype=float)
        seed_norms = self.norms[list(seeds)][:, None]
        cand_norms = self.norms[list(candidates)][None, :]
        denom = seed_norms * cand_norms
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = np.where(denom > 0, overlap / denom, 0.0)
        return sims.mean(axis=0)

    def users_of(self, item_id: int) -> list[int]:
        return self.incidence[item_id].indices.tolist()

    def save(self, path: str) -> None:
        """Line-JSON dump: a header line followed by one line per item."""
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "format_version": CACHE_FORMAT_VERSION,
                "item_count": self.item_count,
                "user_count": self.incidence.shape[1],
            }
            fh.write(json.dumps(header) + "\n")
            for item_id in range(self.item_count):
                fh.write(
                    json.dumps({"item": item_id, "users": self.users_of(item_id)}) + "\n"
                )

    @classmethod
    def load(cls, path: str, expected_item_count: int) -> "SimilarityModel":
        with open(path, encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise ModelCacheError(f"{path}: bad header line") from exc
            if header.get("format_version") != CACHE_FORMAT_VERSION:
                raise ModelCacheError(
                    f"{path}: unsupported format_version {header.get('format_version')}"
                )
            if header.get("item_count") != expected_item_count:
                raise ModelCacheError(
                    f"{path}: cache built for {header.get('item_count')} items, "
                    f"catalog has {expected_item_count}"
                )
            rows: list[int] = []
            cols: list[int] = []
            for line in fh:
                record = json.loads(line)
                for user in record["users"]:
                    rows.append(record["item"])
                    cols.append(user)
        user_count = max(header.get("user_count", 0), max(cols) + 1 if cols else 1)
        incidence = sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)),
            shape=(expected_item_count, user_count),
        )
        incidence.data[:] = 1
        return cls(incidence)


def build_itemcf(train: list[Interaction], item_count: int) -> SimilarityModel:
    """Build the similarity model from training interactions.

    Repeated (user, item) pairs collapse to a single binary entry.
    """
    user_ids = sorted({i.user_id for i in train})
    user_index = {u: k for k, u in enumerate(user_ids)}
    pairs = {(i.item_id, user_index[i.user_id]) for i in train}
    for item_id, _ in pairs:
        if item_id >= item_count:
            raise InputError(f"interaction item id {item_id} >= item_count {item_count}")
    rows = np.fromiter((p[0] for p in pairs), dtype=int, count=len(pairs))
    cols = np.fromiter((p[1] for p in pairs), dtype=int, count=len(pairs))
    incidence = sparse.csr_matrix(
        (np.ones(len(pairs)), (rows, cols)),
        shape=(item_count, max(len(user_ids), 1)),
    )
    return SimilarityModel(incidence)


def score_by_seeds(model: SimilarityModel, seeds: list[int], candidates: list[int]) -> np.ndarray:
    return model.score_by_seeds(seeds, candidates)


@dataclass
class RankRequest:
    """Ranking-tool request: one schema plus prefer/unwanted title lists."""

    schema: str
    prefer: list[str] = field(default_factory=list)
    unwanted: list[str] = field(default_factory=list)


@dataclass
class RankOutcome:
    order: list[int]
    schema_used: str
    removed: list[int] = field(default_factory=list)
    skipped_prefer: list[str] = field(default_factory=list)
    skipped_unwanted: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def rank_candidates(
    req: RankRequest,
    candidates: list[int],
    model: SimilarityModel,
    catalog: Catalog,
    similarity_seeds: list[int] | None = None,
) -> RankOutcome:
    """Order candidates per the requested schema.

    Unwanted titles are removed first (exact case-insensitive match; fuzzy
    matching is deliberately absent so hallucinated titles stay visible to
    reflection). Sorting is descending on the schema key with ties broken by
    item id ascending, so identical inputs always produce identical orders.
    Falls back to popularity (with a warning) when "preference" has no
    resolvable prefer titles or "similarity" has no recorded seeds.
    """
    if req.schema not in RANK_SCHEMAS:
        raise InputError(f"unknown ranking schema: {req.schema!r}")
    outcome = RankOutcome(order=[], schema_used=req.schema)

    unwanted_ids: set[int] = set()
    for title in req.unwanted:
        item_id = catalog.resolve_title(title)
        if item_id is None:
            outcome.skipped_unwanted.append(title)
        else:
            unwanted_ids.add(item_id)
    kept = [c for c in candidates if c not in unwanted_ids]
    outcome.removed = [c for c in candidates if c in unwanted_ids]
    if not kept:
        return outcome

    schema = req.schema
    seeds: list[int] = []
    if schema == SCHEMA_PREFERENCE:
        for title in req.prefer:
            item_id = catalog.resolve_title(title)
            if item_id is None:
                outcome.skipped_prefer.append(title)
            else:
                seeds.append(item_id)
        if not seeds:
            outcome.warnings.append(
                "no resolvable prefer titles; ranked by popularity instead"
            )
            schema = SCHEMA_POPULARITY
    elif schema == SCHEMA_SIMILARITY:
        seeds = list(similarity_seeds or [])
        if not seeds:
            outcome.warnings.append(
                "no similarity seeds recorded; ranked by popularity instead"
            )
            schema = SCHEMA_POPULARITY

    if schema == SCHEMA_POPULARITY:
        keyed = [(-catalog.items[c].popularity, c) for c in kept]
    else:
        scores = model.score_by_seeds(seeds, kept)
        keyed = [(-float(scores[i]), kept[i]) for i in range(len(kept))]
    keyed.sort()
    outcome.order = [c for _, c in keyed]
    outcome.schema_used = schema
    return outcome
