"""The six executor tools behind the agent, all communicating via the bus.

Tool names are load-bearing: plans reference them verbatim, and the prompt
templates inject the exact descriptions below. Only the storing, SQL
retrieval, item-to-item retrieval, and ranking tools may shrink the bus;
the query and fetching tools never touch candidates.
"""

from __future__ import annotations

import ast
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .catalog import Catalog, execute_sql, sql_uses_limit
from .errors import PolicyError, RecAgentError, SqlSyntaxError
from .memory import CandidateBus, ToolCallRecord, UserProfile, record_step
from .recmodels import (
    RankRequest,
    SCHEMA_POPULARITY,
    SCHEMA_PREFERENCE,
    SCHEMA_SIMILARITY,
    SimilarityModel,
    rank_candidates,
)

logger = logging.getLogger(__name__)

TOOL_STORE = "Candidates Storing Tool"
TOOL_QUERY = "Query Tool"
TOOL_SQL_RETRIEVAL = "SQL Retrieval Tool"
TOOL_ITEMCF = "ItemCF Retrieval Tool"
TOOL_RANKING = "Ranking Tool"
TOOL_FETCH = "Candidate Fetching Tool"

TOOL_EXECUTOR_NAME = "Tool Executor"
TOOL_EXECUTOR_DESC = (
    "The Tool Executor runs a tool using plan step by step. The input should "
    "be the plan: a numbered list where each step names one tool and gives "
    "its input in parentheses."
)

# Hard-condition retrieval keeps at most this many candidates (highest
# popularity first); soft-condition retrieval keeps the top slice of the
# current bus by score.
HARD_FILTER_CAP = 1000
SOFT_FILTER_KEEP_FRACTION = 0.05
QUERY_RESULT_CHAR_LIMIT = 2000
DEFAULT_FETCH_COUNT = 5

_DESCRIPTIONS = {
    TOOL_STORE: (
        "The tool is useful to save candidate {item}s into buffer as the initial "
        "candidates, following tools would filter or ranking {item}s from those "
        "canidates. "
        'For example, "Please select the most suitable {item} from those {item}s". '
        "Don't use this tool when the user hasn't specified that they want to "
        "select from a specific set of {item}s. "
        "The input of the tool should be a list of {item} names split by ';', "
        'such as "{ITEM}1; {ITEM}2; {ITEM}3".'
    ),
    TOOL_QUERY: (
        "The tool is used to look up some {item} information in a {item} "
        "information table (including statistical information), like number of "
        "{item}s, description of {item}s and so on. "
        "The input of the tools should be a SQL command (in one line) converted "
        "from the search query, which would be used to search information in "
        "{item} information table. You should try to select as less columns as "
        "you can to get the necessary information. Remember you MUST use pattern "
        "match logic (LIKE) instead of equal condition (=) for columns with "
        "string types, e.g. \"title LIKE '%xxx%'\". "
        'For example, if asking for "how many xxx {item}s?", you should use '
        '"COUNT()" to get the correct number. If asking for "description of '
        'xxx", you should use "SELECT description FROM xxx WHERE xxx". '
        "The tool can NOT give recommendations. DO NOT SELECT id information!"
    ),
    TOOL_SQL_RETRIEVAL: (
        "The tool is a hard condition tool. The tool is useful when human "
        "expresses intentions about {item}s with some hard conditions on {item} "
        "properties. "
        "The input of the tool should be a one-line SQL SELECT command converted "
        "from hard conditions. Here are some rules: "
        "1. {item} titles can not be used as conditions in SQL; "
        "2. the tool can not find similar {item}s; "
        "3. always use pattern match logic for columns with string type; "
        "4. only one {item} information table is allowed to appear in SQL command; "
        "5. select all {item}s that meet the conditions, do not use the LIMIT "
        "keyword; "
        "6. try to use OR instead of AND."
    ),
    TOOL_ITEMCF: (
        "The tool is a soft condition filtering tool. "
        "The tool can find similar {item}s for specific seed {item}s. "
        "Never use this tool if human doesn't express to find some {item}s "
        "similar with seed {item}s. "
        "There is a similarity score threshold in the tool, only {item}s with "
        "similarity above the threshold would be kept. "
        "Besides, the tool could be used to calculate the similarity scores with "
        "seed {item}s for {item}s in candidate buffer for ranking tool to refine. "
        "The input of the tool should be a list of seed {item} titles/names, "
        "which should be a Python list of strings. "
        "Do not fake any {item} names."
    ),
    TOOL_RANKING: (
        "The tool is useful to refine {item}s order or remove unwanted {item}s "
        "(when human tells the {item}s he does't want) in conversation. "
        "The input of the tool should be a json string, which may consist of "
        'three keys: "schema", "prefer" and "unwanted". '
        '"schema" represents ranking schema, optional choices: "popularity", '
        '"similarity" and "preference", indicating rank by {item} popularity, '
        'rank by similarity, rank by human preference ("prefer" {item}s). '
        'The "schema" depends on previous tool using and human preference. If '
        '"prefer" info here not empty, "preference" schema should be used. If '
        "similarity filtering tool is used before, prioritize using "
        '"similarity" except human want popular {item}s. '
        '"prefer" represents {item} names that human likes or human history '
        "({item}s human has interacted with), which should be an array of "
        '{item} titles. Keywords: "used to do", "I like", "prefer". '
        '"unwanted" represents {item} names that human doesn\'t like or doesn\'t '
        "want to see in next conversations, which should be an array of {item} "
        'titles. Keywords: "don\'t like", "boring", "interested in". '
        '"prefer" and "unwanted" {item}s should be extracted from human request '
        "and previous conversations. Only {item} names are allowed to appear in "
        "the input. The human's feedback for you recommendation in conversation "
        'history could be regard as "prefer" or "unwanted", like "I have tried '
        'those items you recommend" or "I don\'t like those". '
        'Only when at least one of "prefer" and "unwanted" is not empty, the '
        'tool could be used. If no "prefer" info, {item}s would be ranked based '
        "on the popularity. Do not fake {item}s."
    ),
    TOOL_FETCH: (
        "The tool is useful when you want to convert {item} id to {item} title "
        "before showing {item}s to human. The tool is able to get stored {item}s "
        "in the buffer. "
        "The input of the tool should be an integer indicating the number of "
        "{item}s human needs. The default value is 5 if human doesn't give."
    ),
}


def prompt_tool_slots() -> dict[str, str]:
    """Concrete tool names for the role placeholders in prompt templates."""
    return {
        "LookUpTool": TOOL_QUERY,
        "HardFilterTool": TOOL_SQL_RETRIEVAL,
        "SoftFilterTool": TOOL_ITEMCF,
        "RankingTool": TOOL_RANKING,
        "MapTool": TOOL_FETCH,
        "BufferStoreTool": TOOL_STORE,
    }


@dataclass
class ToolDeps:
    """Shared read-only state handed to every tool execution."""

    catalog: Catalog
    model: SimilarityModel
    profile: UserProfile = field(default_factory=UserProfile)
    fetch_default: int = DEFAULT_FETCH_COUNT


ToolFn = Callable[[ToolDeps, CandidateBus, str], ToolCallRecord]


@dataclass
class ToolSpec:
    name: str
    description: str
    run: ToolFn


class ToolRegistry:
    """Ordered tool set; executing a tool appends exactly one tracker record."""

    def __init__(self, specs: list[ToolSpec]):
        self._specs = {spec.name: spec for spec in specs}
        self._order = [spec.name for spec in specs]
        if len(self._specs) != len(specs):
            raise ValueError("duplicate tool names")

    def names(self) -> list[str]:
        return list(self._order)

    def render_descriptions(self, item_noun: str) -> str:
        blocks = []
        for name in self._order:
            desc = self._specs[name].description
            desc = desc.replace("{item}", item_noun).replace("{ITEM}", item_noun.upper())
            blocks.append(f"Tool Name: {name}\nTool Description: {desc}")
        return "\n\n".join(blocks)

    def execute(self, name: str, tool_input: str, bus: CandidateBus, deps: ToolDeps) -> ToolCallRecord:
        spec = self._specs.get(name)
        if spec is None:
            record = ToolCallRecord(
                tool_name=name,
                tool_input=tool_input,
                output_summary={"error": f"unknown tool: {name}", "remaining": len(bus.candidates)},
            )
        else:
            try:
                record = spec.run(deps, bus, tool_input)
            except RecAgentError as exc:
                record = ToolCallRecord(
                    tool_name=name,
                    tool_input=tool_input,
                    output_summary={"error": str(exc), "remaining": len(bus.candidates)},
                )
        record_step(bus, record)
        return record


def _record(name: str, tool_input: str, bus: CandidateBus, **summary) -> ToolCallRecord:
    summary.setdefault("remaining", len(bus.candidates))
    return ToolCallRecord(tool_name=name, tool_input=tool_input, output_summary=summary)


def _split_titles(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(";") if part.strip()]


def candidates_storing_tool(deps: ToolDeps, bus: CandidateBus, tool_input: str) -> ToolCallRecord:
    titles = _split_titles(tool_input)
    if not titles:
        return _record(TOOL_STORE, tool_input, bus, error="no candidate titles given")
    resolved: list[int] = []
    missing: list[str] = []
    for title in titles:
        item_id = deps.catalog.resolve_title(title)
        if item_id is None:
            missing.append(title)
        elif item_id not in resolved:
            resolved.append(item_id)
    if not resolved:
        return _record(
            TOOL_STORE, tool_input, bus,
            error="no valid candidates", unresolved=missing,
        )
    bus.candidates = resolved
    warnings = [f"unresolved titles: {', '.join(missing)}"] if missing else []
    return _record(TOOL_STORE, tool_input, bus, stored=len(resolved), warnings=warnings)


def _render_table(result) -> str:
    if not result.rows:
        return "(no rows)"
    lines = [" | ".join(result.columns)]
    for row in result.rows:
        lines.append(" | ".join(str(row[c]) for c in result.columns))
    text = "\n".join(lines)
    if len(text) > QUERY_RESULT_CHAR_LIMIT:
        text = text[:QUERY_RESULT_CHAR_LIMIT] + "\n... (truncated)"
    return text


def query_tool(deps: ToolDeps, bus: CandidateBus, tool_input: str) -> ToolCallRecord:
    try:
        result = execute_sql(deps.catalog, tool_input)
    except PolicyError as exc:
        return _record(TOOL_QUERY, tool_input, bus, error=f"PolicyError: {exc}")
    except SqlSyntaxError as exc:
        return _record(TOOL_QUERY, tool_input, bus, error=f"SqlSyntaxError: {exc}")
    warnings = []
    if any(c.lower() == "id" for c in result.columns):
        warnings.append("id selected")
    return _record(
        TOOL_QUERY, tool_input, bus,
        detail=_render_table(result), row_count=len(result.rows), warnings=warnings,
    )


def _result_ids(deps: ToolDeps, result) -> list[int] | None:
    cols = {c.lower(): c for c in result.columns}
    if "id" in cols:
        return [int(row[cols["id"]]) for row in result.rows]
    if "item_id" in cols:
        return [int(row[cols["item_id"]]) for row in result.rows]
    if "title" in cols:
        ids = []
        for row in result.rows:
            item_id = deps.catalog.resolve_title(str(row[cols["title"]]))
            if item_id is not None:
                ids.append(item_id)
        return ids
    return None


def sql_retrieval_tool(deps: ToolDeps, bus: CandidateBus, tool_input: str) -> ToolCallRecord:
    if sql_uses_limit(tool_input):
        return _record(
            TOOL_SQL_RETRIEVAL, tool_input, bus,
            error="PolicyError: the LIMIT keyword is not allowed in retrieval SQL",
        )
    try:
        result = execute_sql(deps.catalog, tool_input)
    except PolicyError as exc:
        return _record(TOOL_SQL_RETRIEVAL, tool_input, bus, error=f"PolicyError: {exc}")
    except SqlSyntaxError as exc:
        return _record(TOOL_SQL_RETRIEVAL, tool_input, bus, error=f"SqlSyntaxError: {exc}")
    ids = _result_ids(deps, result)
    if ids is None:
        return _record(
            TOOL_SQL_RETRIEVAL, tool_input, bus,
            error="retrieval SQL must select item rows (no id or title column in result)",
        )
    id_set = set(ids)
    kept = [c for c in bus.candidates if c in id_set]
    warnings = []
    if len(kept) > HARD_FILTER_CAP:
        by_popularity = sorted(kept, key=lambda c: (-deps.catalog.items[c].popularity, c))
        keep_set = set(by_popularity[:HARD_FILTER_CAP])
        kept = [c for c in kept if c in keep_set]
        warnings.append(f"capped to top {HARD_FILTER_CAP} by popularity")
    bus.candidates = kept
    summary: dict = {"conditions": tool_input.strip(), "warnings": warnings}
    if not kept:
        summary["note"] = "0 candidates"
    return _record(TOOL_SQL_RETRIEVAL, tool_input, bus, **summary)


def _parse_seed_titles(raw: str) -> list[str]:
    text = raw.strip()
    for parser in (json.loads, ast.literal_eval):
        try:
            value = parser(text)
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, list):
            return [str(v).strip() for v in value if str(v).strip()]
        if isinstance(value, str) and value.strip():
            return [value.strip()]
    return _split_titles(text.strip("[]")) or ([text] if text else [])


def itemcf_retrieval_tool(deps: ToolDeps, bus: CandidateBus, tool_input: str) -> ToolCallRecord:
    titles = _parse_seed_titles(tool_input)
    seeds: list[int] = []
    missing: list[str] = []
    for title in titles:
        item_id = deps.catalog.resolve_title(title)
        if item_id is None:
            missing.append(title)
        elif item_id not in seeds:
            seeds.append(item_id)
    if not seeds:
        return _record(
            TOOL_ITEMCF, tool_input, bus,
            error="no valid seed titles", unresolved=missing,
        )
    warnings = [f"unresolved titles: {', '.join(missing)}"] if missing else []
    seed_titles = [deps.catalog.title_of(s) for s in seeds]
    if not bus.candidates:
        return _record(
            TOOL_ITEMCF, tool_input, bus,
            seeds=seed_titles, seed_ids=seeds, note="0 candidates", warnings=warnings,
        )
    scores = deps.model.score_by_seeds(seeds, bus.candidates)
    # Keep the top slice of the current bus: the k-th largest score is the
    # cut, ties at the cut all survive, and at least one candidate remains.
    k = max(1, math.ceil(SOFT_FILTER_KEEP_FRACTION * len(bus.candidates)))
    threshold = float(np.sort(np.asarray(scores, dtype=float))[::-1][k - 1])
    keyed = [
        (-float(scores[i]), c)
        for i, c in enumerate(bus.candidates)
        if float(scores[i]) >= threshold
    ]
    keyed.sort()
    bus.candidates = [c for _, c in keyed]
    return _record(
        TOOL_ITEMCF, tool_input, bus,
        seeds=seed_titles, seed_ids=seeds, threshold=threshold, warnings=warnings,
    )


def _parse_ranking_input(raw: str) -> dict | None:
    text = raw.strip()
    if not text:
        return {}
    value = None
    for parser in (json.loads, ast.literal_eval):
        try:
            value = parser(text)
            break
        except (ValueError, SyntaxError):
            continue
    if not isinstance(value, dict):
        return None
    return value


def _title_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value] if value.strip() else []
    if isinstance(value, list):
        return [str(v) for v in value if str(v).strip()]
    return []


def _merge_titles(primary: list[str], extra: list[str]) -> list[str]:
    seen = set()
    merged = []
    for title in list(primary) + list(extra):
        key = title.strip().casefold()
        if key and key not in seen:
            seen.add(key)
            merged.append(title.strip())
    return merged


def _last_recorded_seeds(bus: CandidateBus) -> list[int]:
    for record in reversed(bus.tracker):
        seed_ids = record.output_summary.get("seed_ids")
        if seed_ids:
            return list(seed_ids)
    return []


def ranking_tool(deps: ToolDeps, bus: CandidateBus, tool_input: str) -> ToolCallRecord:
    parsed = _parse_ranking_input(tool_input)
    if parsed is None:
        return _record(
            TOOL_RANKING, tool_input, bus,
            error=f"could not parse ranking input as a schema/prefer/unwanted object: {tool_input!r}",
        )
    input_prefer = _title_list(parsed.get("prefer"))
    input_unwanted = _title_list(parsed.get("unwanted"))
    prefer = _merge_titles(input_prefer, deps.profile.like)
    unwanted = _merge_titles(input_unwanted, deps.profile.dislike)

    schema = parsed.get("schema")
    if not schema:
        if prefer:
            schema = SCHEMA_PREFERENCE
        elif _last_recorded_seeds(bus):
            schema = SCHEMA_SIMILARITY
        else:
            schema = SCHEMA_POPULARITY
    if schema not in (SCHEMA_POPULARITY, SCHEMA_SIMILARITY, SCHEMA_PREFERENCE):
        return _record(TOOL_RANKING, tool_input, bus, error=f"unknown ranking schema: {schema!r}")

    outcome = rank_candidates(
        RankRequest(schema=schema, prefer=prefer, unwanted=unwanted),
        bus.candidates,
        deps.model,
        deps.catalog,
        similarity_seeds=_last_recorded_seeds(bus),
    )
    bus.candidates = outcome.order
    warnings = list(outcome.warnings)
    if outcome.skipped_prefer:
        warnings.append(f"unresolved prefer titles: {', '.join(outcome.skipped_prefer)}")
    if outcome.skipped_unwanted:
        warnings.append(f"unresolved unwanted titles: {', '.join(outcome.skipped_unwanted)}")
    return _record(
        TOOL_RANKING, tool_input, bus,
        schema_used=outcome.schema_used,
        removed=len(outcome.removed),
        input_prefer=input_prefer,
        input_unwanted=input_unwanted,
        warnings=warnings,
    )


def candidate_fetching_tool(deps: ToolDeps, bus: CandidateBus, tool_input: str) -> ToolCallRecord:
    try:
        count = int(str(tool_input).strip())
        if count < 0:
            count = deps.fetch_default
    except (TypeError, ValueError):
        count = deps.fetch_default
    titles = [deps.catalog.title_of(c) for c in bus.candidates[:count]]
    if not bus.candidates:
        return _record(TOOL_FETCH, tool_input, bus, titles=[], detail="no items matched")
    return _record(TOOL_FETCH, tool_input, bus, titles=titles)


def default_registry() -> ToolRegistry:
    return ToolRegistry(
        [
            ToolSpec(TOOL_STORE, _DESCRIPTIONS[TOOL_STORE], candidates_storing_tool),
            ToolSpec(TOOL_QUERY, _DESCRIPTIONS[TOOL_QUERY], query_tool),
            ToolSpec(TOOL_SQL_RETRIEVAL, _DESCRIPTIONS[TOOL_SQL_RETRIEVAL], sql_retrieval_tool),
            ToolSpec(TOOL_ITEMCF, _DESCRIPTIONS[TOOL_ITEMCF], itemcf_retrieval_tool),
            ToolSpec(TOOL_RANKING, _DESCRIPTIONS[TOOL_RANKING], ranking_tool),
            ToolSpec(TOOL_FETCH, _DESCRIPTIONS[TOOL_FETCH], candidate_fetching_tool),
        ]
    )
