"""Shared turn memory: the candidate bus, user profiles, dialogue context.

The candidate bus is the channel tools communicate through: a data bus
holding the current candidate item ids plus an append-only tracker of
tool-call records. It is reset to the full catalog at the start of every
conversation turn, so candidates flow through a plan like a funnel.

The user profile has three facets ("like", "dislike", "expect"); "expect"
tracks immediate requests and never persists into long-term memory. When the
rendered dialogue outgrows the context budget, old turns are folded into the
long-term profile via an LLM extraction call and dropped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

from .catalog import Catalog
from .errors import ProviderError, TurnError
from .gateway import ChatProvider, GenParams, complete
from .prompts import render_prompt

logger = logging.getLogger(__name__)

DEFAULT_CHAR_BUDGET = 12000
# Turns kept verbatim when older history is folded into long-term memory.
RECENT_TURNS_KEPT = 10

_REPAIR_MESSAGE = (
    'Reply with exactly one JSON object in the schema '
    '{"like": [...], "dislike": [...], "expect": [...]} and nothing else.'
)


@dataclass
class ToolCallRecord:
    """One executed plan step: tool name, raw input, structured output summary.

    The summary always carries the remaining-candidate count plus whatever
    seeds/conditions the tool used, and an ``error`` entry when execution
    failed; the critic judges turns from these records.
    """

    tool_name: str
    tool_input: str
    output_summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ToolCallRecord":
        return cls(
            tool_name=data["tool_name"],
            tool_input=data["tool_input"],
            output_summary=dict(data.get("output_summary", {})),
        )


@dataclass
class CandidateBus:
    candidates: list[int] = field(default_factory=list)
    tracker: list[ToolCallRecord] = field(default_factory=list)


def reset_bus(catalog: Catalog) -> CandidateBus:
    """Fresh bus holding every catalog item (id ascending), empty tracker."""
    return CandidateBus(candidates=list(range(catalog.item_count)))


def record_step(bus: CandidateBus, record: ToolCallRecord) -> None:
    bus.tracker.append(record)


def _dedup(entries: list[str]) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for entry in entries:
        text = entry.strip()
        key = text.casefold()
        if text and key not in seen:
            seen.add(key)
            out.append(text)
    return out


@dataclass
class UserProfile:
    like: list[str] = field(default_factory=list)
    dislike: list[str] = field(default_factory=list)
    expect: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.like = _dedup(self.like)
        self.dislike = _dedup(self.dislike)
        self.expect = _dedup(self.expect)

    def is_empty(self) -> bool:
        return not (self.like or self.dislike or self.expect)

    def to_json(self) -> dict:
        return asdict(self)


def _merge_facets(existing: UserProfile, new: UserProfile) -> tuple[list[str], list[str]]:
    """Case-insensitive union with existing order first; recency wins on
    like/dislike conflicts (an item in new.like leaves the merged dislike
    list and vice versa)."""
    like = _dedup(existing.like + new.like)
    dislike = _dedup(existing.dislike + new.dislike)
    new_like = {e.casefold() for e in new.like}
    new_dislike = {e.casefold() for e in new.dislike}
    like = [e for e in like if e.casefold() not in (new_dislike - new_like)]
    dislike = [e for e in dislike if e.casefold() not in new_like]
    return like, dislike


def merge_long_term(existing: UserProfile, new: UserProfile) -> UserProfile:
    """Fold a freshly extracted profile into long-term memory. The result
    never carries "expect" entries (those are per-conversation)."""
    like, dislike = _merge_facets(existing, new)
    return UserProfile(like=like, dislike=dislike, expect=[])


def compose_profile(long: UserProfile, short: UserProfile) -> UserProfile:
    """Profile handed to the ranking tool: long-term merged with short-term
    (short wins conflicts), "expect" taken from the short side."""
    like, dislike = _merge_facets(long, short)
    return UserProfile(like=like, dislike=dislike, expect=list(short.expect))


def merge_short_term(existing: UserProfile, new: UserProfile) -> UserProfile:
    """Per-turn short-term update: same conflict rules, but the existing
    "expect" entries are kept."""
    like, dislike = _merge_facets(existing, new)
    return UserProfile(like=like, dislike=dislike, expect=list(existing.expect))


def _parse_profile_reply(reply: str) -> UserProfile | None:
    text = reply.strip()
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        data = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict):
        return None
    facets = {}
    for key in ("like", "dislike", "expect"):
        value = data.get(key, [])
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list):
            return None
        facets[key] = [str(v) for v in value]
    return UserProfile(**facets)


def extract_profile(
    llm: ChatProvider, segment: list[tuple[str, str]], item_noun: str = "item"
) -> UserProfile:
    """Ask the LLM for the three-facet profile of a conversation segment.

    An unparseable reply gets one repair retry; a second failure yields an
    empty profile with a logged warning. Provider failures become TurnError.
    """
    if not segment:
        raise TurnError("cannot extract a profile from an empty segment")
    prompt = render_prompt(
        "profile_extraction",
        {"item": item_noun, "conversation": render_history(segment)},
    )
    messages = [("user", prompt)]
    try:
        reply = complete(llm, messages, GenParams())
        profile = _parse_profile_reply(reply)
        if profile is None:
            messages = messages + [("assistant", reply), ("user", _REPAIR_MESSAGE)]
            reply = complete(llm, messages, GenParams())
            profile = _parse_profile_reply(reply)
    except ProviderError as exc:
        raise TurnError(f"profile extraction failed: {exc}") from exc
    if profile is None:
        logger.warning("profile extraction reply unparseable twice; using empty profile")
        return UserProfile()
    return profile


def render_history(turns: list[tuple[str, str]]) -> str:
    """Conversation turns rendered for prompt slots."""
    labels = {"user": "Human", "assistant": "Assistant"}
    return "\n".join(f"{labels.get(role, role)}: {text}" for role, text in turns)


@dataclass
class DialogueContext:
    """Session conversation state with a character budget standing in for the
    LLM window (tokenizer-independent, so folds trigger deterministically)."""

    turns: list[tuple[str, str]] = field(default_factory=list)
    long_term_profile: UserProfile = field(default_factory=UserProfile)
    char_budget: int = DEFAULT_CHAR_BUDGET

    def render(self) -> str:
        return render_history(self.turns)

    def append(self, role: str, text: str) -> None:
        self.turns.append((role, text))

    def over_budget(self) -> bool:
        return len(self.render()) > self.char_budget

    def fold_if_needed(self, llm: ChatProvider, item_noun: str = "item") -> bool:
        """Fold turns older than the most recent RECENT_TURNS_KEPT into the
        long-term profile once the rendered history exceeds the budget."""
        if not self.over_budget() or len(self.turns) <= RECENT_TURNS_KEPT:
            return False
        old, recent = self.turns[:-RECENT_TURNS_KEPT], self.turns[-RECENT_TURNS_KEPT:]
        extracted = extract_profile(llm, old, item_noun)
        self.long_term_profile = merge_long_term(self.long_term_profile, extracted)
        self.turns = list(recent)
        if self.over_budget():
            logger.warning("history still over budget after folding old turns")
        return True


def write_session_log(path: str, entries: list[dict]) -> None:
    """Line-JSON session log: one turn per line with role, text, profile
    snapshots, and (for agent turns) the tool-call tracker."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def read_session_log(path: str) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(json.loads(line))
    return entries


def log_to_transcript(entries: list[dict]) -> list[tuple[str, str]]:
    """Replay a session log as (role, text) turns, e.g. to preload a new
    session's long-term memory."""
    return [(e["role"], e["text"]) for e in entries if e.get("role") and "text" in e]
