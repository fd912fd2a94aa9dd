"""Plan-first execution: demonstrations, plan parsing, validation, execution.

The actor LLM emits a complete tool-call plan in one call; tools then run
without any further LLM involvement. Demonstrations are (intent, plan) pairs
retrieved by embedding similarity to the live user input and injected into
the plan prompt, which is what makes in-context learning work here: guiding
a whole plan is far easier than guiding step-wise reasoning.
"""

from __future__ import annotations

import json
import logging
import re
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import PlanParseError
from .gateway import ChatProvider, GenParams, complete
from .memory import CandidateBus, DialogueContext, ToolCallRecord
from .prompts import render_prompt

logger = logging.getLogger(__name__)

EMBED_DIM = 512
DEFAULT_DEMO_K = 3
MAX_PLAN_STEPS = 8

# Reply sentinel for "no tools needed"; everything after it (or after a
# ReAct-style "Final Answer:") is treated as the direct answer text.
NO_TOOL_SENTINEL = "NO_TOOL"
FINAL_ANSWER_MARKER = "Final Answer:"
ACTION_INPUT_MARKER = "Action Input:"

_TOKEN_RE = re.compile(r"[0-9a-z]+")


def embed_text(text: str) -> np.ndarray:
    """Deterministic hashed bag-of-tokens embedding, L2-normalized.

    Case-insensitive and order-insensitive by construction; empty text maps
    to the zero vector. A learned sentence encoder can be plugged in behind
    the same text -> vector contract (see gateway.HttpEmbeddingProvider).
    """
    vec = np.zeros(EMBED_DIM)
    for token in _TOKEN_RE.findall(text.lower()):
        vec[zlib.crc32(token.encode("utf-8")) % EMBED_DIM] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass(frozen=True)
class PlanStep:
    tool_name: str
    tool_input: str = ""


@dataclass
class Plan:
    steps: list[PlanStep] = field(default_factory=list)

    def tool_names(self) -> list[str]:
        return [s.tool_name for s in self.steps]

    def is_empty(self) -> bool:
        return not self.steps


def render_plan_structured(plan: Plan) -> str:
    return json.dumps(
        [{"tool": s.tool_name, "input": s.tool_input} for s in plan.steps]
    )


def render_plan_numbered(plan: Plan) -> str:
    parts = []
    for i, step in enumerate(plan.steps, start=1):
        if step.tool_input:
            parts.append(f"{i}. {step.tool_name} ({step.tool_input})")
        else:
            parts.append(f"{i}. {step.tool_name}")
    return "; ".join(parts)


def _parse_structured(text: str) -> Plan | None:
    stripped = text.strip()
    if not stripped.startswith("["):
        return None
    try:
        data = json.loads(stripped)
    except json.JSONDecodeError:
        return None
    if not isinstance(data, list):
        return None
    steps = []
    for entry in data:
        if not isinstance(entry, dict) or "tool" not in entry:
            return None
        steps.append(PlanStep(tool_name=str(entry["tool"]), tool_input=str(entry.get("input", ""))))
    return Plan(steps=steps)


def _step_markers(text: str) -> list[tuple[int, int]]:
    """Positions of ``N.`` step markers that sit outside parentheses and are
    preceded only by whitespace after a separator (start, ';', newline, ':').
    Parenthesis awareness keeps decimals inside tool inputs from splitting
    steps."""
    marks = []
    depth = 0
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "(":
            depth += 1
        elif c == ")":
            depth = max(0, depth - 1)
        elif c.isdigit() and depth == 0:
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                k = i - 1
                while k >= 0 and text[k] in " \t":
                    k -= 1
                if k < 0 or text[k] in ";\n:":
                    marks.append((i, j + 1))
                i = j + 1
                continue
        i += 1
    return marks


def _split_segment(segment: str) -> PlanStep | None:
    """One numbered segment -> (tool name, balanced-paren input)."""
    seg = segment.strip()
    if not seg:
        return None
    open_idx = seg.find("(")
    if open_idx < 0:
        name = seg.rstrip(" .;,")
        return PlanStep(tool_name=name) if name else None
    name = seg[:open_idx].strip().rstrip(" .;,")
    depth = 0
    close_idx = len(seg)
    for i in range(open_idx, len(seg)):
        if seg[i] == "(":
            depth += 1
        elif seg[i] == ")":
            depth -= 1
            if depth == 0:
                close_idx = i
                break
    inner = seg[open_idx + 1 : close_idx].strip()
    return PlanStep(tool_name=name, tool_input=inner) if name else None


def _parse_numbered(text: str) -> Plan | None:
    body = text.strip()
    if body.lower().startswith("plan:"):
        body = body[5:].strip()
    marks = _step_markers(body)
    if not marks:
        return None
    steps = []
    for idx, (start, end) in enumerate(marks):
        seg_end = marks[idx + 1][0] if idx + 1 < len(marks) else len(body)
        step = _split_segment(body[end:seg_end].rstrip("; \n"))
        if step is not None:
            steps.append(step)
    return Plan(steps=steps) if steps else None


def parse_plan(text: str) -> Plan:
    """Parse a plan reply in either grammar.

    Grammar (a): a JSON array of {"tool": ..., "input": ...} objects.
    Grammar (b): a numbered list ``N. Tool Name (input)`` separated by ';'
    or newlines; the input is everything inside the outermost parentheses
    (which may be absent for input-less steps).
    """
    plan = _parse_structured(text)
    if plan is not None:
        return plan
    plan = _parse_numbered(text)
    if plan is not None:
        return plan
    raise PlanParseError(text)


@dataclass(frozen=True)
class Demonstration:
    demo_id: int
    intent: str
    plan: Plan
    embedding: np.ndarray


class DemoStore:
    """Append-only demonstration store with cosine nearest-neighbor lookup."""

    def __init__(self, embed_fn: Callable[[str], np.ndarray] = embed_text):
        self._embed = embed_fn
        self._demos: list[Demonstration] = []
        self._matrix = np.zeros((0, EMBED_DIM))

    def __len__(self) -> int:
        return len(self._demos)

    @property
    def demonstrations(self) -> list[Demonstration]:
        return list(self._demos)

    def add(self, intent: str, plan: Plan) -> Demonstration:
        vec = np.asarray(self._embed(intent), dtype=float)
        demo = Demonstration(demo_id=len(self._demos), intent=intent, plan=plan, embedding=vec)
        self._demos.append(demo)
        self._matrix = np.vstack([self._matrix, vec[None, :]])
        return demo

    def retrieve(self, intent: str, k: int = DEFAULT_DEMO_K) -> list[Demonstration]:
        """Top-k by cosine (vectors are already normalized), ties broken by
        demo id ascending; returns exactly min(k, store size) items."""
        if not self._demos or k <= 0:
            return []
        query = np.asarray(self._embed(intent), dtype=float)
        scores = self._matrix @ query
        order = sorted(range(len(self._demos)), key=lambda i: (-scores[i], i))
        return [self._demos[i] for i in order[: min(k, len(self._demos))]]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for demo in self._demos:
                fh.write(
                    json.dumps(
                        {
                            "intent": demo.intent,
                            "plan": [
                                {"tool": s.tool_name, "input": s.tool_input}
                                for s in demo.plan.steps
                            ],
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str, embed_fn: Callable[[str], np.ndarray] = embed_text) -> "DemoStore":
        store = cls(embed_fn)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                data = json.loads(line)
                plan = Plan(
                    steps=[
                        PlanStep(tool_name=p["tool"], tool_input=p.get("input", ""))
                        for p in data["plan"]
                    ]
                )
                store.add(data["intent"], plan)
        return store


def render_demos(demos: Sequence[Demonstration]) -> str:
    return "\n\n".join(
        f"Request: {d.intent}\nPlan: {render_plan_numbered(d.plan)}" for d in demos
    )


def validate_plan(plan: Plan, registry) -> list[str]:
    """Static plan checks. Violations are data for the rechain loop (the
    failure classes: unknown tools, missing/overused tools), never raises."""
    from .toolkit import (
        TOOL_FETCH,
        TOOL_ITEMCF,
        TOOL_RANKING,
        TOOL_SQL_RETRIEVAL,
        TOOL_STORE,
    )

    violations = []
    known = set(registry.names())
    names = plan.tool_names()
    for name in names:
        if name not in known:
            violations.append(f"unknown tool: {name}")
    if len(names) > MAX_PLAN_STEPS:
        violations.append(f"plan has {len(names)} steps; at most {MAX_PLAN_STEPS} allowed")
    if TOOL_STORE in names[1:]:
        violations.append(f"{TOOL_STORE} must be the first step when used")
    if names.count(TOOL_RANKING) > 1:
        violations.append(f"duplicate {TOOL_RANKING}")
    needs_fetch = any(n in names for n in (TOOL_SQL_RETRIEVAL, TOOL_ITEMCF, TOOL_RANKING))
    if needs_fetch and (not names or names[-1] != TOOL_FETCH):
        violations.append(
            f"{TOOL_FETCH} must be the final step when retrieval or ranking tools are used"
        )
    return violations


@dataclass
class PlanOutcome:
    plan: Plan
    raw_reply: str
    prompt: str
    direct_answer: str | None = None
    parse_error: str | None = None
    demos: list[Demonstration] = field(default_factory=list)


def build_plan_prompt(
    user_text: str,
    history_text: str,
    examples_text: str,
    registry,
    table_info: str,
    item_noun: str,
    reflection_feedback: Sequence[str] = (),
    agent_scratchpad: str = "",
) -> str:
    """Render the full actor prompt. Deterministic in its inputs, which is
    what lets exported training instructions re-render byte-identically."""
    from .toolkit import TOOL_EXECUTOR_DESC, TOOL_EXECUTOR_NAME, prompt_tool_slots

    variables = {
        "item": item_noun,
        "tools_desc": registry.render_descriptions(item_noun),
        "table_info": table_info,
        "tool_exe_name": TOOL_EXECUTOR_NAME,
        "tool_exe_desc": TOOL_EXECUTOR_DESC,
        "tool_names": ", ".join(registry.names()),
        "examples": examples_text,
        "history": history_text,
        "input": user_text,
        "reflection": "\n".join(reflection_feedback),
        "agent_scratchpad": agent_scratchpad,
    }
    variables.update(prompt_tool_slots())
    return render_prompt("task_description", variables)


def _extract_direct_answer(reply: str) -> str | None:
    """Direct-answer path: a NO_TOOL sentinel or a ReAct-style final answer
    without any tool action."""
    stripped = reply.strip()
    if NO_TOOL_SENTINEL in stripped:
        after = stripped.split(NO_TOOL_SENTINEL, 1)[1].lstrip(" :\n")
        return after if after else ""
    if FINAL_ANSWER_MARKER in stripped and ACTION_INPUT_MARKER not in stripped:
        return stripped.split(FINAL_ANSWER_MARKER, 1)[1].strip()
    return None


def make_plan(
    provider: ChatProvider,
    user_text: str,
    context: DialogueContext,
    registry,
    store: DemoStore,
    *,
    table_info: str,
    item_noun: str = "item",
    reflection_feedback: Sequence[str] = (),
    demo_k: int = DEFAULT_DEMO_K,
    params: GenParams | None = None,
) -> PlanOutcome:
    """One actor call that yields either a tool plan or a direct answer.

    Parse failures are reported in the outcome, not raised: the turn
    controller decides whether to rechain.
    """
    demos = store.retrieve(user_text, demo_k)
    prompt = build_plan_prompt(
        user_text=user_text,
        history_text=context.render(),
        examples_text=render_demos(demos),
        registry=registry,
        table_info=table_info,
        item_noun=item_noun,
        reflection_feedback=reflection_feedback,
    )
    reply = complete(provider, [("user", prompt)], params or GenParams())

    direct = _extract_direct_answer(reply)
    if direct is not None:
        return PlanOutcome(
            plan=Plan(), raw_reply=reply, prompt=prompt,
            direct_answer=direct or None, demos=demos,
        )

    body = reply
    if ACTION_INPUT_MARKER in body:
        body = body.split(ACTION_INPUT_MARKER, 1)[1]
        body = body.split("Observation:", 1)[0]
    try:
        plan = parse_plan(body)
    except PlanParseError as exc:
        return PlanOutcome(
            plan=Plan(), raw_reply=reply, prompt=prompt,
            parse_error=str(exc), demos=demos,
        )
    return PlanOutcome(plan=plan, raw_reply=reply, prompt=prompt, demos=demos)


def execute_plan(plan: Plan, bus: CandidateBus, registry, deps) -> list[ToolCallRecord]:
    """Run the plan's tools in order against the shared bus.

    No LLM is involved here by construction. Stops at the first record that
    carries an error; every executed step leaves exactly one record.
    """
    records = []
    for step in plan.steps:
        record = registry.execute(step.tool_name, step.tool_input, bus, deps)
        records.append(record)
        if record.output_summary.get("error"):
            break
    return records
