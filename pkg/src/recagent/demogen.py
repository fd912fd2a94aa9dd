"""Offline demonstration generation and fine-tuning dataset export.

Two generation strategies fill the demonstration store beyond the hand
written seeds: input-first (imitate seed intents, then plan for them) and
output-first (invent an intent for a given plan, re-plan from the intent,
keep it only when the re-plan is consistent with the original). Consistency
compares ordered tool-name sequences; inputs are free text with placeholders
and deliberately ignored.

The exported dataset pairs the exact instruction the live agent rendered
(system prompt + conversation history) with the plan text, one pair per
tool-using user/agent exchange.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .catalog import Catalog
from .errors import PlanParseError
from .gateway import ChatProvider, GenParams, complete
from .memory import render_history
from .planner import (
    DemoStore,
    Demonstration,
    Plan,
    PlanStep,
    build_plan_prompt,
    parse_plan,
    render_demos,
    render_plan_numbered,
    validate_plan,
)
from .prompts import render_prompt
from .toolkit import ToolRegistry, prompt_tool_slots

logger = logging.getLogger(__name__)

STRATEGY_INPUT_FIRST = "input_first"
STRATEGY_OUTPUT_FIRST = "output_first"


@dataclass
class GenRecord:
    strategy: str
    intent: str
    plan: Plan | None
    accepted: bool
    reject_reason: str | None = None

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "intent": self.intent,
            "plan": (
                [{"tool": s.tool_name, "input": s.tool_input} for s in self.plan.steps]
                if self.plan
                else None
            ),
            "accepted": self.accepted,
            "reject_reason": self.reject_reason,
        }


@dataclass
class InstructionPlanPair:
    instruction: str
    plan_text: str

    def to_json(self) -> dict:
        return {"instruction": self.instruction, "output": self.plan_text}


def plans_consistent(a: Plan, b: Plan) -> bool:
    """True iff the ordered tool-name sequences match; inputs are ignored."""
    return a.tool_names() == b.tool_names()


def _parse_intents(reply: str, limit: int) -> list[str]:
    """Pull intent sentences out of a generation reply: one per line, with
    "N." / "Request N:" style prefixes stripped."""
    intents = []
    for line in reply.splitlines():
        text = line.strip()
        if not text:
            continue
        lowered = text.lower()
        if lowered.startswith("request"):
            _, _, rest = text.partition(":")
            text = rest.strip()
        else:
            head, dot, rest = text.partition(".")
            if dot and head.strip().isdigit():
                text = rest.strip()
        if text:
            intents.append(text)
    return intents[:limit]


def _plan_prompt_vars(registry: ToolRegistry, item_noun: str, seeds: list[Demonstration]) -> dict:
    variables = {
        "item": item_noun,
        "tools_desc": registry.render_descriptions(item_noun),
        "tool_names": ", ".join(registry.names()),
        "examples": render_demos(seeds),
    }
    slots = prompt_tool_slots()
    variables["LookUpTool"] = slots["LookUpTool"]
    variables["BufferStoreTool"] = slots["BufferStoreTool"]
    return variables


def _plan_for_intent(
    provider: ChatProvider,
    intent: str,
    registry: ToolRegistry,
    item_noun: str,
    seeds: list[Demonstration],
) -> Plan:
    variables = _plan_prompt_vars(registry, item_noun, seeds)
    variables["request"] = intent
    prompt = render_prompt("plan_generation", variables)
    reply = complete(provider, [("user", prompt)], GenParams())
    return parse_plan(reply)


def _contains_catalog_title(intent: str, catalog: Catalog | None) -> str | None:
    if catalog is None:
        return None
    lowered = intent.casefold()
    for item in catalog.items:
        if item.title.casefold() in lowered:
            return item.title
    return None


def generate_input_first(
    provider: ChatProvider,
    seeds: list[Demonstration],
    n: int,
    *,
    registry: ToolRegistry,
    item_noun: str = "item",
    catalog: Catalog | None = None,
) -> list[GenRecord]:
    """Stage 1: emulate seed intents to get n new ones (placeholders only);
    stage 2: plan for each. Records with unparseable or invalid plans are
    kept but rejected, for audit."""
    if not seeds:
        raise ValueError("seed demonstrations are required")
    if n <= 0:
        return []
    intent_prompt = render_prompt(
        "intent_input_first",
        {
            "item": item_noun,
            "requests": "\n".join(f"{i}. {d.intent}" for i, d in enumerate(seeds, start=1)),
            "number": n,
        },
    )
    reply = complete(provider, [("user", intent_prompt)], GenParams())
    records = []
    for intent in _parse_intents(reply, n):
        concrete = _contains_catalog_title(intent, catalog)
        if concrete is not None:
            records.append(
                GenRecord(
                    strategy=STRATEGY_INPUT_FIRST, intent=intent, plan=None,
                    accepted=False, reject_reason=f"placeholder violation: contains {concrete!r}",
                )
            )
            continue
        try:
            plan = _plan_for_intent(provider, intent, registry, item_noun, seeds)
        except PlanParseError as exc:
            records.append(
                GenRecord(
                    strategy=STRATEGY_INPUT_FIRST, intent=intent, plan=None,
                    accepted=False, reject_reason=f"unparseable plan: {exc}",
                )
            )
            continue
        violations = validate_plan(plan, registry)
        if violations:
            records.append(
                GenRecord(
                    strategy=STRATEGY_INPUT_FIRST, intent=intent, plan=plan,
                    accepted=False, reject_reason="invalid plan: " + "; ".join(violations),
                )
            )
        else:
            records.append(
                GenRecord(strategy=STRATEGY_INPUT_FIRST, intent=intent, plan=plan, accepted=True)
            )
    return records


def generate_output_first(
    provider: ChatProvider,
    target_plan: Plan,
    n: int,
    *,
    registry: ToolRegistry,
    item_noun: str = "item",
    seeds: list[Demonstration] | None = None,
) -> list[GenRecord]:
    """Stage 1: invent intents for the target plan; stage 2: re-plan from
    each intent; stage 3: keep only intents whose re-plan is consistent with
    the target."""
    violations = validate_plan(target_plan, registry)
    if violations:
        raise ValueError("target plan is invalid: " + "; ".join(violations))
    if n <= 0:
        return []
    seeds = seeds or []
    variables = _plan_prompt_vars(registry, item_noun, seeds)
    variables["number"] = n
    variables["plan"] = render_plan_numbered(target_plan)
    intent_prompt = render_prompt("intent_output_first", variables)
    reply = complete(provider, [("user", intent_prompt)], GenParams())
    records = []
    for intent in _parse_intents(reply, n):
        try:
            replanned = _plan_for_intent(provider, intent, registry, item_noun, seeds)
        except PlanParseError as exc:
            records.append(
                GenRecord(
                    strategy=STRATEGY_OUTPUT_FIRST, intent=intent, plan=None,
                    accepted=False, reject_reason=f"unparseable plan: {exc}",
                )
            )
            continue
        if plans_consistent(target_plan, replanned):
            records.append(
                GenRecord(
                    strategy=STRATEGY_OUTPUT_FIRST, intent=intent, plan=target_plan, accepted=True
                )
            )
        else:
            records.append(
                GenRecord(
                    strategy=STRATEGY_OUTPUT_FIRST, intent=intent, plan=replanned,
                    accepted=False,
                    reject_reason="inconsistent: re-plan differs from target plan",
                )
            )
    return records


def accepted_to_store(records: list[GenRecord], store: DemoStore) -> int:
    added = 0
    for record in records:
        if record.accepted and record.plan is not None:
            store.add(record.intent, record.plan)
            added += 1
    return added


@dataclass
class ExportStats:
    from_traces: int = 0
    from_synthetic: int = 0
    skipped_chitchat: int = 0

    def to_json(self) -> dict:
        return {
            "from_traces": self.from_traces,
            "from_synthetic": self.from_synthetic,
            "skipped_chitchat": self.skipped_chitchat,
        }


def export_instruction_pairs(
    traces: list[dict],
    synthetic: list[dict],
    *,
    store: DemoStore,
    registry: ToolRegistry,
    catalog: Catalog,
    item_noun: str = "game",
    demo_k: int = 3,
) -> tuple[list[InstructionPlanPair], ExportStats]:
    """Build [instruction, plan] training pairs.

    ``traces`` are turn traces (see turn.TurnResult.to_trace); each tool-using
    exchange contributes the instruction the actor actually saw and the plan
    it settled on. Chit-chat turns (empty final plan) are skipped and counted.
    ``synthetic`` entries are authored dialogues {history, request, plan} that
    get their instruction rendered through the very same prompt builder.
    """
    pairs = []
    stats = ExportStats()
    for trace in traces:
        attempts = trace.get("attempts", [])
        if not attempts:
            stats.skipped_chitchat += 1
            continue
        final = attempts[-1]
        steps = final.get("plan") or []
        if not steps:
            stats.skipped_chitchat += 1
            continue
        plan = Plan(steps=[_plan_step(p) for p in steps])
        pairs.append(
            InstructionPlanPair(
                instruction=final["plan_prompt"], plan_text=render_plan_numbered(plan)
            )
        )
        stats.from_traces += 1
    for dialogue in synthetic:
        steps = dialogue.get("plan") or []
        if not steps:
            stats.skipped_chitchat += 1
            continue
        plan = Plan(steps=[_plan_step(p) for p in steps])
        request = dialogue["request"]
        history = [tuple(t) for t in dialogue.get("history", [])]
        demos = store.retrieve(request, demo_k)
        instruction = build_plan_prompt(
            user_text=request,
            history_text=render_history(history),
            examples_text=render_demos(demos),
            registry=registry,
            table_info=catalog.table_info(),
            item_noun=item_noun,
        )
        pairs.append(
            InstructionPlanPair(instruction=instruction, plan_text=render_plan_numbered(plan))
        )
        stats.from_synthetic += 1
    return pairs, stats


def _plan_step(entry: dict) -> PlanStep:
    return PlanStep(tool_name=entry["tool"], tool_input=entry.get("input", ""))


def write_pairs(path: str, pairs: list[InstructionPlanPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_json(), ensure_ascii=False) + "\n")


def load_synthetic_dialogues(path: str) -> list[dict]:
    dialogues = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                dialogues.append(json.loads(line))
    return dialogues
