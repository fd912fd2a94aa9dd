"""One conversational turn, end to end: plan -> execute -> respond -> reflect.

The actor makes a complete tool plan in one LLM call and answers in a second
one; a critic LLM judges the whole attempt. A negative judgment triggers a
rechain: the bus reverts to the full catalog, the feedback is added to the
plan prompt, and the actor tries again. Cheap local failures (plan parse
errors, validation violations) become synthetic negative judgments without
spending a critic call.

Call accounting: a happy-path tool turn costs exactly 2 actor calls (plan +
respond) and 1 critic call. Plan execution itself never calls the LLM.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field

from .catalog import Catalog
from .errors import ProviderError, SessionBusy, TurnError
from .gateway import CallCounters, ChatProvider, CountingProvider, GenParams, complete
from .memory import (
    CandidateBus,
    DialogueContext,
    ToolCallRecord,
    UserProfile,
    compose_profile,
    merge_short_term,
    reset_bus,
)
from .planner import (
    DemoStore,
    Plan,
    build_plan_prompt,
    execute_plan,
    make_plan,
    render_plan_numbered,
    validate_plan,
)
from .prompts import render_prompt
from .recmodels import SimilarityModel
from .toolkit import TOOL_RANKING, ToolDeps, ToolRegistry, prompt_tool_slots

logger = logging.getLogger(__name__)

TRACE_VERSION = 1
DEFAULT_MAX_RECHAINS = 2

GIVE_UP_APOLOGY = (
    "I'm sorry, I couldn't work out a satisfying answer for that. "
    "Could you rephrase or give me a bit more detail?"
)

VERDICT_POSITIVE = "positive"
VERDICT_NEGATIVE = "negative"


@dataclass
class Judgment:
    verdict: str
    feedback: str = ""
    synthetic: bool = False

    @property
    def is_positive(self) -> bool:
        return self.verdict == VERDICT_POSITIVE

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "feedback": self.feedback, "synthetic": self.synthetic}


def parse_judgment(reply: str) -> Judgment:
    """"Yes..." -> positive, "No..." -> negative with the reply as feedback;
    anything else counts as positive with a logged warning."""
    head = reply.strip()
    if head.lower().startswith("yes"):
        return Judgment(verdict=VERDICT_POSITIVE)
    if head.lower().startswith("no"):
        return Judgment(verdict=VERDICT_NEGATIVE, feedback=reply.strip())
    logger.warning("critic reply starts with neither Yes nor No; treating as positive: %r", head[:80])
    return Judgment(verdict=VERDICT_POSITIVE)


@dataclass
class Attempt:
    plan: Plan
    plan_prompt: str
    records: list[ToolCallRecord] = field(default_factory=list)
    judgment: Judgment | None = None
    response: str | None = None
    direct_answer: str | None = None
    reflection_in: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "plan": [{"tool": s.tool_name, "input": s.tool_input} for s in self.plan.steps],
            "plan_text": render_plan_numbered(self.plan),
            "plan_prompt": self.plan_prompt,
            "records": [r.to_json() for r in self.records],
            "judgment": self.judgment.to_json() if self.judgment else None,
            "response": self.response,
            "direct_answer": self.direct_answer,
            "reflection_in": list(self.reflection_in),
        }


@dataclass
class TurnResult:
    turn_id: int
    user_text: str
    response: str
    attempts: list[Attempt]
    actor_calls: int
    critic_calls: int
    history_before: str
    gave_up: bool = False

    def to_trace(self) -> dict:
        return {
            "trace_version": TRACE_VERSION,
            "turn_id": self.turn_id,
            "user_text": self.user_text,
            "response": self.response,
            "actor_calls": self.actor_calls,
            "critic_calls": self.critic_calls,
            "history_before": self.history_before,
            "gave_up": self.gave_up,
            "attempts": [a.to_json() for a in self.attempts],
        }


def render_track(plan: Plan, records: list[ToolCallRecord]) -> str:
    """Plan plus per-step execution summaries; this is what the critic sees
    instead of raw tool output."""
    if not plan.steps and not records:
        return "(no tools used)"
    lines = [f"Plan: {render_plan_numbered(plan)}"]
    for i, record in enumerate(records, start=1):
        summary = record.output_summary
        if summary.get("error"):
            status = f"error: {summary['error']}"
        elif "titles" in summary:
            status = f"fetched: {', '.join(summary['titles']) or '(none)'}"
        else:
            status = f"{summary.get('remaining', '?')} candidates remain"
        notes = []
        if summary.get("warnings"):
            notes.append("; ".join(summary["warnings"]))
        if summary.get("note"):
            notes.append(summary["note"])
        suffix = f" [{'; '.join(notes)}]" if notes else ""
        lines.append(f"{i}. {record.tool_name} ({record.tool_input}) -> {status}{suffix}")
    return "\n".join(lines)


def reflect(
    provider: ChatProvider,
    user_text: str,
    context: DialogueContext,
    plan: Plan,
    records: list[ToolCallRecord],
    answer: str,
    *,
    registry: ToolRegistry,
    item_noun: str = "item",
    params: GenParams | None = None,
) -> Judgment:
    """One critic call over the attempt's plan, tracker summaries, and answer."""
    variables = {
        "item": item_noun,
        "tool_description": registry.render_descriptions(item_noun),
        "chat_history": context.render(),
        "request": user_text,
        "plan": render_track(plan, records),
        "answer": answer,
    }
    variables.update(
        {k: v for k, v in prompt_tool_slots().items() if k in ("HardFilterTool", "SoftFilterTool", "RankingTool")}
    )
    prompt = render_prompt("critic", variables)
    reply = complete(provider, [("user", prompt)], params or GenParams())
    return parse_judgment(reply)


@dataclass
class SessionSettings:
    item_noun: str = "game"
    max_rechains: int = DEFAULT_MAX_RECHAINS
    char_budget: int = 12000
    demo_k: int = 3
    fetch_default: int = 5


class Session:
    """Conversation state plus the shared immutable runtime pieces.

    One turn runs at a time per session (enforced with a lock); distinct
    sessions share catalog/model/demo store safely.
    """

    def __init__(
        self,
        catalog: Catalog,
        model: SimilarityModel,
        registry: ToolRegistry,
        demo_store: DemoStore,
        actor_provider: ChatProvider,
        critic_provider: ChatProvider | None = None,
        settings: SessionSettings | None = None,
    ):
        self.catalog = catalog
        self.model = model
        self.registry = registry
        self.demo_store = demo_store
        self.settings = settings or SessionSettings()
        self.counters = CallCounters()
        self.actor = CountingProvider(actor_provider, self.counters, "actor")
        self.critic = CountingProvider(critic_provider or actor_provider, self.counters, "critic")
        self.profile_llm = CountingProvider(actor_provider, self.counters, "profile")
        self.context = DialogueContext(char_budget=self.settings.char_budget)
        self.short_term_profile = UserProfile()
        self.bus: CandidateBus | None = None
        self.turn_lock = threading.Lock()
        self.turn_seq = 0
        self.traces: dict[int, dict] = {}
        # line-JSON session log entries (one per message), see memory module
        self.log_entries: list[dict] = []

    def composed_profile(self) -> UserProfile:
        return compose_profile(self.context.long_term_profile, self.short_term_profile)

    def _log_message(self, role: str, text: str, tracker: list[ToolCallRecord] | None = None) -> None:
        self.log_entries.append(
            {
                "role": role,
                "text": text,
                "short_term": self.short_term_profile.to_json(),
                "long_term": self.context.long_term_profile.to_json(),
                "tracker": [r.to_json() for r in tracker] if tracker else [],
            }
        )


def _respond(
    session: Session,
    user_text: str,
    plan: Plan,
    observation: str,
    reflection_feedback: list[str],
) -> str:
    """Second actor call: history plus the final observation become the answer."""
    scratchpad = (
        "Question: Do I need to use tools?\n"
        "Thought: Yes, I need to make tool using plans first and then use Tool Executor to execute.\n"
        "Action: Tool Executor\n"
        f"Action Input: {render_plan_numbered(plan)}\n"
        f"Observation: {observation}\n\n"
        "Question: Do I need to use tools?\n"
        "Thought: No, I know the final answer.\n"
        "Final Answer:"
    )
    prompt = build_plan_prompt(
        user_text=user_text,
        history_text=session.context.render(),
        examples_text="",
        registry=session.registry,
        table_info=session.catalog.table_info(),
        item_noun=session.settings.item_noun,
        reflection_feedback=reflection_feedback,
        agent_scratchpad=scratchpad,
    )
    return complete(session.actor, [("user", prompt)], GenParams()).strip()


def _observation_text(records: list[ToolCallRecord]) -> str:
    if not records:
        return "(no tools were executed)"
    last = records[-1].output_summary
    if last.get("error"):
        return f"error: {last['error']}"
    if "titles" in last:
        titles = last["titles"]
        if not titles:
            return "no items matched"
        return "\n".join(f"{i}. {t}" for i, t in enumerate(titles, start=1))
    if last.get("detail"):
        return str(last["detail"])
    return json.dumps(last)


def _update_short_term_profile(session: Session, records: list[ToolCallRecord]) -> None:
    """Fold the ranking tool's per-turn prefer/unwanted strings into the
    session's short-term profile (recency wins against older entries)."""
    for record in records:
        if record.tool_name != TOOL_RANKING:
            continue
        prefer = record.output_summary.get("input_prefer") or []
        unwanted = record.output_summary.get("input_unwanted") or []
        if not prefer and not unwanted:
            continue
        session.short_term_profile = merge_short_term(
            session.short_term_profile,
            UserProfile(like=list(prefer), dislike=list(unwanted)),
        )


def run_turn(session: Session, user_text: str) -> TurnResult:
    """Run the full reflection loop for one user message.

    Tool errors never escape: they live in records and feed the critic.
    Provider failures surface as TurnError.
    """
    if not session.turn_lock.acquire(blocking=False):
        raise SessionBusy("session is busy with another turn")
    try:
        return _run_turn_locked(session, user_text)
    finally:
        session.turn_lock.release()


def _run_turn_locked(session: Session, user_text: str) -> TurnResult:
    settings = session.settings
    history_before = session.context.render()
    calls_before = session.counters.snapshot()
    feedback: list[str] = []
    attempts: list[Attempt] = []
    response: str | None = None
    gave_up = False
    max_attempts = 1 + settings.max_rechains

    try:
        for attempt_no in range(1, max_attempts + 1):
            # Rechains revert to the initial state: full candidate set.
            session.bus = reset_bus(session.catalog)
            outcome = make_plan(
                session.actor,
                user_text,
                session.context,
                session.registry,
                session.demo_store,
                table_info=session.catalog.table_info(),
                item_noun=settings.item_noun,
                reflection_feedback=feedback,
                demo_k=settings.demo_k,
            )
            attempt = Attempt(
                plan=outcome.plan,
                plan_prompt=outcome.prompt,
                direct_answer=outcome.direct_answer,
                reflection_in=list(feedback),
            )
            attempts.append(attempt)

            violations = validate_plan(outcome.plan, session.registry)
            if outcome.parse_error or violations:
                reason = outcome.parse_error or "; ".join(violations)
                attempt.judgment = Judgment(
                    verdict=VERDICT_NEGATIVE, feedback=reason, synthetic=True
                )
                feedback.append(reason)
                logger.info("attempt %d failed local checks: %s", attempt_no, reason)
                continue

            deps = ToolDeps(
                catalog=session.catalog,
                model=session.model,
                profile=session.composed_profile(),
                fetch_default=settings.fetch_default,
            )
            attempt.records = execute_plan(outcome.plan, session.bus, session.registry, deps)

            if outcome.plan.is_empty() and outcome.direct_answer:
                answer = outcome.direct_answer
            else:
                answer = _respond(
                    session, user_text, outcome.plan, _observation_text(attempt.records), feedback
                )
            attempt.response = answer
            response = answer

            attempt.judgment = reflect(
                session.critic,
                user_text,
                session.context,
                outcome.plan,
                attempt.records,
                answer,
                registry=session.registry,
                item_noun=settings.item_noun,
            )
            if attempt.judgment.is_positive:
                break
            feedback.append(attempt.judgment.feedback)
        else:
            gave_up = True
            logger.warning("giving up after %d attempts for turn input %r", max_attempts, user_text[:60])
    except ProviderError as exc:
        raise TurnError(str(exc)) from exc

    if response is None:
        # Every attempt died in local checks; apologize rather than error.
        gave_up = True
        response = GIVE_UP_APOLOGY

    final = attempts[-1]
    if final.response is None:
        # Give-up path: the returned best effort is recorded on the final
        # attempt so the trace and the response always agree.
        final.response = response
    _update_short_term_profile(session, final.records)
    session._log_message("user", user_text)
    session.context.append("user", user_text)
    session.context.append("assistant", response)
    session.context.fold_if_needed(session.profile_llm, settings.item_noun)
    session._log_message("assistant", response, tracker=final.records)

    calls_after = session.counters.snapshot()
    session.turn_seq += 1
    result = TurnResult(
        turn_id=session.turn_seq,
        user_text=user_text,
        response=response,
        attempts=attempts,
        actor_calls=calls_after["actor"] - calls_before["actor"],
        critic_calls=calls_after["critic"] - calls_before["critic"],
        history_before=history_before,
        gave_up=gave_up,
    )
    session.traces[result.turn_id] = result.to_trace()
    return result
