"""Evaluation: simulated multi-turn sessions, one-turn tasks, baselines.

Two complementary protocols. (1) A role-played user chats with the agent
toward a hidden target item (the last item of their history); success is the
target title appearing in an agent message within the turn budget. (2) A
one-turn protocol poses a synthesized dialogue plus a final retrieval or
ranking instruction and scores the single reply.

Metrics: hit rate and average turns for sessions (misses counted as k+1
turns), recall@k and NDCG@k for one-turn tasks (single relevant item, so
the ideal DCG is 1 and NDCG reduces to 1/log2(rank+1)).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog
from .errors import ProviderError, TurnError
from .gateway import ChatProvider, GenParams, complete
from .prompts import render_prompt
from .turn import Session, run_turn

logger = logging.getLogger(__name__)

SETTING_SESSION_WISE = "session_wise"
SETTING_LONG_CHAT = "long_chat"
SETTING_LONG_CONTEXT = "long_context"
SETTINGS = (SETTING_SESSION_WISE, SETTING_LONG_CHAT, SETTING_LONG_CONTEXT)

END_TOKEN = "<END>"
LONG_CHAT_MAX_TURNS = 50
LONG_CHAT_EXTRA_RULE = (
    "Alternate between providing information (your history or target details) "
    "and casual chat every five rounds."
)

RETRIEVAL_INSTRUCTION = "Please give me {k} recommendations based on the chat history."
RANKING_INSTRUCTION = "Please rank these candidate items based on the chat history: {candidates}"

MODE_RETRIEVAL = "retrieval"
MODE_RANKING = "ranking"
BASELINE_RANDOM = "random"
BASELINE_POPULARITY = "popularity"
RANKING_CANDIDATES = 20


@dataclass
class SimSession:
    target_item: int
    history: list[int]
    transcript: list[tuple[str, str]]
    hit: bool
    turns_used: int
    setting: str
    error: str | None = None

    def to_row(self) -> dict:
        return {
            "target_item": self.target_item,
            "hit": self.hit,
            "turns_used": self.turns_used,
            "setting": self.setting,
            "error": self.error,
        }


def render_transcript(transcript: list[tuple[str, str]]) -> str:
    return "\n".join(f"{role}: {text}" for role, text in transcript)


def build_history_transcript(
    catalog: Catalog, history: list[int], days: int = 3, item_noun: str = "game"
) -> list[tuple[str, str]]:
    """Deterministic multi-day transcript over a user's history, used to
    preload long-term memory in the long-context setting."""
    transcript: list[tuple[str, str]] = []
    if not history:
        return transcript
    chunks = np.array_split(np.array(history), min(days, len(history)))
    for day, chunk in enumerate(chunks, start=1):
        titles = ", ".join(catalog.title_of(int(i)) for i in chunk)
        transcript.append(
            ("user", f"Day {day}: lately I have been playing {titles}. I like {titles}.")
        )
        transcript.append(
            ("assistant", f"Thanks! I noted that you enjoy {titles}; tell me more anytime.")
        )
    return transcript


def _target_info(catalog: Catalog, target: int) -> str:
    """Attributes the simulator may reveal; never includes the title itself."""
    item = catalog.items[target]
    return (
        f"tags: {', '.join(item.tags)}; price: {item.price}; "
        f"release date: {item.release_date}; description: {item.description}"
    )


def simulate_session(
    agent_session: Session,
    sim_provider: ChatProvider,
    target: int,
    history: list[int],
    max_turns: int = 5,
    setting: str = SETTING_SESSION_WISE,
    preload_transcript: list[tuple[str, str]] | None = None,
    item_noun: str = "game",
) -> SimSession:
    """Alternate simulator and agent messages until the target title shows up
    in an agent reply, the simulator ends the chat, or the budget runs out.

    Provider failures abort the session as a recorded failure row rather than
    crashing the whole evaluation run.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting: {setting}")
    catalog = agent_session.catalog
    if setting == SETTING_LONG_CHAT:
        max_turns = LONG_CHAT_MAX_TURNS
    if setting == SETTING_LONG_CONTEXT and preload_transcript:
        for role, text in preload_transcript:
            agent_session.context.append(role, text)
        agent_session.context.fold_if_needed(
            agent_session.profile_llm, agent_session.settings.item_noun
        )

    target_title = catalog.title_of(target)
    history_titles = ", ".join(catalog.title_of(i) for i in history)
    transcript: list[tuple[str, str]] = []
    hit = False
    turns_used = 0
    error = None
    try:
        for round_no in range(1, max_turns + 1):
            sim_prompt = render_prompt(
                "user_simulator",
                {
                    "item": item_noun,
                    "history": history_titles,
                    "target": target_title,
                    "target_item_info": _target_info(catalog, target),
                    "chat_history": render_transcript(transcript),
                },
            )
            if setting == SETTING_LONG_CHAT:
                sim_prompt += "\n" + LONG_CHAT_EXTRA_RULE
            sim_msg = complete(sim_provider, [("user", sim_prompt)], GenParams()).strip()
            transcript.append(("user", sim_msg))
            if END_TOKEN in sim_msg:
                break
            reply = run_turn(agent_session, sim_msg).response
            transcript.append(("assistant", reply))
            turns_used = round_no
            if target_title.casefold() in reply.casefold():
                hit = True
                break
    except (ProviderError, TurnError) as exc:
        error = str(exc)
        logger.warning("session aborted: %s", exc)
    return SimSession(
        target_item=target,
        history=list(history),
        transcript=transcript,
        hit=hit,
        turns_used=turns_used,
        setting=setting,
        error=error,
    )


def session_metrics(sessions: list[SimSession], k: int) -> dict[str, float]:
    """hit@k = fraction of sessions that hit; at@k = mean turns with misses
    recorded as k+1."""
    if not sessions:
        raise ValueError("no sessions to score")
    hits = [1.0 if s.hit else 0.0 for s in sessions]
    turns = [float(s.turns_used) if s.hit else float(k + 1) for s in sessions]
    return {"hit_at_k": sum(hits) / len(hits), "at_k": sum(turns) / len(turns), "k": float(k)}


@dataclass
class OneTurnCase:
    """Dialogue context plus final instruction for one evaluation instance."""

    mode: str
    turns: list[tuple[str, str]]
    instruction: str
    positive_title: str
    candidate_titles: list[str] = field(default_factory=list)

    def all_turns(self) -> list[tuple[str, str]]:
        return self.turns + [("user", self.instruction)]


def _parse_generated_conversation(reply: str) -> list[tuple[str, str]]:
    text = reply.strip()
    start, end = text.find("["), text.rfind("]")
    if start < 0 or end <= start:
        raise ValueError(f"reply carries no conversation list: {reply[:120]!r}")
    data = json.loads(text[start : end + 1])
    turns = []
    for message in data:
        role = str(message.get("role", "User")).strip().lower()
        turns.append(("assistant" if role.startswith("assist") else "user", str(message.get("text", ""))))
    return turns


def gen_one_turn(
    provider: ChatProvider,
    catalog: Catalog,
    history: list[int],
    target: int,
    mode: str,
    k: int = 5,
    rng: np.random.Generator | None = None,
    item_noun: str = "game",
) -> OneTurnCase:
    """Synthesize a one-turn evaluation case.

    Retrieval mode generates a short user/assistant conversation about the
    (hidden) target and appends the retrieval instruction. Ranking mode draws
    19 seeded negatives, shuffles them with the positive, and asks a single
    generated question followed by the ranking instruction carrying all 20
    candidates.
    """
    if mode not in (MODE_RETRIEVAL, MODE_RANKING):
        raise ValueError(f"unknown one-turn mode: {mode}")
    rng = rng or np.random.default_rng(0)
    history_titles = ", ".join(catalog.title_of(i) for i in history)
    positive_title = catalog.title_of(target)

    if mode == MODE_RETRIEVAL:
        prompt = render_prompt(
            "one_turn_retrieval",
            {
                "item": item_noun,
                "items": item_noun,
                "history": history_titles,
                "target_info": _target_info(catalog, target),
            },
        )
        reply = complete(provider, [("user", prompt)], GenParams())
        turns = _parse_generated_conversation(reply)
        # The final assistant message is the answer slot; the agent under
        # evaluation is supposed to produce it.
        if turns and turns[-1][0] == "assistant":
            turns = turns[:-1]
        return OneTurnCase(
            mode=mode,
            turns=turns,
            instruction=RETRIEVAL_INSTRUCTION.format(k=k),
            positive_title=positive_title,
        )

    others = [i for i in range(catalog.item_count) if i != target]
    negatives = rng.choice(len(others), size=RANKING_CANDIDATES - 1, replace=False)
    candidate_ids = [others[int(i)] for i in negatives] + [target]
    order = rng.permutation(len(candidate_ids))
    candidate_titles = [catalog.title_of(candidate_ids[int(i)]) for i in order]
    prompt = render_prompt(
        "one_turn_ranking",
        {
            "item": item_noun,
            "items": item_noun,
            "history": history_titles,
            "n": RANKING_CANDIDATES,
            "candidates": "; ".join(candidate_titles),
        },
    )
    question = complete(provider, [("user", prompt)], GenParams()).strip()
    return OneTurnCase(
        mode=mode,
        turns=[("user", question)],
        instruction=RANKING_INSTRUCTION.format(candidates="; ".join(candidate_titles)),
        positive_title=positive_title,
        candidate_titles=candidate_titles,
    )


def extract_titles(response: str, titles: list[str], limit: int | None = None) -> list[str]:
    """Titles mentioned in a reply, ordered by first appearance
    (case-insensitive substring match; unknown text is simply dropped)."""
    lowered = response.casefold()
    found = []
    for title in titles:
        pos = lowered.find(title.casefold())
        if pos >= 0:
            found.append((pos, title))
    found.sort()
    ordered = [t for _, t in found]
    return ordered[:limit] if limit is not None else ordered


def ndcg_single(rank: int) -> float:
    """Binary-relevance NDCG with one positive: 1/log2(rank+1), rank 1-based."""
    return 1.0 / math.log2(rank + 1)


def one_turn_metrics(
    responses: list[list[str]], truth: list[str], mode: str, k: int
) -> dict[str, float]:
    """Score extracted title lists against the single ground-truth title.

    Retrieval: recall@k is 1 when the positive is among the first k titles.
    Ranking: NDCG@k from the positive's 1-based rank; a missing positive
    scores 0 (out-of-scope titles were already dropped during extraction).
    """
    if len(responses) != len(truth):
        raise ValueError("responses and truth must align")
    if not responses:
        raise ValueError("no cases to score")
    scores = []
    for ranked, positive in zip(responses, truth):
        key = positive.casefold()
        ranked_keys = [t.casefold() for t in ranked]
        if mode == MODE_RETRIEVAL:
            scores.append(1.0 if key in ranked_keys[:k] else 0.0)
        else:
            if key in ranked_keys:
                scores.append(ndcg_single(ranked_keys.index(key) + 1))
            else:
                scores.append(0.0)
    name = "recall_at_k" if mode == MODE_RETRIEVAL else "ndcg_at_k"
    return {name: sum(scores) / len(scores), "k": float(k)}


def run_one_turn_case(agent_session: Session, case: OneTurnCase, k: int) -> list[str]:
    """Feed a one-turn case to a live agent session and extract the ranked
    titles its reply mentions (restricted to the case's candidates in ranking
    mode, the whole catalog otherwise)."""
    for role, text in case.turns:
        agent_session.context.append(role, text)
    reply = run_turn(agent_session, case.instruction).response
    if case.mode == MODE_RANKING:
        pool = case.candidate_titles
        limit = None
    else:
        pool = [item.title for item in agent_session.catalog.items]
        limit = k
    return extract_titles(reply, pool, limit)


@dataclass
class EvalReport:
    metrics: dict[str, float]
    rows: list[dict]
    config: dict

    def to_json(self) -> dict:
        return {"metrics": self.metrics, "config": self.config, "rows": self.rows}

    def to_text(self) -> str:
        lines = ["metric                value", "-" * 28]
        for name, value in self.metrics.items():
            lines.append(f"{name:<20}  {value:.4f}")
        lines.append(f"rows: {len(self.rows)}")
        return "\n".join(lines)

    def write_rows(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(json.dumps(row) + "\n")


def recompute_from_rows(report: EvalReport) -> dict[str, float]:
    """Aggregate metrics recomputed from the per-row records; must equal the
    report metrics exactly."""
    rows = report.rows
    if not rows:
        return {}
    out: dict[str, float] = {}
    if "hit" in rows[0]:
        k = int(report.config["k"])
        out["hit_at_k"] = sum(1.0 for r in rows if r["hit"]) / len(rows)
        out["at_k"] = sum(
            float(r["turns_used"]) if r["hit"] else float(k + 1) for r in rows
        ) / len(rows)
    if "ndcg" in rows[0]:
        out["ndcg_at_k"] = sum(r["ndcg"] for r in rows) / len(rows)
    if "recall" in rows[0]:
        out["recall_at_k"] = sum(r["recall"] for r in rows) / len(rows)
    return out


def _popularity_weights(catalog: Catalog) -> np.ndarray:
    weights = np.array([item.popularity for item in catalog.items], dtype=float)
    if weights.sum() <= 0:
        return np.ones(len(weights)) / len(weights)
    return weights / weights.sum()


def baseline(
    mode: str,
    task: str,
    catalog: Catalog,
    k: int,
    trials: int,
    seed: int,
    n_candidates: int = RANKING_CANDIDATES,
) -> EvalReport:
    """Statistical reference agents.

    Retrieval: draw k items (uniformly, or popularity-weighted without
    replacement) and check whether a uniformly drawn positive is among them.
    Ranking: shuffle (or popularity-sort) n_candidates candidates containing
    one positive and score the positive's rank.
    """
    if mode not in (BASELINE_RANDOM, BASELINE_POPULARITY):
        raise ValueError(f"unknown baseline mode: {mode}")
    if task not in (MODE_RETRIEVAL, MODE_RANKING):
        raise ValueError(f"unknown baseline task: {task}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n = catalog.item_count
    rows: list[dict] = []
    config = {
        "mode": mode, "task": task, "k": k, "trials": trials,
        "seed": seed, "catalog_items": n,
    }

    if task == MODE_RETRIEVAL:
        weights = _popularity_weights(catalog)
        for trial in range(trials):
            positive = int(rng.integers(n))
            if mode == BASELINE_RANDOM:
                sample = rng.choice(n, size=min(k, n), replace=False)
            else:
                nonzero = int((weights > 0).sum())
                p = weights if nonzero >= min(k, n) else None
                sample = rng.choice(n, size=min(k, n), replace=False, p=p)
            hit = 1.0 if positive in set(int(s) for s in sample) else 0.0
            rows.append({"trial": trial, "positive": positive, "recall": hit})
        metrics = {"recall_at_k": sum(r["recall"] for r in rows) / trials, "k": float(k)}
        return EvalReport(metrics=metrics, rows=rows, config=config)

    n_candidates = min(n_candidates, n)
    popularity = np.array([item.popularity for item in catalog.items])
    for trial in range(trials):
        positive = int(rng.integers(n))
        others = rng.choice(n - 1, size=n_candidates - 1, replace=False)
        candidates = [o if o < positive else o + 1 for o in (int(x) for x in others)]
        candidates.append(positive)
        if mode == BASELINE_RANDOM:
            order = [candidates[int(i)] for i in rng.permutation(n_candidates)]
        else:
            order = sorted(candidates, key=lambda c: (-int(popularity[c]), c))
        rank = order.index(positive) + 1
        rows.append({"trial": trial, "positive": positive, "rank": rank, "ndcg": ndcg_single(rank)})
    metrics = {"ndcg_at_k": sum(r["ndcg"] for r in rows) / trials, "k": float(n_candidates)}
    return EvalReport(metrics=metrics, rows=rows, config=config)
