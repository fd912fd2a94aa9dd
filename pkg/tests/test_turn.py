from __future__ import annotations

import json
import threading
import time

import pytest

from recagent.errors import TurnError
from recagent.gateway import ChatProvider, GenParams, ScriptedProvider
from recagent.memory import DialogueContext
from recagent.planner import Plan, PlanStep
from recagent.turn import (
    Judgment,
    Session,
    SessionSettings,
    parse_judgment,
    reflect,
    render_track,
    run_turn,
)

RPG_PLAN = (
    "1. SQL Retrieval Tool (SELECT * FROM items WHERE tags LIKE '%RPG%'); "
    '2. Ranking Tool ({"schema": "popularity"}); '
    "3. Candidate Fetching Tool (3)"
)
PUZZLE_PLAN = (
    "1. SQL Retrieval Tool (SELECT * FROM items WHERE tags LIKE '%Puzzle%'); "
    '2. Ranking Tool ({"schema": "popularity"}); '
    "3. Candidate Fetching Tool (3)"
)
CRITIC_NO = (
    "No. The response/tool using is not good because the SQL conditions exceed "
    "the user's request. You should relax them."
)


def make_session(games_toy, games_toy_model, registry, seed_store, provider, **settings):
    return Session(
        catalog=games_toy,
        model=games_toy_model,
        registry=registry,
        demo_store=seed_store,
        actor_provider=provider,
        settings=SessionSettings(item_noun="game", **settings),
    )


class TestParseJudgment:
    def test_yes(self):
        assert parse_judgment("Yes").is_positive

    def test_yes_case_insensitive_with_prose(self):
        assert parse_judgment("  yes, the plan looks right.").is_positive

    def test_no_keeps_full_reply(self):
        judgment = parse_judgment(CRITIC_NO)
        assert not judgment.is_positive
        assert judgment.feedback == CRITIC_NO

    def test_fallback_positive_with_warning(self, caplog):
        judgment = parse_judgment("Maybe")
        assert judgment.is_positive


class TestReflect:
    def test_scripted_positive(self, games_toy, registry):
        provider = ScriptedProvider([("*", "Yes")])
        judgment = reflect(
            provider, "hi", DialogueContext(), Plan(), [], "answer",
            registry=registry, item_noun="game",
        )
        assert judgment.is_positive

    def test_scripted_negative_feedback(self, games_toy, registry):
        provider = ScriptedProvider([("*", CRITIC_NO)])
        judgment = reflect(
            provider, "hi", DialogueContext(), Plan(), [], "answer",
            registry=registry, item_noun="game",
        )
        assert judgment.feedback == CRITIC_NO

    def test_critic_sees_track_summaries(self, games_toy, games_toy_model, registry, seed_store):
        captured = {}

        class Capture(ChatProvider):
            call_count = 0

            def complete(self, messages, params):
                captured["prompt"] = messages[-1][1]
                return "Yes"

        plan = Plan([PlanStep("SQL Retrieval Tool", "SELECT * FROM items")])
        from recagent.memory import ToolCallRecord

        records = [
            ToolCallRecord(
                "SQL Retrieval Tool", "SELECT * FROM items", {"remaining": 20}
            )
        ]
        reflect(
            Capture(), "req", DialogueContext(), plan, records, "ans",
            registry=registry, item_noun="game",
        )
        assert "20 candidates remain" in captured["prompt"]
        assert "The current user request is: req" in captured["prompt"]


class TestHappyPath:
    def test_two_actor_calls_one_critic_call(self, games_toy, games_toy_model, registry, seed_store):
        provider = ScriptedProvider(
            [
                ("*", RPG_PLAN),
                ("*", "Try God of War, Warframe or Stardew Valley."),
                ("*", "Yes"),
            ]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "recommend some RPG games")
        assert result.actor_calls == 2
        assert result.critic_calls == 1
        assert len(result.attempts) == 1
        assert result.response == "Try God of War, Warframe or Stardew Valley."
        assert not result.gave_up

    def test_records_and_context_updated(self, games_toy, games_toy_model, registry, seed_store):
        provider = ScriptedProvider(
            [("*", RPG_PLAN), ("*", "answer"), ("*", "Yes")]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "recommend some RPG games")
        assert [r.tool_name for r in result.attempts[0].records] == [
            "SQL Retrieval Tool",
            "Ranking Tool",
            "Candidate Fetching Tool",
        ]
        assert session.context.turns == [
            ("user", "recommend some RPG games"),
            ("assistant", "answer"),
        ]

    def test_trace_is_json_serializable(self, games_toy, games_toy_model, registry, seed_store):
        provider = ScriptedProvider([("*", RPG_PLAN), ("*", "answer"), ("*", "Yes")])
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "recommend some RPG games")
        trace = json.loads(json.dumps(result.to_trace()))
        assert trace["trace_version"] == 1
        assert trace["attempts"][0]["plan"][0]["tool"] == "SQL Retrieval Tool"
        assert session.traces[result.turn_id] == result.to_trace()


class TestSyntheticRechain:
    def test_unknown_tool_recovers_without_critic(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        provider = ScriptedProvider(
            [
                ("*", "1. Web Search Tool (rpg games); 2. Candidate Fetching Tool (5)"),
                ("*", RPG_PLAN),
                ("*", "Here you go: God of War."),
                ("*", "Yes"),
            ]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "recommend some RPG games")
        assert len(result.attempts) == 2
        first = result.attempts[0].judgment
        assert first.synthetic and not first.is_positive
        assert "unknown tool" in first.feedback
        # synthetic judgments spend no critic call: plan, plan, respond = 3 actor
        assert result.actor_calls == 3
        assert result.critic_calls == 1
        # the second attempt filtered from the full catalog: 6 RPG items of 20
        sql_record = result.attempts[1].records[0]
        assert sql_record.output_summary["remaining"] == 6

    def test_parse_error_recovers(self, games_toy, games_toy_model, registry, seed_store):
        provider = ScriptedProvider(
            [
                ("*", "I cannot plan this"),
                ("*", RPG_PLAN),
                ("*", "done"),
                ("*", "Yes"),
            ]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "recommend")
        assert len(result.attempts) == 2
        assert "could not parse" in result.attempts[0].judgment.feedback


class TestCriticRechain:
    def test_bus_reset_between_attempts(self, games_toy, games_toy_model, registry, seed_store):
        provider = ScriptedProvider(
            [
                ("*", PUZZLE_PLAN),
                ("*", "Try Portal 2 or Tetris Effect."),
                ("judgement", CRITIC_NO),
                ("*", RPG_PLAN),
                ("*", "Try God of War."),
                ("judgement", "Yes"),
            ]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "recommend games")
        assert len(result.attempts) == 2
        # attempt 1 narrowed to 2 puzzle games; attempt 2 starts from all 20
        assert result.attempts[0].records[0].output_summary["remaining"] == 2
        assert result.attempts[1].records[0].output_summary["remaining"] == 6
        assert result.actor_calls == 4
        assert result.critic_calls == 2
        assert result.response == "Try God of War."

    def test_feedback_accumulates_monotonically(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        no1 = "No. The response/tool using is not good because reason one. You should fix one."
        no2 = "No. The response/tool using is not good because reason two. You should fix two."
        provider = ScriptedProvider(
            [
                ("*", PUZZLE_PLAN),
                ("*", "a1"),
                ("judgement", no1),
                ("*", PUZZLE_PLAN),
                ("*", "a2"),
                ("judgement", no2),
                ("*", RPG_PLAN),
                ("*", "a3"),
                ("judgement", "Yes"),
            ]
        )
        session = make_session(
            games_toy, games_toy_model, registry, seed_store, provider, max_rechains=2
        )
        result = run_turn(session, "recommend")
        assert len(result.attempts) == 3
        third_prompt = result.attempts[2].plan_prompt
        assert no1 in third_prompt and no2 in third_prompt
        assert result.attempts[1].plan_prompt.count(no1) >= 1
        assert no2 not in result.attempts[1].plan_prompt

    def test_give_up_returns_best_effort(self, games_toy, games_toy_model, registry, seed_store):
        provider = ScriptedProvider(
            [
                ("*", PUZZLE_PLAN),
                ("*", "first answer"),
                ("judgement", CRITIC_NO),
                ("*", PUZZLE_PLAN),
                ("*", "second answer"),
                ("judgement", CRITIC_NO),
            ]
        )
        session = make_session(
            games_toy, games_toy_model, registry, seed_store, provider, max_rechains=1
        )
        result = run_turn(session, "recommend")
        assert result.gave_up
        assert result.response == "second answer"
        assert len(result.attempts) == 2

    def test_all_synthetic_failures_apologize(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        provider = ScriptedProvider(
            [("*", "garbage"), ("*", "garbage"), ("*", "garbage")]
        )
        session = make_session(
            games_toy, games_toy_model, registry, seed_store, provider, max_rechains=2
        )
        result = run_turn(session, "recommend")
        assert result.gave_up
        assert "sorry" in result.response.lower()
        assert result.critic_calls == 0


class TestChitChat:
    def test_direct_answer_skips_tools_and_respond_call(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        provider = ScriptedProvider(
            [("*", "NO_TOOL: Hello! What games do you enjoy?"), ("*", "Yes")]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "hi there")
        assert result.response == "Hello! What games do you enjoy?"
        assert result.attempts[0].records == []
        assert session.bus.tracker == []
        assert result.actor_calls == 1
        assert result.critic_calls == 1

    def test_empty_plan_without_answer_uses_respond_call(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        provider = ScriptedProvider(
            [("*", "NO_TOOL"), ("*", "A generated reply."), ("*", "Yes")]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        result = run_turn(session, "hi")
        assert result.response == "A generated reply."
        assert result.actor_calls == 2


class TestProfileUpdate:
    def test_ranking_inputs_enter_short_term_profile(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        plan = (
            "1. SQL Retrieval Tool (SELECT * FROM items WHERE tags LIKE '%RPG%'); "
            '2. Ranking Tool ({"schema": "preference", "prefer": ["Fortnite"], "unwanted": ["Celeste"]}); '
            "3. Candidate Fetching Tool (3)"
        )
        provider = ScriptedProvider([("*", plan), ("*", "answer"), ("*", "Yes")])
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        run_turn(session, "I like Fortnite but not Celeste; recommend RPGs")
        assert session.short_term_profile.like == ["Fortnite"]
        assert session.short_term_profile.dislike == ["Celeste"]

    def test_profile_feeds_next_turn_ranking(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        plan1 = (
            "1. SQL Retrieval Tool (SELECT * FROM items WHERE tags LIKE '%RPG%'); "
            '2. Ranking Tool ({"prefer": ["Fortnite"]}); '
            "3. Candidate Fetching Tool (3)"
        )
        plan2 = (
            "1. SQL Retrieval Tool (SELECT * FROM items WHERE tags LIKE '%Shooter%'); "
            '2. Ranking Tool ({}); '
            "3. Candidate Fetching Tool (3)"
        )
        provider = ScriptedProvider(
            [
                ("*", plan1), ("*", "a1"), ("*", "Yes"),
                ("*", plan2), ("*", "a2"), ("*", "Yes"),
            ]
        )
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        run_turn(session, "I like Fortnite; recommend RPGs")
        result = run_turn(session, "now some shooters")
        ranking = result.attempts[0].records[1]
        # empty input, but the stored like makes the default schema preference
        assert ranking.output_summary["schema_used"] == "preference"


class TestConcurrency:
    def test_busy_session_rejected(self, games_toy, games_toy_model, registry, seed_store):
        provider = ScriptedProvider([("*", "NO_TOOL: hi"), ("*", "Yes")])
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        assert session.turn_lock.acquire()
        try:
            with pytest.raises(TurnError, match="busy"):
                run_turn(session, "hello")
        finally:
            session.turn_lock.release()

    def test_bus_isolation_across_sessions(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        class Slow(ChatProvider):
            def __init__(self, inner):
                self.inner = inner
                self.call_count = 0

            def complete(self, messages, params: GenParams) -> str:
                self.call_count += 1
                time.sleep(0.02)
                return self.inner.complete(messages, params)

        def build(plan):
            provider = Slow(ScriptedProvider([("*", plan), ("*", "ok"), ("*", "Yes")]))
            return make_session(games_toy, games_toy_model, registry, seed_store, provider)

        s1 = build(RPG_PLAN)
        s2 = build(PUZZLE_PLAN)
        threads = [
            threading.Thread(target=run_turn, args=(s1, "rpg please")),
            threading.Thread(target=run_turn, args=(s2, "puzzle please")),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        titles1 = {games_toy.title_of(c) for c in s1.bus.candidates}
        titles2 = {games_toy.title_of(c) for c in s2.bus.candidates}
        assert "God of War" in titles1 and "Portal 2" not in titles1
        assert "Portal 2" in titles2 and "God of War" not in titles2


class TestSessionLog:
    def test_entries_recorded_per_message(
        self, games_toy, games_toy_model, registry, seed_store
    ):
        provider = ScriptedProvider([("*", RPG_PLAN), ("*", "answer"), ("*", "Yes")])
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        run_turn(session, "recommend some RPG games")
        assert [e["role"] for e in session.log_entries] == ["user", "assistant"]
        assert session.log_entries[1]["tracker"][0]["tool_name"] == "SQL Retrieval Tool"

    def test_log_round_trips_and_replays(
        self, games_toy, games_toy_model, registry, seed_store, tmp_path
    ):
        from recagent.memory import log_to_transcript, read_session_log, write_session_log

        provider = ScriptedProvider([("*", "NO_TOOL: hi!"), ("*", "Yes")])
        session = make_session(games_toy, games_toy_model, registry, seed_store, provider)
        run_turn(session, "hello")
        path = str(tmp_path / "log.jsonl")
        write_session_log(path, session.log_entries)
        entries = read_session_log(path)
        assert log_to_transcript(entries) == [("user", "hello"), ("assistant", "hi!")]


def test_render_track_includes_errors():
    from recagent.memory import ToolCallRecord

    plan = Plan([PlanStep("Query Tool", "bad sql")])
    records = [ToolCallRecord("Query Tool", "bad sql", {"error": "SqlSyntaxError: x"})]
    text = render_track(plan, records)
    assert "error: SqlSyntaxError: x" in text


def test_render_track_empty():
    assert render_track(Plan(), []) == "(no tools used)"
