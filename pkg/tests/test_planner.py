from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recagent.errors import PlanParseError
from recagent.gateway import ScriptedProvider
from recagent.memory import DialogueContext, reset_bus
from recagent.planner import (
    DemoStore,
    Plan,
    PlanStep,
    embed_text,
    execute_plan,
    make_plan,
    parse_plan,
    render_plan_numbered,
    render_plan_structured,
    validate_plan,
)
from recagent.toolkit import ToolDeps


def cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na and nb else 0.0


class TestEmbedding:
    def test_case_folding(self):
        assert np.allclose(embed_text("abc"), embed_text("ABC"))

    def test_self_cosine_one(self):
        vec = embed_text("rpg games with dragons")
        assert cosine(vec, vec) == pytest.approx(1.0)

    def test_bag_of_tokens_order_invariant(self):
        assert cosine(embed_text("rpg games cheap"), embed_text("cheap rpg games")) == pytest.approx(1.0)

    def test_empty_is_zero_vector(self):
        assert np.linalg.norm(embed_text("")) == 0.0

    def test_normalized(self):
        assert np.linalg.norm(embed_text("one two three")) == pytest.approx(1.0)


class TestDemoStore:
    def test_min_rule(self):
        store = DemoStore()
        store.add("a", Plan())
        store.add("b", Plan())
        assert len(store.retrieve("a", 3)) == 2

    def test_exact_intent_first(self):
        store = DemoStore()
        store.add("cheap puzzle games", Plan())
        store.add("popular sports games", Plan())
        demos = store.retrieve("popular sports games", 2)
        assert demos[0].intent == "popular sports games"

    def test_brute_force_order(self):
        store = DemoStore()
        intents = [
            "i want cheap rpg games",
            "show me racing games",
            "games like fortnite",
            "how much is celeste",
        ]
        for intent in intents:
            store.add(intent, Plan())
        query = "recommend cheap rpg games please"
        qv = embed_text(query)
        expected = sorted(
            range(len(intents)),
            key=lambda i: (-cosine(embed_text(intents[i]), qv), i),
        )[:3]
        got = [d.demo_id for d in store.retrieve(query, 3)]
        assert got == expected

    def test_scores_non_increasing(self):
        store = DemoStore()
        for intent in ("alpha beta", "beta gamma", "gamma delta", "unrelated"):
            store.add(intent, Plan())
        query = "alpha beta gamma"
        qv = embed_text(query)
        demos = store.retrieve(query, 4)
        scores = [cosine(d.embedding, qv) for d in demos]
        assert scores == sorted(scores, reverse=True)

    def test_save_load_round_trip(self, tmp_path):
        store = DemoStore()
        store.add("intent one", Plan([PlanStep("Query Tool", "q")]))
        path = str(tmp_path / "demos.jsonl")
        store.save(path)
        loaded = DemoStore.load(path)
        assert len(loaded) == 1
        assert loaded.demonstrations[0].plan.steps[0].tool_input == "q"


SPEC_NUMBERED = (
    "1. SQL Retrieval Tool (tags LIKE '%RPG%'); "
    '2. Ranking Tool ({"schema":"preference","prefer":["A"]}); '
    "3. Candidate Fetching Tool (5)"
)


class TestParsePlan:
    def test_numbered_three_steps(self):
        plan = parse_plan(SPEC_NUMBERED)
        assert plan.tool_names() == [
            "SQL Retrieval Tool",
            "Ranking Tool",
            "Candidate Fetching Tool",
        ]
        assert plan.steps[0].tool_input == "tags LIKE '%RPG%'"
        assert plan.steps[1].tool_input == '{"schema":"preference","prefer":["A"]}'
        assert plan.steps[2].tool_input == "5"

    def test_structured_single_step(self):
        plan = parse_plan('[{"tool":"Query Tool","input":"SELECT COUNT(*) FROM items"}]')
        assert len(plan.steps) == 1
        assert plan.steps[0].tool_name == "Query Tool"

    def test_unparseable(self):
        with pytest.raises(PlanParseError):
            parse_plan("I cannot help")

    def test_step_without_parens(self):
        plan = parse_plan("1. SQL Retrieval Tool (x); 2. Candidate Fetching Tool.")
        assert plan.steps[1].tool_name == "Candidate Fetching Tool"
        assert plan.steps[1].tool_input == ""

    def test_decimal_inside_input_does_not_split(self):
        plan = parse_plan(
            "1. SQL Retrieval Tool (price < 59.99 AND tags LIKE '%RPG%'); 2. Candidate Fetching Tool (5)"
        )
        assert len(plan.steps) == 2
        assert "59.99" in plan.steps[0].tool_input

    def test_newline_separated(self):
        plan = parse_plan("1. Query Tool (a)\n2. Query Tool (b)")
        assert [s.tool_input for s in plan.steps] == ["a", "b"]

    def test_nested_parens_balanced(self):
        plan = parse_plan("1. Query Tool (SELECT COUNT(*) FROM items WHERE price < 10)")
        assert plan.steps[0].tool_input == "SELECT COUNT(*) FROM items WHERE price < 10"

    def test_plan_prefix_stripped(self):
        plan = parse_plan("Plan: 1. Query Tool (q)")
        assert plan.steps[0].tool_name == "Query Tool"


plan_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=0, max_size=40
)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(plan_text.filter(lambda s: s.strip()), plan_text),
        min_size=1,
        max_size=8,
    )
)
def test_structured_grammar_round_trip(steps):
    plan = Plan([PlanStep(tool_name=n, tool_input=i) for n, i in steps])
    assert parse_plan(render_plan_structured(plan)) == plan


class TestValidatePlan:
    def good(self):
        return Plan(
            [
                PlanStep("SQL Retrieval Tool", "tags LIKE '%RPG%'"),
                PlanStep("Ranking Tool", "{}"),
                PlanStep("Candidate Fetching Tool", "5"),
            ]
        )

    def test_good_plan_ok(self, registry):
        assert validate_plan(self.good(), registry) == []

    def test_unknown_tool(self, registry):
        plan = Plan([PlanStep("Web Search Tool", "x")])
        assert any("unknown tool" in v for v in validate_plan(plan, registry))

    def test_retrieval_without_fetch(self, registry):
        plan = Plan([PlanStep("SQL Retrieval Tool", "x")])
        assert any("final step" in v for v in validate_plan(plan, registry))

    def test_storing_must_be_first(self, registry):
        plan = Plan(
            [
                PlanStep("SQL Retrieval Tool", "x"),
                PlanStep("Candidates Storing Tool", "A; B"),
                PlanStep("Candidate Fetching Tool", ""),
            ]
        )
        assert any("first step" in v for v in validate_plan(plan, registry))

    def test_duplicate_ranking(self, registry):
        plan = Plan(
            [
                PlanStep("Ranking Tool", "{}"),
                PlanStep("Ranking Tool", "{}"),
                PlanStep("Candidate Fetching Tool", ""),
            ]
        )
        assert any("duplicate" in v for v in validate_plan(plan, registry))

    def test_too_many_steps(self, registry):
        plan = Plan([PlanStep("Query Tool", "q")] * 9)
        assert any("8" in v for v in validate_plan(plan, registry))

    def test_query_only_plan_ok(self, registry):
        plan = Plan([PlanStep("Query Tool", "SELECT COUNT(*) FROM items")])
        assert validate_plan(plan, registry) == []

    def test_empty_plan_ok(self, registry):
        assert validate_plan(Plan(), registry) == []


class TestMakePlan:
    def test_scripted_numbered_reply(self, games_toy, registry, seed_store):
        provider = ScriptedProvider([("*", SPEC_NUMBERED)])
        outcome = make_plan(
            provider, "recommend RPG games", DialogueContext(), registry, seed_store,
            table_info=games_toy.table_info(), item_noun="game",
        )
        assert outcome.plan.tool_names()[0] == "SQL Retrieval Tool"
        assert outcome.parse_error is None

    def test_prompt_contains_retrieved_demo_intents(self, games_toy, registry, seed_store):
        provider = ScriptedProvider([("*", SPEC_NUMBERED)])
        outcome = make_plan(
            provider, "I like Fortnite, any suggestions?", DialogueContext(), registry,
            seed_store, table_info=games_toy.table_info(), item_noun="game",
        )
        assert len(outcome.demos) == 3
        for demo in outcome.demos:
            assert demo.intent in outcome.prompt

    def test_no_tool_sentinel_gives_empty_plan(self, games_toy, registry, seed_store):
        provider = ScriptedProvider([("*", "NO_TOOL: Nice to meet you!")])
        outcome = make_plan(
            provider, "hello there", DialogueContext(), registry, seed_store,
            table_info=games_toy.table_info(), item_noun="game",
        )
        assert outcome.plan.is_empty()
        assert outcome.direct_answer == "Nice to meet you!"

    def test_react_final_answer_detected(self, games_toy, registry, seed_store):
        reply = "Question: Do I need to use tools?\nThought: No, I know the final answer.\nFinal Answer: Just chatting!"
        provider = ScriptedProvider([("*", reply)])
        outcome = make_plan(
            provider, "how are you?", DialogueContext(), registry, seed_store,
            table_info=games_toy.table_info(), item_noun="game",
        )
        assert outcome.plan.is_empty()
        assert outcome.direct_answer == "Just chatting!"

    def test_action_input_wrapper_parsed(self, games_toy, registry, seed_store):
        reply = (
            "Question: Do I need to use tools?\nThought: Yes, I need to make tool using plans "
            "first and then use Tool Executor to execute.\nAction: Tool Executor\n"
            f"Action Input: {SPEC_NUMBERED}\nObservation:"
        )
        provider = ScriptedProvider([("*", reply)])
        outcome = make_plan(
            provider, "recommend RPG games", DialogueContext(), registry, seed_store,
            table_info=games_toy.table_info(), item_noun="game",
        )
        assert len(outcome.plan.steps) == 3

    def test_parse_failure_reported_not_raised(self, games_toy, registry, seed_store):
        provider = ScriptedProvider([("*", "I refuse to plan")])
        outcome = make_plan(
            provider, "recommend", DialogueContext(), registry, seed_store,
            table_info=games_toy.table_info(), item_noun="game",
        )
        assert outcome.parse_error is not None
        assert outcome.plan.is_empty()

    def test_reflection_feedback_in_prompt(self, games_toy, registry, seed_store):
        provider = ScriptedProvider([("*", SPEC_NUMBERED)])
        outcome = make_plan(
            provider, "recommend", DialogueContext(), registry, seed_store,
            table_info=games_toy.table_info(), item_noun="game",
            reflection_feedback=["No. Fix the SQL.", "No. Still wrong."],
        )
        assert "No. Fix the SQL." in outcome.prompt
        assert "No. Still wrong." in outcome.prompt


class TestExecutePlan:
    def test_fixture_walk_through(self, games_toy, games_toy_model, registry):
        plan = parse_plan(
            "1. SQL Retrieval Tool (SELECT * FROM items WHERE tags LIKE '%RPG%'); "
            '2. Ranking Tool ({"schema":"preference","prefer":["Fortnite"]}); '
            "3. Candidate Fetching Tool (5)"
        )
        bus = reset_bus(games_toy)
        deps = ToolDeps(catalog=games_toy, model=games_toy_model)
        records = execute_plan(plan, bus, registry, deps)
        assert len(records) == 3
        assert records[-1].output_summary["titles"]
        assert len(bus.tracker) == 3

    def test_sql_syntax_error_stops_execution(self, games_toy, games_toy_model, registry):
        plan = Plan(
            [
                PlanStep("SQL Retrieval Tool", "SELECT FROM WHERE"),
                PlanStep("Candidate Fetching Tool", "5"),
            ]
        )
        bus = reset_bus(games_toy)
        deps = ToolDeps(catalog=games_toy, model=games_toy_model)
        records = execute_plan(plan, bus, registry, deps)
        assert len(records) == 1
        assert "SqlSyntaxError" in records[0].output_summary["error"]

    def test_empty_plan(self, games_toy, games_toy_model, registry):
        bus = reset_bus(games_toy)
        deps = ToolDeps(catalog=games_toy, model=games_toy_model)
        assert execute_plan(Plan(), bus, registry, deps) == []

    def test_no_provider_calls_during_execution(self, games_toy, games_toy_model, registry):
        provider = ScriptedProvider([("*", SPEC_NUMBERED)])
        calls_before = provider.call_count
        plan = parse_plan(SPEC_NUMBERED)
        bus = reset_bus(games_toy)
        execute_plan(plan, bus, registry, ToolDeps(catalog=games_toy, model=games_toy_model))
        assert provider.call_count == calls_before

    def test_rendered_numbered_plan_reparses(self):
        plan = Plan(
            [
                PlanStep("SQL Retrieval Tool", "price < 10"),
                PlanStep("Candidate Fetching Tool", ""),
            ]
        )
        assert parse_plan(render_plan_numbered(plan)) == plan
