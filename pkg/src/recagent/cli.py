"""Command-line interface.

Subcommands: ingest, build-model, chat, serve, demogen, eval, export-dataset.
Global flags: --config <path> (JSON, see config.ServiceConfig) and --seed.
Exit codes: 0 on success, 1 on runtime failure, 2 on bad flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import demogen as demogen_mod
from . import evalharness
from .catalog import ingest_catalog
from .config import ServiceConfig, load_config
from .errors import RecAgentError
from .fixtures import synthetic_dialogues_path
from .planner import DemoStore, Plan, PlanStep
from .recmodels import build_itemcf
from .runtime import build_runtime
from .turn import run_turn

logger = logging.getLogger(__name__)


def _load_service_config(args: argparse.Namespace) -> ServiceConfig:
    if args.config:
        return load_config(args.config)
    return ServiceConfig()


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _load_service_config(args)
    items = args.items or config.items_csv
    interactions = args.interactions or config.interactions_csv
    if not items or not interactions:
        print("ingest: need --items and --interactions (or config paths)", file=sys.stderr)
        return 2
    catalog = ingest_catalog(items, interactions)
    splits = catalog.splits
    print(
        f"items: {catalog.item_count}\n"
        f"interactions: {len(catalog.interactions)}\n"
        f"train/valid/test: {len(splits.train)}/{len(splits.valid)}/{len(splits.test)}"
    )
    return 0


def cmd_build_model(args: argparse.Namespace) -> int:
    config = _load_service_config(args)
    runtime = build_runtime(config)
    model = build_itemcf(runtime.catalog.splits.train, runtime.catalog.item_count)
    model.save(args.out)
    print(f"model cache written to {args.out} ({model.item_count} items)")
    return 0


def cmd_chat(args: argparse.Namespace) -> int:
    from .memory import write_session_log

    config = _load_service_config(args)
    runtime = build_runtime(config)
    session = runtime.new_session()
    print("type a message ('exit' to quit)")
    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        if text.lower() in ("exit", "quit"):
            break
        result = run_turn(session, text)
        print(f"agent: {result.response}")
        if args.trace:
            print(json.dumps(result.to_trace(), indent=2))
    if args.log:
        write_session_log(args.log, session.log_entries)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    config = _load_service_config(args)
    runtime = build_runtime(config)
    serve(runtime)
    return 0


def cmd_demogen(args: argparse.Namespace) -> int:
    config = _load_service_config(args)
    runtime = build_runtime(config)
    seeds = runtime.demo_store.demonstrations
    if args.strategy == "input-first":
        records = demogen_mod.generate_input_first(
            runtime.provider, seeds, args.count,
            registry=runtime.registry, item_noun=config.item_noun, catalog=runtime.catalog,
        )
    else:
        if not args.plan:
            print("demogen: output-first requires --plan (JSON array)", file=sys.stderr)
            return 2
        steps = [
            PlanStep(tool_name=p["tool"], tool_input=p.get("input", ""))
            for p in json.loads(args.plan)
        ]
        records = demogen_mod.generate_output_first(
            runtime.provider, Plan(steps=steps), args.count,
            registry=runtime.registry, item_noun=config.item_noun, seeds=seeds,
        )
    accepted = [r for r in records if r.accepted]
    store = DemoStore()
    demogen_mod.accepted_to_store(records, store)
    store.save(args.out)
    print(f"generated {len(records)} records, accepted {len(accepted)}; wrote {args.out}")
    if args.audit:
        with open(args.audit, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_service_config(args)
    if args.eval_command == "one-turn" and args.baseline:
        runtime = build_runtime(config)
        report = evalharness.baseline(
            mode=args.baseline,
            task=args.task,
            catalog=runtime.catalog,
            k=args.k,
            trials=args.trials,
            seed=args.seed,
        )
        print(report.to_text())
        if args.out:
            Path(args.out).write_text(json.dumps(report.to_json(), indent=2))
        return 0

    if args.eval_command == "simulator":
        runtime = build_runtime(config)
        setting = {"session": "session_wise", "long-chat": "long_chat", "long-context": "long_context"}[
            args.setting
        ]
        k = evalharness.LONG_CHAT_MAX_TURNS if setting == "long_chat" else args.k
        count = (
            config.eval.lifelong_sessions
            if setting != "session_wise"
            else config.eval.simulator_sessions
        )
        test = runtime.catalog.splits.test
        rng = np.random.default_rng(args.seed)
        picks = rng.permutation(len(test))[: max(1, min(count, len(test)))]
        sessions = []
        for idx in picks:
            inter = test[int(idx)]
            history = [
                i.item_id
                for i in sorted(
                    (x for x in runtime.catalog.interactions if x.user_id == inter.user_id),
                    key=lambda x: (x.timestamp, x.item_id),
                )
                if i.item_id != inter.item_id
            ]
            preload = None
            if setting == "long_context":
                preload = evalharness.build_history_transcript(
                    runtime.catalog, history, item_noun=config.item_noun
                )
            sessions.append(
                evalharness.simulate_session(
                    runtime.new_session(),
                    runtime.provider,
                    target=inter.item_id,
                    history=history,
                    max_turns=k,
                    setting=setting,
                    preload_transcript=preload,
                    item_noun=config.item_noun,
                )
            )
        metrics = evalharness.session_metrics(sessions, k)
        report = evalharness.EvalReport(
            metrics=metrics,
            rows=[s.to_row() for s in sessions],
            config={"setting": setting, "k": k, "sessions": len(sessions), "seed": args.seed},
        )
        print(report.to_text())
        if args.out:
            Path(args.out).write_text(json.dumps(report.to_json(), indent=2))
        return 0

    # live-agent one-turn evaluation: generate cases with the provider, pose
    # them to fresh sessions, score the replies
    runtime = build_runtime(config)
    rng = np.random.default_rng(args.seed)
    test = runtime.catalog.splits.test
    count = max(1, min(config.eval.one_turn_cases, len(test)))
    picks = rng.permutation(len(test))[:count]
    responses, truth, rows = [], [], []
    for idx in picks:
        inter = test[int(idx)]
        history = [
            i.item_id
            for i in sorted(
                (x for x in runtime.catalog.interactions if x.user_id == inter.user_id),
                key=lambda x: (x.timestamp, x.item_id),
            )
            if i.item_id != inter.item_id
        ]
        case = evalharness.gen_one_turn(
            runtime.provider, runtime.catalog, history, inter.item_id,
            mode=args.task, k=args.k, rng=rng, item_noun=config.item_noun,
        )
        ranked = evalharness.run_one_turn_case(runtime.new_session(), case, args.k)
        responses.append(ranked)
        truth.append(case.positive_title)
        rows.append({"target": case.positive_title, "ranked": ranked})
    metrics = evalharness.one_turn_metrics(
        responses, truth, mode=args.task, k=args.k if args.task == "retrieval" else 20
    )
    report = evalharness.EvalReport(
        metrics=metrics, rows=rows,
        config={"task": args.task, "k": args.k, "cases": count, "seed": args.seed},
    )
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2))
    return 0


def cmd_export_dataset(args: argparse.Namespace) -> int:
    config = _load_service_config(args)
    runtime = build_runtime(config)
    traces = []
    if args.traces:
        with open(args.traces, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    traces.append(json.loads(line))
    synthetic_path = args.synthetic or synthetic_dialogues_path()
    synthetic = demogen_mod.load_synthetic_dialogues(synthetic_path)
    pairs, stats = demogen_mod.export_instruction_pairs(
        traces,
        synthetic,
        store=runtime.demo_store,
        registry=runtime.registry,
        catalog=runtime.catalog,
        item_noun=config.item_noun,
    )
    demogen_mod.write_pairs(args.out, pairs)
    print(f"wrote {len(pairs)} pairs to {args.out}: {json.dumps(stats.to_json())}")
    return 0


def _add_globals(parser: argparse.ArgumentParser) -> None:
    """Also accept the global flags after the subcommand name."""
    parser.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recagent")
    parser.add_argument("--config", help="path to JSON service config")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate catalog CSVs and report split sizes")
    p.add_argument("--items")
    p.add_argument("--interactions")
    _add_globals(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("build-model", help="build the similarity model cache")
    p.add_argument("--out", required=True)
    _add_globals(p)
    p.set_defaults(fn=cmd_build_model)

    p = sub.add_parser("chat", help="interactive terminal chat")
    p.add_argument("--trace", action="store_true", help="print the turn trace JSON")
    p.add_argument("--log", help="write a line-JSON session log on exit")
    _add_globals(p)
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("serve", help="run the HTTP service")
    _add_globals(p)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("demogen", help="generate demonstrations offline")
    p.add_argument("--strategy", choices=["input-first", "output-first"], required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--plan", help="target plan JSON (output-first)")
    p.add_argument("--out", required=True)
    p.add_argument("--audit", help="write all generation records (accepted and rejected)")
    _add_globals(p)
    p.set_defaults(fn=cmd_demogen)

    p = sub.add_parser("eval", help="run an evaluation")
    eval_sub = p.add_subparsers(dest="eval_command", required=True)
    ps = eval_sub.add_parser("simulator", help="simulated user sessions")
    ps.add_argument("--setting", choices=["session", "long-chat", "long-context"], default="session")
    ps.add_argument("--k", type=int, default=5)
    ps.add_argument("--out")
    _add_globals(ps)
    ps.set_defaults(fn=cmd_eval)
    po = eval_sub.add_parser("one-turn", help="one-turn retrieval/ranking")
    po.add_argument("--task", choices=["retrieval", "ranking"], required=True)
    po.add_argument("--baseline", choices=["random", "popularity"])
    po.add_argument("--k", type=int, default=5)
    po.add_argument("--trials", type=int, default=10000)
    po.add_argument("--out")
    _add_globals(po)
    po.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export-dataset", help="export instruction/plan pairs")
    p.add_argument("--traces", help="line-JSON turn traces from agent runs")
    p.add_argument("--synthetic", help="line-JSON synthetic dialogues")
    p.add_argument("--out", required=True)
    _add_globals(p)
    p.set_defaults(fn=cmd_export_dataset)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.fn(args)
    except RecAgentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
