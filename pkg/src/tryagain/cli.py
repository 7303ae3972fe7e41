"""Operator entry points.

    tryagain simulate --config run.json [--seed N] [--parallelism N] [--resume]
    tryagain eval     --config run.json --endpoint URL [--model NAME] [--auth-env NAME]
    tryagain serve    --bind HOST:PORT --dataset problems.jsonl [...]
    tryagain report   --traces t.jsonl [--k 1,5,10] [--failed-only] [--csv | --json]
    tryagain inspect  --traces t.jsonl --problem ID [--rollout N]

Exit codes: 0 success, 1 usage error, 2 runtime failure. Config files are
JSON mirroring the run-config field names one-to-one; flags override file
values. Only ``eval`` and ``serve`` touch the network.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import load_dataset
from .episode import FEEDBACK_PRESETS, EpisodeConfig, FeedbackMode
from .metrics import (
    EmptyTraceSet,
    build_report,
    effective_answer_ratio,
    effective_answer_ratio_macro,
)
from .orchestrator import RunConfig, run_rollouts
from .reward import RewardConfig, Schedule
from .trace import EpisodeTrace, read_traces


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="tryagain", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run scripted-agent rollouts offline")
    sim.add_argument("--config", required=True, help="run config JSON file")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--parallelism", type=int, default=None)
    sim.add_argument("--out", default=None, help="trace output path (overrides config)")
    sim.add_argument("--resume", action="store_true", help="skip problems already traced")

    ev = sub.add_parser("eval", help="run rollouts against a chat endpoint")
    ev.add_argument("--config", required=True)
    ev.add_argument("--endpoint", required=True, help="base URL of the completion service")
    ev.add_argument("--model", default=None)
    ev.add_argument("--auth-env", default=None, help="env var holding the bearer token")
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--parallelism", type=int, default=None)
    ev.add_argument("--out", default=None)
    ev.add_argument("--resume", action="store_true")

    srv = sub.add_parser("serve", help="expose the environment over HTTP")
    srv.add_argument("--bind", default="127.0.0.1:8000")
    srv.add_argument("--dataset", required=True)
    srv.add_argument("--t-max", type=int, default=5)
    srv.add_argument("--action-budget", type=int, default=10)
    srv.add_argument("--max-len", type=int, default=100)
    srv.add_argument("--feedback-mode", default="unary", choices=[m.value for m in FeedbackMode])
    srv.add_argument("--feedback-preset", default=None, choices=sorted(FEEDBACK_PRESETS))
    srv.add_argument("--feedback-template", default=None)
    srv.add_argument("--schedule", default="exponential", choices=[s.value for s in Schedule])
    srv.add_argument("--gamma", type=float, default=0.5)
    srv.add_argument("--penalty-weight", type=float, default=0.1)
    srv.add_argument("--invalid-penalty", type=float, default=-0.1)
    srv.add_argument("--idle-timeout", type=float, default=900.0, help="seconds before idle eviction")
    srv.add_argument("--capacity", type=int, default=1024)

    rep = sub.add_parser("report", help="aggregate metrics from a trace file")
    rep.add_argument("--traces", required=True)
    rep.add_argument("--k", default="1,5,10", help="comma-separated turn budgets")
    rep.add_argument("--failed-only", action="store_true",
                     help="restrict the effective-answer ratio to unsolved episodes")
    rep.add_argument("--csv", action="store_true", help="emit per-problem CSV instead of the table")
    rep.add_argument("--json", action="store_true", help="emit the full report as JSON")

    ins = sub.add_parser("inspect", help="pretty-print one episode transcript")
    ins.add_argument("--traces", required=True)
    ins.add_argument("--problem", required=True)
    ins.add_argument("--rollout", type=int, default=0)

    return parser


def _load_run_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc


def _run_simulate(args) -> int:
    obj = _load_run_config(args.config)
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.parallelism is not None:
        obj["parallelism"] = args.parallelism
    if args.out is not None:
        obj["trace_path"] = args.out
    config = RunConfig.from_dict(obj)
    if config.agent is None:
        raise UsageError("simulate needs an agent in the config; use eval for endpoints")
    traces, report = run_rollouts(config, resume=args.resume)
    print(report.to_text())
    if config.trace_path:
        print(f"traces: {config.trace_path} ({len(traces)} episodes)")
    return 0


def _run_eval(args) -> int:
    obj = _load_run_config(args.config)
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.parallelism is not None:
        obj["parallelism"] = args.parallelism
    if args.out is not None:
        obj["trace_path"] = args.out
    endpoint_obj = dict(obj.get("endpoint", {}))
    endpoint_obj["base_url"] = args.endpoint
    if args.model is not None:
        endpoint_obj["model"] = args.model
    if args.auth_env is not None:
        endpoint_obj["auth_env"] = args.auth_env
    obj["endpoint"] = endpoint_obj
    obj.pop("agent", None)
    config = RunConfig.from_dict(obj)
    traces, report = run_rollouts(config, resume=args.resume)
    print(report.to_text())
    if config.trace_path:
        print(f"traces: {config.trace_path} ({len(traces)} episodes)")
    return 0


def _run_serve(args) -> int:
    from .service import serve

    manifest = load_dataset(args.dataset)
    feedback_template = EpisodeConfig().feedback_template
    if args.feedback_preset is not None:
        feedback_template = FEEDBACK_PRESETS[args.feedback_preset]
    if args.feedback_template is not None:
        feedback_template = args.feedback_template
    episode_defaults = EpisodeConfig(
        t_max=args.t_max,
        action_budget=args.action_budget,
        max_response_len=args.max_len,
        feedback_mode=FeedbackMode(args.feedback_mode),
        feedback_template=feedback_template,
    )
    reward_defaults = RewardConfig(
        schedule=Schedule(args.schedule),
        gamma=args.gamma,
        penalty_weight=args.penalty_weight,
        invalid_penalty=args.invalid_penalty,
    )
    serve(
        args.bind,
        manifest,
        episode_defaults,
        reward_defaults,
        capacity=args.capacity,
        idle_timeout_s=args.idle_timeout,
    )
    return 0


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --k value {text!r}: {exc}") from exc
    if not ks or any(k < 1 for k in ks):
        raise UsageError(f"--k needs positive integers, got {text!r}")
    return ks


def _run_report(args) -> int:
    traces = read_traces(args.traces)
    if not traces:
        raise EmptyTraceSet(f"{args.traces} holds no traces")
    ks = _parse_ks(args.k)
    report = build_report(traces, ks)
    if args.failed_only:
        try:
            report.effective_answer_ratio = effective_answer_ratio(traces, failed_only=True)
            report.effective_answer_ratio_macro = effective_answer_ratio_macro(
                traces, failed_only=True
            )
        except EmptyTraceSet:
            print("note: no failed episodes; effective-answer ratio covers all episodes",
                  file=sys.stderr)
    if args.csv:
        print(report.to_csv())
    elif args.json:
        print(report.to_json())
    else:
        print(report.to_text())
    return 0


def format_transcript(trace: EpisodeTrace) -> str:
    """Turn-by-turn transcript: state shown to the agent, raw output, turn reward."""
    blocks = []
    for record in trace.turns:
        turn_reward = 0.0
        if trace.solve_turn is not None and record.turn == trace.solve_turn:
            turn_reward = trace.reward.base
        blocks.append(
            f"Turn {record.turn}:\n"
            f"State:\n{record.observation}\n"
            f"Output:\n{record.response}\n"
            f"Reward: {turn_reward}"
        )
    return "\n\n".join(blocks)


def _run_inspect(args) -> int:
    traces = read_traces(args.traces)
    match = next(
        (t for t in traces if t.problem.id == args.problem and t.rollout == args.rollout),
        None,
    )
    if match is None:
        raise UsageError(f"no trace for problem {args.problem!r} rollout {args.rollout}")
    print(format_transcript(match))
    return 0


_COMMANDS = {
    "simulate": _run_simulate,
    "eval": _run_eval,
    "serve": _run_serve,
    "report": _run_report,
    "inspect": _run_inspect,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failures map to exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
