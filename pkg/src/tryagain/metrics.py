"""Aggregate finished traces into evaluation quantities.

succ_at_k   fraction of episodes solved within k sequential turns
pass_at_k   fraction of problems with >= 1 correct among k independent
            single-turn samples (the no-feedback baseline metric)
avg_turns   mean episode length in turns, failures counted at the horizon
effective_answer_ratio
            sum(E) / sum(T): the share of turns that introduced an answer
            not already tried in the same episode (micro average; the macro
            mean of per-episode E/T is reported alongside)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .grading import Verdict, VerdictKind
from .trace import EpisodeTrace


class MetricsError(Exception):
    pass


class EmptyTraceSet(MetricsError):
    pass


class RaggedSets(MetricsError):
    pass


@dataclass(frozen=True)
class ProblemOutcome:
    problem_id: str
    solve_turn: int | None  # None = never solved
    effective_answers: int
    turns: int


@dataclass
class EvalReport:
    succ_at: dict[int, float] = field(default_factory=dict)
    pass_at: dict[int, float] = field(default_factory=dict)
    avg_turns: float = 0.0
    effective_answer_ratio: float = 0.0
    effective_answer_ratio_macro: float = 0.0
    n_problems: int = 0
    per_problem: list[ProblemOutcome] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_problems": self.n_problems,
            "succ_at": {str(k): v for k, v in sorted(self.succ_at.items())},
            "pass_at": {str(k): v for k, v in sorted(self.pass_at.items())},
            "avg_turns": self.avg_turns,
            "effective_answer_ratio": self.effective_answer_ratio,
            "effective_answer_ratio_macro": self.effective_answer_ratio_macro,
            "per_problem": [
                {
                    "problem_id": p.problem_id,
                    "solve_turn": p.solve_turn,
                    "effective_answers": p.effective_answers,
                    "turns": p.turns,
                }
                for p in self.per_problem
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)

    def to_text(self) -> str:
        lines = [f"Problems: {self.n_problems}"]
        for k in sorted(self.succ_at):
            lines.append(f"Succ@{k} = {self.succ_at[k]:.3f}")
        for k in sorted(self.pass_at):
            lines.append(f"Pass@{k} = {self.pass_at[k]:.3f}")
        lines.append(f"AvgTurns = {self.avg_turns:.3f}")
        lines.append(f"EffectiveAnswerRatio (micro) = {self.effective_answer_ratio:.3f}")
        lines.append(f"EffectiveAnswerRatio (macro) = {self.effective_answer_ratio_macro:.3f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        rows = ["problem_id,solve_turn,effective_answers,turns"]
        for p in self.per_problem:
            solve = "" if p.solve_turn is None else str(p.solve_turn)
            rows.append(f"{p.problem_id},{solve},{p.effective_answers},{p.turns}")
        return "\n".join(rows)


def succ_at_k(traces: list[EpisodeTrace], k: int) -> float:
    """Fraction of episodes solved within the first ``k`` turns."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not traces:
        raise EmptyTraceSet("no traces")
    hits = sum(1 for t in traces if t.solve_turn is not None and t.solve_turn <= k)
    return hits / len(traces)


def pass_at_k(attempt_sets: list[list[Verdict]], k: int) -> float:
    """Fraction of problems with at least one correct among k parallel samples."""
    if not attempt_sets:
        raise EmptyTraceSet("no attempt sets")
    for i, verdicts in enumerate(attempt_sets):
        if len(verdicts) != k:
            raise RaggedSets(f"set {i} has {len(verdicts)} verdicts, expected {k}")
    hits = sum(
        1
        for verdicts in attempt_sets
        if any(v.kind is VerdictKind.CORRECT for v in verdicts)
    )
    return hits / len(attempt_sets)


def avg_turns(traces: list[EpisodeTrace]) -> float:
    if not traces:
        raise EmptyTraceSet("no traces")
    return sum(t.turn_count for t in traces) / len(traces)


def effective_answer_ratio(traces: list[EpisodeTrace], *, failed_only: bool = False) -> float:
    """Micro-averaged share of effective answers: sum(E) / sum(T)."""
    pool = [t for t in traces if not t.solved] if failed_only else list(traces)
    if not pool:
        raise EmptyTraceSet("no traces" + (" (none failed)" if failed_only else ""))
    total_turns = sum(t.turn_count for t in pool)
    total_effective = sum(t.reward.effective_answers for t in pool)
    return total_effective / total_turns


def effective_answer_ratio_macro(traces: list[EpisodeTrace], *, failed_only: bool = False) -> float:
    pool = [t for t in traces if not t.solved] if failed_only else list(traces)
    if not pool:
        raise EmptyTraceSet("no traces" + (" (none failed)" if failed_only else ""))
    return sum(t.reward.effective_answers / t.turn_count for t in pool) / len(pool)


def build_report(traces: list[EpisodeTrace], ks: list[int] | tuple[int, ...] = (1, 5, 10)) -> EvalReport:
    if not traces:
        raise EmptyTraceSet("no traces")
    report = EvalReport(
        succ_at={k: succ_at_k(traces, k) for k in ks},
        avg_turns=avg_turns(traces),
        effective_answer_ratio=effective_answer_ratio(traces),
        effective_answer_ratio_macro=effective_answer_ratio_macro(traces),
        n_problems=len(traces),
        per_problem=[
            ProblemOutcome(
                problem_id=t.problem.id,
                solve_turn=t.solve_turn,
                effective_answers=t.reward.effective_answers,
                turns=t.turn_count,
            )
            for t in traces
        ],
    )
    return report
