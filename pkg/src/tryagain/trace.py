"""Persisted episode traces: JSONL schema, ordered writing, reading, replay.

One JSON object per line, one finished episode per object. Every line is
self-contained: it embeds the problem, the episode and reward configs, the
per-turn records, and a fingerprint of the run configuration so traces from
different runs cannot be silently mixed in one report.

Replaying a trace feeds its recorded responses back through the episode
engine and demands byte-identical observations, verdicts, feedback, and
rewards; any drift raises ``ReplayMismatch``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

from .dataset import ProblemRecord
from .episode import (
    EpisodeConfig,
    EpisodeStatus,
    FeedbackMode,
    FeedbackProvider,
    reset,
    render_observation,
    step,
)
from .reward import RewardConfig, Schedule, TrajectoryReward, trajectory_reward

TRACE_VERSION = 1


class TraceError(Exception):
    pass


class TraceWriteFailure(TraceError):
    pass


class ReplayMismatch(TraceError):
    pass


@dataclass(frozen=True)
class TurnRecord:
    turn: int
    observation: str
    response: str
    verdict: str
    canonical: str | None
    feedback: str
    ts: str | None = None  # wall-clock ISO time for live runs, None for scripted ones

    def to_dict(self) -> dict:
        return {
            "turn": self.turn,
            "observation": self.observation,
            "response": self.response,
            "verdict": self.verdict,
            "canonical": self.canonical,
            "feedback": self.feedback,
            "ts": self.ts,
        }


@dataclass(frozen=True)
class EpisodeTrace:
    problem: ProblemRecord
    rollout: int
    status: str
    solve_turn: int | None
    turns: tuple[TurnRecord, ...]
    reward: TrajectoryReward
    fingerprint: str
    episode_config: EpisodeConfig
    reward_config: RewardConfig
    trace_version: int = TRACE_VERSION

    @property
    def turn_count(self) -> int:
        return len(self.turns)

    @property
    def solved(self) -> bool:
        return self.status == EpisodeStatus.SOLVED.value

    def to_dict(self) -> dict:
        return {
            "trace_version": self.trace_version,
            "fingerprint": self.fingerprint,
            "problem": self.problem.to_dict(),
            "rollout": self.rollout,
            "status": self.status,
            "solve_turn": self.solve_turn,
            "turns": [t.to_dict() for t in self.turns],
            "reward": self.reward.to_dict(),
            "episode_config": episode_config_to_dict(self.episode_config),
            "reward_config": reward_config_to_dict(self.reward_config),
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def episode_config_to_dict(config: EpisodeConfig) -> dict:
    return {
        "t_max": config.t_max,
        "action_budget": config.action_budget,
        "prompt_template": config.prompt_template,
        "feedback_template": config.feedback_template,
        "format_reminder": config.format_reminder,
        "max_response_len": config.max_response_len,
        "feedback_mode": config.feedback_mode.value,
    }


def episode_config_from_dict(obj: dict) -> EpisodeConfig:
    return EpisodeConfig(
        t_max=obj["t_max"],
        action_budget=obj["action_budget"],
        prompt_template=obj["prompt_template"],
        feedback_template=obj["feedback_template"],
        format_reminder=obj["format_reminder"],
        max_response_len=obj["max_response_len"],
        feedback_mode=FeedbackMode(obj["feedback_mode"]),
    )


def reward_config_to_dict(config: RewardConfig) -> dict:
    return {
        "schedule": config.schedule.value,
        "gamma": config.gamma,
        "linear_slope": config.linear_slope,
        "penalty_weight": config.penalty_weight,
        "invalid_penalty": config.invalid_penalty,
    }


def reward_config_from_dict(obj: dict) -> RewardConfig:
    return RewardConfig(
        schedule=Schedule(obj["schedule"]),
        gamma=obj["gamma"],
        linear_slope=obj["linear_slope"],
        penalty_weight=obj["penalty_weight"],
        invalid_penalty=obj["invalid_penalty"],
    )


def _problem_from_dict(obj: dict) -> ProblemRecord:
    from .dataset import KNOWN_FIELDS

    return ProblemRecord(
        id=obj["id"],
        question=obj["question"],
        gold_answer=obj["gold_answer"],
        subject=obj.get("subject"),
        source=obj.get("source"),
        metadata={k: v for k, v in obj.items() if k not in KNOWN_FIELDS},
    )


def trace_from_dict(obj: dict) -> EpisodeTrace:
    reward = obj["reward"]
    return EpisodeTrace(
        problem=_problem_from_dict(obj["problem"]),
        rollout=obj.get("rollout", 0),
        status=obj["status"],
        solve_turn=obj.get("solve_turn"),
        turns=tuple(
            TurnRecord(
                turn=t["turn"],
                observation=t["observation"],
                response=t["response"],
                verdict=t["verdict"],
                canonical=t.get("canonical"),
                feedback=t["feedback"],
                ts=t.get("ts"),
            )
            for t in obj["turns"]
        ),
        reward=_reward_from_dict(reward),
        fingerprint=obj["fingerprint"],
        episode_config=episode_config_from_dict(obj["episode_config"]),
        reward_config=reward_config_from_dict(obj["reward_config"]),
        trace_version=obj.get("trace_version", TRACE_VERSION),
    )


def _reward_from_dict(obj: dict) -> TrajectoryReward:
    return TrajectoryReward(
        base=obj["base"],
        repetition_penalty=obj["repetition_penalty"],
        format_penalty=obj["format_penalty"],
        total=obj["total"],
        effective_answers=obj["effective_answers"],
        turns=obj["turns"],
    )


def read_traces(path: str | Path) -> list[EpisodeTrace]:
    path = Path(path)
    traces = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                traces.append(trace_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise TraceError(f"{path}:{line_no}: unreadable trace line: {exc}") from exc
    return traces


class TraceWriter:
    """Writes traces incrementally, flushed strictly in submission-index order.

    Episodes may complete out of order under parallel rollouts; the writer
    buffers results and appends line ``i`` only after lines ``0..i-1`` are on
    disk, so the trace file order always equals the sample order and repeat
    runs produce byte-identical files.
    """

    def __init__(self, fh: IO[str] | None):
        self._fh = fh
        self._pending: dict[int, EpisodeTrace] = {}
        self._next = 0
        self._lock = threading.Lock()
        self.traces: list[EpisodeTrace] = []

    def put(self, index: int, trace: EpisodeTrace) -> None:
        with self._lock:
            self._pending[index] = trace
            while self._next in self._pending:
                ready = self._pending.pop(self._next)
                self.traces.append(ready)
                if self._fh is not None:
                    try:
                        self._fh.write(ready.to_json_line() + "\n")
                        self._fh.flush()
                    except OSError as exc:
                        raise TraceWriteFailure(str(exc)) from exc
                self._next += 1

    def skip(self, index: int, trace: EpisodeTrace) -> None:
        """Account for an already-persisted trace (resume) without rewriting it."""
        with self._lock:
            self._pending[index] = trace
            while self._next in self._pending:
                self.traces.append(self._pending.pop(self._next))
                self._next += 1


@dataclass
class ReplayResult:
    episodes: int = 0
    mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def replay_trace(trace: EpisodeTrace, *, feedback_provider: FeedbackProvider | None = None) -> None:
    """Re-run a recorded episode and verify the engine reproduces it exactly."""
    provider = feedback_provider
    if provider is None and trace.episode_config.feedback_mode is FeedbackMode.TUTOR:
        # tutor hints came from a live model; replay them from the record
        hints = [t.feedback for t in trace.turns]
        cursor = iter(hints)
        provider = lambda question, answer: next(cursor)  # noqa: E731

    state, observation = reset(trace.problem, trace.episode_config)
    for record in trace.turns:
        if observation != record.observation:
            raise ReplayMismatch(
                f"problem {trace.problem.id} turn {record.turn}: observation drift"
            )
        state, result = step(
            state, record.response, trace.episode_config, feedback_provider=provider
        )
        if result.verdict.kind.value != record.verdict:
            raise ReplayMismatch(
                f"problem {trace.problem.id} turn {record.turn}: verdict drift "
                f"({result.verdict.kind.value} != {record.verdict})"
            )
        if result.feedback != record.feedback:
            raise ReplayMismatch(
                f"problem {trace.problem.id} turn {record.turn}: feedback drift"
            )
        if not result.done:
            observation = render_observation(state, trace.episode_config)
    if state.status.value != trace.status:
        raise ReplayMismatch(
            f"problem {trace.problem.id}: terminal status drift "
            f"({state.status.value} != {trace.status})"
        )
    recomputed = trajectory_reward(state, trace.reward_config)
    if recomputed != trace.reward:
        raise ReplayMismatch(f"problem {trace.problem.id}: reward drift")


def replay_traces(traces: Iterable[EpisodeTrace]) -> ReplayResult:
    result = ReplayResult()
    for trace in traces:
        result.episodes += 1
        try:
            replay_trace(trace)
        except ReplayMismatch as exc:
            result.mismatches.append(str(exc))
    return result
