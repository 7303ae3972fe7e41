"""Trajectory-level reward: decayed success reward, repetition and format penalties.

The solve-turn reward follows one of three schedules (all equal 1 on the
first turn):

    exponential  gamma ** (n - 1)          0 < gamma < 1
    linear       max(0, 1 - slope * (n - 1))
    constant     1

Repetition is penalized through the count of effective answers, the attempts
whose canonical answer had not been submitted earlier in the same episode:
``weight * (1 - E / T)``, which is zero when all answers are distinct and
largest when every turn repeats the same answer. Each malformed response
additionally contributes a fixed negative amount. The trajectory total is

    total = base - repetition_penalty + format_penalty
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .episode import Attempt, EpisodeState, EpisodeStatus
from .grading import VerdictKind


class RewardError(Exception):
    pass


class EpisodeStillRunning(RewardError):
    pass


class TZero(RewardError):
    pass


class Schedule(str, Enum):
    EXPONENTIAL = "exponential"
    LINEAR = "linear"
    CONSTANT = "constant"


@dataclass(frozen=True)
class RewardConfig:
    schedule: Schedule = Schedule.EXPONENTIAL
    gamma: float = 0.5
    linear_slope: float = 0.2
    penalty_weight: float = 0.1    # repetition penalty weight
    invalid_penalty: float = -0.1  # per malformed response, strictly negative

    def __post_init__(self):
        if not isinstance(self.schedule, Schedule):
            object.__setattr__(self, "schedule", Schedule(self.schedule))

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.linear_slope < 0.0:
            raise ValueError("linear_slope must be >= 0")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty_weight must be >= 0")
        if self.invalid_penalty >= 0.0:
            raise ValueError("invalid_penalty must be < 0")


@dataclass(frozen=True)
class TrajectoryReward:
    base: float
    repetition_penalty: float
    format_penalty: float
    total: float
    effective_answers: int
    turns: int

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "repetition_penalty": self.repetition_penalty,
            "format_penalty": self.format_penalty,
            "total": self.total,
            "effective_answers": self.effective_answers,
            "turns": self.turns,
        }


def turn_reward(config: RewardConfig, n: int) -> float:
    """Reward for a first correct answer at 1-based turn ``n``."""
    if n < 1:
        raise ValueError(f"turn index must be >= 1, got {n}")
    if config.schedule is Schedule.EXPONENTIAL:
        return config.gamma ** (n - 1)
    if config.schedule is Schedule.LINEAR:
        return max(0.0, 1.0 - config.linear_slope * (n - 1))
    return 1.0


def _attempt_key(attempt: Attempt) -> tuple[str, str]:
    # malformed responses have no canonical answer; their raw text is their
    # identity, namespaced so it can never collide with a canonical answer
    if attempt.answer_canonical is not None:
        return ("canonical", attempt.answer_canonical)
    return ("invalid", attempt.answer_raw)


def effective_answer_count(history: tuple[Attempt, ...] | list[Attempt]) -> int:
    """Number of attempts whose answer was not submitted earlier in the episode."""
    return len({_attempt_key(a) for a in history})


def repetition_penalty(effective: int, turns: int, weight: float) -> float:
    if turns < 1:
        raise TZero("repetition penalty is undefined for zero turns")
    if not 0 <= effective <= turns:
        raise ValueError(f"effective count {effective} outside [0, {turns}]")
    return weight * (1.0 - effective / turns)


def trajectory_reward(state: EpisodeState, config: RewardConfig) -> TrajectoryReward:
    """Score a terminal episode."""
    if state.status is EpisodeStatus.RUNNING:
        raise EpisodeStillRunning("trajectory reward is defined on terminal episodes only")
    turns = len(state.history)
    base = turn_reward(config, turns) if state.status is EpisodeStatus.SOLVED else 0.0
    effective = effective_answer_count(state.history)
    rep = repetition_penalty(effective, turns, config.penalty_weight)
    invalid_count = sum(
        1 for a in state.history if a.verdict.kind is VerdictKind.INVALID_FORMAT
    )
    fmt = config.invalid_penalty * invalid_count if invalid_count else 0.0
    return TrajectoryReward(
        base=base,
        repetition_penalty=rep,
        format_penalty=fmt,
        total=base - rep + fmt,
        effective_answers=effective,
        turns=turns,
    )
