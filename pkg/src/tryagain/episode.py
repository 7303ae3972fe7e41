"""Finite-horizon episode engine for retry-style multi-turn problem solving.

A static QA item is replayed as an episode: the agent sees the question plus
the full history of its previous attempts and the feedback each one earned,
and answers once per turn. Feedback is deliberately one-sided. A wrong
answer earns a generic retry signal (``unary`` mode), a bare attempt listing
(``blank`` mode), or a model-written hint (``tutor`` mode); a correct answer
ends the episode immediately and no confirmation token is ever written into
an observation. The episode also ends when the turn horizon or the action
budget runs out.

States are immutable; ``step`` returns a new state, so replaying a recorded
response sequence reproduces every observation byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from string import Formatter
from typing import Callable

from .dataset import ProblemRecord
from .grading import Verdict, VerdictKind, grade, parse_response


def _load_template(name: str) -> str:
    text = resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")
    return text.removesuffix("\n")


DEFAULT_PROMPT_TEMPLATE = _load_template("solver_prompt.txt")
IMAGE_PROMPT_TEMPLATE = _load_template("solver_prompt_image.txt")
DEFAULT_UNARY_FEEDBACK = "Try Again."
DEFAULT_FORMAT_REMINDER = (
    "Your previous response did not follow the required format."
)
SOLVER_SYSTEM_MESSAGE = "You're a helpful assistant."

# Kept out of every observation by construction; tests assert it never leaks.
POSITIVE_CONFIRMATION_TOKEN = "Correct"

# Alternative retry wordings. "incorrect_try_again" preserves the legacy
# transcript wording verbatim, misspelling included, so archived rollouts
# can be reproduced exactly.
FEEDBACK_PRESETS = {
    "try_again": DEFAULT_UNARY_FEEDBACK,
    "incorrect_try_again": "Incorrect. Please try agin.",
    "incorrect_think_again": "Incorrect. Please think again.",
}

_PROMPT_FIELDS = ("turn", "question", "actions_left", "max_len")


class EpisodeError(Exception):
    pass


class InvalidConfig(EpisodeError):
    pass


class EpisodeFinished(EpisodeError):
    pass


class FeedbackMode(str, Enum):
    UNARY = "unary"
    BLANK = "blank"
    TUTOR = "tutor"


class EpisodeStatus(str, Enum):
    RUNNING = "running"
    SOLVED = "solved"
    EXHAUSTED_TURNS = "exhausted_turns"
    EXHAUSTED_ACTIONS = "exhausted_actions"


@dataclass(frozen=True)
class EpisodeConfig:
    """Knobs for one episode: horizon, budget, templates, feedback flavor."""

    t_max: int = 5
    action_budget: int = 10
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    feedback_template: str = DEFAULT_UNARY_FEEDBACK
    format_reminder: str = DEFAULT_FORMAT_REMINDER
    max_response_len: int = 100
    feedback_mode: FeedbackMode = FeedbackMode.UNARY

    def __post_init__(self):
        if not isinstance(self.feedback_mode, FeedbackMode):
            object.__setattr__(self, "feedback_mode", FeedbackMode(self.feedback_mode))

    def validate(self) -> None:
        if self.t_max < 1:
            raise InvalidConfig(f"t_max must be >= 1, got {self.t_max}")
        if self.action_budget < self.t_max:
            raise InvalidConfig(
                f"action_budget ({self.action_budget}) must be >= t_max ({self.t_max})"
            )
        if self.max_response_len < 1:
            raise InvalidConfig("max_response_len must be >= 1")
        fields = [f for _, f, _, _ in Formatter().parse(self.prompt_template) if f is not None]
        for name in _PROMPT_FIELDS:
            if fields.count(name) != 1:
                raise InvalidConfig(
                    f"prompt_template must contain {{{name}}} exactly once"
                )
        extra = set(fields) - set(_PROMPT_FIELDS)
        if extra:
            raise InvalidConfig(f"prompt_template has unknown placeholders: {sorted(extra)}")
        fb_fields = [f for _, f, _, _ in Formatter().parse(self.feedback_template) if f]
        if not set(fb_fields) <= {"answer", "turn"}:
            raise InvalidConfig("feedback_template may only use {answer} and {turn}")


@dataclass(frozen=True)
class Attempt:
    """One graded agent response and the feedback it earned."""

    answer_raw: str
    answer_canonical: str | None
    feedback: str
    verdict: Verdict
    turn_index: int  # 1-based


@dataclass(frozen=True)
class EpisodeState:
    problem: ProblemRecord
    history: tuple[Attempt, ...] = ()
    actions_used: int = 0
    status: EpisodeStatus = EpisodeStatus.RUNNING

    @property
    def solve_turn(self) -> int | None:
        if self.status is EpisodeStatus.SOLVED:
            return self.history[-1].turn_index
        return None


@dataclass(frozen=True)
class StepResult:
    feedback: str
    done: bool
    verdict: Verdict
    turn_index: int
    actions_left: int


# Signature for tutor-style feedback: (question, wrong_answer) -> hint text.
FeedbackProvider = Callable[[str, str], str]


def reset(problem: ProblemRecord, config: EpisodeConfig) -> tuple[EpisodeState, str]:
    """Start a fresh episode and return its first observation."""
    config.validate()
    state = EpisodeState(problem=problem)
    return state, render_observation(state, config)


def render_observation(state: EpisodeState, config: EpisodeConfig) -> str:
    """Build the prompt the agent sees at the current turn.

    The header names the turn, restates the question, and counts down the
    remaining actions; each prior attempt follows as an ``Attempt k:`` line
    with its ``Feedback:`` line (omitted entirely in blank mode). Nothing in
    the history ever confirms a correct answer.
    """
    if state.status is not EpisodeStatus.RUNNING:
        raise EpisodeFinished(f"episode is {state.status.value}")
    header = config.prompt_template.format(
        turn=len(state.history) + 1,
        question=state.problem.question,
        actions_left=config.t_max - len(state.history),
        max_len=config.max_response_len,
    )
    if not state.history:
        return header
    lines = [header]
    for attempt in state.history:
        lines.append(f"Attempt {attempt.turn_index}: {attempt.answer_raw}")
        if config.feedback_mode is not FeedbackMode.BLANK and attempt.feedback:
            lines.append(f"Feedback: {attempt.feedback}")
    return "\n".join(lines)


def _render_feedback(template: str, *, answer: str, turn: int) -> str:
    return template.format(answer=answer, turn=turn)


def _feedback_for(
    verdict: Verdict,
    answer_display: str,
    turn: int,
    state: EpisodeState,
    config: EpisodeConfig,
    provider: FeedbackProvider | None,
) -> str:
    if verdict.kind is VerdictKind.CORRECT:
        return ""  # episode ends; no positive signal is ever shown
    if config.feedback_mode is FeedbackMode.BLANK:
        return ""
    unary = _render_feedback(config.feedback_template, answer=answer_display, turn=turn)
    if verdict.kind is VerdictKind.INVALID_FORMAT:
        return f"{unary}\n{config.format_reminder}"
    if config.feedback_mode is FeedbackMode.TUTOR:
        if provider is None:
            raise InvalidConfig("tutor feedback mode requires a feedback provider")
        return provider(state.problem.question, answer_display)
    return unary


def step(
    state: EpisodeState,
    raw_response: str,
    config: EpisodeConfig,
    *,
    feedback_provider: FeedbackProvider | None = None,
) -> tuple[EpisodeState, StepResult]:
    """Grade one agent response and advance the episode.

    Malformed responses consume a turn and an action like any other attempt;
    their feedback is the retry signal plus a format reminder line.
    """
    if state.status is not EpisodeStatus.RUNNING:
        raise EpisodeFinished(f"episode is {state.status.value}")

    parsed = parse_response(raw_response)
    verdict = grade(parsed, state.problem.gold_answer)
    turn_index = len(state.history) + 1
    answer_display = parsed.answer if parsed.valid_format else raw_response
    feedback = _feedback_for(verdict, answer_display, turn_index, state, config, feedback_provider)

    attempt = Attempt(
        answer_raw=answer_display,
        answer_canonical=verdict.canonical_answer,
        feedback=feedback,
        verdict=verdict,
        turn_index=turn_index,
    )
    history = state.history + (attempt,)
    actions_used = state.actions_used + 1

    if verdict.kind is VerdictKind.CORRECT:
        status = EpisodeStatus.SOLVED
    elif len(history) >= config.t_max:
        status = EpisodeStatus.EXHAUSTED_TURNS
    elif actions_used >= config.action_budget:
        status = EpisodeStatus.EXHAUSTED_ACTIONS
    else:
        status = EpisodeStatus.RUNNING

    new_state = replace(state, history=history, actions_used=actions_used, status=status)
    result = StepResult(
        feedback=feedback,
        done=status is not EpisodeStatus.RUNNING,
        verdict=verdict,
        turn_index=turn_index,
        actions_left=config.t_max - len(history),
    )
    return new_state, result
