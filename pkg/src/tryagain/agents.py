"""Scripted agents for closed-loop verification without any model.

Each agent is given the gold answer out of band (never through the
observation) so tests can steer outcomes deterministically:

    oracle      wrong but distinct answers until ``solve_at_turn``, then gold
    repeater    the same fixed answer every turn
    enumerator  walks a fixed answer list, optionally wrapping
    stochastic  gold with probability ``p_correct`` per turn, else a fresh
                wrong answer; fully determined by its seed

``format_compliance`` < 1 makes an agent occasionally emit an untagged
response, which the engine grades as malformed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .grading import normalize_answer

AGENT_KINDS = ("oracle", "repeater", "enumerator", "stochastic")


class AgentError(Exception):
    pass


class ExhaustedEnumerator(AgentError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    solve_at_turn: int = 1
    fixed_answer: str = ""
    answers: tuple[str, ...] = ()
    wrap: bool = False
    p_correct: float = 0.0
    format_compliance: float = 1.0

    def validate(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.kind == "oracle" and self.solve_at_turn < 1:
            raise ValueError("solve_at_turn must be >= 1")
        if self.kind == "repeater" and not self.fixed_answer:
            raise ValueError("repeater needs a fixed_answer")
        if self.kind == "enumerator" and not self.answers:
            raise ValueError("enumerator needs a non-empty answer list")
        if self.kind == "stochastic" and not 0.0 <= self.p_correct <= 1.0:
            raise ValueError("p_correct must be in [0, 1]")
        if not 0.0 <= self.format_compliance <= 1.0:
            raise ValueError("format_compliance must be in [0, 1]")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "format_compliance": self.format_compliance}
        if self.kind == "oracle":
            out["solve_at_turn"] = self.solve_at_turn
        elif self.kind == "repeater":
            out["fixed_answer"] = self.fixed_answer
        elif self.kind == "enumerator":
            out["answers"] = list(self.answers)
            out["wrap"] = self.wrap
        elif self.kind == "stochastic":
            out["p_correct"] = self.p_correct
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "AgentSpec":
        spec = cls(
            kind=obj["kind"],
            solve_at_turn=obj.get("solve_at_turn", 1),
            fixed_answer=obj.get("fixed_answer", ""),
            answers=tuple(obj.get("answers", ())),
            wrap=obj.get("wrap", False),
            p_correct=obj.get("p_correct", 0.0),
            format_compliance=obj.get("format_compliance", 1.0),
        )
        spec.validate()
        return spec


def wrap_answer(answer: str, thought: str) -> str:
    return f"<think>{thought}</think> <answer>{answer}</answer>"


class ScriptedAgent:
    """Per-episode agent instance; the instance itself is the agent memory."""

    def __init__(self, spec: AgentSpec, gold_answer: str, seed: str | int = 0):
        spec.validate()
        self.spec = spec
        self.gold = gold_answer
        self.turn = 0
        self._rng = random.Random(f"agent:{seed}")
        self._gold_canonical = normalize_answer(gold_answer)

    def _wrong_answer(self, counter: int) -> str:
        # counter-derived and guaranteed non-equal to gold after normalization
        candidate = f"wrong answer {counter}"
        while normalize_answer(candidate) == self._gold_canonical:
            counter += 1
            candidate = f"wrong answer {counter}"
        return candidate

    def _pick_answer(self) -> tuple[str, str]:
        spec = self.spec
        if spec.kind == "oracle":
            if self.turn >= spec.solve_at_turn:
                return self.gold, f"Attempt {self.turn}: settling on the answer."
            return self._wrong_answer(self.turn), f"Attempt {self.turn}: exploring."
        if spec.kind == "repeater":
            return spec.fixed_answer, "I am confident in my previous answer."
        if spec.kind == "enumerator":
            index = self.turn - 1
            if index >= len(spec.answers):
                if not spec.wrap:
                    raise ExhaustedEnumerator(f"answer list consumed at turn {self.turn}")
                index %= len(spec.answers)
            return spec.answers[index], f"Attempt {self.turn}: next candidate."
        # stochastic
        if self._rng.random() < spec.p_correct:
            return self.gold, f"Attempt {self.turn}: settling on the answer."
        return self._wrong_answer(self.turn), f"Attempt {self.turn}: exploring."

    def respond(self, observation: str) -> str:
        """Produce the raw response for the given observation."""
        del observation  # scripted agents act from their script, not the prompt
        self.turn += 1
        answer, thought = self._pick_answer()
        if self.spec.format_compliance >= 1.0 or self._rng.random() < self.spec.format_compliance:
            return wrap_answer(answer, thought)
        return f"The answer is {answer}"


def build_agent(spec: AgentSpec, gold_answer: str, seed: str | int = 0) -> ScriptedAgent:
    return ScriptedAgent(spec, gold_answer, seed)
