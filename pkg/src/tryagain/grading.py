"""Response parsing, answer normalization, and binary grading.

Agent messages are expected in the tagged form

    <think> ... </think> <answer> ... </answer>

with nothing but whitespace outside the tags. ``parse_response`` extracts the
two segments and records whether the message followed the format;
``normalize_answer`` reduces an answer to a canonical string; ``grade``
declares a response Correct exactly when its canonical answer equals the
canonical gold answer. All three are pure functions and total over arbitrary
input text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

_STRICT_RE = re.compile(
    r"\s*<think>(?P<think>.*?)</think>\s*<answer>(?P<answer>.*?)</answer>\s*\Z",
    re.DOTALL,
)
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)

# One enclosing wrapper is removed per normalization pass.
_WRAPPERS = (("$$", "$$"), ("$", "$"), (r"\(", r"\)"), (r"\[", r"\]"))

# `x = 2` and `2` are interchangeable answer spellings; the prefix must be a
# single identifier-like token so genuine equations are left alone.
_ASSIGNMENT_RE = re.compile(r"^[^\s=]+ ?= ?(?=[^\s=])")


class EmptyAnswer(ValueError):
    pass


class VerdictKind(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    INVALID_FORMAT = "invalid_format"


@dataclass(frozen=True)
class ParsedResponse:
    """Structured view of a raw agent message; ``raw`` is kept byte-for-byte."""

    think: str | None
    answer: str | None
    valid_format: bool
    raw: str


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    canonical_answer: str | None = None


def parse_response(raw: str) -> ParsedResponse:
    """Extract the first think/answer segments and judge format validity.

    A message is well-formed only if it consists of exactly one think segment
    followed by exactly one answer segment, the answer is non-empty after
    trimming, and nothing besides whitespace surrounds the tags.
    """
    think_spans = _THINK_RE.findall(raw)
    answer_spans = _ANSWER_RE.findall(raw)
    think = think_spans[0] if think_spans else None
    answer = answer_spans[0] if answer_spans else None

    single_pair = (
        raw.count("<think>") == 1
        and raw.count("</think>") == 1
        and raw.count("<answer>") == 1
        and raw.count("</answer>") == 1
    )
    valid = bool(
        single_pair
        and _STRICT_RE.match(raw)
        and answer is not None
        and answer.strip()
    )
    return ParsedResponse(think=think, answer=answer, valid_format=valid, raw=raw)


def _parens_enclose(s: str) -> bool:
    depth = 0
    for i, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return i == len(s) - 1
    return False


def _strip_wrapper(s: str) -> str:
    for open_tok, close_tok in _WRAPPERS:
        if (
            s.startswith(open_tok)
            and s.endswith(close_tok)
            and len(s) > len(open_tok) + len(close_tok)
        ):
            inner = s[len(open_tok) : len(s) - len(close_tok)]
            # only peel a delimiter that actually encloses the whole answer
            # ("$a$ + $b$" keeps its dollars)
            if open_tok not in inner and close_tok not in inner:
                return inner.strip()
    if s.startswith("(") and s.endswith(")") and len(s) > 2 and _parens_enclose(s):
        return s[1:-1].strip()
    return s


def _canonical_number(s: str) -> str | None:
    try:
        value = Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def _normalize_once(s: str) -> str:
    s = " ".join(s.split())
    if s.endswith("."):
        s = s[:-1].rstrip()
    s = s.casefold()
    s = _strip_wrapper(s)
    s = _ASSIGNMENT_RE.sub("", s)
    number = _canonical_number(s)
    return number if number is not None else s


def normalize_answer(answer: str) -> str:
    """Reduce an answer to canonical form.

    Per pass: trim and collapse whitespace, drop one trailing period,
    case-fold, peel one enclosing math delimiter or parenthesis pair, drop a
    single-token assignment prefix, and render anything that parses as a
    rational or decimal number as an exact canonical numeric string (integer
    when integral, reduced fraction otherwise, so "0.5" and "1/2" agree).
    Passes repeat until a fixed point, which makes the whole map idempotent
    even on nested wrappers.
    """
    if not answer.strip():
        raise EmptyAnswer("answer is empty after trimming")
    current = answer
    # deep nesting needs one pass per layer; the cap guarantees termination
    for _ in range(3 * len(answer) + 16):
        nxt = _normalize_once(current)
        if nxt == current:
            return current
        current = nxt
    return current


def grade(response: ParsedResponse, gold: str) -> Verdict:
    """Binary correctness verdict for a parsed response against the gold answer."""
    if not response.valid_format:
        return Verdict(kind=VerdictKind.INVALID_FORMAT)
    canonical = normalize_answer(response.answer)
    if canonical == normalize_answer(gold):
        return Verdict(kind=VerdictKind.CORRECT, canonical_answer=canonical)
    return Verdict(kind=VerdictKind.INCORRECT, canonical_answer=canonical)
