"""Answer induction: ask for the current final answer and parse it."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Sequence

from .observations import TokenObservation
from .scoring import AnswerConfidence, StepEvidence, answer_confidence

if TYPE_CHECKING:
    from .drivers.base import Driver

__all__ = [
    "DEFAULT_INDUCTION_TEMPLATE",
    "InductionPrompt",
    "InducedAnswer",
    "InductionError",
    "StepEvidence",
    "canonicalize",
    "find_boxed_spans",
    "induce",
    "parse_answer",
]

logger = logging.getLogger(__name__)

BOX_OPEN = "\\boxed{"
CONTEXT_SLOT = "{reasoning}"
DEFAULT_INDUCTION_TEMPLATE = CONTEXT_SLOT + "\n\nWe can get the question's Final Answer: \\boxed{"

CONCLUDING_CHARS = 200
SHORT_ANSWER_CHARS = 40


class InductionError(RuntimeError):
    """A driver failed during auxiliary answer generation."""

    def __init__(self, step_index: int, cause: BaseException) -> None:
        super().__init__(f"answer induction failed at step {step_index}: {cause}")
        self.step_index = step_index
        self.cause = cause


@dataclass(frozen=True)
class InductionPrompt:
    template: str = DEFAULT_INDUCTION_TEMPLATE
    max_answer_tokens: int = 32

    def __post_init__(self) -> None:
        if self.template.count(CONTEXT_SLOT) != 1:
            raise ValueError(f"induction template needs exactly one {CONTEXT_SLOT} slot")
        if self.max_answer_tokens < 1:
            raise ValueError("max_answer_tokens must be >= 1")

    def render(self, reasoning: str) -> str:
        return self.template.replace(CONTEXT_SLOT, reasoning)

    @property
    def opens_box(self) -> bool:
        return self.template.rstrip(" ").endswith(BOX_OPEN)

    def to_json(self) -> dict[str, Any]:
        return {"template": self.template, "max_answer_tokens": self.max_answer_tokens}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "InductionPrompt":
        return cls(obj.get("template", DEFAULT_INDUCTION_TEMPLATE), int(obj.get("max_answer_tokens", 32)))


@dataclass(frozen=True)
class InducedAnswer:
    raw_text: str
    canonical: str | None
    distributions: tuple[tuple[float, ...], ...] = ()
    token_cost: int = 0

    def __post_init__(self) -> None:
        if self.token_cost < len(self.distributions):
            raise ValueError("token_cost smaller than the number of answer tokens")

    @property
    def confidence(self) -> AnswerConfidence | None:
        if self.canonical is None or not self.distributions:
            return None
        return answer_confidence(self.distributions)

    def evidence(self, step_index: int) -> StepEvidence:
        conf = self.confidence
        return StepEvidence(step_index, self.canonical if conf is not None else None, conf)


# --------------------------------------------------------------------------
# parsing


def _balanced_end(text: str, open_idx: int) -> int | None:
    """Index of the brace closing the one at ``open_idx``, or None."""
    depth = 0
    i = open_idx
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text) and text[i + 1] in "{}":
            i += 2
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return None


_BOX_RE = re.compile(r"\\(?:boxed|fbox)\s*\{")


def find_boxed_spans(text: str) -> list[tuple[int, int]]:
    """Content spans ``(start, end)`` of every balanced ``\\boxed{...}``."""
    spans = []
    for m in _BOX_RE.finditer(text):
        close = _balanced_end(text, m.end() - 1)
        if close is not None:
            spans.append((m.end(), close))
    return spans


_ANSWER_CUE = re.compile(r"\banswer\s*(?:is\s*:?|:|=)\s*|=\s*", re.IGNORECASE)


def _fallback_span(text: str) -> tuple[int, int] | None:
    """Short answer after an answer cue on the last line of the conclusion."""
    base = max(0, len(text) - CONCLUDING_CHARS)
    tail = text[base:].rstrip()
    if not tail:
        return None
    line_start = tail.rfind("\n") + 1
    line = tail[line_start:]
    cues = list(_ANSWER_CUE.finditer(line))
    if not cues:
        return None
    cue = cues[-1]
    lo, hi = cue.end(), len(line)
    candidate = line[lo:hi].strip()
    if not candidate or len(candidate) > SHORT_ANSWER_CHARS:
        return None
    return base + line_start + lo, base + line_start + hi


def _answer_span(text: str) -> tuple[int, int] | None:
    spans = find_boxed_spans(text)
    if spans:
        return max(spans, key=lambda s: s[0])
    return _fallback_span(text)


def parse_answer(raw_text: str) -> str | None:
    """Canonical answer from a model response, or ``None`` if none is found.

    The last balanced ``\\boxed{}`` wins. Without one, a short answer
    following "answer is" or "=" on the final line of the last 200
    characters is accepted.
    """
    span = _answer_span(raw_text)
    if span is None:
        return None
    canon = canonicalize(raw_text[span[0] : span[1]])
    return canon or None


# --------------------------------------------------------------------------
# canonical forms

_FRAC_RE = re.compile(r"\\[dt]?frac\s*\{")
_TRAILING_PUNCT = ".,;:!?"
_NUMBER_RE = re.compile(r"([+-]?)(\d*)(\.\d+)?")
_CHOICE_RE = re.compile(r"^\(?([A-Ea-e])\)?$")


def _strip_wrappers(s: str) -> str:
    while True:
        before = s
        s = s.strip().rstrip(_TRAILING_PUNCT).strip()
        m = _BOX_RE.match(s)
        if m and _balanced_end(s, m.end() - 1) == len(s) - 1:
            s = s[m.end() : -1]
        elif len(s) >= 2 and s[0] == "$" and s[-1] == "$":
            s = s.strip("$")
        elif s.startswith("\\(") and s.endswith("\\)"):
            s = s[2:-2]
        elif s.startswith("\\[") and s.endswith("\\]"):
            s = s[2:-2]
        if s == before:
            return s


def _group(part: str) -> str:
    if re.fullmatch(r"[\w.]+", part) or (part.startswith("(") and _balanced_parens(part)):
        return part
    return f"({part})"


def _balanced_parens(s: str) -> bool:
    depth = 0
    for i, ch in enumerate(s):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0 and i != len(s) - 1:
                return False
    return depth == 0 and s.endswith(")")


def _rewrite_fracs(s: str) -> str:
    while True:
        m = None
        for cand in _FRAC_RE.finditer(s):
            m = cand
        if m is None:
            return s
        num_open = m.end() - 1
        num_close = _balanced_end(s, num_open)
        if num_close is None:
            return s
        rest = num_close + 1
        while rest < len(s) and s[rest] == " ":
            rest += 1
        if rest >= len(s) or s[rest] != "{":
            return s
        den_close = _balanced_end(s, rest)
        if den_close is None:
            return s
        num = s[num_open + 1 : num_close].strip()
        den = s[rest + 1 : den_close].strip()
        s = s[: m.start()] + f"{_group(num)}/{_group(den)}" + s[den_close + 1 :]


def _normalize_number(s: str) -> str:
    m = _NUMBER_RE.fullmatch(s)
    if not m or not (m.group(2) or m.group(3)):
        return s
    sign, whole, frac = m.group(1), m.group(2), m.group(3) or ""
    whole = whole.lstrip("0") or "0"
    if sign == "-" and whole == "0" and not frac.strip(".0"):
        sign = ""
    return ("-" if sign == "-" else "") + whole + frac


def _canonical_once(s: str) -> str:
    s = _strip_wrappers(s)
    s = _rewrite_fracs(s)
    s = " ".join(s.split())
    choice = _CHOICE_RE.match(s)
    if choice:
        return choice.group(1).upper()
    return _normalize_number(s)


def canonicalize(answer: str) -> str:
    """Syntactic normal form used to decide whether two answers agree.

    No symbolic evaluation happens: ``0.5`` and ``1/2`` stay distinct.
    """
    s = answer
    for _ in range(16):
        nxt = _canonical_once(s)
        if nxt == s:
            break
        s = nxt
    return s


# --------------------------------------------------------------------------
# induction


def _answer_token_slice(raw: str, tokens: Sequence[TokenObservation], opens_box: bool) -> tuple[str | None, list[TokenObservation]]:
    prefix = BOX_OPEN if opens_box else ""
    full = prefix + raw
    span = _answer_span(full)
    if span is None:
        return None, []
    canon = canonicalize(full[span[0] : span[1]]) or None
    if canon is None:
        return None, []
    lo, hi = span[0] - len(prefix), span[1] - len(prefix)
    chosen = []
    pos = 0
    for tok in tokens:
        start, end = pos, pos + len(tok.text)
        pos = end
        if end > lo and start < hi:
            chosen.append(tok)
    if not chosen:
        # answer text lies entirely inside the prompt-side opener
        return None, []
    return canon, chosen


def answer_from_generation(
    raw_text: str, tokens: Sequence[TokenObservation], prompt: InductionPrompt
) -> InducedAnswer:
    """Turn an auxiliary generation into an :class:`InducedAnswer`.

    Only the tokens overlapping the parsed answer contribute distributions;
    ``token_cost`` counts every generated token.
    """
    canon, answer_tokens = _answer_token_slice(raw_text, tokens, prompt.opens_box)
    dists = tuple(tuple(t.distribution()) for t in answer_tokens)
    return InducedAnswer(raw_text, canon, dists, len(tokens))


def induce(
    driver: "Driver",
    question: str,
    accumulated_reasoning: str,
    prompt: InductionPrompt,
    step_index: int,
) -> InducedAnswer:
    """Ask the model for its current answer given the reasoning so far."""
    if not accumulated_reasoning:
        raise ValueError("cannot induce an answer from empty reasoning")
    try:
        gen = driver.induce(question, accumulated_reasoning, prompt, step_index)
    except Exception as exc:  # surfaced with the step for retry decisions
        raise InductionError(step_index, exc) from exc
    ans = answer_from_generation(gen.text, gen.tokens, prompt)
    if ans.canonical is None:
        logger.debug("step %d: no parseable answer in %r", step_index, gen.text[:80])
    return ans
