"""Confidence and stability scoring over a window of induced answers.

Everything here is a pure function of its inputs. Entropy uses the natural
log; the normalized form is base-invariant anyway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

_SUM_TOLERANCE = 1e-9
_ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class AnswerConfidence:
    value: float
    token_count: int

    def __post_init__(self) -> None:
        if self.token_count < 1:
            raise ValueError("confidence needs at least one answer token")
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"confidence {self.value!r} outside [0, 1]")


@dataclass(frozen=True)
class StepEvidence:
    """The induced answer and its confidence for one reasoning step.

    ``answer`` is ``None`` when induction failed; such a step still takes a
    window slot but never becomes a candidate.
    """

    step_index: int
    answer: str | None
    confidence: AnswerConfidence | None = None

    def __post_init__(self) -> None:
        if (self.answer is None) != (self.confidence is None):
            raise ValueError("answer and confidence must both be present or both absent")

    @property
    def c(self) -> float | None:
        return None if self.confidence is None else self.confidence.value

    def to_json(self) -> dict[str, Any]:
        return {
            "step": self.step_index,
            "answer": self.answer,
            "confidence": self.c,
            "answer_tokens": None if self.confidence is None else self.confidence.token_count,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "StepEvidence":
        conf = None
        if obj.get("answer") is not None:
            conf = AnswerConfidence(float(obj["confidence"]), int(obj["answer_tokens"]))
        return cls(int(obj["step"]), obj.get("answer"), conf)


@dataclass(frozen=True)
class WindowConfig:
    k: int = 5
    alpha: float = 0.7
    tau: float = 0.8

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"window size must be >= 1, got {self.k}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (0.0 <= self.tau <= 1.0):
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class CandidateScore:
    answer: str
    count: int
    acs: float
    cts: float
    s: float


@dataclass(frozen=True)
class StabilityReport:
    candidates: tuple[CandidateScore, ...] = ()
    selected: str | None = None
    exit: bool = False

    @property
    def score(self) -> float | None:
        """Stability of the selected answer, or ``None`` for an empty report."""
        for cand in self.candidates:
            if cand.answer == self.selected:
                return cand.s
        return None

    def score_of(self, answer: str | None) -> float | None:
        for cand in self.candidates:
            if cand.answer == answer:
                return cand.s
        return None

    def to_json(self) -> dict[str, Any]:
        return {
            "candidates": [
                {"answer": c.answer, "count": c.count, "acs": c.acs, "cts": c.cts, "s": c.s}
                for c in self.candidates
            ],
            "selected": self.selected,
            "exit": self.exit,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "StabilityReport":
        cands = tuple(
            CandidateScore(c["answer"], int(c["count"]), float(c["acs"]), float(c["cts"]), float(c["s"]))
            for c in obj["candidates"]
        )
        return cls(cands, obj["selected"], bool(obj["exit"]))


def _clamp01(x: float) -> float:
    if -_ROUNDING_SLACK <= x < 0.0:
        return 0.0
    if 1.0 < x <= 1.0 + _ROUNDING_SLACK:
        return 1.0
    return x


def normalized_entropy(dist: Sequence[float]) -> float:
    """Shannon entropy of ``dist`` divided by ``log(len(dist))``.

    A single-candidate distribution is treated as fully certain (0.0).
    """
    n = len(dist)
    if n == 0:
        raise ValueError("empty distribution")
    for p in dist:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"probability {p!r} outside [0, 1]")
    if abs(math.fsum(dist) - 1.0) > _SUM_TOLERANCE:
        raise ValueError("distribution does not sum to 1; renormalize top-K candidates first")
    if n == 1:
        return 0.0
    if all(p == dist[0] for p in dist):
        return 1.0
    h = -math.fsum(p * math.log(p) for p in dist if p > 0.0)
    return _clamp01(h / math.log(n))


def answer_confidence(dists: Sequence[Sequence[float]]) -> AnswerConfidence:
    """One minus the mean normalized entropy across the answer tokens."""
    if not dists:
        raise ValueError("answer has no tokens")
    mean_h = math.fsum(normalized_entropy(d) for d in dists) / len(dists)
    return AnswerConfidence(_clamp01(1.0 - mean_h), len(dists))


def _matching(window: Sequence[StepEvidence], answer: str) -> list[StepEvidence]:
    hits = [ev for ev in window if ev.answer is not None and ev.answer == answer]
    if not hits:
        raise ValueError(f"answer {answer!r} does not occur in the window")
    return hits


def acs(window: Sequence[StepEvidence], answer: str, k: int) -> float:
    """Occurrences of ``answer`` in the window over the fixed size ``k``."""
    if len(window) > k:
        raise ValueError(f"window holds {len(window)} entries but k={k}")
    return len(_matching(window, answer)) / k


def cts(window: Sequence[StepEvidence], answer: str) -> float:
    """Mean confidence over the window steps that induced ``answer``."""
    hits = _matching(window, answer)
    return math.fsum(ev.confidence.value for ev in hits) / len(hits)  # type: ignore[union-attr]


def stability(window: Sequence[StepEvidence], config: WindowConfig) -> StabilityReport:
    """Score every distinct answer in the window and pick the most stable.

    Ties on the combined score go to the answer induced most recently.
    """
    last_seen: dict[str, int] = {}
    for i, ev in enumerate(window):
        if ev.answer is not None:
            last_seen[ev.answer] = i
    if not last_seen:
        return StabilityReport()

    scored = []
    for answer in sorted(last_seen, key=last_seen.__getitem__):
        count = sum(1 for ev in window if ev.answer == answer)
        a = acs(window, answer, config.k)
        c = cts(window, answer)
        s = config.alpha * a + (1.0 - config.alpha) * c
        scored.append(CandidateScore(answer, count, a, c, s))

    best = scored[0]
    for cand in scored[1:]:
        # candidates are ordered by recency, so >= lets the newer one win ties
        if cand.s >= best.s:
            best = cand
    return StabilityReport(tuple(scored), best.answer, best.s >= config.tau)
