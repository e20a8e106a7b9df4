"""Token-level observations shared across the package."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

# logprobs below this are clamped so no candidate probability is exactly zero
LOGPROB_FLOOR = -30.0


@dataclass(frozen=True)
class TokenObservation:
    """One generated token plus its top-K candidate distribution.

    ``top_candidates`` holds ``(token_text, probability)`` pairs sorted by
    descending probability; the realized token is always among them.
    """

    text: str
    top_candidates: tuple[tuple[str, float], ...]
    position: int = 0

    def __post_init__(self) -> None:
        if not self.top_candidates:
            raise ValueError(f"token {self.position}: empty candidate list")
        probs = [p for _, p in self.top_candidates]
        for p in probs:
            if not (0.0 < p <= 1.0):
                raise ValueError(f"token {self.position}: probability {p!r} outside (0, 1]")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ValueError(f"token {self.position}: candidates not in descending order")
        if self.text not in {t for t, _ in self.top_candidates}:
            raise ValueError(f"token {self.position}: realized token {self.text!r} missing from candidates")

    @classmethod
    def from_logprobs(
        cls,
        text: str,
        logprob: float | None,
        top: Iterable[tuple[str, float]],
        position: int = 0,
    ) -> "TokenObservation":
        """Build an observation from API logprobs.

        The chosen token is inserted with its own logprob when the API
        left it out of the top list.
        """
        merged: dict[str, float] = {}
        for tok, lp in top:
            if tok not in merged:
                merged[tok] = lp
        if text not in merged:
            if logprob is None:
                raise ValueError(f"token {position}: chosen token absent from top_logprobs and no logprob given")
            merged[text] = logprob
        pairs = [(tok, math.exp(max(lp, LOGPROB_FLOOR))) for tok, lp in merged.items()]
        pairs = [(tok, min(p, 1.0)) for tok, p in pairs]
        pairs.sort(key=lambda kv: -kv[1])
        return cls(text=text, top_candidates=tuple(pairs), position=position)

    def distribution(self) -> list[float]:
        """Candidate probabilities renormalized to sum to one."""
        return renormalize([p for _, p in self.top_candidates])

    def to_json(self) -> dict[str, Any]:
        return {"text": self.text, "top": [[t, p] for t, p in self.top_candidates]}

    @classmethod
    def from_json(cls, obj: dict[str, Any], position: int = 0) -> "TokenObservation":
        return cls(
            text=obj["text"],
            top_candidates=tuple((str(t), float(p)) for t, p in obj["top"]),
            position=position,
        )


def renormalize(probs: Sequence[float]) -> list[float]:
    total = math.fsum(probs)
    if total <= 0:
        raise ValueError("distribution has no probability mass")
    return [p / total for p in probs]
