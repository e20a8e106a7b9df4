"""Deterministic replay of recorded sessions.

File format (JSON lines, schema ``trace-exit.replay/1``)::

    {"kind": "header", "schema": ..., "question": ..., "gold": ..., "segmenter": {...},
     "complete": true, "ended": "natural" | "cancelled",
     "induction_coverage": "every_step" | "on_demand"}
    {"kind": "token", "text": "Wait", "top": [["Wait", 0.91], [" So", 0.05]]}
    ...
    {"kind": "induction", "step": 1, "text": "42}", "tokens": [{"text": ..., "top": ...}]}

``ended == "cancelled"`` marks a recording stopped by an early exit; its
trailing step was never closed, so it needs no induction entry.
``"on_demand"`` coverage (recordings of vanilla or fixed-budget runs) skips
the per-step check; a missing entry then fails when it is requested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterator

from ..observations import TokenObservation
from ..stepper import SegmenterConfig, offline_segment
from .base import DriverConfigError, DriverError, Generation

if TYPE_CHECKING:
    from ..induction import InductionPrompt

SCHEMA = "trace-exit.replay/1"
COVERAGE = ("every_step", "on_demand")


class ReplayFormatError(DriverConfigError):
    pass


@dataclass
class ReplayTrace:
    question: str
    main_stream: list[TokenObservation]
    induction_responses: dict[int, Generation]
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    gold_answer: str | None = None
    complete: bool = True
    ended: str = "natural"
    meta: dict[str, Any] = field(default_factory=dict)
    induction_coverage: str = "every_step"

    @property
    def text(self) -> str:
        return "".join(t.text for t in self.main_stream)

    def steps(self):
        starts, pos = [], 0
        for tok in self.main_stream:
            starts.append(pos)
            pos += len(tok.text)
        return offline_segment(self.text, self.segmenter, starts)

    def validate(self) -> None:
        if self.ended not in ("natural", "cancelled"):
            raise ReplayFormatError(f"unknown 'ended' value {self.ended!r}")
        if self.induction_coverage not in COVERAGE:
            raise ReplayFormatError(f"unknown induction_coverage {self.induction_coverage!r}")
        if self.induction_coverage == "on_demand":
            return
        n_steps = len(self.steps())
        required = n_steps if self.ended == "natural" else n_steps - 1
        for step in range(1, required + 1):
            if step not in self.induction_responses:
                raise ReplayFormatError(f"replay trace has no induction response for step {step}")

    # ------------------------------------------------------------------ io

    def dumps(self) -> str:
        header = {
            "kind": "header",
            "schema": SCHEMA,
            "question": self.question,
            "gold": self.gold_answer,
            "segmenter": self.segmenter.to_json(),
            "complete": self.complete,
            "ended": self.ended,
            "induction_coverage": self.induction_coverage,
            "meta": self.meta,
        }
        lines = [json.dumps(header, ensure_ascii=False)]
        for tok in self.main_stream:
            lines.append(json.dumps({"kind": "token", **tok.to_json()}, ensure_ascii=False))
        for step in sorted(self.induction_responses):
            gen = self.induction_responses[step]
            row = {"kind": "induction", "step": step, "text": gen.text, "tokens": [t.to_json() for t in gen.tokens]}
            lines.append(json.dumps(row, ensure_ascii=False))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, *, allow_partial: bool = False, source: str = "<string>") -> "ReplayTrace":
        header: dict[str, Any] | None = None
        tokens: list[TokenObservation] = []
        inductions: dict[int, Generation] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                kind = row["kind"]
                if lineno == 1 or header is None:
                    if kind != "header":
                        raise ValueError("first line must be the header")
                    if row.get("schema") != SCHEMA:
                        raise ValueError(f"unsupported schema {row.get('schema')!r}")
                    header = row
                elif kind == "token":
                    tokens.append(TokenObservation.from_json(row, position=len(tokens)))
                elif kind == "induction":
                    gen_tokens = tuple(TokenObservation.from_json(t, i) for i, t in enumerate(row["tokens"]))
                    inductions[int(row["step"])] = Generation(row["text"], gen_tokens)
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
            except (ValueError, KeyError, TypeError) as exc:
                raise ReplayFormatError(f"{source}:{lineno}: {exc}") from exc
        if header is None:
            raise ReplayFormatError(f"{source}: empty replay file")
        trace = cls(
            question=header["question"],
            main_stream=tokens,
            induction_responses=inductions,
            segmenter=SegmenterConfig.from_json(header["segmenter"]),
            gold_answer=header.get("gold"),
            complete=bool(header.get("complete", True)),
            ended=header.get("ended", "natural"),
            meta=header.get("meta") or {},
            induction_coverage=header.get("induction_coverage", "every_step"),
        )
        if not trace.complete and not allow_partial:
            raise ReplayFormatError(f"{source}: recording is incomplete (pass allow_partial to load it)")
        trace.validate()
        return trace

    @classmethod
    def load(cls, path: str | Path, *, allow_partial: bool = False) -> "ReplayTrace":
        p = Path(path)
        return cls.loads(p.read_text(encoding="utf-8"), allow_partial=allow_partial, source=str(p))


class ReplayCursor:
    """Per-session read position over a recorded main stream."""

    def __init__(self, tokens: list[TokenObservation]) -> None:
        self._tokens = tokens
        self._i = 0
        self.closed = False

    def next(self) -> TokenObservation | None:
        """The next observation, or ``None`` at the end of the stream."""
        if self.closed or self._i >= len(self._tokens):
            return None
        tok = self._tokens[self._i]
        self._i += 1
        return tok

    def reset(self) -> None:
        self._i = 0
        self.closed = False

    def close(self) -> None:
        self.closed = True

    @property
    def delivered(self) -> int:
        return self._i

    def __iter__(self) -> Iterator[TokenObservation]:
        while (tok := self.next()) is not None:
            yield tok


class ReplayDriver:
    """Serves a :class:`ReplayTrace` as if it were a model."""

    name = "replay"

    def __init__(self, trace: ReplayTrace) -> None:
        self.trace = trace
        self._text = trace.text

    @classmethod
    def from_file(cls, path: str | Path, *, allow_partial: bool = False) -> "ReplayDriver":
        return cls(ReplayTrace.load(path, allow_partial=allow_partial))

    def stream(self, question: str) -> ReplayCursor:
        return ReplayCursor(self.trace.main_stream)

    def induce(self, question: str, reasoning: str, prompt: "InductionPrompt", step_index: int) -> Generation:
        if not self._text.startswith(reasoning):
            raise DriverError(f"step {step_index}: reasoning does not match the recorded stream")
        try:
            return self.trace.induction_responses[step_index]
        except KeyError:
            raise DriverError(f"no recorded induction for step {step_index}") from None
