"""Capture a session from any driver as a replayable trace."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Iterator

from ..observations import TokenObservation
from ..stepper import SegmenterConfig
from .base import Driver, Generation, TokenStream
from .replay import ReplayFormatError, ReplayTrace

if TYPE_CHECKING:
    from ..induction import InductionPrompt


class _RecordedStream:
    def __init__(self, inner: TokenStream, sink: "RecordingDriver") -> None:
        self._inner = inner
        self._sink = sink

    def __iter__(self) -> Iterator[TokenObservation]:
        try:
            for tok in self._inner:
                self._sink.tokens.append(tok)
                yield tok
        except GeneratorExit:
            # consumer stopped reading (early exit); not a failure
            self._sink.cancelled = True
            raise
        except BaseException:
            self._sink.failed = True
            raise
        else:
            if not self._sink.cancelled:
                self._sink.exhausted = True

    def close(self) -> None:
        if not self._sink.exhausted:
            self._sink.cancelled = True
        self._inner.close()


class RecordingDriver:
    """Wraps one session's driver and keeps everything it returned."""

    def __init__(self, inner: Driver) -> None:
        self.inner = inner
        self.name = f"recording:{inner.name}"
        self.question: str | None = None
        self.tokens: list[TokenObservation] = []
        self.inductions: dict[int, Generation] = {}
        self.exhausted = False
        self.cancelled = False
        self.failed = False

    def stream(self, question: str) -> _RecordedStream:
        self.question = question
        return _RecordedStream(self.inner.stream(question), self)

    def induce(self, question: str, reasoning: str, prompt: "InductionPrompt", step_index: int) -> Generation:
        try:
            gen = self.inner.induce(question, reasoning, prompt, step_index)
        except BaseException:
            self.failed = True
            raise
        self.inductions[step_index] = gen
        return gen

    def to_trace(self, segmenter: SegmenterConfig, gold: str | None = None) -> ReplayTrace:
        trace = ReplayTrace(
            question=self.question or "",
            main_stream=[TokenObservation(t.text, t.top_candidates, i) for i, t in enumerate(self.tokens)],
            induction_responses=dict(self.inductions),
            segmenter=segmenter,
            gold_answer=gold,
            complete=not self.failed,
            ended="natural" if self.exhausted else "cancelled",
            meta={"source": self.inner.name},
        )
        try:
            trace.validate()
        except ReplayFormatError:
            # the session did not induce at every step (vanilla, fixed budget)
            trace.induction_coverage = "on_demand"
        return trace


def record_session(recorder: RecordingDriver, output_path: str | Path, segmenter: SegmenterConfig,
                   gold: str | None = None) -> ReplayTrace:
    """Write what ``recorder`` captured to ``output_path`` and return it."""
    trace = recorder.to_trace(segmenter, gold)
    trace.save(output_path)
    return trace
