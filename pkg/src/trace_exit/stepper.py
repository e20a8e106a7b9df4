"""Streaming segmentation of a reasoning trace into steps.

Boundaries are discourse markers ("Wait", "But", blank lines, ...). The
streaming segmenter scans the tail of its text buffer every
``scan_interval_tokens`` tokens, re-reading ``overlap_chars`` characters
before the previous scan end so markers split across scans are still seen.

A marker opens the step that follows it. Positions are character offsets
into the accumulated text; markers need not align with token boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .observations import TokenObservation

DEFAULT_MARKERS = ("Wait", "But", "Let me think", "</think>", "Alternatively")
PARAGRAPH_MARKERS = ("\n\n",)


class SegmenterUsageError(RuntimeError):
    pass


def _needs_word_check(marker: str) -> bool:
    return marker[:1].isalnum() or marker[-1:].isalnum()


@dataclass(frozen=True)
class SegmenterConfig:
    stop_tokens: tuple[str, ...] = DEFAULT_MARKERS
    scan_interval_tokens: int = 10
    match_limit: int = 1000
    overlap_chars: int | None = None
    # None = on when any marker starts or ends with a letter/digit
    whole_word: bool | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "stop_tokens", tuple(self.stop_tokens))
        if not self.stop_tokens:
            raise ValueError("stop_tokens must not be empty")
        if any(s == "" for s in self.stop_tokens):
            raise ValueError("stop tokens must be non-empty strings")
        if self.scan_interval_tokens < 1:
            raise ValueError("scan_interval_tokens must be >= 1")
        if self.match_limit < 1:
            raise ValueError("match_limit must be >= 1")
        if self.whole_word is None:
            object.__setattr__(self, "whole_word", any(_needs_word_check(s) for s in self.stop_tokens))
        if self.overlap_chars is None:
            object.__setattr__(self, "overlap_chars", self.min_overlap)
        elif self.overlap_chars < self.min_overlap:
            raise ValueError(
                f"overlap_chars={self.overlap_chars} can miss markers spanning a scan edge; "
                f"need >= {self.min_overlap}"
            )

    @property
    def max_marker_len(self) -> int:
        return max(len(s) for s in self.stop_tokens)

    @property
    def min_overlap(self) -> int:
        # the word check looks one character past the marker
        return self.max_marker_len - 1 + (1 if self.whole_word else 0)

    def to_json(self) -> dict[str, Any]:
        return {
            "stop_tokens": list(self.stop_tokens),
            "scan_interval_tokens": self.scan_interval_tokens,
            "match_limit": self.match_limit,
            "overlap_chars": self.overlap_chars,
            "whole_word": self.whole_word,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SegmenterConfig":
        return cls(
            stop_tokens=tuple(obj["stop_tokens"]),
            scan_interval_tokens=int(obj.get("scan_interval_tokens", 10)),
            match_limit=int(obj.get("match_limit", 1000)),
            overlap_chars=obj.get("overlap_chars"),
            whole_word=obj.get("whole_word"),
        )


@dataclass(frozen=True)
class BoundaryEvent:
    marker: str
    char_position: int
    ordinal: int


@dataclass(frozen=True)
class ReasoningStep:
    index: int
    text: str
    token_count: int
    char_range: tuple[int, int]
    marker: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "text": self.text,
            "token_count": self.token_count,
            "char_range": list(self.char_range),
            "marker": self.marker,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ReasoningStep":
        lo, hi = obj["char_range"]
        return cls(int(obj["index"]), obj["text"], int(obj["token_count"]), (int(lo), int(hi)), obj.get("marker"))


def _scan(text: str, start: int, config: SegmenterConfig, final: bool) -> dict[int, str]:
    """Marker matches starting at or after ``start``, keyed by position.

    With ``final=False`` a word marker touching the end of the buffer is
    left undecided, since the next character is not known yet.
    """
    found: dict[int, str] = {}
    n = len(text)
    for marker in config.stop_tokens:
        check_left = config.whole_word and marker[0].isalnum()
        check_right = config.whole_word and marker[-1].isalnum()
        pos = text.find(marker, start)
        while pos != -1:
            end = pos + len(marker)
            ok = True
            if check_left and pos > 0 and text[pos - 1].isalnum():
                ok = False
            if ok and check_right:
                if end < n:
                    ok = not text[end].isalnum()
                elif not final:
                    ok = False
            if ok and pos not in found:
                found[pos] = marker
            pos = text.find(marker, pos + 1)
    return found


def _build_steps(
    text: str,
    events: Sequence[tuple[int, str]],
    end: int,
    token_starts: Sequence[int] | None,
) -> list[ReasoningStep]:
    if end == 0:
        return []
    bounds = [0]
    openers: list[str | None] = [None]
    for pos, marker in events:
        if pos == 0:
            openers[0] = marker
        elif pos < end:
            bounds.append(pos)
            openers.append(marker)
    bounds.append(end)

    counts = [0] * (len(bounds) - 1)
    if token_starts is not None:
        j = 0
        for s in token_starts:
            if s > end or (s == end and end < len(text)):
                break
            while j + 1 < len(counts) and s >= bounds[j + 1]:
                j += 1
            counts[j] += 1

    return [
        ReasoningStep(i + 1, text[bounds[i] : bounds[i + 1]], counts[i], (bounds[i], bounds[i + 1]), openers[i])
        for i in range(len(bounds) - 1)
    ]


def offline_segment(
    text: str,
    config: SegmenterConfig,
    token_starts: Sequence[int] | None = None,
) -> list[ReasoningStep]:
    """Segment a complete text in one pass.

    Produces the same steps as streaming the text through
    :class:`StreamingSegmenter` under any tokenization. Token counts are
    only filled in when ``token_starts`` (start offset of every token) is
    given; otherwise they are zero.
    """
    matches = sorted(_scan(text, 0, config, final=True).items())
    end = len(text)
    if len(matches) >= config.match_limit:
        end = matches[config.match_limit - 1][0]
        matches = matches[: config.match_limit - 1]
    return _build_steps(text, matches, end, token_starts)


class StreamingSegmenter:
    """Incremental step segmentation for one generation session."""

    def __init__(self, config: SegmenterConfig) -> None:
        self.config = config
        self.text = ""
        self.token_starts: list[int] = []
        self.events: list[BoundaryEvent] = []
        self.truncated_at: int | None = None
        self.finalized = False
        self._pending: dict[int, str] = {}
        self._since_scan = 0
        self._scan_end = 0
        self._priority = {m: i for i, m in enumerate(config.stop_tokens)}

    @property
    def tokens_fed(self) -> int:
        return len(self.token_starts)

    @property
    def truncated(self) -> bool:
        return self.truncated_at is not None

    def feed(self, token: TokenObservation | str) -> list[BoundaryEvent]:
        if self.finalized:
            raise SegmenterUsageError("feed() called after finalize()")
        if self.truncated_at is not None:
            return []
        piece = token if isinstance(token, str) else token.text
        self.token_starts.append(len(self.text))
        self.text += piece
        self._since_scan += 1
        if self._since_scan >= self.config.scan_interval_tokens:
            return self._run_scan(final=False)
        return []

    def _run_scan(self, final: bool) -> list[BoundaryEvent]:
        cfg = self.config
        start = max(0, self._scan_end - cfg.overlap_chars)
        reported = {ev.char_position for ev in self.events}
        for pos, marker in _scan(self.text, start, cfg, final).items():
            if pos in reported:
                continue
            held = self._pending.get(pos)
            if held is None or self._priority[marker] < self._priority[held]:
                self._pending[pos] = marker
        self._scan_end = len(self.text)
        self._since_scan = 0

        # a match is settled once no earlier-starting marker can still complete
        horizon = len(self.text) - cfg.max_marker_len - (1 if cfg.whole_word else 0)
        new: list[BoundaryEvent] = []
        for pos in sorted(self._pending):
            if not final and pos > horizon:
                break
            marker = self._pending.pop(pos)
            ev = BoundaryEvent(marker, pos, len(self.events) + 1)
            self.events.append(ev)
            new.append(ev)
            if ev.ordinal == cfg.match_limit:
                self.truncated_at = pos
                self._pending.clear()
                break
        return new

    def closed_steps(self) -> list[ReasoningStep]:
        """Steps whose closing boundary has already been reported."""
        if not self.events:
            return []
        last = self.events[-1].char_position
        pairs = [(ev.char_position, ev.marker) for ev in self.events[:-1]]
        steps = _build_steps(self.text, pairs, last, self.token_starts)
        if self.events[-1].char_position == 0:
            return []
        return steps

    def finalize(self) -> list[ReasoningStep]:
        if not self.finalized:
            if self.truncated_at is None:
                self._run_scan(final=True)
            self.finalized = True
        end = self.truncated_at if self.truncated_at is not None else len(self.text)
        pairs = [(ev.char_position, ev.marker) for ev in self.events if ev.char_position < end]
        return _build_steps(self.text, pairs, end, self.token_starts)


def segment_tokens(tokens: Sequence[str], config: SegmenterConfig) -> list[ReasoningStep]:
    seg = StreamingSegmenter(config)
    for tok in tokens:
        seg.feed(tok)
    return seg.finalize()
