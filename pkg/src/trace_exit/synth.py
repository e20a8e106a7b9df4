"""Synthetic replay traces with scripted answers and confidences.

A trace is described step by step: the step text (starting with its
discourse marker, except the first), the answer the model would induce
after that step, and the target confidence of that answer. Answer-token
distributions are solved so the induced confidence matches the target.
"""

from __future__ import annotations

import json
import math
import random
import re
import sys
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from scipy.optimize import brentq

from .drivers.base import Generation
from .drivers.replay import ReplayTrace
from .observations import TokenObservation
from .stepper import SegmenterConfig, offline_segment

ANSWER_CANDIDATES = 5
_TOKEN_RE = re.compile(r"\s*\w{1,6}|\s*[^\w\s]|\s+")


@dataclass(frozen=True)
class ScriptedStep:
    text: str
    answer: str | None
    confidence: float = 0.0


def tokenize(text: str) -> list[str]:
    toks = _TOKEN_RE.findall(text)
    assert "".join(toks) == text
    return toks


def _entropy_ratio(p: float, k: int) -> float:
    rest = (1.0 - p) / (k - 1)
    h = -(p * math.log(p) + (k - 1) * rest * math.log(rest)) if rest > 0 else 0.0
    return h / math.log(k)


@lru_cache(maxsize=None)
def distribution_for(confidence: float, k: int = ANSWER_CANDIDATES) -> tuple[float, ...]:
    """Top probability first, rest uniform, with normalized entropy 1 - confidence."""
    if confidence >= 1.0:
        return (1.0,)
    if confidence <= 0.0:
        return tuple([1.0 / k] * k)
    target = 1.0 - confidence
    p = brentq(lambda x: _entropy_ratio(x, k) - target, 1.0 / k + 1e-15, 1.0 - 1e-15, xtol=1e-16, rtol=1e-15)
    rest = (1.0 - p) / (k - 1)
    return (p,) + (rest,) * (k - 1)


def _observation(text: str, probs: Sequence[float], position: int) -> TokenObservation:
    alts = [f"<alt{i}>" for i in range(1, len(probs))]
    return TokenObservation(text, tuple(zip([text] + alts, probs)), position)


def _stream_token(text: str, position: int) -> TokenObservation:
    return _observation(text, (0.8, 0.15, 0.05), position)


def induction_generation(answer: str | None, confidence: float) -> Generation:
    """Continuation after the prompt's ``\\boxed{``."""
    if answer is None:
        pieces = tokenize("not sure yet")
        toks = tuple(_stream_token(p, i) for i, p in enumerate(pieces))
        return Generation("".join(pieces), toks)
    pieces = [answer[i : i + 3] for i in range(0, len(answer), 3)]
    probs = distribution_for(round(confidence, 6))
    toks = [_observation(p, probs, i) for i, p in enumerate(pieces)]
    toks.append(_observation("}", (1.0,), len(toks)))
    return Generation(answer + "}", tuple(toks))


def build_trace(
    question: str,
    steps: Sequence[ScriptedStep],
    gold: str | None,
    segmenter: SegmenterConfig | None = None,
    meta: dict | None = None,
) -> ReplayTrace:
    seg_cfg = segmenter or SegmenterConfig()
    text = "".join(s.text for s in steps)
    pieces = tokenize(text)
    tokens = [_stream_token(p, i) for i, p in enumerate(pieces)]
    found = offline_segment(text, seg_cfg)
    expected = [s.text for s in steps]
    if [s.text for s in found] != expected:
        raise ValueError(f"scripted steps do not segment as written: {[s.text[:20] for s in found]}")
    inductions = {i + 1: induction_generation(s.answer, s.confidence) for i, s in enumerate(steps)}
    trace = ReplayTrace(question, tokens, inductions, seg_cfg, gold, meta=meta or {})
    trace.validate()
    return trace


# ---------------------------------------------------------------------------
# bundled fixtures

FIG11_QUESTION = (
    "Let w be a complex number with w^1997 = 1 and w != 1. "
    "Evaluate the sum of 1/(1 + w^k) for k = 1, 2, ..., 1997."
)

FIG11_STEPS = [
    ScriptedStep(
        "We need the sum over k of 1/(1+w^k) where w^1997 = 1 and w != 1. "
        "Every term looks alike under the symmetry k -> 1997-k, so maybe the whole sum is just 1. ",
        "1", 0.35),
    ScriptedStep(
        "Wait, pair the term for k with the term for 1997-k. Since w^(1997-k) = 1/w^k, "
        "each pair should contribute about one unit per index, so the total could be 1997. ",
        "1997", 0.52),
    ScriptedStep(
        "Alternatively, count the pairs directly: 1/(1+w^k) + 1/(1+w^(-k)) = 1, and k = 1..1996 "
        "splits into 998 such pairs, so the sum is 998. ",
        "998", 0.91),
    ScriptedStep(
        "Wait, the term k = 1997 was never paired. There w^1997 = 1, so that term equals 1/(1+1) = 1/2. "
        "The sum is 998.5 = 1997/2. ",
        "1997/2", 0.86),
    ScriptedStep(
        "Let me think about double counting. Each k in 1..1996 pairs with 1997-k, which differs from k "
        "because 1997 is odd, so no term is used twice and the total stays 1997/2. ",
        "1997/2", 0.90),
    ScriptedStep(
        "But a small case is a good check: with n = 3 and w a cube root of unity the sum is "
        "1/(1+w) + 1/(1+w^2) + 1/2 = 1 + 1/2 = 3/2 = n/2, consistent with 1997/2. ",
        "1997/2", 0.92),
    ScriptedStep(
        "Wait, the same argument for n = 1997 gives 998 pairs plus one half, which is 1997/2 again. ",
        "1997/2", 0.93),
    ScriptedStep(
        "</think>\n\nPairing k with 1997-k gives 998 pairs that each sum to 1, plus the unpaired term 1/2. "
        "The answer is \\boxed{\\frac{1997}{2}}.",
        "1997/2", 0.97),
]

STABLE_EARLY_QUESTION = "What is 3 * 4?"
STABLE_EARLY_STEPS = [
    ScriptedStep("Three groups of four make 12. ", "12", 0.9),
    ScriptedStep("Wait, maybe the product was meant as 3 + 4 + 8 = 15. ", "15", 0.6),
    ScriptedStep("But the question clearly says times, so it is 12. ", "12", 0.9),
    ScriptedStep("Alternatively, 4 + 4 + 4 = 12. ", "12", 0.9),
    ScriptedStep("Let me think once more: 3 * 4 = 12. ", "12", 0.9),
    ScriptedStep("Wait, 12 divided by 4 is 3, consistent. ", "12", 0.9),
    ScriptedStep("But also 12 divided by 3 is 4, consistent. ", "12", 0.9),
    ScriptedStep("</think>\n\nThe answer is \\boxed{12}.", "12", 0.95),
]

_MARKERS = ("Wait, ", "Alternatively, ", "Let me think. ", "But ")
_FILLERS = (
    "checking the arithmetic for {q} gives {a}",
    "recomputing each part of {q} the value comes out as {a}",
    "going through {q} one term at a time the result is {a}",
    "rewriting {q} in another order I get {a}",
    "estimating {q} roughly, it should be near {a}",
    "verifying {q} against the earlier line, it is {a}",
)


def _step_text(rng: random.Random, i: int, q: str, shown: str, last: bool, final_answer: str) -> str:
    if last:
        return f"</think>\n\nPutting it together, the answer is \\boxed{{{final_answer}}}."
    body = rng.choice(_FILLERS).format(q=q, a=shown)
    lead = "" if i == 0 else _MARKERS[(i - 1) % len(_MARKERS)]
    text = lead + body[0].upper() + body[1:] if i == 0 else lead + body
    return text + ". " + "Each term is handled with care and the partial sums are tracked as they go. "


def _problem(rng: random.Random, idx: int, kind: str) -> tuple[str, str, list[tuple[str, float]], str]:
    a, b, c = rng.randint(12, 97), rng.randint(3, 19), rng.randint(5, 400)
    q = f"{a} * {b} + {c}"
    gold = str(a * b + c)
    wrong = [str(a * b + c + d) for d in (rng.randint(1, 9), -rng.randint(1, 9), 10 * rng.randint(1, 5))]
    u = lambda lo, hi: round(rng.uniform(lo, hi), 2)  # noqa: E731
    if kind == "transient":
        sched = [(wrong[0], u(0.30, 0.50)), (wrong[1], u(0.85, 0.95))]
        sched += [(gold, u(0.84, 0.95)) for _ in range(rng.randint(6, 7))]
        final = gold
    elif kind == "easy":
        sched = [(gold, u(0.85, 0.95)) for _ in range(rng.randint(6, 8))]
        final = gold
    elif kind == "late":
        sched = [(wrong[i], u(0.40, 0.60)) for i in range(3)]
        sched += [(gold, u(0.82, 0.92)) for _ in range(6)]
        final = gold
    elif kind == "stuck":
        sched = [(wrong[0], u(0.85, 0.95)) for _ in range(7)]
        final = wrong[0]
    elif kind == "oscillating":
        sched = [((gold if i % 2 else wrong[i % 3]), u(0.50, 0.70)) for i in range(7)]
        final = gold
    else:
        raise ValueError(kind)
    sched.append((final, 0.95))
    return f"What is {q}?", gold, sched, final


SET_KINDS = ["transient"] * 6 + ["easy"] * 8 + ["late"] * 3 + ["stuck"] * 2 + ["oscillating"]


def engineered_set(seed: int = 7) -> list[tuple[str, ReplayTrace]]:
    """Twenty labeled traces; six contain a transient overconfident answer."""
    rng = random.Random(seed)
    kinds = list(SET_KINDS)
    rng.shuffle(kinds)
    out = []
    for idx, kind in enumerate(kinds, start=1):
        question, gold, sched, final = _problem(rng, idx, kind)
        q = question.removeprefix("What is ").rstrip("?")
        steps = [
            ScriptedStep(_step_text(rng, i, q, ans, i == len(sched) - 1, final), ans, c)
            for i, (ans, c) in enumerate(sched)
        ]
        out.append((f"p{idx:02d}", build_trace(question, steps, gold, meta={"kind": kind})))
    return out


def fig11_trace() -> ReplayTrace:
    return build_trace(FIG11_QUESTION, FIG11_STEPS, "1997/2", meta={"kind": "case-study"})


def stable_early_trace() -> ReplayTrace:
    return build_trace(STABLE_EARLY_QUESTION, STABLE_EARLY_STEPS, "12", meta={"kind": "stable-early"})


def write_fixtures(root: str | Path) -> list[Path]:
    root = Path(root)
    (root / "set").mkdir(parents=True, exist_ok=True)
    written = []
    for name, trace in (("fig11.jsonl", fig11_trace()), ("stable_early.jsonl", stable_early_trace())):
        trace.save(root / name)
        written.append(root / name)
    rows = []
    for pid, trace in engineered_set():
        path = root / "set" / f"{pid}.jsonl"
        trace.save(path)
        written.append(path)
        rows.append({"id": pid, "question": trace.question, "answer": trace.gold_answer, "replay": f"set/{pid}.jsonl"})
    set_path = root / "set.jsonl"
    set_path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    written.append(set_path)
    return written


if __name__ == "__main__":
    for p in write_fixtures(sys.argv[1] if len(sys.argv) > 1 else "fixtures"):
        print(p)
