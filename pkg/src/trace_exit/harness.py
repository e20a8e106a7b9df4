"""Batch evaluation plus offline re-scoring of recorded sessions.

Token cost per item (Tok) counts reasoning plus induction tokens. Compression
rate is a policy's mean Tok divided by the vanilla mean Tok on the same set.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .controller import (
    STEPWISE_POLICIES,
    ExitDecision,
    SessionConfig,
    SessionRecord,
    StepRecord,
    collect_evidence,
    fallback_answer,
    run_policy,
)
from .drivers.base import Driver
from .drivers.replay import ReplayDriver, ReplayTrace
from .induction import canonicalize
from .scoring import StepEvidence, stability

logger = logging.getLogger(__name__)

METRICS_SCHEMA = "trace-exit.metrics/1"
AXES = ("tau", "alpha", "k")

Judge = Callable[[str | None, str | None], bool]


class HarnessError(RuntimeError):
    pass


class MissingBaselineError(HarnessError):
    pass


# ---------------------------------------------------------------------------
# problem sets


@dataclass(frozen=True)
class Problem:
    id: str
    question: str
    gold_answer: str | None
    replay: Path | None = None


@dataclass
class ProblemSet:
    items: list[Problem]

    def __post_init__(self) -> None:
        ids = [p.id for p in self.items]
        if len(set(ids)) != len(ids):
            raise HarnessError("problem ids must be unique")
        self.items = sorted(self.items, key=lambda p: p.id)
        self._traces: dict[str, ReplayTrace] = {}

    @classmethod
    def load(cls, path: str | Path) -> "ProblemSet":
        p = Path(path)
        items = []
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                replay = row.get("replay")
                items.append(
                    Problem(
                        str(row["id"]),
                        row["question"],
                        None if row.get("answer") is None else canonicalize(str(row["answer"])),
                        None if replay is None else (p.parent / replay),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise HarnessError(f"{p}:{lineno}: {exc}") from exc
        return cls(items)

    @property
    def is_replay(self) -> bool:
        return all(item.replay is not None for item in self.items)

    def trace(self, item: Problem) -> ReplayTrace:
        if item.replay is None:
            raise HarnessError(f"item {item.id} has no replay trace")
        if item.id not in self._traces:
            self._traces[item.id] = ReplayTrace.load(item.replay)
        return self._traces[item.id]


DriverFactory = Callable[[Problem], Driver]


def replay_factory(problem_set: ProblemSet) -> DriverFactory:
    return lambda item: ReplayDriver(problem_set.trace(item))


# ---------------------------------------------------------------------------
# judging


def exact_judge(predicted: str | None, gold: str | None) -> bool:
    return predicted is not None and gold is not None and canonicalize(predicted) == canonicalize(gold)


def _as_fraction(s: str) -> Fraction | None:
    try:
        if "/" in s:
            num, den = s.split("/", 1)
            return Fraction(num.strip("() ")) / Fraction(den.strip("() "))
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def numeric_judge(predicted: str | None, gold: str | None) -> bool:
    """Exact match, or equal as rational numbers (``0.5`` vs ``1/2``)."""
    if exact_judge(predicted, gold):
        return True
    if predicted is None or gold is None:
        return False
    a, b = _as_fraction(canonicalize(predicted)), _as_fraction(canonicalize(gold))
    return a is not None and b is not None and a == b


JUDGES: dict[str, Judge] = {"exact": exact_judge, "numeric": numeric_judge}


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EvalMetrics:
    policy: str
    accuracy: float
    mean_tokens: float
    compression_rate: float | None
    induction_ratio: float
    rows: list[dict[str, Any]] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.rows)

    def summary(self) -> dict[str, Any]:
        return {
            "policy": self.policy,
            "n": self.n,
            "accuracy": self.accuracy,
            "mean_tokens": self.mean_tokens,
            "compression_rate": self.compression_rate,
            "induction_ratio": self.induction_ratio,
            **{k: v for k, v in self.meta.items() if not isinstance(v, (dict, list))},
        }

    def to_json(self) -> dict[str, Any]:
        return {"schema": METRICS_SCHEMA, **self.summary(), "meta": self.meta, "rows": self.rows}


def induction_ratio(records: Iterable[SessionRecord]) -> float:
    induction = total = 0
    for r in records:
        induction += r.induction_tokens
        total += r.reasoning_tokens + r.induction_tokens
    return induction / total if total else 0.0


def _row(item: Problem, rec: SessionRecord, correct: bool) -> dict[str, Any]:
    return {
        "id": item.id,
        "gold": item.gold_answer,
        "final_answer": rec.final_answer,
        "correct": correct,
        "exit_step": rec.decision.step_index,
        "exited_early": rec.decision.exited_early,
        "reason": rec.decision.reason,
        "trigger_score": rec.decision.trigger_score,
        "reasoning_tokens": rec.reasoning_tokens,
        "induction_tokens": rec.induction_tokens,
        "total_tokens": rec.total_tokens,
        "error": rec.error,
    }


def metrics_from_records(
    items: Sequence[Problem],
    records: Sequence[SessionRecord],
    policy: str,
    vanilla: EvalMetrics | None = None,
    judge: str = "exact",
    require_cr: bool = True,
    meta: dict[str, Any] | None = None,
) -> EvalMetrics:
    judge_fn = JUDGES[judge]
    rows = [_row(item, rec, judge_fn(rec.final_answer, item.gold_answer)) for item, rec in zip(items, records)]
    n = len(rows)
    accuracy = sum(r["correct"] for r in rows) / n if n else 0.0
    mean_tokens = math.fsum(r["total_tokens"] for r in rows) / n if n else 0.0
    if policy == "vanilla":
        cr: float | None = 1.0
    elif vanilla is not None:
        if vanilla.policy != "vanilla":
            raise MissingBaselineError(f"baseline metrics are for policy {vanilla.policy!r}, not vanilla")
        if vanilla.mean_tokens <= 0:
            raise MissingBaselineError("vanilla baseline has zero mean tokens")
        cr = mean_tokens / vanilla.mean_tokens
    elif require_cr:
        raise MissingBaselineError(
            f"compression rate for {policy!r} needs vanilla metrics on the same set; run vanilla first"
        )
    else:
        cr = None
    return EvalMetrics(policy, accuracy, mean_tokens, cr, induction_ratio(records), rows,
                       {"judge": judge, **(meta or {})})


def run_records(
    problem_set: ProblemSet,
    config: SessionConfig,
    driver_factory: DriverFactory | None = None,
    workers: int = 1,
) -> list[SessionRecord]:
    """One session per item, in item-id order regardless of worker count."""
    factory = driver_factory or replay_factory(problem_set)
    if config.policy == "oracle" and any(item.gold_answer is None for item in problem_set.items):
        raise HarnessError("oracle policy needs gold answers for every item")

    def one(item: Problem) -> SessionRecord:
        return run_policy(factory(item), item.question, config, item.gold_answer)

    if workers <= 1:
        return [one(item) for item in problem_set.items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, problem_set.items))


def evaluate(
    problem_set: ProblemSet,
    policy: str,
    config: SessionConfig,
    *,
    vanilla: EvalMetrics | None = None,
    judge: str = "exact",
    require_cr: bool = True,
    driver_factory: DriverFactory | None = None,
    workers: int = 1,
) -> EvalMetrics:
    cfg = config.with_policy(policy)
    if policy != "vanilla" and vanilla is None and require_cr:
        raise MissingBaselineError(
            f"compression rate for {policy!r} needs vanilla metrics on the same set; run vanilla first"
        )
    records = run_records(problem_set, cfg, driver_factory, workers)
    return metrics_from_records(problem_set.items, records, policy, vanilla, judge, require_cr)


# ---------------------------------------------------------------------------
# offline re-scoring


def rescore(probe: SessionRecord, config: SessionConfig) -> SessionRecord:
    """Replay a step-wise policy's decisions over a probe record.

    ``probe`` must come from :func:`collect_evidence` with the same
    segmenter, step cap and token cap as ``config``.
    """
    policy = config.policy
    if policy not in STEPWISE_POLICIES:
        raise HarnessError(f"policy {policy!r} cannot be re-scored from step evidence")
    if probe.error is not None:
        raise HarnessError(f"probe record has an error and cannot be re-scored: {probe.error}")
    k, tau = config.window.k, config.window.tau
    evidence: list[StepEvidence] = [s.evidence for s in probe.steps]  # type: ignore[misc]
    n = min(len(probe.steps), config.max_steps)

    kept: list[StepRecord] = []
    decision: ExitDecision | None = None
    for t in range(1, n + 1):
        ev = evidence[t - 1]
        report = stability(evidence[max(0, t - k) : t], config.window)
        kept.append(replace(probe.steps[t - 1], report=report))
        trigger: float | None = None
        answer = ev.answer
        if policy == "trace" and report.exit:
            trigger, answer = report.score, report.selected
        elif policy == "single_step" and ev.c is not None and ev.c >= tau:
            trigger = ev.c
        elif policy == "oracle" and probe.gold is not None and ev.answer == probe.gold:
            trigger = 1.0
        if trigger is not None:
            decision = ExitDecision(t, True, answer, trigger, "threshold")
            break

    if decision is None:
        if n < len(probe.steps):
            reason, consumed = "max_steps", kept[-1].tokens_consumed
        else:
            reason, consumed = probe.decision.reason, probe.reasoning_tokens + probe.post_exit_tokens
        last = kept[-1].step.index if kept else 0
        decision = ExitDecision(last, False, fallback_answer(kept, config.fallback), None, reason)
    else:
        consumed = kept[-1].tokens_consumed

    reasoning = sum(s.step.token_count for s in kept)
    return SessionRecord(
        policy=policy,
        question=probe.question,
        config=config.to_json(),
        steps=kept,
        decision=decision,
        reasoning_tokens=reasoning,
        induction_tokens=sum(s.induction_tokens for s in kept),
        post_exit_tokens=consumed - reasoning,
        gold=probe.gold,
    )


def score_all_steps(probe: SessionRecord, config: SessionConfig) -> SessionRecord:
    """Stability report for every probe step under ``config``'s window, no exit."""
    evidence = [s.evidence for s in probe.steps]
    k = config.window.k
    steps = [
        replace(s, report=stability(evidence[max(0, i + 1 - k) : i + 1], config.window))  # type: ignore[arg-type]
        for i, s in enumerate(probe.steps)
    ]
    return replace(probe, steps=steps, config=config.to_json())


def probe_records(
    problem_set: ProblemSet,
    config: SessionConfig,
    driver_factory: DriverFactory | None = None,
    workers: int = 1,
) -> list[SessionRecord]:
    """One model pass per item, keeping every step's evidence for re-scoring."""
    factory = driver_factory or replay_factory(problem_set)

    def one(item: Problem) -> SessionRecord:
        return collect_evidence(factory(item), item.question, config, item.gold_answer)

    if workers <= 1:
        return [one(item) for item in problem_set.items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, problem_set.items))


def _with_axis(config: SessionConfig, axis: str, value: float) -> SessionConfig:
    if axis == "k":
        if float(value) != int(value):
            raise HarnessError(f"window size must be an integer, got {value}")
        return config.with_window(k=int(value))
    return config.with_window(**{axis: float(value)})


@dataclass
class SweepRow:
    axis: str
    value: float
    metrics: EvalMetrics
    delta_accuracy: float

    def as_dict(self) -> dict[str, Any]:
        return {"axis": self.axis, "value": self.value, **self.metrics.summary(), "delta_accuracy": self.delta_accuracy}


def sweep(
    problem_set: ProblemSet,
    axis: str,
    values: Sequence[float],
    config: SessionConfig,
    *,
    policy: str = "trace",
    vanilla: EvalMetrics | None = None,
    probes: Sequence[SessionRecord] | None = None,
    judge: str = "exact",
    driver_factory: DriverFactory | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Metrics per swept value, re-scored from a single recording pass.

    ``delta_accuracy`` is relative to the first value (e.g. k=4).
    """
    if axis not in AXES:
        raise HarnessError(f"unknown sweep axis {axis!r}; expected one of {AXES}")
    if not values:
        raise HarnessError("sweep needs at least one value")
    if probes is None:
        probes = probe_records(problem_set, config, driver_factory, workers)
    if vanilla is None:
        vanilla = evaluate(problem_set, "vanilla", config, driver_factory=driver_factory, workers=workers)
    rows: list[SweepRow] = []
    for value in values:
        cfg = _with_axis(config, axis, value).with_policy(policy)
        records = [rescore(p, cfg) for p in probes]
        m = metrics_from_records(problem_set.items, records, policy, vanilla, judge,
                                 meta={"axis": axis, "value": value})
        rows.append(SweepRow(axis, value, m, 0.0))
    base = rows[0].metrics.accuracy
    for row in rows:
        row.delta_accuracy = row.metrics.accuracy - base
    return rows


def tradeoff_curve(
    problem_set: ProblemSet,
    policies: Sequence[str],
    tau_values: Sequence[float],
    config: SessionConfig,
    *,
    probes: Sequence[SessionRecord] | None = None,
    judge: str = "exact",
    driver_factory: DriverFactory | None = None,
    workers: int = 1,
) -> list[dict[str, Any]]:
    """(mean_tokens, accuracy) per policy per threshold; oracle ignores tau."""
    if not tau_values:
        raise HarnessError("trade-off curve needs at least one tau value")
    for pol in policies:
        if pol not in STEPWISE_POLICIES:
            raise HarnessError(f"policy {pol!r} has no threshold curve")
    if "oracle" in policies and any(i.gold_answer is None for i in problem_set.items):
        raise HarnessError("oracle curve needs gold answers")
    if probes is None:
        probes = probe_records(problem_set, config, driver_factory, workers)
    rows = []
    for pol in policies:
        for tau in tau_values:
            cfg = config.with_window(tau=float(tau)).with_policy(pol)
            records = [rescore(p, cfg) for p in probes]
            m = metrics_from_records(problem_set.items, records, pol, judge=judge, require_cr=False)
            rows.append({"policy": pol, "tau": float(tau), "mean_tokens": m.mean_tokens, "accuracy": m.accuracy})
    return rows


# ---------------------------------------------------------------------------
# analysis exports


@dataclass
class AnalysisExport:
    step_rows: list[dict[str, Any]]
    consistency_rows: list[dict[str, Any]]
    skipped_without_gold: int = 0


def exit_consistency(record: SessionRecord) -> float | None:
    """Share of the k-slot window at the exit step holding the final answer."""
    if not record.steps or record.final_answer is None:
        return None
    k = int(record.config["window"]["k"])
    upto = record.decision.step_index
    window = [s.evidence for s in record.steps[:upto] if s.evidence is not None][-k:]
    return sum(1 for ev in window if ev.answer == record.final_answer) / k


def export_distributions(records: Sequence[SessionRecord], judge: str = "exact") -> AnalysisExport:
    """Raw per-step scores labeled by correctness, plus exit consistency."""
    judge_fn = JUDGES[judge]
    step_rows: list[dict[str, Any]] = []
    consistency_rows: list[dict[str, Any]] = []
    skipped = 0
    for n, rec in enumerate(records):
        if rec.gold is None:
            skipped += 1
            continue
        for s in rec.steps:
            ev, report = s.evidence, s.report
            if ev is None or ev.answer is None or report is None:
                continue
            correct = judge_fn(ev.answer, rec.gold)
            base = {"record": n, "step": s.step.index, "answer": ev.answer, "correct": correct}
            step_rows.append({**base, "score_kind": "single_step_confidence", "score": ev.c})
            step_rows.append({**base, "score_kind": "trace_stability", "score": report.score_of(ev.answer)})
        cons = exit_consistency(rec)
        if cons is not None:
            consistency_rows.append({"record": n, "policy": rec.policy, "consistency": cons})
    if skipped:
        logger.warning("%d record(s) without gold labels were left out of the export", skipped)
    return AnalysisExport(step_rows, consistency_rows, skipped)


# ---------------------------------------------------------------------------
# file outputs


def to_csv(rows: Sequence[dict[str, Any]], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    if rows:
        fieldnames = list(rows[0].keys())
        for r in rows[1:]:
            fieldnames += [k for k in r if k not in fieldnames]
        writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
