"""Session loop that decides after each reasoning step whether to stop.

All policies share one record schema so the harness can treat them alike:

* ``trace``        exit when the windowed stability of the best answer reaches tau
* ``single_step``  exit at the first step whose own confidence reaches tau
* ``oracle``       exit at the first step whose induced answer equals the gold label
* ``vanilla``      run to the natural end of generation, no inductions
* ``fixed_budget`` stop after a token budget and induce once
"""

from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from .drivers.base import Driver, DriverConfigError, DriverError
from .induction import InducedAnswer, InductionError, InductionPrompt, induce, parse_answer
from .scoring import StabilityReport, StepEvidence, WindowConfig, stability
from .stepper import ReasoningStep, SegmenterConfig, StreamingSegmenter

logger = logging.getLogger(__name__)

RECORD_SCHEMA = "trace-exit.session/1"
POLICIES = ("trace", "single_step", "vanilla", "fixed_budget", "oracle")
STEPWISE_POLICIES = ("trace", "single_step", "oracle")
REASONS = ("threshold", "max_steps", "stream_end", "token_cap", "error")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    prompt: InductionPrompt = field(default_factory=InductionPrompt)
    max_steps: int = 64
    max_total_tokens: int = 32768
    policy: str = "trace"
    # "last": last induced answer on exhaustion; "best": highest stability seen
    fallback: str = "last"
    fixed_budget_tokens: int | None = None
    top_k: int = 20

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.max_total_tokens < 1:
            raise ValueError("max_total_tokens must be >= 1")
        if self.policy not in POLICIES:
            raise PolicyError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.fallback not in ("last", "best"):
            raise ValueError("fallback must be 'last' or 'best'")
        if self.policy == "fixed_budget" and not self.fixed_budget_tokens:
            raise PolicyError("fixed_budget policy needs fixed_budget_tokens")

    def with_policy(self, policy: str) -> "SessionConfig":
        return replace(self, policy=policy)

    def with_window(self, **kw: Any) -> "SessionConfig":
        return replace(self, window=replace(self.window, **kw))

    def to_json(self) -> dict[str, Any]:
        return {
            "policy": self.policy,
            "window": {"k": self.window.k, "alpha": self.window.alpha, "tau": self.window.tau},
            "segmenter": self.segmenter.to_json(),
            "prompt": self.prompt.to_json(),
            "max_steps": self.max_steps,
            "max_total_tokens": self.max_total_tokens,
            "fallback": self.fallback,
            "fixed_budget_tokens": self.fixed_budget_tokens,
            "top_k": self.top_k,
            "induction_decoding": "greedy",
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SessionConfig":
        w = obj.get("window", {})
        return cls(
            window=WindowConfig(int(w.get("k", 5)), float(w.get("alpha", 0.7)), float(w.get("tau", 0.8))),
            segmenter=SegmenterConfig.from_json(obj["segmenter"]) if "segmenter" in obj else SegmenterConfig(),
            prompt=InductionPrompt.from_json(obj.get("prompt", {})),
            max_steps=int(obj.get("max_steps", 64)),
            max_total_tokens=int(obj.get("max_total_tokens", 32768)),
            policy=obj.get("policy", "trace"),
            fallback=obj.get("fallback", "last"),
            fixed_budget_tokens=obj.get("fixed_budget_tokens"),
            top_k=int(obj.get("top_k", 20)),
        )


@dataclass(frozen=True)
class ExitDecision:
    step_index: int
    exited_early: bool
    final_answer: str | None
    trigger_score: float | None
    reason: str

    def __post_init__(self) -> None:
        if self.reason not in REASONS:
            raise ValueError(f"unknown exit reason {self.reason!r}")
        if self.exited_early and (self.reason != "threshold" or self.trigger_score is None):
            raise ValueError("an early exit must come from the threshold with a score")

    def to_json(self) -> dict[str, Any]:
        return {
            "step": self.step_index,
            "exited_early": self.exited_early,
            "final_answer": self.final_answer,
            "trigger_score": self.trigger_score,
            "reason": self.reason,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ExitDecision":
        return cls(int(obj["step"]), bool(obj["exited_early"]), obj["final_answer"], obj["trigger_score"], obj["reason"])


@dataclass(frozen=True)
class StepRecord:
    step: ReasoningStep
    evidence: StepEvidence | None = None
    report: StabilityReport | None = None
    induction_tokens: int = 0
    # main-stream tokens consumed when the step's closing boundary was seen
    tokens_consumed: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            **self.step.to_json(),
            "evidence": None if self.evidence is None else self.evidence.to_json(),
            "report": None if self.report is None else self.report.to_json(),
            "induction_tokens": self.induction_tokens,
            "tokens_consumed": self.tokens_consumed,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "StepRecord":
        return cls(
            ReasoningStep.from_json(obj),
            None if obj.get("evidence") is None else StepEvidence.from_json(obj["evidence"]),
            None if obj.get("report") is None else StabilityReport.from_json(obj["report"]),
            int(obj.get("induction_tokens", 0)),
            int(obj.get("tokens_consumed", 0)),
        )


@dataclass
class SessionRecord:
    policy: str
    question: str
    config: dict[str, Any]
    steps: list[StepRecord]
    decision: ExitDecision
    reasoning_tokens: int
    induction_tokens: int
    post_exit_tokens: int = 0
    gold: str | None = None
    error: str | None = None
    duration_s: float = 0.0

    @property
    def total_tokens(self) -> int:
        return self.reasoning_tokens + self.induction_tokens

    @property
    def final_answer(self) -> str | None:
        return self.decision.final_answer

    def to_json(self, *, include_timing: bool = True) -> dict[str, Any]:
        out = {
            "schema": RECORD_SCHEMA,
            "policy": self.policy,
            "question": self.question,
            "gold": self.gold,
            "config": self.config,
            "steps": [s.to_json() for s in self.steps],
            "decision": self.decision.to_json(),
            "reasoning_tokens": self.reasoning_tokens,
            "induction_tokens": self.induction_tokens,
            "post_exit_tokens": self.post_exit_tokens,
            "error": self.error,
        }
        if include_timing:
            out["duration_s"] = self.duration_s
        return out

    def dumps(self, *, include_timing: bool = True, indent: int | None = None) -> str:
        return json.dumps(self.to_json(include_timing=include_timing), sort_keys=True, ensure_ascii=False, indent=indent)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "SessionRecord":
        if obj.get("schema") != RECORD_SCHEMA:
            raise ValueError(f"unsupported session record schema {obj.get('schema')!r}")
        return cls(
            policy=obj["policy"],
            question=obj["question"],
            config=obj["config"],
            steps=[StepRecord.from_json(s) for s in obj["steps"]],
            decision=ExitDecision.from_json(obj["decision"]),
            reasoning_tokens=int(obj["reasoning_tokens"]),
            induction_tokens=int(obj["induction_tokens"]),
            post_exit_tokens=int(obj.get("post_exit_tokens", 0)),
            gold=obj.get("gold"),
            error=obj.get("error"),
            duration_s=float(obj.get("duration_s", 0.0)),
        )


# ---------------------------------------------------------------------------

Rule = Callable[[StepEvidence, StabilityReport], "float | None"]


def _trace_rule(cfg: SessionConfig) -> Rule:
    def rule(ev: StepEvidence, report: StabilityReport) -> float | None:
        return report.score if report.exit else None

    return rule


def _single_step_rule(cfg: SessionConfig) -> Rule:
    def rule(ev: StepEvidence, report: StabilityReport) -> float | None:
        c = ev.c
        return c if c is not None and c >= cfg.window.tau else None

    return rule


def _oracle_rule(gold: str | None) -> Rule:
    def rule(ev: StepEvidence, report: StabilityReport) -> float | None:
        return 1.0 if gold is not None and ev.answer == gold else None

    return rule


def _exit_answer(policy: str, ev: StepEvidence, report: StabilityReport) -> str | None:
    return report.selected if policy == "trace" else ev.answer


def fallback_answer(steps: list[StepRecord], mode: str) -> str | None:
    """Answer returned when no step triggered an exit."""
    if mode == "best":
        best, best_s = None, -1.0
        for rec in steps:
            if rec.report is not None and rec.report.score is not None and rec.report.score >= best_s:
                best, best_s = rec.report.selected, rec.report.score
        if best is not None:
            return best
    for rec in reversed(steps):
        if rec.evidence is not None and rec.evidence.answer is not None:
            return rec.evidence.answer
    return None


def _run_stepwise(driver: Driver, question: str, cfg: SessionConfig, rule: Rule, gold: str | None) -> SessionRecord:
    started = time.perf_counter()
    seg = StreamingSegmenter(cfg.segmenter)
    window: deque[StepEvidence] = deque(maxlen=cfg.window.k)
    records: list[StepRecord] = []
    decision: ExitDecision | None = None
    stop_reason: str | None = None
    error: str | None = None
    induction_total = 0

    def process(step: ReasoningStep) -> ExitDecision | None:
        nonlocal induction_total
        ans = induce(driver, question, seg.text[: step.char_range[1]], cfg.prompt, step.index)
        induction_total += ans.token_cost
        ev = ans.evidence(step.index)
        window.append(ev)
        report = stability(list(window), cfg.window)
        records.append(StepRecord(step, ev, report, ans.token_cost, seg.tokens_fed))
        score = rule(ev, report)
        if score is not None:
            return ExitDecision(step.index, True, _exit_answer(cfg.policy, ev, report), score, "threshold")
        return None

    def drain(steps: list[ReasoningStep]) -> bool:
        """Process unseen steps; True once the session should stop."""
        nonlocal decision, stop_reason
        for step in steps[len(records):]:
            decision = process(step)
            if decision is not None:
                return True
            if len(records) >= cfg.max_steps:
                stop_reason = "max_steps"
                return True
        return False

    stream = driver.stream(question)
    finished = False
    try:
        for tok in stream:
            if seg.feed(tok) and drain(seg.closed_steps()):
                finished = True
                break
            if seg.truncated:
                break
            if seg.tokens_fed >= cfg.max_total_tokens:
                stop_reason = "token_cap"
                break
        if not finished:
            if seg.truncated:
                stop_reason = "max_steps"
            drain(seg.finalize())
            if decision is None and stop_reason is None:
                stop_reason = "stream_end"
    except DriverConfigError:
        raise
    except (DriverError, InductionError) as exc:
        error = str(exc)
        stop_reason = "error"
        logger.error("session aborted: %s", exc)
    finally:
        stream.close()

    if decision is None:
        last = records[-1].step.index if records else 0
        decision = ExitDecision(last, False, fallback_answer(records, cfg.fallback), None, stop_reason or "stream_end")

    reasoning = sum(r.step.token_count for r in records)
    return SessionRecord(
        policy=cfg.policy,
        question=question,
        config=cfg.to_json(),
        steps=records,
        decision=decision,
        reasoning_tokens=reasoning,
        induction_tokens=induction_total,
        post_exit_tokens=seg.tokens_fed - reasoning,
        gold=gold,
        error=error,
        duration_s=time.perf_counter() - started,
    )


def _require(cfg: SessionConfig, policy: str) -> None:
    if cfg.policy != policy:
        raise PolicyError(f"config policy is {cfg.policy!r}, expected {policy!r}")


def run_trace(driver: Driver, question: str, config: SessionConfig, gold: str | None = None) -> SessionRecord:
    """Windowed-stability early exit."""
    _require(config, "trace")
    return _run_stepwise(driver, question, config, _trace_rule(config), gold)


def run_single_step(driver: Driver, question: str, config: SessionConfig, gold: str | None = None) -> SessionRecord:
    """Exit at the first step whose own answer confidence reaches tau."""
    _require(config, "single_step")
    return _run_stepwise(driver, question, config, _single_step_rule(config), gold)


def run_oracle(driver: Driver, question: str, config: SessionConfig, gold: str) -> SessionRecord:
    """Exit at the first step whose induced answer is correct (needs a label)."""
    _require(config, "oracle")
    if gold is None:
        raise PolicyError("oracle policy needs a gold answer")
    return _run_stepwise(driver, question, config, _oracle_rule(gold), gold)


def _run_to_budget(driver: Driver, question: str, cfg: SessionConfig, budget: int, gold: str | None,
                   induce_at_budget: bool) -> SessionRecord:
    started = time.perf_counter()
    # the full trace is wanted here, so the step cap from match_limit is lifted
    seg = StreamingSegmenter(replace(cfg.segmenter, match_limit=10**9))
    stream = driver.stream(question)
    hit_cap = False
    error: str | None = None
    try:
        for tok in stream:
            seg.feed(tok)
            if seg.tokens_fed >= budget:
                hit_cap = True
                break
    except DriverError as exc:
        error = str(exc)
    finally:
        stream.close()
    steps = seg.finalize()
    records = [StepRecord(s, tokens_consumed=seg.tokens_fed) for s in steps]
    induction_tokens = 0
    answer: str | None
    if hit_cap and induce_at_budget and steps:
        try:
            ans: InducedAnswer = induce(driver, question, seg.text, cfg.prompt, steps[-1].index)
        except InductionError as exc:
            error = str(exc)
            answer = None
        else:
            induction_tokens = ans.token_cost
            ev = ans.evidence(steps[-1].index)
            records[-1] = replace(records[-1], evidence=ev, induction_tokens=ans.token_cost)
            answer = ev.answer
    else:
        answer = parse_answer(seg.text)
    reason = "error" if error else ("token_cap" if hit_cap else "stream_end")
    return SessionRecord(
        policy=cfg.policy,
        question=question,
        config=cfg.to_json(),
        steps=records,
        decision=ExitDecision(len(steps), False, answer, None, reason),
        reasoning_tokens=seg.tokens_fed,
        induction_tokens=induction_tokens,
        gold=gold,
        error=error,
        duration_s=time.perf_counter() - started,
    )


def run_vanilla(driver: Driver, question: str, config: SessionConfig, gold: str | None = None) -> SessionRecord:
    """Full generation; the answer is parsed from the complete output."""
    _require(config, "vanilla")
    return _run_to_budget(driver, question, config, config.max_total_tokens, gold, induce_at_budget=False)


def run_fixed_budget(driver: Driver, question: str, config: SessionConfig, gold: str | None = None) -> SessionRecord:
    """Cut generation after ``fixed_budget_tokens`` and induce an answer once."""
    _require(config, "fixed_budget")
    budget = min(config.fixed_budget_tokens or config.max_total_tokens, config.max_total_tokens)
    return _run_to_budget(driver, question, config, budget, gold, induce_at_budget=True)


def run_policy(driver: Driver, question: str, config: SessionConfig, gold: str | None = None) -> SessionRecord:
    runners = {
        "trace": run_trace,
        "single_step": run_single_step,
        "vanilla": run_vanilla,
        "fixed_budget": run_fixed_budget,
        "oracle": run_oracle,
    }
    return runners[config.policy](driver, question, config, gold)  # type: ignore[operator]


def collect_evidence(driver: Driver, question: str, config: SessionConfig, gold: str | None = None) -> SessionRecord:
    """Run every step with induction and never exit.

    The result carries everything needed to re-score the same trace under
    other thresholds, weights or window sizes without calling the model.
    """
    record = _run_stepwise(driver, question, config, lambda ev, report: None, gold)
    record.policy = "probe"
    return record
