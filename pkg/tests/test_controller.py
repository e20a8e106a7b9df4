import math

import pytest

from trace_exit import SessionConfig, SessionRecord, WindowConfig, run_policy, run_trace
from trace_exit.controller import PolicyError, collect_evidence, fallback_answer
from trace_exit.drivers import DriverError, ReplayDriver
from trace_exit.synth import ScriptedStep, build_trace

TAUS = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95]


def run(trace, policy="trace", gold=None, **kw):
    cfg = SessionConfig(policy=policy, **kw)
    return run_policy(ReplayDriver(trace), trace.question, cfg, gold if gold is not None else trace.gold_answer)


def scripted(answers, conf=0.9, gold=None):
    markers = ["Wait", "But", "Alternatively"]
    steps = []
    for i, a in enumerate(answers):
        lead = "" if i == 0 else markers[i % 3] + ", "
        c = conf[i] if isinstance(conf, (list, tuple)) else conf
        steps.append(ScriptedStep(f"{lead}step {i + 1} thinks about it some more. ", a, c))
    return build_trace("Q?", steps, gold)


# ---------------------------------------------------------------- case study


def test_fig11_trace_skips_overconfident_step(fig11):
    rec = run(fig11)
    d = rec.decision
    assert d.exited_early and d.reason == "threshold"
    assert d.final_answer == "1997/2"
    assert d.step_index == 7
    assert d.trigger_score == pytest.approx(0.8307499999999999, abs=1e-12)
    step3 = rec.steps[2]
    assert step3.evidence.answer == "998"
    assert step3.evidence.c == pytest.approx(0.91, abs=1e-9)
    assert step3.report.score_of("998") == pytest.approx(0.41300000000000003, abs=1e-9)
    assert not step3.report.exit


def test_fig11_single_step_exits_at_998(fig11):
    rec = run(fig11, "single_step")
    assert rec.decision.step_index == 3
    assert rec.decision.final_answer == "998"
    assert rec.decision.trigger_score == pytest.approx(0.91, abs=1e-9)


def test_fig11_oracle_exits_before_trace(fig11):
    oracle = run(fig11, "oracle")
    assert oracle.decision.step_index == 4 and oracle.decision.final_answer == "1997/2"
    assert oracle.decision.step_index < run(fig11).decision.step_index


def test_fig11_vanilla_uses_full_trace(fig11):
    rec = run(fig11, "vanilla")
    assert rec.reasoning_tokens == len(fig11.main_stream)
    assert rec.induction_tokens == 0
    assert rec.decision.final_answer == "1997/2"
    assert not rec.decision.exited_early and rec.decision.reason == "stream_end"


def test_stable_early_exits_at_fifth_step(stable_early):
    # window [12, 15, 12, 12, 12]: 0.7 * 4/5 + 0.3 * 0.9 = 0.83
    rec = run(stable_early)
    assert rec.decision.step_index == 5
    assert rec.decision.final_answer == "12"
    assert rec.decision.trigger_score == pytest.approx(0.83, abs=1e-9)


# ---------------------------------------------------------------- exits and fallbacks


def test_no_exit_before_max_steps_falls_back_to_last_answer():
    answers = [str(i) for i in range(12)]
    trace = scripted(answers, conf=0.3)
    rec = run(trace, max_steps=10)
    d = rec.decision
    assert not d.exited_early and d.reason == "max_steps"
    assert d.step_index == 10
    assert d.final_answer == "9"


def test_low_confidence_single_step_never_exits():
    trace = scripted(["1"] * 6, conf=0.3)
    rec = run(trace, "single_step")
    assert not rec.decision.exited_early and rec.decision.reason == "stream_end"
    assert rec.decision.final_answer == "1"


def test_tau_zero_exits_at_step_one(fig11):
    for policy in ("trace", "single_step"):
        rec = run(fig11, policy, window=WindowConfig(tau=0.0))
        assert rec.decision.step_index == 1


def test_alpha_one_needs_ceil_tau_k_agreeing_steps():
    for k in (3, 5, 7):
        for tau in (0.5, 0.8, 1.0):
            trace = scripted(["7"] * 12, conf=0.2)
            rec = run(trace, window=WindowConfig(k=k, alpha=1.0, tau=tau))
            assert rec.decision.step_index == math.ceil(tau * k - 1e-9)


def test_oracle_never_sees_gold():
    trace = scripted(["1", "2", "3"], gold="9")
    rec = run(trace, "oracle")
    assert not rec.decision.exited_early


def test_oracle_requires_gold(fig11):
    with pytest.raises(PolicyError):
        run_policy(ReplayDriver(fig11), fig11.question, SessionConfig(policy="oracle"), None)


def test_policy_mismatch_rejected(fig11):
    with pytest.raises(PolicyError):
        run_trace(ReplayDriver(fig11), fig11.question, SessionConfig(policy="vanilla"))


def test_absent_answers_take_window_slots():
    trace = scripted(["5", None, "5", "5", "5", "5", "5"], conf=0.9)
    rec = run(trace)
    assert rec.steps[1].evidence.answer is None
    # [5, -, 5, 5, 5] -> 0.7 * 0.8 + 0.27 = 0.83 at step 5
    assert rec.decision.step_index == 5


def test_fallback_modes():
    trace = scripted(["1", "2", "2", "3"], conf=[0.5, 0.7, 0.7, 0.1])
    probe = run(trace, window=WindowConfig(tau=1.0))
    assert fallback_answer(probe.steps, "last") == "3"
    assert fallback_answer(probe.steps, "best") == "2"


# ---------------------------------------------------------------- accounting


def test_no_tokens_billed_after_exit(fig11):
    rec = run(fig11)
    reasoning = sum(s.step.token_count for s in rec.steps)
    assert rec.reasoning_tokens == reasoning
    assert rec.reasoning_tokens < len(fig11.main_stream)
    assert rec.total_tokens == rec.reasoning_tokens + rec.induction_tokens
    assert rec.induction_tokens == sum(s.induction_tokens for s in rec.steps)
    assert rec.post_exit_tokens >= 0


def test_token_cap(fig11):
    rec = run(fig11, max_total_tokens=50, window=WindowConfig(tau=1.0))
    assert rec.decision.reason == "token_cap"
    assert rec.reasoning_tokens + rec.post_exit_tokens <= 50


def test_fixed_budget_induces_once(fig11):
    rec = run(fig11, "fixed_budget", fixed_budget_tokens=120)
    assert rec.decision.reason == "token_cap"
    assert rec.reasoning_tokens == 120
    assert rec.induction_tokens > 0
    assert sum(1 for s in rec.steps if s.evidence is not None) == 1


def test_fixed_budget_needs_budget():
    with pytest.raises(PolicyError):
        SessionConfig(policy="fixed_budget")


# ---------------------------------------------------------------- determinism and records


def test_repeated_runs_identical(fig11):
    for policy in ("trace", "single_step", "vanilla", "oracle"):
        a = run(fig11, policy).dumps(include_timing=False)
        b = run(fig11, policy).dumps(include_timing=False)
        assert a == b


def test_record_json_round_trip(fig11):
    rec = run(fig11)
    again = SessionRecord.from_json(rec.to_json())
    assert again.dumps(include_timing=False) == rec.dumps(include_timing=False)
    assert "duration_s" not in rec.to_json(include_timing=False)


@pytest.mark.parametrize("name", ["fig11", "stable_early"])
def test_exit_step_monotone_in_tau(name, request):
    trace = request.getfixturevalue(name)
    steps = [run(trace, window=WindowConfig(tau=t)).decision.step_index for t in TAUS]
    assert steps == sorted(steps)


def test_probe_never_exits(fig11):
    probe = collect_evidence(ReplayDriver(fig11), fig11.question, SessionConfig())
    assert probe.policy == "probe"
    assert len(probe.steps) == len(fig11.steps())
    assert not probe.decision.exited_early


# ---------------------------------------------------------------- errors


class FlakyInduction(ReplayDriver):
    def induce(self, question, reasoning, prompt, step_index):
        if step_index == 3:
            raise DriverError("connection reset")
        return super().induce(question, reasoning, prompt, step_index)


def test_driver_failure_gives_partial_record(fig11):
    rec = run_policy(FlakyInduction(fig11), fig11.question, SessionConfig(), fig11.gold_answer)
    assert rec.decision.reason == "error"
    assert "step 3" in rec.error
    assert len(rec.steps) == 2
    assert rec.decision.final_answer == "1997"


def test_config_validation():
    with pytest.raises(ValueError):
        SessionConfig(policy="nope")
    with pytest.raises(ValueError):
        SessionConfig(max_steps=0)
