import json

import pytest

from trace_exit import SessionConfig, WindowConfig
from trace_exit.controller import ExitDecision, SessionRecord
from trace_exit.harness import (
    HarnessError,
    MissingBaselineError,
    ProblemSet,
    evaluate,
    exit_consistency,
    export_distributions,
    induction_ratio,
    metrics_from_records,
    numeric_judge,
    probe_records,
    rescore,
    run_records,
    sweep,
    to_csv,
    tradeoff_curve,
)
from trace_exit.synth import ScriptedStep, build_trace

CFG = SessionConfig()


def fake(policy, answer, reasoning, induction=0, gold=None):
    return SessionRecord(policy, "Q", CFG.to_json(), [], ExitDecision(1, False, answer, None, "stream_end"),
                         reasoning, induction, gold=gold)


def write_set(root, answers_by_item):
    """Tiny replay set: each item is a list of (answer, confidence) per step."""
    rows = []
    for n, (gold, sched) in enumerate(answers_by_item, start=1):
        steps = []
        for i, (a, c) in enumerate(sched):
            lead = "" if i == 0 else "Wait, "
            text = f"{lead}looking again, I think it is {a}. "
            if i == len(sched) - 1:
                text = f"</think>The answer is \\boxed{{{a}}}."
            steps.append(ScriptedStep(text, a, c))
        trace = build_trace(f"question {n}", steps, gold)
        trace.save(root / f"q{n}.jsonl")
        rows.append({"id": f"q{n}", "question": f"question {n}", "answer": gold, "replay": f"q{n}.jsonl"})
    path = root / "set.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return ProblemSet.load(path)


@pytest.fixture
def four(tmp_path):
    return write_set(tmp_path, [
        ("1", [("1", 0.9)] * 4),
        ("2", [("2", 0.9)] * 4),
        ("3", [("3", 0.9)] * 4),
        ("4", [("5", 0.9)] * 4),
    ])


# ---------------------------------------------------------------- metrics


def test_accuracy_three_of_four(four):
    m = evaluate(four, "vanilla", CFG)
    assert m.accuracy == 0.75
    assert m.compression_rate == 1.0
    assert [r["id"] for r in m.rows] == ["q1", "q2", "q3", "q4"]


def test_compression_rate_ratio():
    items = ProblemSet([]).items
    vanilla = metrics_from_records(items, [], "vanilla")
    vanilla.mean_tokens = 1000.0
    from trace_exit.harness import Problem

    probs = [Problem("a", "Q", "1"), Problem("b", "Q", "2")]
    trace = metrics_from_records(probs, [fake("trace", "1", 700, 50), fake("trace", "2", 700, 50)], "trace", vanilla)
    assert trace.mean_tokens == 750.0
    assert trace.compression_rate == 0.75


def test_missing_vanilla_is_explicit(four):
    with pytest.raises(MissingBaselineError):
        evaluate(four, "trace", CFG)
    m = evaluate(four, "trace", CFG, require_cr=False)
    assert m.compression_rate is None


def test_reported_induction_ratio_two_decimals():
    rec = fake("trace", "1", 8088 - 167, 167)
    assert induction_ratio([rec]) == 167 / 8088
    assert f"{100 * induction_ratio([rec]):.2f}%" == "2.06%"
    assert 100 * induction_ratio([rec]) == pytest.approx(2.0647873392680514, abs=1e-12)


def test_induction_ratio_by_hand(engineered):
    recs = run_records(engineered, CFG)
    ind = sum(r.induction_tokens for r in recs)
    tot = sum(r.reasoning_tokens + r.induction_tokens for r in recs)
    assert induction_ratio(recs) == ind / tot


def test_worker_count_does_not_change_results(engineered):
    a = [r.dumps(include_timing=False) for r in run_records(engineered, CFG, workers=1)]
    b = [r.dumps(include_timing=False) for r in run_records(engineered, CFG, workers=4)]
    assert a == b


def test_numeric_judge():
    assert numeric_judge("0.5", "1/2")
    assert not numeric_judge("0.5", "1/3")
    assert not numeric_judge(None, "1")


def test_problem_set_rejects_duplicate_ids(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text('{"id": "a", "question": "x"}\n{"id": "a", "question": "y"}\n')
    with pytest.raises(HarnessError):
        ProblemSet.load(p)


# ---------------------------------------------------------------- re-scoring


@pytest.mark.parametrize("policy", ["trace", "single_step", "oracle"])
@pytest.mark.parametrize("window", [WindowConfig(), WindowConfig(4, 0.5, 0.7), WindowConfig(8, 0.9, 0.95),
                                    WindowConfig(3, 0.3, 0.6)])
def test_rescore_equals_fresh_run(engineered, policy, window):
    probes = probe_records(engineered, CFG)
    cfg = CFG.with_policy(policy).with_window(k=window.k, alpha=window.alpha, tau=window.tau)
    fresh = run_records(engineered, cfg)
    for p, f in zip(probes, fresh):
        assert rescore(p, cfg).dumps(include_timing=False) == f.dumps(include_timing=False)


def test_rescore_with_smaller_step_cap(fig11):
    from trace_exit import collect_evidence, run_policy
    from trace_exit.drivers import ReplayDriver

    probe = collect_evidence(ReplayDriver(fig11), fig11.question, CFG)
    cfg = SessionConfig(max_steps=3, window=WindowConfig(tau=0.99))
    fresh = run_policy(ReplayDriver(fig11), fig11.question, cfg)
    assert rescore(probe, cfg).dumps(include_timing=False) == fresh.dumps(include_timing=False)


def test_sweep_tau_rows_and_direction(engineered):
    rows = sweep(engineered, "tau", [0.7, 0.8, 0.9], CFG)
    assert [r.value for r in rows] == [0.7, 0.8, 0.9]
    tokens = [r.metrics.mean_tokens for r in rows]
    assert tokens == sorted(tokens)
    assert rows[0].delta_accuracy == 0.0


def test_sweep_k_delta_relative_to_first(engineered):
    rows = sweep(engineered, "k", [4, 5, 6, 7, 8], CFG)
    base = rows[0].metrics.accuracy
    assert [r.delta_accuracy for r in rows] == [r.metrics.accuracy - base for r in rows]


def test_sweep_alpha_uses_one_recording_pass(engineered):
    calls = []

    def factory(item):
        from trace_exit.drivers import ReplayDriver

        calls.append(item.id)
        return ReplayDriver(engineered.trace(item))

    rows = sweep(engineered, "alpha", [0.3, 0.5, 0.7], CFG, driver_factory=factory)
    assert len(rows) == 3
    # one probe pass plus one vanilla pass
    assert len(calls) == 2 * len(engineered.items)


def test_sweep_rejects_empty_values(engineered):
    with pytest.raises(HarnessError):
        sweep(engineered, "tau", [], CFG)


def test_sweep_rejects_fractional_k(engineered):
    with pytest.raises(HarnessError):
        sweep(engineered, "k", [4.5], CFG)


def test_tradeoff_rows(engineered):
    rows = tradeoff_curve(engineered, ["trace", "single_step", "oracle"], [0.7, 0.8], CFG)
    assert len(rows) == 6
    assert {r["policy"] for r in rows} == {"trace", "single_step", "oracle"}


# ---------------------------------------------------------------- exports


def test_distribution_export_two_rows_per_answered_step(fig11):
    from trace_exit import collect_evidence
    from trace_exit.drivers import ReplayDriver
    from trace_exit.harness import score_all_steps

    probe = score_all_steps(collect_evidence(ReplayDriver(fig11), fig11.question, CFG, "1997/2"), CFG)
    out = export_distributions([probe])
    assert len(out.step_rows) == 2 * len(probe.steps)
    kinds = {r["score_kind"] for r in out.step_rows}
    assert kinds == {"single_step_confidence", "trace_stability"}
    wrong = [r for r in out.step_rows if r["answer"] == "998"]
    assert all(not r["correct"] for r in wrong)


def test_export_skips_unlabeled_records(fig11):
    from trace_exit import run_trace
    from trace_exit.drivers import ReplayDriver

    rec = run_trace(ReplayDriver(fig11), fig11.question, CFG)
    out = export_distributions([rec])
    assert out.step_rows == [] and out.skipped_without_gold == 1


def test_exit_consistency_full_window(stable_early):
    from trace_exit import run_trace
    from trace_exit.drivers import ReplayDriver

    cfg = CFG.with_window(tau=0.95)
    rec = run_trace(ReplayDriver(stable_early), stable_early.question, cfg)
    assert exit_consistency(rec) == 1.0


def test_csv_header_and_rows():
    text = to_csv([{"a": 1, "b": 2}, {"a": 3, "c": 4}])
    assert text.splitlines() == ["a,b,c", "1,2,", "3,,4"]
