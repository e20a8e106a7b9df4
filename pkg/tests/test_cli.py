import csv
import json
import io

import pytest

from trace_exit import SessionConfig, run_policy
from trace_exit.cli import main
from trace_exit.drivers import ReplayDriver
from trace_exit.drivers.replay import ReplayTrace
from trace_exit.controller import SessionRecord


def cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_trace_summary(capsys, fixtures_dir):
    code, out, _ = cli(capsys, "run", "--replay", str(fixtures_dir / "fig11.jsonl"))
    assert code == 0
    assert "policy=trace" in out and "exit_step=7" in out and "answer=1997/2" in out


def test_run_single_step_summary(capsys, fixtures_dir):
    code, out, _ = cli(capsys, "run", "--replay", str(fixtures_dir / "fig11.jsonl"), "--policy", "single_step")
    assert code == 0 and "exit_step=3" in out and "answer=998" in out


def test_run_missing_replay_is_config_error(capsys, tmp_path):
    code, _, err = cli(capsys, "run", "--replay", str(tmp_path / "nope.jsonl"))
    assert code == 2 and "not found" in err


def test_run_without_driver_is_config_error(capsys):
    code, _, err = cli(capsys, "run", "what is 1+1")
    assert code == 2 and "endpoint" in err


def test_bad_tau_is_config_error(capsys, fixtures_dir):
    code, _, _ = cli(capsys, "run", "--replay", str(fixtures_dir / "fig11.jsonl"), "--tau", "1.5")
    assert code == 2


def test_secret_in_config_rejected(capsys, tmp_path, fixtures_dir):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("driver:\n  api_key: abc\n")
    code, _, err = cli(capsys, "run", "--config", str(cfg), "--replay", str(fixtures_dir / "fig11.jsonl"))
    assert code == 2 and "environment" in err


def test_config_file_then_flags(capsys, tmp_path, fixtures_dir):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("policy: single_step\nwindow:\n  tau: 0.95\n")
    out_path = tmp_path / "rec.json"
    code, out, _ = cli(capsys, "run", "--config", str(cfg), "--tau", "0.8",
                       "--replay", str(fixtures_dir / "fig11.jsonl"), "--out", str(out_path))
    assert code == 0 and "policy=single_step" in out and "exit_step=3" in out
    rec = SessionRecord.from_json(json.loads(out_path.read_text()))
    assert rec.config["resolved"]["window"]["tau"] == 0.8


def test_cli_matches_library(capsys, tmp_path, fixtures_dir):
    out_path = tmp_path / "rec.json"
    path = fixtures_dir / "fig11.jsonl"
    assert cli(capsys, "run", "--replay", str(path), "--out", str(out_path))[0] == 0
    cli_rec = SessionRecord.from_json(json.loads(out_path.read_text()))
    trace = ReplayTrace.load(path)
    lib = run_policy(ReplayDriver(trace), trace.question, SessionConfig(), trace.gold_answer)
    cli_json = cli_rec.to_json(include_timing=False)
    cli_json["config"].pop("resolved")
    assert cli_json == lib.to_json(include_timing=False)


def test_record_and_rerun(capsys, tmp_path, fixtures_dir):
    rec_path = tmp_path / "r.jsonl"
    code, first, _ = cli(capsys, "run", "--replay", str(fixtures_dir / "fig11.jsonl"), "--record", str(rec_path))
    assert code == 0
    code, second, _ = cli(capsys, "run", "--replay", str(rec_path))
    assert code == 0 and first == second


def test_evaluate_csv(capsys, fixtures_dir, tmp_path):
    js = tmp_path / "m.json"
    code, out, _ = cli(capsys, "evaluate", "--set", str(fixtures_dir / "set.jsonl"), "--json", str(js))
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 1 and rows[0]["policy"] == "trace" and rows[0]["n"] == "20"
    assert float(rows[0]["compression_rate"]) < 1.0
    assert js.exists()


def test_evaluate_vanilla_cr_one(capsys, fixtures_dir):
    code, out, _ = cli(capsys, "evaluate", "--set", str(fixtures_dir / "set.jsonl"), "--policy", "vanilla")
    row = next(csv.DictReader(io.StringIO(out)))
    assert code == 0 and float(row["compression_rate"]) == 1.0


def test_sweep_three_rows(capsys, fixtures_dir):
    code, out, _ = cli(capsys, "sweep", "--set", str(fixtures_dir / "set.jsonl"), "--axis", "tau",
                       "--values", "0.7,0.8,0.9")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [float(r["value"]) for r in rows] == [0.7, 0.8, 0.9]


@pytest.mark.parametrize("kind,column", [("distributions", "score_kind"), ("consistency", "consistency"),
                                         ("tradeoff", "mean_tokens")])
def test_analyze_exports(capsys, fixtures_dir, tmp_path, kind, column):
    dest = tmp_path / f"{kind}.csv"
    code, _, _ = cli(capsys, "analyze", "--set", str(fixtures_dir / "set.jsonl"), "--export", kind,
                     "--out", str(dest))
    rows = list(csv.DictReader(io.StringIO(dest.read_text())))
    assert code == 0 and rows and column in rows[0]


def test_segment_default_profile(capsys, fixtures_dir):
    code, out, _ = cli(capsys, "segment", str(fixtures_dir / "case_study.txt"))
    lines = out.splitlines()
    assert code == 0 and len(lines) == 6
    assert lines[1].startswith("[2]") and 'marker="Wait"' in lines[1]


def test_segment_gemini_profile(capsys, tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("A.\n\nB.\n\nC.")
    code, out, _ = cli(capsys, "segment", str(p), "--profile", "gemini")
    assert code == 0 and len(out.splitlines()) == 3


def test_segment_binary_file(capsys, tmp_path):
    p = tmp_path / "b.bin"
    p.write_bytes(b"\xff\xfe\x00\x81")
    code, _, err = cli(capsys, "segment", str(p))
    assert code == 2 and "UTF-8" in err


def test_segment_unknown_profile(capsys, tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("x")
    code, _, _ = cli(capsys, "segment", str(p), "--profile", "nope")
    assert code == 2
