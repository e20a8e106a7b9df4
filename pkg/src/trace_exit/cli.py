"""Command-line entry point.

Exit codes: 0 success, 1 session or harness error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import harness
from .config import ConfigError, endpoint_config, resolve_config, segmenter_profile, session_config
from .controller import PolicyError, run_policy
from .drivers import DriverConfigError, DriverError, LiveDriver, RecordingDriver, ReplayDriver, record_session
from .drivers.replay import ReplayFormatError
from .stepper import offline_segment

logger = logging.getLogger("trace_exit")

EXIT_OK, EXIT_SESSION, EXIT_CONFIG = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--policy", choices=["trace", "single_step", "vanilla", "fixed_budget", "oracle"])
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--profile", help="segmenter profile (default, gemini)")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--budget", type=int, help="token budget for the fixed_budget policy")
    p.add_argument("--endpoint", help="OpenAI-compatible base URL, e.g. http://localhost:8000/v1")
    p.add_argument("--model")
    p.add_argument("--top-k", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output path")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trace-exit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one session")
    _common(run)
    run.add_argument("question", nargs="?", help="question text or a file containing it")
    run.add_argument("--replay", help="replay trace (JSONL)")
    run.add_argument("--allow-partial", action="store_true")
    run.add_argument("--gold", help="gold answer (needed by the oracle policy)")
    run.add_argument("--record", help="write the session as a replay trace here")

    ev = sub.add_parser("evaluate", help="metrics for one policy over a problem set")
    _common(ev)
    ev.add_argument("--set", required=True, dest="problem_set")
    ev.add_argument("--judge", choices=sorted(harness.JUDGES), default="exact")
    ev.add_argument("--json", help="also write full metrics with per-item rows")

    sw = sub.add_parser("sweep", help="re-score one recording pass over tau/alpha/k values")
    _common(sw)
    sw.add_argument("--set", required=True, dest="problem_set")
    sw.add_argument("--axis", required=True, choices=harness.AXES)
    sw.add_argument("--values", required=True, type=_floats)
    sw.add_argument("--judge", choices=sorted(harness.JUDGES), default="exact")

    an = sub.add_parser("analyze", help="export raw score data for plotting")
    _common(an)
    an.add_argument("--set", required=True, dest="problem_set")
    an.add_argument("--export", required=True, choices=["distributions", "consistency", "tradeoff"])
    an.add_argument("--values", type=_floats, default=[0.5, 0.6, 0.7, 0.8, 0.9, 0.95],
                    help="tau values for the trade-off export")
    an.add_argument("--judge", choices=sorted(harness.JUDGES), default="exact")

    seg = sub.add_parser("segment", help="show how a text splits into steps")
    seg.add_argument("text_file")
    seg.add_argument("--profile", default="default")
    seg.add_argument("--config", help="YAML config file")
    seg.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "policy": get("policy"),
        "window": {"k": get("k"), "alpha": get("alpha"), "tau": get("tau")},
        "segmenter": {"profile": get("profile")},
        "max_steps": get("max_steps"),
        "fixed_budget_tokens": get("budget"),
        "workers": get("workers"),
        "driver": {
            "replay": get("replay"),
            "allow_partial": True if get("allow_partial") else None,
            "endpoint": get("endpoint"),
            "model": get("model"),
            "top_k": get("top_k"),
        },
    }


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace, resolved: dict[str, Any]) -> int:
    cfg = session_config(resolved)
    drv_cfg = resolved["driver"]
    gold = args.gold
    if drv_cfg.get("replay"):
        path = Path(drv_cfg["replay"])
        if not path.is_file():
            raise ConfigError(f"replay file not found: {path}")
        driver: Any = ReplayDriver.from_file(path, allow_partial=bool(drv_cfg.get("allow_partial")))
        question = driver.trace.question
        gold = gold or driver.trace.gold_answer
    else:
        driver = LiveDriver(endpoint_config(resolved))
        question = None
    if args.question:
        qpath = Path(args.question)
        question = qpath.read_text(encoding="utf-8").strip() if qpath.is_file() else args.question
    if not question:
        raise ConfigError("no question given")
    if cfg.policy == "oracle" and gold is None:
        raise ConfigError("oracle policy needs --gold")

    recorder = RecordingDriver(driver) if args.record else None
    record = run_policy(recorder or driver, question, cfg, gold)
    record.config = {**record.config, "resolved": resolved}
    if recorder is not None:
        record_session(recorder, args.record, cfg.segmenter, gold)
    if args.out:
        Path(args.out).write_text(record.dumps(indent=2) + "\n", encoding="utf-8")

    d = record.decision
    score = "-" if d.trigger_score is None else f"{d.trigger_score:.4f}"
    print(
        f"policy={record.policy} exit_step={d.step_index} early={d.exited_early} reason={d.reason} "
        f"answer={d.final_answer} reasoning_tokens={record.reasoning_tokens} "
        f"induction_tokens={record.induction_tokens} score={score}"
    )
    if record.error:
        print(f"error: {record.error}", file=sys.stderr)
        return EXIT_SESSION
    return EXIT_OK


def _problem_set(args: argparse.Namespace, resolved: dict[str, Any]) -> tuple[harness.ProblemSet, Any]:
    path = Path(args.problem_set)
    if not path.is_file():
        raise ConfigError(f"problem set not found: {path}")
    ps = harness.ProblemSet.load(path)
    if ps.is_replay:
        return ps, None
    live = LiveDriver(endpoint_config(resolved))
    return ps, (lambda item: live)


def cmd_evaluate(args: argparse.Namespace, resolved: dict[str, Any]) -> int:
    cfg = session_config(resolved)
    ps, factory = _problem_set(args, resolved)
    workers = int(resolved["workers"])
    vanilla = harness.evaluate(ps, "vanilla", cfg, judge=args.judge, driver_factory=factory, workers=workers)
    metrics = vanilla if cfg.policy == "vanilla" else harness.evaluate(
        ps, cfg.policy, cfg, vanilla=vanilla, judge=args.judge, driver_factory=factory, workers=workers)
    _write(harness.to_csv([metrics.summary()]), args.out)
    if args.json:
        Path(args.json).write_text(json.dumps(metrics.to_json(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, resolved: dict[str, Any]) -> int:
    cfg = session_config(resolved)
    ps, factory = _problem_set(args, resolved)
    rows = harness.sweep(ps, args.axis, args.values, cfg, policy=cfg.policy, judge=args.judge,
                         driver_factory=factory, workers=int(resolved["workers"]))
    _write(harness.to_csv([r.as_dict() for r in rows]), args.out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace, resolved: dict[str, Any]) -> int:
    cfg = session_config(resolved)
    ps, factory = _problem_set(args, resolved)
    probes = harness.probe_records(ps, cfg, factory, int(resolved["workers"]))
    if args.export == "tradeoff":
        rows = harness.tradeoff_curve(ps, ["trace", "single_step", "oracle"], args.values, cfg,
                                      probes=probes, judge=args.judge)
    elif args.export == "distributions":
        full = [harness.score_all_steps(p, cfg) for p in probes]
        rows = harness.export_distributions(full, judge=args.judge).step_rows
    else:
        records = [harness.rescore(p, cfg.with_policy(pol)) for pol in ("single_step", "trace") for p in probes]
        rows = harness.export_distributions(records, judge=args.judge).consistency_rows
    _write(harness.to_csv(rows), args.out)
    return EXIT_OK


def cmd_segment(args: argparse.Namespace, resolved: dict[str, Any]) -> int:
    seg_cfg = segmenter_profile(args.profile)
    path = Path(args.text_file)
    if not path.is_file():
        raise ConfigError(f"text file not found: {path}")
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path} is not UTF-8 text: {exc}") from exc
    for step in offline_segment(text, seg_cfg):
        lo, hi = step.char_range
        preview = step.text.replace("\n", "\\n")
        if len(preview) > 72:
            preview = preview[:69] + "..."
        marker = json.dumps(step.marker) if step.marker is not None else "-"
        print(f"[{step.index}] chars {lo}-{hi} marker={marker} | {preview}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "segment": cmd_segment,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolved = resolve_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, resolved)
    except (ConfigError, PolicyError, DriverConfigError, ReplayFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DriverError, harness.HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SESSION


if __name__ == "__main__":
    sys.exit(main())
