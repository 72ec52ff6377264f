"""Command-line entry point: ``itcsim calibrate | simulate | report``.

Exit codes: 0 success, 2 user or config error, 3 numerical failure,
4 acceptance band breached under ``--check``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, asdict
from importlib import resources
from pathlib import Path

from . import __version__
from .bands import desk_checks, full_checks
from .calibrate import DEFAULT_DRAWS, solve_treatment_coefficient, true_marginal_log_or
from .dgm import ScenarioConfig, Study
from .exceptions import ConfigError, NumericalFailure
from .harness import (
    PROFILES,
    StudySettings,
    TruthLedgerError,
    records_from_csv,
    records_to_csv,
    run_study,
    summarize,
    truth_ledger,
)
from .report import render_svg, render_text
from .streams import calibration_stream

log = logging.getLogger("itcsim")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4
PRESETS = ("reference_logistic", "reference_linear")


@dataclass
class RunManifest:
    config: str
    seed: int
    replicates: int
    bootstrap: int
    threads: int
    out: str
    profile: str
    version: str = __version__


def _read_config(path: str) -> tuple[ScenarioConfig, dict]:
    """Load ``{"scenario": ..., "run": ...}`` or a bare scenario; preset names also work."""
    p = Path(path)
    if not p.exists() and path.removesuffix(".json") in PRESETS:
        text = resources.files("itcsim.presets").joinpath(f"{path.removesuffix('.json')}.json").read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "scenario" in raw:
        run = raw.get("run", {}) or {}
        return ScenarioConfig.from_dict(raw["scenario"]), run
    return ScenarioConfig.from_dict(raw), {}


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def cmd_calibrate(args) -> int:
    config, run = _read_config(args.config)
    seed = args.seed if args.seed is not None else int(run.get("seed", 1))
    result = {"version": __version__, "seed": seed, "family": config.family.value}
    if args.target_or is not None:
        study = Study(args.study)
        beta_t = solve_treatment_coefficient(
            config, study, args.target_or, draws=args.draws, rng=calibration_stream(seed, study.index)
        )
        config = config.replace(beta_t=beta_t)
        result["calibrated"] = {"study": study.value, "target_marginal_or": args.target_or, "beta_t": beta_t}
        derived = Path(args.derived) if args.derived else Path(args.out or ".") / "calibrated_config.json"
        derived.parent.mkdir(parents=True, exist_ok=True)
        derived.write_text(_dump({"scenario": config.to_dict(), "run": {**run, "seed": seed}}))
        result["derived_config"] = str(derived)
    for study in Study:
        truth = true_marginal_log_or(config, study, args.draws, calibration_stream(seed, study.index))
        result[study.value] = truth.to_dict()
    sys.stdout.write(_dump(result))
    return EXIT_OK


def _resolve_run(args, run: dict) -> tuple[str, int, int]:
    profile = args.profile or run.get("profile", "desk")
    if profile not in PROFILES and profile != "custom":
        raise ConfigError(f"unknown profile {profile!r}")
    base = PROFILES.get(profile, PROFILES["desk"])
    replicates = args.replicates or run.get("replicates") or base["replicates"]
    bootstrap = args.bootstrap or run.get("bootstrap") or base["bootstrap"]
    if profile in PROFILES and (replicates, bootstrap) != (base["replicates"], base["bootstrap"]):
        profile = "custom"
    if replicates < 1 or bootstrap < 2:
        raise ConfigError("need at least 1 replicate and 2 bootstrap resamples")
    return profile, int(replicates), int(bootstrap)


def cmd_simulate(args) -> int:
    config, run = _read_config(args.config)
    seed = args.seed if args.seed is not None else int(run.get("seed", 1))
    profile, replicates, bootstrap = _resolve_run(args, run)
    threads = args.threads or int(run.get("threads", 0)) or os.cpu_count() or 1
    out = Path(args.out or run.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(str(args.config), seed, replicates, bootstrap, threads, str(out), profile)
    (out / "manifest.json").write_text(_dump(asdict(manifest)))

    ledger = truth_ledger(config, seed=seed, draws=args.draws)
    log.info("truth ledger: %s", ledger.to_dict())

    def progress(done, total):
        if done % max(1, total // 20) == 0 or done == total:
            log.info("replicate %d/%d", done, total)

    settings = StudySettings(seed=seed, bootstrap=bootstrap)
    records = run_study(config, replicates, settings, workers=threads, progress=progress)
    (out / "replicates.csv").write_text(
        records_to_csv(records, f"itcsim {__version__} seed={seed} profile={profile}")
    )
    summaries = summarize(records, ledger.delta_ab_s2)
    summary = {
        "version": __version__,
        "seed": seed,
        "profile": profile,
        "family": config.family.value,
        "replicates": replicates,
        "bootstrap": bootstrap,
        "truth_ledger": ledger.to_dict(),
        "summaries": [s.to_dict() for s in summaries],
    }
    if args.check:
        checker = full_checks if profile == "full" else desk_checks
        checks = checker(summaries, config.family, replicates)
        summary["checks"] = [asdict(c) for c in checks]
    (out / "summary.json").write_text(_dump(summary))
    sys.stdout.write(render_text(summary))
    if args.check:
        for c in checks:
            sys.stdout.write(c.line() + "\n")
        if not all(c.passed for c in checks):
            return EXIT_CHECK
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.input or args.out or ".")
    dest = Path(args.out or src)
    csv_path, summary_path = src / "replicates.csv", src / "summary.json"
    try:
        records = records_from_csv(csv_path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {csv_path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{csv_path}: {exc}") from exc
    try:
        summary = json.loads(summary_path.read_text())
        summary["summaries"][0]["truth"]
    except (OSError, json.JSONDecodeError, KeyError, IndexError) as exc:
        raise ConfigError(f"cannot use {summary_path}: {exc}") from exc
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "report.txt").write_text(render_text(summary))
    (dest / "report.svg").write_text(render_svg(records, summary))
    sys.stdout.write(render_text(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="itcsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"itcsim {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="true marginal effects and treatment-coefficient calibration")
    cal.add_argument("--config", required=True)
    cal.add_argument("--seed", type=int)
    cal.add_argument("--draws", type=int, default=DEFAULT_DRAWS)
    cal.add_argument("--target-or", type=float)
    cal.add_argument("--study", choices=[s.value for s in Study], default="S1")
    cal.add_argument("--derived", help="where to write the calibrated config")
    cal.add_argument("--out")
    cal.set_defaults(func=cmd_calibrate)

    sim = sub.add_parser("simulate", help="run the simulation study")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--bootstrap", type=int)
    sim.add_argument("--threads", type=int)
    sim.add_argument("--out")
    sim.add_argument("--profile", choices=["desk", "full", "custom"])
    sim.add_argument("--draws", type=int, default=DEFAULT_DRAWS, help="Monte Carlo draws for the truth ledger")
    sim.add_argument("--check", action="store_true", help="exit 4 if any acceptance band is breached")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("report", help="render report.txt and report.svg from a finished run")
    rep.add_argument("--out", help="output directory (also the input directory unless --input is given)")
    rep.add_argument("--input")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"itcsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, TruthLedgerError) as exc:
        print(f"itcsim: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
