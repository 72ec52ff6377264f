"""Replicate loop, performance summaries and the truth ledger."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .calibrate import DEFAULT_DRAWS, true_marginal_log_or
from .dgm import ScenarioConfig, Study, generate_trial
from .estimators import (
    METHODS,
    EffectEstimate,
    EstimatorSettings,
    bucher_arm_estimate,
    bucher_estimate,
    gcomp_estimate,
    indirect_comparison,
    maic_estimate,
    wald,
)
from .exceptions import ItcError, NumericalFailure
from .streams import calibration_stream, data_stream

CSV_COLUMNS = ("replicate", "method", "delta_hat", "se", "ci_low", "ci_high", "valid")

PROFILES = {
    "desk": {"replicates": 200, "bootstrap": 200},
    "full": {"replicates": 2000, "bootstrap": 1000},
}


class TruthLedgerError(ItcError):
    pass


@dataclass(frozen=True)
class StudySettings:
    seed: int = 1
    bootstrap: int = 200
    max_failure_fraction: float = 0.05
    methods: tuple[str, ...] = METHODS

    def estimator_settings(self, replicate: int) -> EstimatorSettings:
        return EstimatorSettings(
            bootstrap=self.bootstrap,
            seed=self.seed,
            replicate=replicate,
            max_failure_fraction=self.max_failure_fraction,
        )


@dataclass(frozen=True)
class ReplicateRecord:
    replicate_index: int
    estimates: dict[str, EffectEstimate]
    errors: dict[str, str] = field(default_factory=dict)

    def valid(self, method: str) -> bool:
        return self.estimates[method].valid


@dataclass(frozen=True)
class PerformanceSummary:
    method: str
    truth: float
    bias: float
    bias_mcse: float
    mse: float
    mse_mcse: float
    coverage: float
    coverage_mcse: float
    n_valid: int

    def to_dict(self) -> dict:
        return asdict(self)


def _failed(method: str) -> EffectEstimate:
    nan = float("nan")
    return EffectEstimate(method, nan, nan, nan, nan, 0, False)


def run_replicate(config: ScenarioConfig, replicate_index: int, settings: StudySettings) -> ReplicateRecord:
    """Simulate one S1/S2 pair and apply every method to it.

    The B-vs-C estimate is computed once from S2 and shared by all methods.
    Failures are recorded per method and never abort the replicate.
    """
    s1 = generate_trial(config, Study.S1, data_stream(settings.seed, replicate_index, 0))
    s2 = generate_trial(config, Study.S2, data_stream(settings.seed, replicate_index, 1))
    est_settings = settings.estimator_settings(replicate_index)
    estimates, errors = {}, {}
    try:
        bc = wald("bc", *bucher_arm_estimate(s2))
    except NumericalFailure as exc:
        for method in settings.methods:
            estimates[method] = _failed(method)
            errors[method] = f"B vs C: {exc}"
        return ReplicateRecord(replicate_index, estimates, errors)

    for method in settings.methods:
        try:
            if method == "bucher":
                ac = bucher_estimate(s1)
            elif method == "maic":
                ac = maic_estimate(s1, s2, est_settings)
            elif method == "gcomp":
                ac = gcomp_estimate(s1, s2, est_settings, interactions=config.has_interaction)
            else:
                raise ValueError(f"unknown method {method!r}")
        except NumericalFailure as exc:
            estimates[method] = _failed(method)
            errors[method] = f"{type(exc).__name__}: {exc}"
            continue
        estimates[method] = indirect_comparison(ac, bc)
        if not ac.valid:
            errors[method] = f"{ac.bootstrap_failures} of {settings.bootstrap} bootstrap resamples failed"
    return ReplicateRecord(replicate_index, estimates, errors)


def _run_one(args):
    config, index, settings = args
    with threadpool_limits(limits=1, user_api="blas"):
        return run_replicate(config, index, settings)


def run_study(
    config: ScenarioConfig,
    replicates: int,
    settings: StudySettings = StudySettings(),
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> list[ReplicateRecord]:
    """Run ``replicates`` independent replicates.

    Each replicate's streams are derived from (seed, replicate index), and
    results land in indexed slots, so the output is the same for any
    worker count.
    """
    results: list[ReplicateRecord | None] = [None] * replicates
    jobs = [(config, r, settings) for r in range(replicates)]
    if workers <= 1:
        for r, job in enumerate(jobs):
            results[r] = _run_one(job)
            if progress:
                progress(r + 1, replicates)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for done, record in enumerate(pool.map(_run_one, jobs, chunksize=1), start=1):
                results[record.replicate_index] = record
                if progress:
                    progress(done, replicates)
    return results  # type: ignore[return-value]


def summarize(records: Sequence[ReplicateRecord], truth: float, methods: Iterable[str] | None = None) -> list[PerformanceSummary]:
    """Bias, MSE and coverage per method with Monte Carlo standard errors.

    Invalid replicates are dropped per method; ``n_valid`` says how many
    remain.
    """
    if methods is None:
        methods = [m for m in METHODS if records and m in records[0].estimates]
    out = []
    for method in methods:
        ests = [rec.estimates[method] for rec in records if rec.estimates[method].valid]
        n = len(ests)
        nan = float("nan")
        if n == 0:
            out.append(PerformanceSummary(method, truth, nan, nan, nan, nan, nan, nan, 0))
            continue
        theta = np.array([e.delta_hat for e in ests])
        lo = np.array([e.ci_low for e in ests])
        hi = np.array([e.ci_high for e in ests])
        err2 = (theta - truth) ** 2
        mse = float(err2.mean())
        coverage = float(np.mean((lo <= truth) & (truth <= hi)))
        if n > 1:
            bias_mcse = float(np.std(theta, ddof=1) / math.sqrt(n))
            mse_mcse = float(math.sqrt(np.sum((err2 - mse) ** 2) / (n * (n - 1))))
        else:
            bias_mcse = mse_mcse = nan
        out.append(
            PerformanceSummary(
                method=method,
                truth=truth,
                bias=float(theta.mean() - truth),
                bias_mcse=bias_mcse,
                mse=mse,
                mse_mcse=mse_mcse,
                coverage=coverage,
                coverage_mcse=math.sqrt(coverage * (1.0 - coverage) / n),
                n_valid=n,
            )
        )
    return out


@dataclass(frozen=True)
class TruthLedger:
    """True marginal contrasts in S2, plus S1's A-vs-C contrast for reference."""

    delta_ac_s1: float
    delta_ac_s2: float
    delta_bc_s2: float

    @property
    def delta_ab_s2(self) -> float:
        return self.delta_ac_s2 - self.delta_bc_s2

    def to_dict(self) -> dict:
        return {**asdict(self), "delta_ab_s2": self.delta_ab_s2}


def truth_ledger(config: ScenarioConfig, seed: int = 1, draws: int = DEFAULT_DRAWS) -> TruthLedger:
    """Calibrate the estimand and check it is zero.

    A and B share the outcome model, so with common random numbers their S2
    marginal contrasts must agree exactly.  Anything else is a
    configuration bug and raises ``TruthLedgerError``.
    """
    ac_s1 = true_marginal_log_or(config, Study.S1, draws, calibration_stream(seed, 0)).effect
    ac_s2 = true_marginal_log_or(config, Study.S2, draws, calibration_stream(seed, 1)).effect
    bc_s2 = true_marginal_log_or(config, Study.S2, draws, calibration_stream(seed, 1)).effect
    ledger = TruthLedger(ac_s1, ac_s2, bc_s2)
    if ledger.delta_ab_s2 != 0.0:
        raise TruthLedgerError(f"A-vs-B truth in S2 is {ledger.delta_ab_s2!r}, expected 0")
    return ledger


def _fmt(value: float) -> str:
    return repr(float(value))


def records_to_csv(records: Sequence[ReplicateRecord], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        for method, est in rec.estimates.items():
            writer.writerow(
                [rec.replicate_index, method, _fmt(est.delta_hat), _fmt(est.se),
                 _fmt(est.ci_low), _fmt(est.ci_high), int(est.valid)]
            )
    return buf.getvalue()


def records_from_csv(text: str) -> list[ReplicateRecord]:
    """Parse the replicate CSV; ``#`` lines are provenance comments."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"replicate file is empty; missing columns: {', '.join(CSV_COLUMNS)}")
    reader = csv.DictReader(lines)
    missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"replicate file is missing columns: {', '.join(missing)}")
    by_rep: dict[int, dict[str, EffectEstimate]] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            rep = int(row["replicate"])
            est = EffectEstimate(
                method=row["method"],
                delta_hat=float(row["delta_hat"]),
                se=float(row["se"]),
                ci_low=float(row["ci_low"]),
                ci_high=float(row["ci_high"]),
                valid=row["valid"].strip() in ("1", "true", "True"),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise ValueError(f"malformed replicate row {lineno}: {exc}") from exc
        by_rep.setdefault(rep, {})[est.method] = est
    return [ReplicateRecord(r, by_rep[r]) for r in sorted(by_rep)]
