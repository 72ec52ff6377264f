"""Anchored indirect-comparison estimators: Bucher, MAIC and G-computation.

Every A-vs-C estimator here works on the S1 trial and, for the adjusted
methods, targets the S2 covariate distribution.  The B-vs-C contrast is
always the unadjusted two-group analysis of S2 (see ``bucher_arm_estimate``)
and the two are combined with ``indirect_comparison``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable

import numpy as np

from . import linmod
from .dgm import TrialData
from .exceptions import DegenerateArm, NoOverlap, NumericalFailure
from .linmod import DesignData, Family, FitSettings
from .streams import bootstrap_stream

METHODS = ("bucher", "maic", "gcomp")

Z_975 = NormalDist().inv_cdf(0.975)


@dataclass(frozen=True)
class EstimatorSettings:
    bootstrap: int = 200
    seed: int = 0
    replicate: int = 0
    max_failure_fraction: float = 0.05
    fit: FitSettings = field(default_factory=FitSettings)


@dataclass(frozen=True)
class EffectEstimate:
    method: str
    delta_hat: float
    se: float
    ci_low: float
    ci_high: float
    bootstrap_failures: int = 0
    valid: bool = True


def wald(method: str, delta_hat: float, se: float, bootstrap_failures: int = 0, valid: bool = True) -> EffectEstimate:
    half = Z_975 * se
    return EffectEstimate(
        method=method,
        delta_hat=float(delta_hat),
        se=float(se),
        ci_low=float(delta_hat - half),
        ci_high=float(delta_hat + half),
        bootstrap_failures=int(bootstrap_failures),
        valid=bool(valid) and math.isfinite(delta_hat) and math.isfinite(se),
    )


def indirect_comparison(ac: EffectEstimate, bc: EffectEstimate) -> EffectEstimate:
    """A-vs-B contrast from A-vs-C and B-vs-C, assuming independent estimates."""
    return wald(
        ac.method,
        ac.delta_hat - bc.delta_hat,
        math.sqrt(ac.se**2 + bc.se**2),
        bootstrap_failures=ac.bootstrap_failures + bc.bootstrap_failures,
        valid=ac.valid and bc.valid,
    )


# --- unadjusted two-group analysis ------------------------------------------


def _two_group_design(trial: TrialData, weights=None) -> DesignData:
    x = np.column_stack([np.ones(trial.n), trial.treatment.astype(float)])
    return DesignData(x, trial.outcome, weights)


def bucher_arm_estimate(trial: TrialData) -> tuple[float, float]:
    """Unadjusted active-vs-common effect and its model-based standard error.

    Logistic family: log odds ratio of the 2x2 table with SE
    ``sqrt(1/a + 1/b + 1/c + 1/d)``.  Linear family: difference in means
    with the pooled-variance SE of the simple regression.
    """
    t = trial.treatment.astype(bool)
    y = trial.outcome
    if trial.family is Family.LOGISTIC:
        a = float(np.sum(y[t]))
        b = float(np.sum(t)) - a
        c = float(np.sum(y[~t]))
        d = float(np.sum(~t)) - c
        if min(a, b, c, d) == 0.0:
            raise DegenerateArm(f"2x2 table has an empty cell: {(a, b, c, d)}")
        delta = math.log(a / b) - math.log(c / d)
        return delta, math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    n1, n0 = int(t.sum()), int((~t).sum())
    if n1 < 1 or n0 < 1 or n1 + n0 < 3:
        raise DegenerateArm("each arm needs at least one subject and n >= 3")
    m1, m0 = float(y[t].mean()), float(y[~t].mean())
    rss = float(np.sum((y[t] - m1) ** 2) + np.sum((y[~t] - m0) ** 2))
    s2 = rss / (n1 + n0 - 2)
    return m1 - m0, math.sqrt(s2 * (1.0 / n1 + 1.0 / n0))


def bucher_estimate(trial: TrialData) -> EffectEstimate:
    return wald("bucher", *bucher_arm_estimate(trial))


# --- MAIC --------------------------------------------------------------------


@dataclass(frozen=True)
class WeightSet:
    alpha: np.ndarray
    weights: np.ndarray
    ess: float

    def weighted_means(self, covariates: np.ndarray) -> np.ndarray:
        return self.weights @ covariates / self.weights.sum()


def maic_weights(
    s1_covariates: np.ndarray,
    s2_target_means,
    tol: float = 1e-10,
    max_iter: int = 100,
    alpha_limit: float = 50.0,
) -> WeightSet:
    """Method-of-moments balancing weights ``w_i = exp((x_i - target) @ alpha)``.

    ``alpha`` minimizes the convex ``Q(alpha) = sum_i w_i`` by damped Newton
    steps.  Raises ``NoOverlap`` when a target mean sits outside the range of
    the sample or ``alpha`` runs away.
    """
    x = np.asarray(s1_covariates, dtype=float)
    target = np.asarray(s2_target_means, dtype=float)
    if x.ndim != 2 or target.shape != (x.shape[1],):
        raise NoOverlap(f"target means {target.shape} do not match covariates {x.shape}")
    z = x - target
    if np.any(z.min(axis=0) >= 0.0) or np.any(z.max(axis=0) <= 0.0):
        raise NoOverlap("target means lie outside the sample range of the covariates")

    def log_q(a):
        lw = z @ a
        top = lw.max()
        return top + math.log(np.sum(np.exp(lw - top))), lw, top

    alpha = np.zeros(z.shape[1])
    lq, lw, top = log_q(alpha)
    for _ in range(max_iter):
        e = np.exp(lw - top)
        e_sum = e.sum()
        imbalance = z.T @ e / e_sum
        if np.max(np.abs(imbalance)) <= tol:
            break
        hessian = (z * e[:, None]).T @ z / e_sum
        try:
            step = -np.linalg.solve(hessian, imbalance)
        except np.linalg.LinAlgError as exc:
            raise NoOverlap("singular weighted covariance in MAIC Newton step") from exc
        for _ in range(60):
            new_lq, new_lw, new_top = log_q(alpha + step)
            if new_lq <= lq:
                break
            step = 0.5 * step
        else:
            break  # no descent left; rounding floor reached
        alpha = alpha + step
        lq, lw, top = new_lq, new_lw, new_top
        if np.linalg.norm(alpha) > alpha_limit:
            raise NoOverlap(f"MAIC coefficients diverged (|alpha| > {alpha_limit:g})")
    else:
        raise NoOverlap(f"MAIC weights did not converge in {max_iter} iterations")
    weights = np.exp(lw)
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
        raise NoOverlap("MAIC weights overflowed")
    e = np.exp(lw - top)
    if np.max(np.abs(z.T @ e / e.sum())) > 1e-6:
        raise NoOverlap("MAIC weights failed to balance the covariate means")
    ess = float(e.sum() ** 2 / np.sum(e**2))
    return WeightSet(alpha=alpha, weights=weights, ess=ess)


def maic_point(s1: TrialData, target_means, fit_settings: FitSettings = FitSettings()) -> float:
    ws = maic_weights(s1.covariates, target_means)
    result = linmod.fit(_two_group_design(s1, ws.weights), s1.family, fit_settings)
    return float(result.coefficients[1])


# --- parametric G-computation -------------------------------------------------


@dataclass(frozen=True)
class GcompResult:
    delta_hat: float
    mean_active: float
    mean_control: float
    fit: linmod.GlmFit


def outcome_design(covariates: np.ndarray, treatment, interactions: bool = False) -> np.ndarray:
    """Columns: intercept, treatment, covariates[, treatment x covariates]."""
    n = covariates.shape[0]
    t = np.broadcast_to(np.asarray(treatment, dtype=float), (n,))
    cols = [np.ones(n), t, covariates]
    if interactions:
        cols.append(covariates * t[:, None])
    return np.column_stack(cols)


def gcomp_point(
    s1: TrialData,
    s2_covariates: np.ndarray,
    interactions: bool = False,
    fit_settings: FitSettings = FitSettings(),
) -> GcompResult:
    """Fit the outcome model on S1, then standardize its predictions over S2."""
    design = DesignData(outcome_design(s1.covariates, s1.treatment, interactions), s1.outcome)
    model = linmod.fit(design, s1.family, fit_settings)
    m1 = float(np.mean(linmod.predict_mean(model, outcome_design(s2_covariates, 1.0, interactions))))
    m0 = float(np.mean(linmod.predict_mean(model, outcome_design(s2_covariates, 0.0, interactions))))
    if s1.family is Family.LOGISTIC:
        delta = (math.log(m1) - math.log1p(-m1)) - (math.log(m0) - math.log1p(-m0))
    else:
        delta = m1 - m0
    return GcompResult(delta, m1, m0, model)


# --- bootstrap ----------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    estimates: np.ndarray  # NaN marks a failed resample
    se: float
    failures: int
    valid: bool


def bootstrap_se(
    statistic: Callable[[TrialData], float],
    s1: TrialData,
    method: str,
    settings: EstimatorSettings,
) -> BootstrapResult:
    """Non-parametric bootstrap over S1 rows.

    Resample ``b`` draws its indices from a stream keyed by
    (seed, replicate, method, b).  Failed resamples are recorded as NaN,
    counted and excluded; the result is invalid when more than
    ``max_failure_fraction`` of them fail.
    """
    n_boot = settings.bootstrap
    estimates = np.full(n_boot, np.nan)
    for b in range(n_boot):
        rng = bootstrap_stream(settings.seed, settings.replicate, method, b)
        rows = rng.integers(0, s1.n, size=s1.n)
        try:
            estimates[b] = statistic(s1.take(rows))
        except (NumericalFailure, ValueError):
            pass
    ok = np.isfinite(estimates)
    failures = int(n_boot - ok.sum())
    se = float(np.std(estimates[ok], ddof=1)) if ok.sum() >= 2 else float("nan")
    valid = failures <= settings.max_failure_fraction * n_boot and math.isfinite(se)
    return BootstrapResult(estimates, se, failures, valid)


def maic_estimate(s1: TrialData, s2: TrialData, settings: EstimatorSettings = EstimatorSettings()) -> EffectEstimate:
    """MAIC A-vs-C effect in S2 with bootstrap SE (weights re-estimated per resample)."""
    target = s2.covariates.mean(axis=0)
    delta = maic_point(s1, target, settings.fit)
    boot = bootstrap_se(lambda d: maic_point(d, target, settings.fit), s1, "maic", settings)
    return wald("maic", delta, boot.se, boot.failures, boot.valid)


def gcomp_estimate(
    s1: TrialData,
    s2: TrialData,
    settings: EstimatorSettings = EstimatorSettings(),
    interactions: bool = False,
) -> EffectEstimate:
    """G-computation A-vs-C effect in S2; S2 covariates stay fixed in the bootstrap."""
    delta = gcomp_point(s1, s2.covariates, interactions, settings.fit).delta_hat
    boot = bootstrap_se(
        lambda d: gcomp_point(d, s2.covariates, interactions, settings.fit).delta_hat,
        s1,
        "gcomp",
        settings,
    )
    return wald("gcomp", delta, boot.se, boot.failures, boot.valid)
