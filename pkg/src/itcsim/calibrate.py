"""True marginal effects by Monte Carlo integration over the covariates.

All quantities for a given study are computed from one covariate sample
(common random numbers), so both arms and every candidate treatment
coefficient see the same draws.  That makes the implied marginal odds
ratio a deterministic, strictly increasing function of the treatment
coefficient, which is what the root-finder relies on.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit

from .dgm import ScenarioConfig, Study
from .exceptions import BracketFailure, ConfigError, FamilyMismatch, NonConvergence
from .linmod import Family

DEFAULT_DRAWS = 1_000_000
MIN_DRAWS = 10_000
BRACKET = (-20.0, 20.0)


@dataclass(frozen=True)
class MarginalTruth:
    p_active: float
    p_control: float
    marginal_log_or: float
    mc_draws: int
    mc_se: float

    @property
    def effect(self) -> float:
        return self.marginal_log_or

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MarginalMeanTruth:
    """Linear-family analogue; exact, so there is no Monte Carlo error."""

    mu_active: float
    mu_control: float
    mean_difference: float
    mc_draws: int = 0
    mc_se: float = 0.0

    @property
    def effect(self) -> float:
        return self.mean_difference

    def to_dict(self) -> dict:
        return asdict(self)


def log_odds(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def log_odds_ratio(p_active: float, p_control: float) -> float:
    return log_odds(p_active) - log_odds(p_control)


class CovariateSample:
    """A fixed Monte Carlo sample of one study's covariate distribution."""

    def __init__(self, config: ScenarioConfig, study: Study | str, draws: int, rng: np.random.Generator):
        if draws < MIN_DRAWS:
            raise ConfigError(f"need at least {MIN_DRAWS} draws, got {draws}")
        study = Study(study)
        self.config = config
        self.draws = int(draws)
        x = config.means(study) + config.sds() * rng.standard_normal((self.draws, config.n_covariates))
        self.baseline = config.beta0 + x @ np.asarray(config.beta_cov)
        self.modifier = x @ np.asarray(config.beta_interaction)

    def _eta(self, treated: bool, beta_t: float) -> np.ndarray:
        if not treated:
            return self.baseline
        return self.baseline + self.modifier + beta_t

    def probability(self, treated: bool, beta_t: float | None = None) -> float:
        bt = self.config.beta_t if beta_t is None else beta_t
        return float(np.mean(expit(self._eta(treated, bt))))

    def log_odds(self, treated: bool, beta_t: float | None = None) -> float:
        # mean(expit(-eta)) keeps 1 - p accurate when p is close to one
        bt = self.config.beta_t if beta_t is None else beta_t
        eta = self._eta(treated, bt)
        return float(np.log(np.mean(expit(eta))) - np.log(np.mean(expit(-eta))))

    def marginal_log_or(self, beta_t: float | None = None) -> float:
        return self.log_odds(True, beta_t) - self.log_odds(False, beta_t)


def analytic_marginal_mean(config: ScenarioConfig, study: Study | str, treated: bool) -> float:
    if config.family is not Family.LINEAR:
        raise FamilyMismatch("closed-form marginal mean only exists for the linear family")
    m = config.means(Study(study))
    mean = config.beta0 + float(m @ np.asarray(config.beta_cov))
    if treated:
        mean += config.beta_t + float(m @ np.asarray(config.beta_interaction))
    return mean


def marginal_probability(
    config: ScenarioConfig,
    study: Study | str,
    treatment_on: bool,
    draws: int = DEFAULT_DRAWS,
    rng: np.random.Generator | None = None,
    analytic: bool = False,
) -> float:
    """Marginal mean outcome under one arm.

    Logistic family: Monte Carlo average of subject-level probabilities.
    Linear family: the exact mean of the linear predictor, no simulation.
    """
    if analytic or config.family is Family.LINEAR:
        return analytic_marginal_mean(config, study, treatment_on)
    if rng is None:
        rng = np.random.default_rng()
    return CovariateSample(config, study, draws, rng).probability(treatment_on)


def _truth_from_sample(sample: CovariateSample, beta_t: float | None = None) -> MarginalTruth:
    p1 = sample.probability(True, beta_t)
    p0 = sample.probability(False, beta_t)
    n = sample.draws
    mc_se = math.sqrt(1.0 / (n * p1 * (1.0 - p1)) + 1.0 / (n * p0 * (1.0 - p0)))
    return MarginalTruth(
        p_active=p1,
        p_control=p0,
        marginal_log_or=sample.marginal_log_or(beta_t),
        mc_draws=n,
        mc_se=mc_se,
    )


def true_marginal_log_or(
    config: ScenarioConfig,
    study: Study | str,
    draws: int = DEFAULT_DRAWS,
    rng: np.random.Generator | None = None,
) -> MarginalTruth | MarginalMeanTruth:
    """True marginal active-vs-common contrast in ``study``.

    ``mc_se`` uses binomial-style variances per arm and ignores the positive
    correlation induced by shared draws, so it overstates the noise.
    """
    if config.family is Family.LINEAR:
        mu1 = analytic_marginal_mean(config, study, True)
        mu0 = analytic_marginal_mean(config, study, False)
        # the intercept and prognostic terms cancel; take the difference in closed form
        shift = config.means(Study(study)) @ np.asarray(config.beta_interaction)
        return MarginalMeanTruth(mu1, mu0, config.beta_t + float(shift))
    if rng is None:
        rng = np.random.default_rng()
    return _truth_from_sample(CovariateSample(config, study, draws, rng))


def solve_treatment_coefficient(
    config: ScenarioConfig,
    study: Study | str,
    target_marginal_or: float,
    draws: int = DEFAULT_DRAWS,
    tolerance: float = 1e-4,
    rng: np.random.Generator | None = None,
    max_iter: int = 200,
) -> float:
    """Treatment coefficient whose marginal odds ratio in ``study`` hits the target.

    The ``beta_t`` already in ``config`` is ignored.  The search runs over
    ``BRACKET`` and stops once the log marginal odds ratio is within
    ``tolerance`` of the log target.
    """
    if config.family is not Family.LOGISTIC:
        raise FamilyMismatch("calibration by root-finding applies to the logistic family")
    if not target_marginal_or > 0 or not math.isfinite(target_marginal_or):
        raise ConfigError("target marginal odds ratio must be positive and finite")
    if rng is None:
        rng = np.random.default_rng()
    sample = CovariateSample(config, study, draws, rng)
    log_target = math.log(target_marginal_or)

    def gap(beta_t: float) -> float:
        return sample.marginal_log_or(beta_t) - log_target

    lo, hi = BRACKET
    g_lo, g_hi = gap(lo), gap(hi)
    if abs(g_lo) <= tolerance:
        return lo
    if abs(g_hi) <= tolerance:
        return hi
    if not (g_lo < 0.0 < g_hi):
        raise BracketFailure(
            f"target odds ratio {target_marginal_or:g} is not reachable for "
            f"treatment coefficients in [{lo:g}, {hi:g}]"
        )
    try:
        root, info = optimize.brentq(gap, lo, hi, xtol=1e-12, maxiter=max_iter, full_output=True, disp=False)
    except RuntimeError as exc:  # pragma: no cover - brentq raises only on bad brackets here
        raise NonConvergence(str(exc)) from exc
    if not info.converged or abs(gap(root)) > tolerance:
        raise NonConvergence(
            f"root search stopped after {info.iterations} iterations with gap {gap(root):.3g}"
        )
    return float(root)
