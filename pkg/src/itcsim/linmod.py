"""Weighted generalized linear models (logit and identity links).

Fitting works on a rescaled problem: every column is divided by its
Euclidean norm and the weights are divided by their mean.  Neither change
moves the maximizer, but both make the convergence test comparable across
designs and invariant to the overall weight scale.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .exceptions import ConfigError, DimensionMismatch, NonConvergence, SingularDesign


class Family(str, enum.Enum):
    LOGISTIC = "logistic"
    LINEAR = "linear"


@dataclass(frozen=True)
class FitSettings:
    gradient_tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 10
    pivot_tol: float = 1e-12


DEFAULT_SETTINGS = FitSettings()


@dataclass
class DesignData:
    """Regressors, response and optional non-negative case weights."""

    features: np.ndarray
    response: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.response = np.asarray(self.response, dtype=float)
        if self.features.ndim != 2:
            raise DimensionMismatch("features must be a 2-D matrix")
        n = self.features.shape[0]
        if self.response.shape != (n,):
            raise DimensionMismatch(
                f"response has shape {self.response.shape}, expected ({n},)"
            )
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (n,):
                raise DimensionMismatch(
                    f"weights have shape {self.weights.shape}, expected ({n},)"
                )
            if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
                raise ConfigError("weights must be finite and non-negative")
            if np.count_nonzero(self.weights > 0) < 2:
                raise ConfigError("at least two rows need a positive weight")
        elif n < 2:
            raise ConfigError("at least two rows are required")
        if not np.all(np.isfinite(self.features)) or not np.all(np.isfinite(self.response)):
            raise ConfigError("features and response must be finite")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def case_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.n_rows)
        return self.weights

    def check_binary(self):
        if not np.all((self.response == 0.0) | (self.response == 1.0)):
            raise ConfigError("logistic family needs a 0/1 response")


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    family: Family
    converged: bool
    iterations: int
    final_gradient_norm: float
    log_likelihood: float
    settings: FitSettings = field(default=DEFAULT_SETTINGS, repr=False)


def log_likelihood(coefficients, data: DesignData, family: Family | str) -> float:
    """Weighted log-likelihood at ``coefficients``.

    The linear family uses the profile Gaussian likelihood, with the
    variance replaced by its weighted maximum-likelihood estimate.
    """
    family = Family(family)
    eta = data.features @ np.asarray(coefficients, dtype=float)
    w = data.case_weights()
    if family is Family.LOGISTIC:
        return float(np.sum(w * (data.response * eta - np.logaddexp(0.0, eta))))
    resid = data.response - eta
    total = w.sum()
    sigma2 = float(np.sum(w * resid**2) / total)
    if sigma2 == 0.0:
        return float("inf")
    return float(-0.5 * total * (np.log(2.0 * np.pi * sigma2) + 1.0))


def score(coefficients, data: DesignData, family: Family | str) -> np.ndarray:
    """Gradient of the weighted log-likelihood.

    For the linear family this is the gradient of ``-0.5 * sum w r**2``,
    i.e. the weighted normal equations residual ``X' W (y - X b)``.
    """
    family = Family(family)
    eta = data.features @ np.asarray(coefficients, dtype=float)
    mu = expit(eta) if family is Family.LOGISTIC else eta
    return data.features.T @ (data.case_weights() * (data.response - mu))


def _cholesky_solve(hessian: np.ndarray, rhs: np.ndarray, pivot_tol: float) -> np.ndarray:
    try:
        chol = linalg.cholesky(hessian, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularDesign("normal-equations matrix is not positive definite") from exc
    pivots = np.diag(chol) ** 2
    if pivots.min() <= pivot_tol * max(1.0, float(np.max(np.diag(hessian)))):
        raise SingularDesign(
            f"normal-equations pivot {pivots.min():.3g} below tolerance {pivot_tol:g}"
        )
    return linalg.cho_solve((chol, True), rhs, check_finite=False)


def _scaled_problem(data: DesignData):
    x = data.features
    col_norm = np.sqrt(np.einsum("ij,ij->j", x, x))
    if np.any(col_norm == 0.0):
        raise SingularDesign("design has an all-zero column")
    w = data.case_weights()
    return x / col_norm, w / w.mean(), col_norm


# expit(36) rounds to 1.0 in double precision
_SEPARATION_ETA = 36.0


def _polish(xs, w, y, beta, grad_norm, pivot_tol):
    """One extra Newton step past the tolerance; kept only if the score shrinks."""
    mu = expit(xs @ beta)
    hessian = (xs * (w * mu * (1.0 - mu))[:, None]).T @ xs
    try:
        candidate = beta + _cholesky_solve(hessian, xs.T @ (w * (y - mu)), pivot_tol)
    except SingularDesign:
        return beta, grad_norm
    new_norm = float(np.max(np.abs(xs.T @ (w * (y - expit(xs @ candidate))))))
    if np.isfinite(new_norm) and new_norm <= grad_norm:
        return candidate, new_norm
    return beta, grad_norm


def fit_logistic(data: DesignData, settings: FitSettings = DEFAULT_SETTINGS) -> GlmFit:
    """Maximum-likelihood logistic regression by iteratively reweighted least squares.

    Each Newton step is halved (up to ``settings.max_halvings`` times) while
    it lowers the log-likelihood.  Raises ``NonConvergence`` when the
    iteration budget runs out, the iterates stop being finite, or some
    fitted probability is numerically 0 or 1.  Those are the ways
    (quasi-)separation shows up; huge drifting coefficients are never
    returned.
    """
    data.check_binary()
    xs, w, col_norm = _scaled_problem(data)
    y = data.response
    beta = np.zeros(xs.shape[1])

    def objective(b):
        eta = xs @ b
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta)))), eta

    ll, eta = objective(beta)
    for it in range(settings.max_iter + 1):
        mu = expit(eta)
        grad = xs.T @ (w * (y - mu))
        grad_norm = float(np.max(np.abs(grad)))
        if not np.isfinite(grad_norm):
            raise NonConvergence("non-finite score during IRLS")
        if grad_norm <= settings.gradient_tol:
            beta, grad_norm = _polish(xs, w, y, beta, grad_norm, settings.pivot_tol)
            if np.any(np.abs(xs @ beta)[w > 0] > _SEPARATION_ETA):
                raise NonConvergence(
                    "fitted probabilities numerically 0 or 1 (separation); no finite MLE"
                )
            coef = beta / col_norm
            return GlmFit(
                coefficients=coef,
                family=Family.LOGISTIC,
                converged=True,
                iterations=it,
                final_gradient_norm=grad_norm,
                log_likelihood=log_likelihood(coef, data, Family.LOGISTIC),
                settings=settings,
            )
        if it == settings.max_iter:
            break
        hessian = (xs * (w * mu * (1.0 - mu))[:, None]).T @ xs
        step = _cholesky_solve(hessian, grad, settings.pivot_tol)
        slack = 1e-12 * (1.0 + abs(ll))
        for _ in range(settings.max_halvings + 1):
            candidate = beta + step
            new_ll, new_eta = objective(candidate)
            if np.isfinite(new_ll) and new_ll >= ll - slack:
                break
            step = 0.5 * step
        else:
            raise NonConvergence("step-halving could not increase the log-likelihood")
        if not np.all(np.isfinite(candidate)):
            raise NonConvergence("non-finite coefficients during IRLS")
        beta, ll, eta = candidate, new_ll, new_eta
    raise NonConvergence(
        f"IRLS did not reach score tolerance {settings.gradient_tol:g} "
        f"in {settings.max_iter} iterations (possible separation)"
    )


def fit_linear(data: DesignData, settings: FitSettings = DEFAULT_SETTINGS) -> GlmFit:
    """Weighted least squares through a Cholesky-factored normal-equations system."""
    xs, w, col_norm = _scaled_problem(data)
    y = data.response
    hessian = (xs * w[:, None]).T @ xs
    beta = _cholesky_solve(hessian, xs.T @ (w * y), settings.pivot_tol)
    iterations = 1
    grad = xs.T @ (w * (y - xs @ beta))
    # iterative refinement; one or two passes reach rounding level
    while float(np.max(np.abs(grad))) > settings.gradient_tol and iterations < settings.max_iter:
        beta = beta + _cholesky_solve(hessian, grad, settings.pivot_tol)
        iterations += 1
        new_grad = xs.T @ (w * (y - xs @ beta))
        if np.max(np.abs(new_grad)) >= np.max(np.abs(grad)):
            grad = new_grad
            break
        grad = new_grad
    grad_norm = float(np.max(np.abs(grad)))
    coef = beta / col_norm
    return GlmFit(
        coefficients=coef,
        family=Family.LINEAR,
        converged=grad_norm <= settings.gradient_tol,
        iterations=iterations,
        final_gradient_norm=grad_norm,
        log_likelihood=log_likelihood(coef, data, Family.LINEAR),
        settings=settings,
    )


def fit(data: DesignData, family: Family | str, settings: FitSettings = DEFAULT_SETTINGS) -> GlmFit:
    if Family(family) is Family.LOGISTIC:
        return fit_logistic(data, settings)
    return fit_linear(data, settings)


def predict_mean(fit: GlmFit, features) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != fit.coefficients.shape[0]:
        raise DimensionMismatch(
            f"features with shape {features.shape} do not match "
            f"{fit.coefficients.shape[0]} coefficients"
        )
    eta = features @ fit.coefficients
    if fit.family is Family.LOGISTIC:
        return expit(eta)
    return eta
