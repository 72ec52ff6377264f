"""Two-trial data-generating mechanisms.

Study S1 randomizes active treatment A against common comparator C, study
S2 randomizes B against C.  Both share the outcome model; only the
covariate means differ between studies.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError
from .linmod import Family


class Study(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"

    @property
    def index(self) -> int:
        return 0 if self is Study.S1 else 1


@dataclass(frozen=True)
class CovariateSpec:
    mean_s1: float
    mean_s2: float
    sd: float = 1.0

    def mean(self, study: Study) -> float:
        return self.mean_s1 if Study(study) is Study.S1 else self.mean_s2


@dataclass(frozen=True)
class ScenarioConfig:
    family: Family
    covariates: tuple[CovariateSpec, ...]
    beta0: float
    beta_cov: tuple[float, ...]
    beta_t: float
    beta_interaction: tuple[float, ...] | None = None
    n_per_study: int = 10_000
    allocation_ratio: float = 0.5
    error_sd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        covs = tuple(
            c if isinstance(c, CovariateSpec) else CovariateSpec(**c) for c in self.covariates
        )
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "beta_cov", tuple(float(b) for b in self.beta_cov))
        inter = self.beta_interaction
        if inter is None:
            inter = (0.0,) * len(covs)
        object.__setattr__(self, "beta_interaction", tuple(float(b) for b in inter))
        self.validate()

    def validate(self):
        k = len(self.covariates)
        if k == 0:
            raise ConfigError("at least one covariate is required")
        if len(self.beta_cov) != k:
            raise ConfigError(f"beta_cov has {len(self.beta_cov)} entries for {k} covariates")
        if len(self.beta_interaction) != k:
            raise ConfigError(
                f"beta_interaction has {len(self.beta_interaction)} entries for {k} covariates"
            )
        if any(not (c.sd > 0 and math.isfinite(c.sd)) for c in self.covariates):
            raise ConfigError("covariate sds must be strictly positive")
        if not (self.error_sd > 0 and math.isfinite(self.error_sd)):
            raise ConfigError("error_sd must be strictly positive")
        if not (0.0 < self.allocation_ratio < 1.0):
            raise ConfigError("allocation_ratio must lie in (0, 1)")
        if int(self.n_per_study) != self.n_per_study or self.n_per_study < 4:
            raise ConfigError("n_per_study must be an integer >= 4")
        values = [self.beta0, self.beta_t, self.error_sd, *self.beta_cov, *self.beta_interaction]
        values += [v for c in self.covariates for v in (c.mean_s1, c.mean_s2)]
        if not all(math.isfinite(float(v)) for v in values):
            raise ConfigError("all numeric fields must be finite")

    @property
    def n_covariates(self) -> int:
        return len(self.covariates)

    @property
    def has_interaction(self) -> bool:
        return any(b != 0.0 for b in self.beta_interaction)

    @property
    def n_treated(self) -> int:
        return int(math.floor(self.allocation_ratio * self.n_per_study + 0.5))

    def means(self, study: Study) -> np.ndarray:
        return np.array([c.mean(study) for c in self.covariates])

    def sds(self) -> np.ndarray:
        return np.array([c.sd for c in self.covariates])

    def linear_predictor(self, covariates: np.ndarray, treatment) -> np.ndarray:
        """Outcome-model linear predictor for a covariate matrix and 0/1 treatment."""
        t = np.asarray(treatment, dtype=float)
        slope = self.beta_t + covariates @ np.asarray(self.beta_interaction)
        return self.beta0 + covariates @ np.asarray(self.beta_cov) + slope * t

    def replace(self, **changes) -> "ScenarioConfig":
        data = self.to_dict()
        data.update(changes)
        return ScenarioConfig.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "n_per_study": int(self.n_per_study),
            "allocation_ratio": self.allocation_ratio,
            "covariates": [asdict(c) for c in self.covariates],
            "beta0": self.beta0,
            "beta_cov": list(self.beta_cov),
            "beta_t": self.beta_t,
            "beta_interaction": list(self.beta_interaction),
            "error_sd": self.error_sd,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {
            "family", "n_per_study", "allocation_ratio", "covariates", "beta0",
            "beta_cov", "beta_t", "beta_interaction", "error_sd",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        missing = {"family", "covariates", "beta0", "beta_cov", "beta_t"} - set(data)
        if missing:
            raise ConfigError(f"missing scenario fields: {sorted(missing)}")
        try:
            return cls(
                family=Family(data["family"]),
                covariates=tuple(CovariateSpec(**c) for c in data["covariates"]),
                beta0=float(data["beta0"]),
                beta_cov=tuple(data["beta_cov"]),
                beta_t=float(data["beta_t"]),
                beta_interaction=(
                    None if data.get("beta_interaction") is None else tuple(data["beta_interaction"])
                ),
                n_per_study=int(data.get("n_per_study", 10_000)),
                allocation_ratio=float(data.get("allocation_ratio", 0.5)),
                error_sd=float(data.get("error_sd", 1.0)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if "scenario" in raw:
            raw = raw["scenario"]
        return cls.from_dict(raw)


def reference_config(family: Family | str = Family.LOGISTIC, n_per_study: int = 10_000) -> ScenarioConfig:
    """Three N(0,1) covariates in S1, N(-1.4,1) in S2, unit main effects."""
    return ScenarioConfig(
        family=Family(family),
        covariates=tuple(CovariateSpec(0.0, -1.4, 1.0) for _ in range(3)),
        beta0=-1.0,
        beta_cov=(1.0, 1.0, 1.0),
        beta_t=1.0486,
        n_per_study=n_per_study,
    )


@dataclass
class TrialData:
    study: Study
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    family: Family = field(default=Family.LOGISTIC)

    @property
    def n(self) -> int:
        return self.treatment.shape[0]

    def take(self, rows: np.ndarray) -> "TrialData":
        return TrialData(
            self.study, self.covariates[rows], self.treatment[rows], self.outcome[rows], self.family
        )


def generate_trial(config: ScenarioConfig, study: Study | str, rng: np.random.Generator) -> TrialData:
    """Simulate one two-arm trial.

    Draw order is fixed (covariates, allocation shuffle, outcomes), so the
    same config, study and generator state always give the same data.
    """
    study = Study(study)
    n, k = int(config.n_per_study), config.n_covariates
    x = config.means(study) + config.sds() * rng.standard_normal((n, k))
    treatment = np.zeros(n, dtype=np.int8)
    treatment[: config.n_treated] = 1
    rng.shuffle(treatment)
    eta = config.linear_predictor(x, treatment)
    if config.family is Family.LOGISTIC:
        outcome = (rng.random(n) < expit(eta)).astype(float)
    else:
        outcome = eta + config.error_sd * rng.standard_normal(n)
    return TrialData(study, x, treatment, outcome, config.family)
