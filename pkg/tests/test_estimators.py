import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize
from scipy.stats import norm

from itcsim import linmod
from itcsim.dgm import Study, TrialData, generate_trial, reference_config
from itcsim.estimators import (
    Z_975,
    EffectEstimate,
    EstimatorSettings,
    bootstrap_se,
    bucher_arm_estimate,
    bucher_estimate,
    gcomp_estimate,
    gcomp_point,
    indirect_comparison,
    maic_estimate,
    maic_point,
    maic_weights,
    wald,
)
from itcsim.exceptions import DegenerateArm, NoOverlap
from itcsim.linmod import DesignData, Family
from itcsim.streams import data_stream


def table_trial(a, b, c, d):
    """Trial whose 2x2 table is (a events, b non-events) treated, (c, d) control."""
    t = np.r_[np.ones(a + b), np.zeros(c + d)].astype(np.int8)
    y = np.r_[np.ones(a), np.zeros(b), np.ones(c), np.zeros(d)]
    return TrialData(Study.S1, np.zeros((t.size, 1)), t, y, Family.LOGISTIC)


@pytest.fixture(scope="module")
def reference_pair():
    cfg = reference_config()
    return (
        generate_trial(cfg, "S1", data_stream(1, 0, 0)),
        generate_trial(cfg, "S2", data_stream(1, 0, 1)),
    )


@pytest.fixture(scope="module")
def linear_pair():
    cfg = reference_config("linear")
    return (
        generate_trial(cfg, "S1", data_stream(1, 0, 0)),
        generate_trial(cfg, "S2", data_stream(1, 0, 1)),
    )


# --- MAIC weights ---------------------------------------------------------------


class TestMaicWeights:
    def test_already_balanced(self):
        x = np.random.default_rng(0).normal(size=(500, 3))
        ws = maic_weights(x, x.mean(axis=0))
        np.testing.assert_allclose(ws.alpha, 0.0, atol=1e-12)
        np.testing.assert_allclose(ws.weights, 1.0, atol=1e-12)
        assert ws.ess == pytest.approx(500.0)

    def test_one_dimensional_oracle(self):
        x = np.r_[-np.ones(50), np.ones(50)][:, None]
        objective = lambda a: np.sum(np.exp((x[:, 0] - 0.5) * a))
        grid = np.linspace(-3, 3, 60_001)
        coarse = grid[np.argmin([objective(a) for a in grid])]
        fine = optimize.minimize_scalar(objective, bracket=(coarse - 1e-3, coarse, coarse + 1e-3),
                                        method="golden", tol=1e-12).x
        ws = maic_weights(x, [0.5])
        assert ws.alpha[0] == pytest.approx(fine, abs=1e-6)
        assert ws.alpha[0] == pytest.approx(math.log(3) / 2, abs=1e-9)
        assert ws.weighted_means(x)[0] == pytest.approx(0.5, abs=1e-9)

    def test_reference_scenario_weight_concentration(self, reference_pair):
        s1, s2 = reference_pair
        ws = maic_weights(s1.covariates, s2.covariates.mean(axis=0))
        assert ws.ess < 0.35 * s1.n
        # frozen from seed 1 of this engine
        assert ws.ess == pytest.approx(97.1357941558895, rel=1e-6)
        np.testing.assert_allclose(ws.weighted_means(s1.covariates), s2.covariates.mean(axis=0), atol=1e-6)

    def test_no_overlap(self):
        x = np.random.default_rng(1).uniform(0, 1, size=(100, 2))
        with pytest.raises(NoOverlap):
            maic_weights(x, [0.5, 1.5])
        with pytest.raises(NoOverlap):
            maic_weights(x, [0.5])

    def test_convexity(self, reference_pair):
        s1, s2 = reference_pair
        target = s2.covariates.mean(axis=0)
        ws = maic_weights(s1.covariates, target)
        z = s1.covariates - target
        q = lambda a: np.sum(np.exp(z @ a))
        q0 = q(ws.alpha)
        rng = np.random.default_rng(5)
        for _ in range(50):
            d = rng.normal(size=3)
            assert q0 <= q(ws.alpha + 0.01 * d / np.linalg.norm(d))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.05, 0.95))
def test_maic_balance_property(seed, quantile):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(300, 2)) * rng.uniform(0.5, 2.0, size=2)
    target = np.quantile(x, quantile, axis=0) * 0.5 + x.mean(axis=0) * 0.5
    ws = maic_weights(x, target)
    assert np.all(ws.weights > 0) and np.all(np.isfinite(ws.weights))
    assert 1.0 <= ws.ess <= 300.0 + 1e-9
    np.testing.assert_allclose(ws.weighted_means(x), target, atol=1e-6)
    w = ws.weights
    assert ws.ess == pytest.approx(w.sum() ** 2 / np.sum(w**2), rel=1e-9)


# --- Bucher ---------------------------------------------------------------------


class TestBucher:
    def test_symmetric_table(self):
        delta, se = bucher_arm_estimate(table_trial(25, 25, 25, 25))
        assert delta == pytest.approx(0.0, abs=1e-15)
        assert se == pytest.approx(0.4, abs=1e-15)

    def test_hand_computed_table(self):
        delta, se = bucher_arm_estimate(table_trial(60, 40, 40, 60))
        assert delta == pytest.approx(2 * math.log(1.5), abs=1e-12)
        assert delta == pytest.approx(0.8109, abs=1e-4)
        assert se == pytest.approx(math.sqrt(2 / 60 + 2 / 40), abs=1e-12)
        assert se == pytest.approx(0.2887, abs=1e-4)

    def test_matches_two_group_fit(self, reference_pair):
        for trial in reference_pair:
            delta, _ = bucher_arm_estimate(trial)
            x = np.column_stack([np.ones(trial.n), trial.treatment])
            fit = linmod.fit_logistic(DesignData(x, trial.outcome))
            assert delta == pytest.approx(fit.coefficients[1], abs=1e-8)

    def test_empty_cell(self):
        with pytest.raises(DegenerateArm):
            bucher_arm_estimate(table_trial(0, 50, 10, 40))

    def test_linear_family(self, linear_pair):
        trial = linear_pair[0]
        delta, se = bucher_arm_estimate(trial)
        x = np.column_stack([np.ones(trial.n), trial.treatment])
        fit = linmod.fit_linear(DesignData(x, trial.outcome))
        resid = trial.outcome - x @ fit.coefficients
        s2 = resid @ resid / (trial.n - 2)
        ols_se = math.sqrt(s2 * np.linalg.inv(x.T @ x)[1, 1])
        assert delta == pytest.approx(fit.coefficients[1], abs=1e-10)
        assert se == pytest.approx(ols_se, rel=1e-10)

    def test_locality(self, reference_pair):
        s1, s2 = reference_pair
        before = repr(bucher_estimate(s1))
        shifted = TrialData(Study.S2, s2.covariates + 3.0, s2.treatment, 1.0 - s2.outcome, s2.family)
        maic_point(s1, shifted.covariates.mean(axis=0) * 0.1)
        assert repr(bucher_estimate(s1)) == before


# --- combination ----------------------------------------------------------------


class TestIndirectComparison:
    def test_z_quantile(self):
        assert Z_975 == pytest.approx(norm.ppf(0.975), abs=1e-12)

    def test_cancellation(self):
        r = indirect_comparison(wald("x", 0.9, 0.1), wald("bc", 0.9, 0.1))
        assert r.delta_hat == 0.0
        assert r.se == pytest.approx(math.sqrt(0.02))
        assert r.ci_low == pytest.approx(-0.277, abs=1e-3)
        assert r.ci_high == pytest.approx(0.277, abs=1e-3)

    def test_structural_bias_example(self):
        r = indirect_comparison(wald("bucher", 0.693, 0.05), wald("bc", 0.900, 0.05))
        assert r.delta_hat == pytest.approx(-0.207, abs=1e-12)
        assert r.method == "bucher"

    def test_antisymmetry(self):
        a, b = wald("m", 0.4, 0.2), wald("m", -0.3, 0.05)
        ab, ba = indirect_comparison(a, b), indirect_comparison(b, a)
        assert ab.delta_hat == -ba.delta_hat
        assert ab.se == ba.se

    def test_ci_contains_point(self):
        e = wald("m", 1.3, 0.25)
        assert e.ci_low <= e.delta_hat <= e.ci_high
        assert e.ci_high - e.delta_hat == pytest.approx(Z_975 * 0.25)


# --- G-computation ----------------------------------------------------------------


def test_gcomp_small_sample_oracle():
    t = np.array([1, 1, 1, 0, 0, 0, 1, 0], dtype=np.int8)
    x = np.array([[0.0], [0.0], [1.0], [1.0], [0.0], [1.0], [1.0], [0.0]])
    y = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    s1 = TrialData(Study.S1, x, t, y, Family.LOGISTIC)
    s2x = np.array([[1.0], [0.0], [1.0], [1.0], [0.0], [1.0]])
    res = gcomp_point(s1, s2x)
    b0, bt, bx = res.fit.coefficients
    by_hand = {}
    for arm in (0, 1):
        total = 0.0
        for (xi,) in s2x:
            total += 1.0 / (1.0 + math.exp(-(b0 + bt * arm + bx * xi)))
        by_hand[arm] = total / len(s2x)
    assert res.mean_active == pytest.approx(by_hand[1], abs=1e-10)
    assert res.mean_control == pytest.approx(by_hand[0], abs=1e-10)
    lo = lambda p: math.log(p / (1 - p))
    assert res.delta_hat == pytest.approx(lo(by_hand[1]) - lo(by_hand[0]), abs=1e-10)


def test_gcomp_noncollapsible_on_reference_data(reference_pair):
    s1, s2 = reference_pair
    res = gcomp_point(s1, s2.covariates)
    beta_t = res.fit.coefficients[1]
    assert abs(res.delta_hat) < abs(beta_t)


@pytest.mark.parametrize("seed", range(5))
def test_gcomp_linear_identity(seed):
    rng = np.random.default_rng(seed)
    cfg = reference_config("linear", n_per_study=500).replace(
        covariates=[{"mean_s1": rng.normal(), "mean_s2": rng.normal(0, 3), "sd": rng.uniform(0.5, 2)}] * 3,
        beta_t=rng.normal(),
    )
    s1 = generate_trial(cfg, "S1", data_stream(seed, 0, 0))
    s2 = generate_trial(cfg, "S2", data_stream(seed, 0, 1))
    res = gcomp_point(s1, s2.covariates)
    assert abs(res.delta_hat - res.fit.coefficients[1]) <= 1e-10


def test_gcomp_with_interactions_targets_s2():
    cfg = reference_config("linear").replace(beta_interaction=[0.5, 0.0, 0.0])
    s1 = generate_trial(cfg, "S1", data_stream(3, 0, 0))
    s2 = generate_trial(cfg, "S2", data_stream(3, 0, 1))
    res = gcomp_point(s1, s2.covariates, interactions=True)
    # marginal mean difference in S2 shifts by 0.5 * mean(X1) = -0.7
    assert res.delta_hat == pytest.approx(1.0486 - 0.7, abs=0.1)


# --- bootstrap ----------------------------------------------------------------------


class TestBootstrap:
    def test_deterministic(self, reference_pair):
        s1, s2 = reference_pair
        st_ = EstimatorSettings(bootstrap=20, seed=4, replicate=2)
        a = maic_estimate(s1, s2, st_)
        b = maic_estimate(s1, s2, st_)
        assert repr(a) == repr(b)
        c = gcomp_estimate(s1, s2, st_)
        d = gcomp_estimate(s1, s2, st_)
        assert repr(c) == repr(d)
        other = maic_estimate(s1, s2, EstimatorSettings(bootstrap=20, seed=4, replicate=3))
        assert other.se != a.se
        assert other.delta_hat == a.delta_hat

    def test_se_is_sample_sd(self, reference_pair):
        s1, s2 = reference_pair
        target = s2.covariates.mean(axis=0)
        st_ = EstimatorSettings(bootstrap=15, seed=1)
        boot = bootstrap_se(lambda d: maic_point(d, target), s1, "maic", st_)
        assert boot.se == pytest.approx(np.std(boot.estimates, ddof=1), rel=1e-12)
        assert boot.failures == 0 and boot.valid

    def test_failures_dropped_and_counted(self, reference_pair):
        s1, _ = reference_pair

        def flaky(d):
            if d.covariates[0, 0] > 0.8:  # first resampled row decides
                raise NoOverlap("synthetic")
            return float(d.outcome.mean())

        boot = bootstrap_se(flaky, s1, "gcomp", EstimatorSettings(bootstrap=60, seed=2))
        assert 0 < boot.failures < 60
        assert np.isnan(boot.estimates).sum() == boot.failures
        ok = boot.estimates[np.isfinite(boot.estimates)]
        assert boot.se == pytest.approx(np.std(ok, ddof=1))
        assert boot.valid is (boot.failures <= 3)
        assert not boot.valid

    def test_all_estimates_distinct_methods_streams(self, reference_pair):
        s1, _ = reference_pair
        st_ = EstimatorSettings(bootstrap=5, seed=1)
        a = bootstrap_se(lambda d: float(d.outcome.mean()), s1, "maic", st_)
        b = bootstrap_se(lambda d: float(d.outcome.mean()), s1, "gcomp", st_)
        assert not np.array_equal(a.estimates, b.estimates)


def test_maic_estimate_linear(linear_pair):
    s1, s2 = linear_pair
    est = maic_estimate(s1, s2, EstimatorSettings(bootstrap=10, seed=1))
    assert isinstance(est, EffectEstimate) and est.valid
    assert est.ci_low < est.delta_hat < est.ci_high
