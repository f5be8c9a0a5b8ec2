from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from effectcurve.data import NodeSpec, apply_policy, fold_split, to_long, validate_wide
from effectcurve.estimators import (
    _outcome_step,
    benchmark_sdr,
    estimate,
    pseudo_outcome,
    pseudo_step,
    sequential_gcomp,
    smoothed_gcomp,
    smoothed_sdr,
)
from effectcurve.learners import Learner
from effectcurve.nuisance import OracleNuisance, OverlapError
from effectcurve.policy import identity, static
from effectcurve.simulation import DGPConfig, default_policy, dgp1, study1_exact_truth
from helpers import two_period
from oracles import pseudo_outcome_symbolic

MEAN = Learner("mean")
GLM = Learner("glm")
CELL = Learner("cellmean")


def binary_two_level(n, seed):
    """Binary treatment and covariate over two times, every cell populated."""
    rng = np.random.default_rng(seed)
    L1 = (rng.random(n) < 0.5).astype(float)
    A1 = (rng.random(n) < 0.3 + 0.4 * L1).astype(float)
    L2 = (rng.random(n) < 0.2 + 0.3 * A1 + 0.3 * L1).astype(float)
    A2 = (rng.random(n) < 0.25 + 0.5 * L2).astype(float)
    Y2 = (rng.random(n) < expit(-1 + A1 + L1)).astype(float)
    Y3 = (rng.random(n) < expit(-1 + 0.5 * A1 + A2 - L2)).astype(float)
    df = pd.DataFrame({"L1": L1, "A1": A1, "L2": L2, "A2": A2, "Y2": Y2, "Y3": Y3})
    spec = NodeSpec.from_config({"tau": 2, "treatment": "A{t}", "outcome": "Y{t}",
                                 "covariates": {"L": "L{t}"}, "time_labels": [1, 2, 3],
                                 "k": 0, "support": [0, 1]})
    return df, validate_wide(df, spec)


def cell_oracle_static_one(df):
    """g-formula under ``A_t := 1`` by explicit conditional means (k = 0)."""
    q2 = df.groupby(["A1", "L1"])["Y2"].mean()
    theta2 = np.mean([q2[(1.0, l)] for l in df["L1"]])
    q3_2 = df.groupby(["A2", "L2"])["Y3"].mean()
    inner = df["L2"].map(lambda l: q3_2[(1.0, l)])
    q3_1 = inner.groupby([df["A1"], df["L1"]]).mean()
    theta3 = np.mean([q3_1[(1.0, l)] for l in df["L1"]])
    return np.array([theta2, theta3])


@pytest.fixture(scope="module")
def study1_small():
    return dgp1(DGPConfig(1, 400, 0.5, seed=21))


class TestGcomp:
    def test_intercept_only_gives_sample_means(self):
        _, ds = binary_two_level(500, 0)
        est = sequential_gcomp(ds, identity(), learner=MEAN)
        np.testing.assert_allclose(est.theta, ds.outcome_means(), atol=1e-12)
        # pooling over time makes an intercept-only fit the grand mean
        est = smoothed_gcomp(ds, identity(), learner=MEAN)
        np.testing.assert_allclose(est.theta, np.nanmean(ds.Y), atol=1e-12)

    def test_single_time_algorithms_agree(self):
        df, _ = binary_two_level(800, 1)
        spec = NodeSpec(treatment=("A1",), outcome=("Y2",), covariates=(("L", ("L1",)),), k=0)
        ds = validate_wide(df, spec)
        a = sequential_gcomp(ds, static(1), learner=GLM)
        b = smoothed_gcomp(ds, static(1), learner=GLM)
        assert a.outcome_fits == b.outcome_fits == 1
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-8)

    @pytest.mark.parametrize("policy", [identity(), static(1)])
    def test_saturated_learner_matches_closed_form(self, policy):
        df, ds = binary_two_level(3000, 2)
        a = sequential_gcomp(ds, policy, learner=CELL)
        b = smoothed_gcomp(ds, policy, learner=CELL)
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-6)
        if policy.kind == "identity":
            np.testing.assert_allclose(a.theta, ds.outcome_means(), atol=1e-12)
        else:
            np.testing.assert_allclose(a.theta, cell_oracle_static_one(df), atol=1e-10)

    def test_fit_counts(self, study1_small):
        pol = default_policy(1)
        assert sequential_gcomp(study1_small, pol, learner=GLM).outcome_fits == 10
        assert smoothed_gcomp(study1_small, pol, learner=GLM).outcome_fits == 4

    def test_empty_subset(self):
        df, _ = binary_two_level(100, 3)
        spec = NodeSpec(treatment=("A1", "A2"), outcome=("Y2", "Y3"),
                        measurement=("R1", "R2"), k=0)
        df["R1"], df["R2"] = 1.0, 0.0
        df["Y3"] = np.nan
        ds = validate_wide(df, spec)
        with pytest.raises(ValueError, match="empty regression subset"):
            sequential_gcomp(ds, identity(), learner=GLM)

    def test_study1_accuracy(self):
        ds = dgp1(DGPConfig(1, 5000, 0.0, seed=22))
        est = sequential_gcomp(ds, default_policy(1))
        truth = study1_exact_truth(default_policy(1))
        assert np.max(np.abs(est.theta - truth)) <= 0.02


class TestPseudoOutcome:
    @staticmethod
    def random_grid(rng, rows, t):
        return (rng.uniform(0, 3, (rows, t)), rng.normal(size=(rows, t)),
                rng.normal(size=(rows, t)), rng.normal(size=rows))

    def test_telescoping_with_unit_weights(self):
        rng = np.random.default_rng(0)
        for t in (1, 2, 4):
            _, m_obs, m_shift, y = self.random_grid(rng, 50, t)
            phi = pseudo_outcome(np.ones((50, t)), np.ones((50, t)), m_shift, m_shift, y)
            # with w = 1 the sum telescopes whenever m is evaluated at the same points
            np.testing.assert_allclose(phi, np.repeat(y[:, None], t, axis=1), atol=1e-12)

    def test_zero_weights_return_shifted_prediction(self):
        rng = np.random.default_rng(1)
        _, m_obs, m_shift, y = self.random_grid(rng, 20, 3)
        phi = pseudo_outcome(np.zeros((20, 3)), np.ones((20, 3)), m_obs, m_shift, y)
        np.testing.assert_array_equal(phi, m_shift)

    def test_matches_symbolic_expansion(self):
        w, n_next = [1.7, 0.4], [1.0, 1.0]
        m_obs, m_shift, y = [0.3, 0.55], [0.35, 0.6], 1.0
        expected = pseudo_outcome_symbolic(w, n_next, m_obs, m_shift, y)
        # hand expansion at s = 1
        hand = 0.35 + 1.7 * (0.6 - 0.3) + 1.7 * 0.4 * (1.0 - 0.55)
        assert expected[0] == pytest.approx(hand)
        got = pseudo_outcome(np.array([w]), np.array([n_next]), np.array([m_obs]),
                             np.array([m_shift]), np.array([y]))
        np.testing.assert_allclose(got[0], expected, atol=1e-14)

    def test_random_instances_match_symbolic(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            t = int(rng.integers(1, 5))
            w, m_obs, m_shift, y = self.random_grid(rng, 1, t)
            n_next = (rng.random((1, t)) < 0.8).astype(float)
            ref = pseudo_outcome_symbolic(w[0], n_next[0], m_obs[0], m_shift[0], y[0])
            np.testing.assert_allclose(pseudo_outcome(w, n_next, m_obs, m_shift, y)[0], ref,
                                       atol=1e-12)

    def test_recursion_equals_explicit_sum(self):
        rng = np.random.default_rng(3)
        t = 4
        w, m_obs, m_shift, y = self.random_grid(rng, 40, t)
        w[rng.random(w.shape) < 0.2] = 0.0
        # survival convention: once N drops to 0 it stays 0, and every later
        # regression and the outcome are 0 for that row
        n_next = np.cumprod(rng.random((40, t)) < 0.85, axis=1).astype(float)
        gone = np.column_stack([np.zeros(40, bool), n_next[:, :-1] == 0])
        m_obs[gone] = 0.0
        m_shift[gone] = 0.0
        y[n_next[:, -1] == 0] = 0.0
        explicit = pseudo_outcome(w, n_next, m_obs, m_shift, y)
        phi = pseudo_step(w[:, -1], n_next[:, -1] * y, m_obs[:, -1], m_shift[:, -1])
        rec = [phi]
        for s in range(t - 2, -1, -1):
            phi = pseudo_step(w[:, s], n_next[:, s] * phi, m_obs[:, s], m_shift[:, s])
            rec.insert(0, phi)
        np.testing.assert_allclose(np.column_stack(rec), explicit, atol=1e-12)

    def test_zero_weight_ignores_missing_target(self):
        out = pseudo_step(np.array([0.0]), np.array([np.nan]), np.array([0.2]), np.array([0.4]))
        assert out[0] == pytest.approx(0.4)


class TestSDR:
    def test_unit_weights_give_sample_means(self):
        _, ds = binary_two_level(600, 4)
        est = smoothed_sdr(ds, identity(), learner=GLM, ratio="analytic")
        np.testing.assert_allclose(est.theta, ds.outcome_means(), atol=1e-12)
        np.testing.assert_array_equal(est.influence[:, 0], ds.Y[:, 0])

    def test_influence_mean_identity(self, study1_small):
        est = smoothed_sdr(study1_small, default_policy(1), learner=GLM)
        np.testing.assert_allclose(est.influence.mean(axis=0), est.theta, rtol=0, atol=0)
        assert np.all(np.isfinite(est.influence))

    def test_fit_counts(self, study1_small):
        pol = default_policy(1)
        sdr = smoothed_sdr(study1_small, pol, learner=GLM)
        assert (sdr.outcome_fits, sdr.nuisance_fits) == (4, 3)
        bench = benchmark_sdr(study1_small, pol, learner=GLM)
        assert (bench.outcome_fits, bench.nuisance_fits) == (10, 30)

    def test_weight_diagnostics(self, study1_small):
        est = smoothed_sdr(study1_small, default_policy(1), learner=GLM, cap=10)
        tab = est.diagnostics["weights"]
        assert len(tab) == 10 and tab["max"].max() <= 10

    def test_calibrated_predictions_in_unit_interval(self, study1_small):
        long = to_long(apply_policy(study1_small, default_policy(1)))
        folds = fold_split(long.n_units, 5, 0).rows(long.unit)
        rng = np.random.default_rng(0)
        y = rng.normal(0.5, 2.0, long.n_rows)  # pseudo-outcomes overshoot [0, 1]
        rows = np.ones(long.n_rows, dtype=bool)
        diag = {"calibration_blocks": []}
        mz, mzd, _ = _outcome_step(long, y, rows, rows, GLM, "squared", 0, folds, None, 1,
                                   True, (0.0, 1.0), diag)
        for m in (mz, mzd):
            assert m.min() >= 0 and m.max() <= 1
        raw, _, _ = _outcome_step(long, y, rows, rows, GLM, "squared", 0, folds, None, 1,
                                  False, (0.0, 1.0), diag)
        assert raw.min() < 0 or raw.max() > 1 or np.ptp(raw) > 0

    @pytest.mark.parametrize("estimator", ["sr", "smoothed-sr", "sdr", "benchmark"])
    def test_unobserved_cells_never_read(self, estimator):
        rng = np.random.default_rng(5)
        n = 400
        c = (rng.random(n) < 0.8).astype(float)
        r = (rng.random((n, 2)) < 0.7).astype(float)
        df, spec = two_period(n, rng, c=c, r=r)
        ds = validate_wide(df, spec)
        hidden = np.isnan(ds.Y)
        assert hidden.any()
        planted = replace(ds, Y=np.where(hidden, 1e6, ds.Y))
        a = estimate(ds, identity(), estimator, learner=GLM)
        b = estimate(planted, identity(), estimator, learner=GLM)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_survival_with_censoring(self):
        rng = np.random.default_rng(6)
        n = 600
        L = rng.normal(size=(n, 3))
        A = (rng.random((n, 3)) < 0.5).astype(float)
        alive = np.ones((n, 3))
        prev = np.ones(n)
        for t in range(3):
            prev = prev * (rng.random(n) < expit(2 + A[:, t] - L[:, t]))
            alive[:, t] = prev
        C = np.ones((n, 3))
        C[:, 1] = rng.random(n) < 0.9
        C[:, 2] = np.where(C[:, 1] == 1, rng.random(n) < 0.9, np.nan)
        df = pd.DataFrame({f"L{t}": L[:, t - 1] for t in (1, 2, 3)})
        for t in (1, 2, 3):
            df[f"A{t}"] = A[:, t - 1]
            df[f"C{t}"] = C[:, t - 1]
            df[f"Y{t + 1}"] = alive[:, t - 1]
        # after dropout nothing is observed
        df.loc[C[:, 0] == 0, ["L2", "A2", "Y3", "L3", "A3", "Y4"]] = np.nan
        df.loc[C[:, 1] == 0, ["Y3", "L3", "A3", "Y4", "C3"]] = np.nan
        df.loc[C[:, 1] == 0, "C3"] = np.nan
        df.loc[np.nan_to_num(C[:, 2]) == 0, "Y4"] = np.nan
        spec = NodeSpec.from_config({"tau": 3, "treatment": "A{t}", "outcome": "Y{t}",
                                     "covariates": {"L": "L{t}"}, "censoring": "C{t}",
                                     "outcome_kind": "survival", "time_labels": [1, 2, 3, 4]})
        ds = validate_wide(df, spec)
        est = smoothed_sdr(ds, static(1), learner=GLM, ratio="analytic")
        assert np.all(np.isfinite(est.theta))
        assert np.all(np.diff(est.theta) <= 0.05)
        assert np.all((est.theta > 0) & (est.theta < 1.2))

    def test_oracle_nuisances_skip_fits(self, study1_small):
        ones = lambda long: np.ones(long.n_rows)  # noqa: E731
        oracle = OracleNuisance(g_c=ones, g_r=ones, ratio=ones)
        est = smoothed_sdr(study1_small, identity(), learner=GLM, oracle=oracle)
        assert est.nuisance_fits == 0

    def test_overlap_failure(self, study1_small):
        oracle = OracleNuisance(ratio=lambda long: np.full(long.n_rows, 1e4))
        with pytest.raises(OverlapError):
            smoothed_sdr(study1_small, default_policy(1), learner=GLM, oracle=oracle)

    def test_argument_errors(self, study1_small):
        with pytest.raises(ValueError, match="two folds"):
            smoothed_sdr(study1_small, identity(), learner=GLM, folds=1)
        with pytest.raises(ValueError, match="unknown estimator"):
            estimate(study1_small, identity(), "tmle")
