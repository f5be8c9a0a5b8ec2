import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effectcurve.isotonic import StepFunction, calibrate, evaluate, fitted_values, pava
from oracles import isotonic_bruteforce


def fit_at(x, y, w=None, lo=-np.inf, hi=np.inf):
    fn = pava(x, y, w, lo, hi)
    return fitted_values(fn, x)


class TestPava:
    def test_monotone_input_is_fixed_point(self):
        y = np.array([0.1, 0.4, 0.4, 0.9, 2.0])
        np.testing.assert_allclose(fit_at(np.arange(5), y), y)

    def test_single_violation_pools_everything(self):
        np.testing.assert_allclose(fit_at(np.arange(3), [3.0, 1.0, 2.0]), [2.0, 2.0, 2.0])

    def test_pool_then_clamp(self):
        fn = pava([0.0, 1.0], [0.9, -0.2], lo=0.0, hi=1.0)
        np.testing.assert_allclose(fitted_values(fn, [0.0, 1.0]), [0.35, 0.35])

    def test_clamped_pair_matches_qp(self):
        cp = pytest.importorskip("cvxpy")
        y = np.array([0.9, -0.2])
        g = cp.Variable(2)
        cp.Problem(cp.Minimize(cp.sum_squares(y - g)), [g[0] <= g[1], g >= 0, g <= 1]).solve()
        np.testing.assert_allclose(fit_at([0.0, 1.0], y, lo=0, hi=1), g.value, atol=1e-6)

    def test_ties_in_x_prepooled(self):
        fn = pava([0.0, 0.0, 1.0], [1.0, 3.0, 5.0], [1.0, 3.0, 1.0])
        assert fn.n_blocks == 2
        np.testing.assert_allclose(fn.values, [2.5, 5.0])

    def test_weights_shift_the_pooled_value(self):
        out = fit_at(np.arange(2), [1.0, 0.0], [3.0, 1.0])
        np.testing.assert_allclose(out, [0.75, 0.75])

    @pytest.mark.parametrize("x,y,w", [
        ([], [], None),
        ([1.0, 0.0], [0.0, 1.0], None),
        ([0.0, 1.0], [0.0, 1.0], [1.0, 0.0]),
        ([0.0, 1.0], [0.0], None),
    ])
    def test_bad_input_rejected(self, x, y, w):
        with pytest.raises(ValueError):
            pava(x, y, w)

    def test_matches_cvxpy_on_random_weighted_instances(self):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(3)
        for _ in range(15):
            n = int(rng.integers(2, 9))
            y = rng.normal(0.5, 0.6, n)
            w = rng.uniform(0.2, 3.0, n)
            g = cp.Variable(n)
            cons = [g[:-1] <= g[1:], g >= 0, g <= 1]
            cp.Problem(cp.Minimize(cp.sum(cp.multiply(w, cp.square(y - g)))), cons).solve()
            np.testing.assert_allclose(fit_at(np.arange(n), y, w, 0, 1), g.value, atol=1e-5)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0.1, 5)), min_size=1, max_size=8),
       st.sampled_from([(-np.inf, np.inf), (0.0, 1.0), (-1.0, 0.5)]))
def test_pava_equals_enumeration_oracle(pairs, bounds):
    y = np.array([p[0] for p in pairs])
    w = np.array([p[1] for p in pairs])
    lo, hi = bounds
    expected = isotonic_bruteforce(y, w, lo, hi)
    np.testing.assert_allclose(fit_at(np.arange(len(y)), y, w, lo, hi), expected, atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_output_is_monotone_idempotent_and_in_range(ys):
    y = np.array(ys)
    x = np.arange(y.size, dtype=float)
    once = fit_at(x, y, lo=-1, hi=2)
    assert np.all(np.diff(once) >= -1e-12)
    assert np.all((once >= -1) & (once <= 2))
    np.testing.assert_allclose(fit_at(x, once, lo=-1, hi=2), once, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_projection_beats_random_monotone_candidates(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    w = rng.uniform(0.5, 2, n)
    best = np.sum(w * (y - fit_at(np.arange(n), y, w)) ** 2)
    for _ in range(20):
        cand = np.sort(rng.normal(size=n))
        assert best <= np.sum(w * (y - cand) ** 2) + 1e-12


class TestEvaluate:
    fn = StepFunction(np.array([0.0, 1.0, 2.0]), np.array([0.1, 0.5, 0.9]), 0.0, 1.0)

    def test_below_first_break(self):
        assert evaluate(self.fn, -5.0) == 0.1

    def test_at_break_is_right_continuous(self):
        np.testing.assert_allclose(evaluate(self.fn, [0.0, 1.0, 2.0]), [0.1, 0.5, 0.9])

    def test_above_last_break(self):
        assert self.fn(10.0) == 0.9

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(-1, 3, 200)
        scan = []
        for x in v:
            j = 0
            for i, b in enumerate(self.fn.breaks):
                if b <= x:
                    j = i
            scan.append(self.fn.values[j])
        np.testing.assert_array_equal(evaluate(self.fn, v), scan)


class TestCalibrate:
    def test_ranked_predictions_are_fixed(self):
        m = np.linspace(0.05, 0.95, 20)
        g = calibrate(m, m)
        np.testing.assert_allclose(g(m), m)

    def test_constant_target_gives_constant_map(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=50)
        g = calibrate(m, np.full(50, 0.4))
        np.testing.assert_allclose(g(rng.normal(size=10)), 0.4)

    def test_binary_range_enforced(self):
        rng = np.random.default_rng(2)
        m = rng.normal(0, 1, 200)
        phi = m * 2.0 + rng.normal(size=200)
        out = calibrate(m, phi, lo=0, hi=1)(np.linspace(-5, 5, 101))
        assert out.min() >= 0 and out.max() <= 1

    def test_preserves_ranking(self):
        rng = np.random.default_rng(4)
        m = rng.uniform(size=100)
        phi = rng.uniform(-1, 2, 100)
        g = calibrate(m, phi)
        order = np.argsort(m)
        assert np.all(np.diff(g(m)[order]) >= 0)

    def test_too_few_points_gives_clamped_mean(self):
        g = calibrate([0.3], [1.7], lo=0, hi=1)
        assert g(0.0) == 1.0 and g(5.0) == 1.0
