"""Generalized Bradley-Terry link function, objective, and solver."""

import math

import mpmath
import numpy as np
import pytest
from scipy.stats import spearmanr

from equirank.dataset import comparison_set
from equirank.gbt import (
    GbtConfig,
    expected_comparison,
    fit_gbt,
    gbt_gradient,
    gbt_objective,
)


def _oracle_expected(delta: float) -> float:
    """coth(delta) - 1/delta evaluated at 50 digits."""
    with mpmath.workdps(50):
        d = mpmath.mpf(delta)
        return float(mpmath.coth(d) - 1 / d)


class TestExpectedComparison:
    def test_zero(self):
        assert expected_comparison(0.0) == 0.0

    def test_closed_form_against_high_precision(self):
        assert expected_comparison(3.0) == pytest.approx(_oracle_expected(3.0), abs=1e-14)
        assert expected_comparison(3.0) == pytest.approx(0.67164, abs=1e-5)

    def test_odd(self):
        for d in [0.5, 1.0, 3.0, 17.0, 0.003]:
            assert expected_comparison(-d) == -expected_comparison(d)

    def test_series_matches_closed_form_at_cutoff(self):
        # Series region and closed-form region must agree where they meet.
        for d in [9e-3, 1e-2, 1.1e-2]:
            assert expected_comparison(d) == pytest.approx(_oracle_expected(d), abs=1e-12)

    def test_strictly_increasing(self):
        rng = np.random.default_rng(42)
        xs = np.sort(rng.uniform(-30, 30, 2000))
        ys = np.array([expected_comparison(x) for x in xs])
        assert np.all(np.diff(ys) > 0)

    def test_bounded_below_one(self):
        rng = np.random.default_rng(0)
        for x in rng.uniform(-500, 500, 1000):
            assert abs(expected_comparison(float(x))) < 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            expected_comparison(float("inf"))


class TestObjective:
    def test_single_neutral_comparison_gives_log2(self):
        cset = comparison_set([("u1", "g", "a", "b", 0.0)])
        theta = {"a": 0.0, "b": 0.0}
        assert gbt_objective(theta, cset, lam=1.0) == pytest.approx(math.log(2.0))

    def test_zero_theta_gives_sum_of_log2(self):
        rng = np.random.default_rng(1)
        rows = [("u1", "g", "a", f"b{i}", float(rng.uniform(-1, 1))) for i in range(7)]
        cset = comparison_set(rows)
        theta = {item: 0.0 for item in cset.items}
        assert gbt_objective(theta, cset, lam=0.5) == pytest.approx(7 * math.log(2.0))

    def test_missing_item_rejected(self):
        cset = comparison_set([("u1", "g", "a", "b", 0.0)])
        with pytest.raises(ValueError, match="missing"):
            gbt_objective({"a": 0.0}, cset, lam=1.0)

    def test_descent_direction_decreases_objective(self):
        rng = np.random.default_rng(2)
        items = [f"i{k}" for k in range(6)]
        rows = []
        for _ in range(40):
            l, r = rng.choice(6, size=2, replace=False)
            rows.append(("u1", "g", items[l], items[r], float(rng.uniform(-1, 1))))
        cset = comparison_set(rows)
        theta = {item: float(rng.normal()) for item in items}
        grad = gbt_gradient(theta, cset, lam=0.1)
        before = gbt_objective(theta, cset, lam=0.1)
        stepped = {k: v - 1e-4 * grad[k] for k, v in theta.items()}
        assert gbt_objective(stepped, cset, lam=0.1) < before


def _random_instance(rng, n_items=8, n_comparisons=30):
    items = [f"i{k}" for k in range(n_items)]
    rows = []
    for _ in range(n_comparisons):
        l, r = rng.choice(n_items, size=2, replace=False)
        rows.append(("u1", "g", items[l], items[r], float(rng.uniform(-0.95, 0.95))))
    cset = comparison_set(rows)
    theta = {item: float(rng.normal(scale=0.8)) for item in cset.items}
    return cset, theta


def test_gradient_matches_central_finite_differences():
    rng = np.random.default_rng(7)
    h = 1e-5
    for _ in range(20):
        cset, theta = _random_instance(rng)
        lam = float(rng.uniform(0.01, 1.0))
        grad = gbt_gradient(theta, cset, lam)
        fd = {}
        for item in theta:
            hi = dict(theta, **{item: theta[item] + h})
            lo = dict(theta, **{item: theta[item] - h})
            fd[item] = (gbt_objective(hi, cset, lam) - gbt_objective(lo, cset, lam)) / (2 * h)
        a = np.array([grad[i] for i in sorted(theta)])
        b = np.array([fd[i] for i in sorted(theta)])
        assert np.linalg.norm(a - b) <= 1e-4 * max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


class TestFit:
    def test_neutral_comparison_stays_at_zero(self):
        cset = comparison_set([("u1", "g", "a", "b", 0.0)])
        fit = fit_gbt(cset, GbtConfig(lam=0.1))
        assert fit.theta == {"a": 0.0, "b": 0.0}
        assert fit.converged

    def test_directional_comparison_is_antisymmetric(self):
        cset = comparison_set([("u1", "g", "a", "b", 0.8)])
        fit = fit_gbt(cset, GbtConfig(lam=0.1))
        assert fit.theta["b"] > 0 > fit.theta["a"]
        assert fit.theta["b"] == pytest.approx(-fit.theta["a"], abs=1e-10)

    def test_gradient_norm_meets_tolerance(self):
        rng = np.random.default_rng(3)
        cset, _ = _random_instance(rng, n_items=10, n_comparisons=80)
        config = GbtConfig(lam=0.1, tol=1e-8)
        fit = fit_gbt(cset, config)
        assert fit.converged
        assert fit.grad_norm <= config.tol

    def test_recovery_of_planted_scores(self):
        rng = np.random.default_rng(10)
        items = [f"i{k:02d}" for k in range(12)]
        theta_true = rng.uniform(-1.2, 1.2, 12)
        rows = []
        for _ in range(400):
            l, r = rng.choice(12, size=2, replace=False)
            noisy = expected_comparison(theta_true[r] - theta_true[l]) + rng.normal(0, 0.02)
            rows.append(("u1", "g", items[l], items[r], float(np.clip(noisy, -1, 1))))
        fit = fit_gbt(comparison_set(rows))
        fitted = np.array([fit.theta[i] for i in items])
        assert spearmanr(fitted, theta_true).statistic > 0.95

    def test_prior_centers_connected_fit(self):
        rng = np.random.default_rng(4)
        cset, _ = _random_instance(rng, n_items=9, n_comparisons=120)
        fit = fit_gbt(cset)
        assert abs(np.mean(list(fit.theta.values()))) < 1e-9

    def test_negating_scores_and_swapping_sides_is_invariant(self):
        rng = np.random.default_rng(5)
        cset, _ = _random_instance(rng, n_items=7, n_comparisons=50)
        mirrored = comparison_set(
            [(c.user_id, c.criterion, c.right_item, c.left_item, -c.score) for c in cset]
        )
        fit = fit_gbt(cset)
        fit_mirrored = fit_gbt(mirrored)
        for item in fit.theta:
            assert fit.theta[item] == pytest.approx(fit_mirrored.theta[item], abs=1e-12)

    def test_uncompared_items_get_no_entry(self):
        cset = comparison_set([("u1", "g", "a", "b", 0.4)])
        fit = fit_gbt(cset)
        assert set(fit.theta) == {"a", "b"}

    def test_multiple_users_rejected(self):
        cset = comparison_set([("u1", "g", "a", "b", 0.1), ("u2", "g", "a", "b", 0.1)])
        with pytest.raises(ValueError, match="one user"):
            fit_gbt(cset)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fit_gbt(comparison_set([]))

    def test_max_iter_flagging(self):
        rng = np.random.default_rng(6)
        cset, _ = _random_instance(rng, n_items=10, n_comparisons=80)
        fit = fit_gbt(cset, GbtConfig(lam=0.1, tol=1e-12, max_iter=3))
        assert not fit.converged
        assert fit.n_iter == 3


def test_config_validation():
    with pytest.raises(ValueError):
        GbtConfig(lam=0.0)
    with pytest.raises(ValueError):
        GbtConfig(tol=-1.0)
    with pytest.raises(ValueError):
        GbtConfig(max_iter=0)
