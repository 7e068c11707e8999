import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msvar.core import ModelParams, SeriesData
from msvar.filtering import WindowWeights
from msvar.mstep import GramStats, LassoConfig, design_stats, solve_lasso
from msvar.simulate import SimConfig, make_setting_one, simulate
from msvar.tuning import (
    SkippedFoldWarning,
    TuningError,
    TuningPolicy,
    cv_select,
    cv_select_lambda,
    hbic,
    lambda_grid,
    make_folds,
)


def _ones(t, k=1):
    return WindowWeights.from_labels(np.zeros(t, dtype=np.int64), k)


class TestGrid:
    def test_shape_and_spacing(self):
        s = SeriesData(np.random.default_rng(0).standard_normal((101, 3)))
        g = lambda_grid(s, _ones(100), TuningPolicy())
        assert g.size == 50 and np.all(np.diff(g) < 0)
        assert g[-1] / g[0] == pytest.approx(1e-3)
        np.testing.assert_allclose(np.diff(np.log(g)), np.log(1e-3) / 49)

    def test_scaling_by_two(self):
        y = np.random.default_rng(1).standard_normal((101, 3))
        g1 = lambda_grid(SeriesData(y), _ones(100), TuningPolicy())
        g2 = lambda_grid(SeriesData(2 * y), _ones(100), TuningPolicy())
        assert g2[0] == pytest.approx(4 * g1[0], rel=1e-14)

    def test_zero_weights_error(self):
        s = SeriesData(np.random.default_rng(2).standard_normal((51, 2)))
        w = WindowWeights(np.zeros((50, 2)), np.zeros((50, 2, 2)), np.ones(50, dtype=np.int64))
        with pytest.raises(TuningError):
            lambda_grid(s, w, TuningPolicy())

    def test_top_of_grid_gives_zero_fit(self):
        s = simulate(SimConfig(make_setting_one(6), 300, seed=3))
        w = WindowWeights.from_labels(s.z, 2)
        g = lambda_grid(s, w, TuningPolicy())
        stats = design_stats(s, w)
        for lam in (g[0], g[0] * (1 + 1e-6)):
            assert not solve_lasso(stats, LassoConfig(lam)).coeffs.any()


class TestFolds:
    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(10, 300), k=st.integers(2, 10), seed=st.integers(0, 2**32 - 1),
           scheme=st.sampled_from(["random", "blocks"]))
    def test_partition(self, n, k, seed, scheme):
        folds = make_folds(n, k, scheme, seed)
        assert len(folds) == k
        allidx = np.concatenate(folds)
        assert np.array_equal(np.sort(allidx), np.arange(n))
        again = make_folds(n, k, scheme, seed)
        assert all(np.array_equal(a, b) for a, b in zip(folds, again))

    def test_blocks_are_contiguous(self):
        for f in make_folds(95, 10, "blocks", 0):
            assert np.all(np.diff(f) == 1)


class TestCv:
    def test_single_point_grid(self):
        s = SeriesData(np.random.default_rng(4).standard_normal((51, 2)))
        r = cv_select_lambda(s, _ones(50), TuningPolicy(grid_size=1))
        assert r.lam == r.grid[0] and r.index == 0

    def test_curve_at_top_equals_zero_fit_error(self):
        rng = np.random.default_rng(5)
        x, y = rng.standard_normal((200, 4)), rng.standard_normal((200, 4))
        m = rng.uniform(0, 1, (200, 2))
        pol = TuningPolicy()
        r = cv_select(x, y, m, pol)
        folds = make_folds(200, 10, "random", pol.seed)
        zero = np.mean([np.sum(m[f] * np.sum(y[f] ** 2, axis=1)[:, None]) for f in folds])
        assert r.curve[0] == pytest.approx(zero, rel=1e-12)

    def test_null_data_is_sparse(self):
        zeros = []
        for seed in range(20):
            s = simulate(SimConfig(ModelParams(np.zeros((1, 5, 5)), [[1.0]], 1.0), 500, seed=seed))
            w = _ones(500)
            r = cv_select_lambda(s, w, TuningPolicy(seed=seed))
            b = solve_lasso(design_stats(s, w), LassoConfig(r.lam)).coeffs
            zeros.append(np.mean(b == 0))
        assert np.mean(zeros) >= 0.9

    def test_chosen_lambda_beats_grid_endpoints(self):
        p = make_setting_one(9)
        wins = 0
        for rep in range(10):
            s = simulate(SimConfig(p, 2000, seed=rep))
            w = WindowWeights.from_labels(s.z, 2)
            r = cv_select_lambda(s, w, TuningPolicy(seed=rep))
            stats = design_stats(s, w)
            err = [np.linalg.norm(solve_lasso(stats, LassoConfig(lam)).coeffs - p.coeffs)
                   for lam in (r.lam, r.grid[0], r.grid[-1])]
            wins += err[0] < err[1] and err[0] < err[2]
        assert wins >= 8

    def test_warm_path_matches_cold_selection(self):
        rng = np.random.default_rng(6)
        for _ in range(3):
            x = rng.standard_normal((150, 6))
            y = x @ (rng.standard_normal((6, 6)) * (rng.random((6, 6)) < 0.3)) + rng.standard_normal((150, 6))
            m = rng.uniform(0, 1, (150, 2))
            pol = TuningPolicy(grid_size=15)
            r = cv_select(x, y, m, pol, LassoConfig(0.0, tol=1e-10))
            folds = make_folds(150, 10, "random", pol.seed)
            curve = np.zeros(r.grid.size)
            for f in folds:
                keep = np.ones(150, bool)
                keep[f] = False
                tr = GramStats.build(x[keep], y[keep], m[keep])
                te = GramStats.build(x[f], y[f], m[f])
                for g, lam in enumerate(r.grid):
                    b = solve_lasso(tr, LassoConfig(lam, tol=1e-10)).coeffs
                    curve[g] += te.loss(b).sum() / len(folds)
            assert int(np.argmin(curve)) == r.index

    def test_zero_weight_fold_skipped(self):
        rng = np.random.default_rng(7)
        x, y = rng.standard_normal((100, 2)), rng.standard_normal((100, 2))
        m = np.ones((100, 1))
        m[:10] = 0.0
        with pytest.warns(SkippedFoldWarning):
            r = cv_select(x, y, m, TuningPolicy(fold_scheme="blocks"))
        assert r.n_folds_used == 9

    def test_too_few_rows(self):
        with pytest.raises(Exception):
            make_folds(5, 10, "random", 0)


class TestPolicy:
    def test_parse(self):
        assert TuningPolicy.parse("cv").mode == "cv"
        p = TuningPolicy.parse("fixed:0.25")
        assert p.mode == "fixed" and p.value == 0.25
        with pytest.raises(ValueError):
            TuningPolicy.parse("bic")


class TestHbic:
    def test_formula(self):
        assert hbic(1000, 30, 2, 1.2, 60) == pytest.approx(
            1000 * 30 * math.log(1.2) + 60 * math.log(math.log(1000)) * math.log(1800))

    def test_sparser_wins(self):
        assert hbic(500, 10, 2, 1.0, 10) < hbic(500, 10, 2, 1.0, 11)

    def test_smaller_variance_wins(self):
        assert hbic(500, 10, 2, 0.9, 10) < hbic(500, 10, 2, 1.0, 10)
