import math

import numpy as np
import pytest
import scipy.special

from incps import test_no_effect as no_effect_pvalue
from incps import (
    BootstrapBand,
    CurveEstimate,
    DeltaGrid,
    IFMatrix,
    LearnerSpec,
    assign_folds,
    build_curve,
    estimate_onestep_crossfit,
    generate,
    get_preset,
    if_matrix_from_nuisances,
    multiplier_bootstrap,
    normal_quantile,
    oracle_nuisances,
    pointwise_ci,
    uniform_band,
    variance_estimate,
)

Z975 = 1.959963984540054


def matrix(values, deltas=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if deltas is None:
        deltas = np.arange(1.0, values.shape[1] + 1)
    return IFMatrix(values=values, grid=DeltaGrid(np.asarray(deltas, dtype=float)))


class TestNormalQuantile:
    def test_matches_scipy_to_1e9(self):
        ps = np.concatenate(
            [np.linspace(1e-8, 1 - 1e-8, 2001), [1e-12, 0.02425, 0.5, 0.975, 1 - 1e-12]]
        )
        ours = np.asarray([normal_quantile(float(p)) for p in ps])
        ref = scipy.special.ndtri(ps)
        assert np.max(np.abs(ours - ref)) < 1e-9

    def test_rejects_boundary(self):
        for p in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                normal_quantile(p)


class TestVariance:
    def test_constant_column_zero(self):
        sigma = variance_estimate(matrix([[3.0], [3.0], [3.0]]))
        assert sigma[0] == 0.0

    def test_two_point_column(self):
        sigma = variance_estimate(matrix([[0.0], [2.0]]))
        assert sigma[0] == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_delta_one_column_is_outcome_variance(self):
        records = generate(get_preset("single-logistic"), 400, seed=1)
        nuis = oracle_nuisances(get_preset("single-logistic")).point_nuisance_fit(records)
        ifm = if_matrix_from_nuisances(nuis, records, DeltaGrid(np.asarray([1.0])))
        y = np.asarray([r.y for r in records])
        assert variance_estimate(ifm)[0] ** 2 == pytest.approx(np.var(y, ddof=1), abs=1e-10)

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            variance_estimate(matrix([[1.0, 2.0]]))


class TestPointwiseCi:
    def test_degenerate_interval(self):
        lo, hi = pointwise_ci(np.asarray([2.0]), np.asarray([0.0]), 50, 0.05)
        assert lo[0] == hi[0] == 2.0

    def test_reference_arithmetic(self):
        lo, hi = pointwise_ci(np.asarray([0.0]), np.asarray([1.0]), 100, 0.05)
        assert hi[0] == pytest.approx(0.1959964, abs=1e-6)
        assert lo[0] == pytest.approx(-0.1959964, abs=1e-6)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            pointwise_ci(np.zeros(1), np.ones(1), 10, 1.5)


class TestMultiplierBootstrap:
    def test_single_column_clt(self):
        g = np.random.default_rng(7)
        ifm = matrix(g.standard_normal((5000, 1)))
        band = multiplier_bootstrap(ifm, alpha=0.05, n_boot=5000, seed=3)
        assert abs(band.c_alpha - Z975) <= 0.08

    def test_quantile_monotone_in_alpha(self):
        g = np.random.default_rng(8)
        ifm = matrix(g.standard_normal((500, 3)))
        band = multiplier_bootstrap(ifm, alpha=0.05, n_boot=2000, seed=1)
        assert band.critical_value(0.05) >= band.critical_value(0.10)
        assert band.critical_value(0.01) >= band.critical_value(0.05)

    def test_duplicated_column_leaves_sup_unchanged(self):
        g = np.random.default_rng(9)
        col = g.standard_normal((800, 1))
        one = multiplier_bootstrap(matrix(col), n_boot=500, seed=5)
        two = multiplier_bootstrap(matrix(np.hstack([col, col]), deltas=[1.0, 2.0]), n_boot=500, seed=5)
        np.testing.assert_allclose(one.sup_draws, two.sup_draws, atol=1e-12)
        assert one.c_alpha == pytest.approx(two.c_alpha, abs=1e-12)

    def test_degenerate_column_excluded(self):
        g = np.random.default_rng(10)
        col = g.standard_normal((300, 1))
        contaminated = np.hstack([col, np.full((300, 1), 7.0)])
        band = multiplier_bootstrap(matrix(contaminated, deltas=[1.0, 2.0]), n_boot=400, seed=2)
        clean = multiplier_bootstrap(matrix(col), n_boot=400, seed=2)
        assert band.degenerate_cols == (1,)
        np.testing.assert_allclose(band.sup_draws, clean.sup_draws, atol=1e-12)

    def test_all_degenerate_falls_back_to_z(self):
        band = multiplier_bootstrap(matrix(np.full((50, 2), 1.5), deltas=[1.0, 2.0]), n_boot=100, seed=0)
        assert band.degenerate_cols == (0, 1)
        assert band.c_alpha == pytest.approx(Z975, abs=1e-9)

    def test_floor_guarantees_uniform_contains_pointwise(self):
        g = np.random.default_rng(11)
        for seed in range(5):
            ifm = matrix(g.standard_normal((200, 4)))
            band = multiplier_bootstrap(ifm, alpha=0.05, n_boot=200, seed=seed)
            assert band.c_alpha >= Z975 - 1e-12

    def test_deterministic_and_multiplier_switch(self):
        g = np.random.default_rng(12)
        ifm = matrix(g.standard_normal((300, 2)), deltas=[0.5, 2.0])
        a = multiplier_bootstrap(ifm, n_boot=300, seed=9)
        b = multiplier_bootstrap(ifm, n_boot=300, seed=9)
        np.testing.assert_array_equal(a.sup_draws, b.sup_draws)
        c = multiplier_bootstrap(ifm, n_boot=300, seed=9, multiplier="gaussian")
        assert not np.array_equal(a.sup_draws, c.sup_draws)
        with pytest.raises(ValueError):
            multiplier_bootstrap(ifm, multiplier="poisson")


class TestCurve:
    def test_bands_nest_and_contain_estimate(self):
        records = generate(get_preset("single-logistic"), 800, seed=4)
        folds = assign_folds(800, 2, seed=5)
        grid = DeltaGrid(np.exp(np.linspace(np.log(0.2), np.log(5), 15)))
        fit = estimate_onestep_crossfit(records, folds, LearnerSpec("logistic"), LearnerSpec("linear"), grid)
        curve = build_curve(fit.if_matrix, n_boot=800, seed=6)
        assert np.all(curve.band_lo <= curve.ci_lo + 1e-12)
        assert np.all(curve.ci_hi <= curve.band_hi + 1e-12)
        assert np.all((curve.ci_lo <= curve.psi_hat) & (curve.psi_hat <= curve.ci_hi))
        assert 0.0 <= curve.p_value <= 1.0
        assert curve.c_alpha >= Z975 - 1e-12

    def test_uniform_band_shape(self):
        lo, hi = uniform_band(np.asarray([1.0, 2.0]), np.asarray([1.0, 0.5]), 100, 2.0)
        np.testing.assert_allclose(hi - lo, [0.4, 0.2])


class TestNoEffect:
    def _curve(self, psi, sigma, band, n=400):
        psi = np.asarray(psi, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        grid = DeltaGrid(np.arange(1.0, len(psi) + 1))
        lo, hi = uniform_band(psi, sigma, n, band.c_alpha)
        ci_lo, ci_hi = pointwise_ci(psi, sigma, n, band.alpha)
        return CurveEstimate(
            grid=grid, psi_hat=psi, sigma_hat=sigma, n=n, alpha=band.alpha,
            ci_lo=ci_lo, ci_hi=ci_hi, band_lo=lo, band_hi=hi,
            c_alpha=band.c_alpha, p_value=math.nan, bootstrap=band,
        )

    def test_flat_curve_never_rejected(self):
        g = np.random.default_rng(13)
        col = g.standard_normal((400, 1))
        ifm = matrix(np.hstack([col, col + 0.0, col]), deltas=[1.0, 2.0, 3.0])
        band = multiplier_bootstrap(ifm, n_boot=400, seed=1)
        curve = self._curve([1.3, 1.3, 1.3], np.std(ifm.values, axis=0, ddof=1), band)
        assert no_effect_pvalue(curve) == 1.0

    def test_strong_effect_rejected(self):
        records = generate(get_preset("single-logistic"), 5000, seed=14)
        nuis = oracle_nuisances(get_preset("single-logistic")).point_nuisance_fit(records)
        grid = DeltaGrid(np.exp(np.linspace(np.log(0.2), np.log(5), 12)))
        curve = build_curve(if_matrix_from_nuisances(nuis, records, grid), n_boot=1500, seed=15)
        assert curve.p_value < 0.05

    def test_p_value_shrinks_as_range_grows(self):
        g = np.random.default_rng(16)
        ifm = matrix(g.standard_normal((600, 4)), deltas=[1, 2, 3, 4])
        band = multiplier_bootstrap(ifm, n_boot=1000, seed=17)
        sigma = np.std(ifm.values, axis=0, ddof=1)
        base = np.asarray([0.0, 0.01, 0.02, 0.03])
        p1 = no_effect_pvalue(self._curve(base, sigma, band))
        p2 = no_effect_pvalue(self._curve(3 * base, sigma, band))
        p3 = no_effect_pvalue(self._curve(10 * base, sigma, band))
        assert p1 >= p2 >= p3

    def test_requires_bootstrap_draws(self):
        g = np.random.default_rng(18)
        ifm = matrix(g.standard_normal((100, 2)), deltas=[1.0, 2.0])
        band = multiplier_bootstrap(ifm, n_boot=100, seed=0)
        curve = self._curve([0.0, 0.5], np.ones(2), band)
        object.__setattr__(curve, "bootstrap", None)
        with pytest.raises(ValueError, match="bootstrap"):
            no_effect_pvalue(curve)

    def test_power_on_strong_effect_replications(self):
        from incps._rng import child_seed

        dgp = get_preset("single-logistic")
        grid = DeltaGrid(np.exp(np.linspace(np.log(0.2), np.log(5), 10)))
        rejections = 0
        reps = 40
        for r in range(reps):
            seed = child_seed(900, "power", r)
            records = generate(dgp, 1000, seed=seed)
            folds = assign_folds(1000, 2, seed=seed)
            fit = estimate_onestep_crossfit(
                records, folds, LearnerSpec("logistic"), LearnerSpec("linear"), grid
            )
            curve = build_curve(fit.if_matrix, n_boot=1000, seed=seed)
            rejections += curve.p_value < 0.05
        assert rejections >= 0.90 * reps
