import math

import numpy as np
import pytest

from incps import (
    DGPSpec,
    GaussianCov,
    LearnerSpec,
    OracleResult,
    PRESET_NAMES,
    assign_folds,
    bias_bound_diagnostic,
    crossfit_nuisances,
    exact_observational_mean,
    generate,
    get_preset,
    gcomp_exact,
    NuisanceFit,
    oracle_nuisances,
    oracle_potential_mean,
    oracle_psi,
    to_discrete_model,
)
from incps.nuisance import expit
from incps._rng import child_seed


class TestGenerate:
    def test_null_preset_uncorrelated(self):
        n = 40_000
        records = generate(get_preset("null"), n, seed=1)
        a = np.asarray([r.a for r in records], dtype=float)
        y = np.asarray([r.y for r in records])
        corr = np.corrcoef(a, y)[0, 1]
        assert abs(corr) <= 4 / math.sqrt(n)

    def test_structural_violation_contains_exact_boundaries(self):
        dgp = get_preset("structural-violation")
        records = generate(dgp, 2000, seed=2)
        pi = oracle_nuisances(dgp).point_nuisance_fit(records).pi
        assert np.any(pi == 0.0)
        assert np.any(pi == 1.0)
        a = np.asarray([r.a for r in records])
        assert np.all(a[pi == 0.0] == 0)
        assert np.all(a[pi == 1.0] == 1)

    def test_deterministic(self):
        dgp = get_preset("discrete-T2")
        one = generate(dgp, 300, seed=7)
        two = generate(dgp, 300, seed=7)
        for t in range(2):
            np.testing.assert_array_equal(one.x[t], two.x[t])
        np.testing.assert_array_equal(one.a, two.a)
        np.testing.assert_array_equal(one.y, two.y)
        other = generate(dgp, 300, seed=8)
        assert not np.array_equal(one.y, other.y)

    def test_t1_returns_records(self):
        records = generate(get_preset("null"), 10, seed=0)
        assert len(records) == 10
        assert records[0].x.shape == (2,)

    def test_all_presets_generate(self):
        for name in PRESET_NAMES:
            dgp = get_preset(name)
            data = generate(dgp, 50, seed=3)
            size = len(data) if dgp.n_periods == 1 else data.n_subjects
            assert size == 50

    def test_unknown_preset_named(self):
        with pytest.raises(ValueError, match="no-such-preset"):
            get_preset("no-such-preset")


class TestOraclePsi:
    def test_identity_delta_matches_observational_mean(self):
        dgp = get_preset("discrete-T2")
        mc = oracle_psi(dgp, 1.0, method="mc", draws=500_000, seed=4)
        exact = exact_observational_mean(to_discrete_model(dgp))
        assert abs(mc.value - exact) <= 4 * mc.se

    @pytest.mark.parametrize("delta", [0.5, 2.0])
    def test_exact_and_mc_agree(self, delta):
        dgp = get_preset("discrete-T2")
        exact = oracle_psi(dgp, delta, method="exact")
        mc = oracle_psi(dgp, delta, method="mc", draws=1_000_000, seed=5)
        assert exact.method == "exact-enumeration" and exact.se is None
        assert mc.se is not None and mc.se > 0
        assert abs(exact.value - mc.value) <= 4 * mc.se

    def test_finite_under_structural_violation(self):
        dgp = get_preset("structural-violation")
        grid = np.exp(np.linspace(np.log(0.2), np.log(5.0), 21))
        values = [oracle_psi(dgp, float(d), method="exact").value for d in grid]
        assert np.all(np.isfinite(values))

    def test_monotone_in_delta_for_monotone_effects(self):
        dgp = get_preset("discrete-T2")
        grid = np.exp(np.linspace(np.log(0.2), np.log(5.0), 15))
        values = [oracle_psi(dgp, float(d), method="exact").value for d in grid]
        assert np.all(np.diff(values) > 0)

    def test_exact_refused_on_continuous(self):
        with pytest.raises(ValueError, match="discrete"):
            oracle_psi(get_preset("single-logistic"), 2.0, method="exact")

    def test_result_invariants(self):
        with pytest.raises(ValueError):
            OracleResult(value=1.0, method="exact-enumeration", se=0.1)
        with pytest.raises(ValueError):
            OracleResult(value=1.0, method="monte-carlo", draws=10, se=None)


class TestOraclePotentialMean:
    def test_methods_agree(self):
        dgp = get_preset("discrete-T2")
        exact = oracle_potential_mean(dgp, (1, 0), method="exact")
        mc = oracle_potential_mean(dgp, (1, 0), method="mc", draws=400_000, seed=6)
        assert abs(exact.value - mc.value) <= 4 * mc.se

    def test_bad_regime_rejected(self):
        with pytest.raises(ValueError):
            oracle_potential_mean(get_preset("discrete-T2"), (1,))


class TestOracleNuisances:
    def test_pi_matches_generating_logistic(self):
        dgp = get_preset("single-logistic")
        X = np.random.default_rng(7).standard_normal((100, 2))
        preds = oracle_nuisances(dgp).pi_learner(1).predict(X)
        np.testing.assert_array_equal(preds, expit(0.2 + 0.9 * X[:, 0] - 0.6 * X[:, 1]))

    def test_arm_learner_matches_outcome_mean(self):
        dgp = get_preset("single-logistic")
        X = np.random.default_rng(8).standard_normal((50, 2))
        oracle = oracle_nuisances(dgp)
        np.testing.assert_allclose(
            oracle.arm_learner(1).predict(X) - oracle.arm_learner(0).predict(X),
            1.0 + 0.5 * np.tanh(X[:, 0]),
            atol=1e-12,
        )

    def test_fit_is_passthrough(self):
        dgp = get_preset("single-logistic")
        learner = oracle_nuisances(dgp).pi_learner(1)
        assert learner.fit(np.zeros((5, 2)), np.zeros(5)) is learner

    def test_continuous_panel_m_refused(self):
        cov = GaussianCov(dim=1, mean_fn=lambda xs, ap: np.zeros((ap.shape[0], 1)), sd=1.0)
        dgp = DGPSpec(
            name="cont2",
            n_periods=2,
            covariates=(cov, cov),
            propensities=(
                lambda xs, ap: np.full(ap.shape[0], 0.5),
                lambda xs, ap: np.full(ap.shape[0], 0.5),
            ),
            outcome_mean=lambda xs, a: a[:, 0].astype(float),
            noise_sd=1.0,
            positivity=True,
        )
        with pytest.raises(ValueError, match="discrete"):
            oracle_nuisances(dgp).m_learner(1, 1, 2.0)


class TestBiasBound:
    def test_zero_at_oracle(self):
        dgp = get_preset("single-logistic")
        records = generate(dgp, 500, seed=9)
        nuis = oracle_nuisances(dgp).point_nuisance_fit(records)
        assert bias_bound_diagnostic(nuis, dgp, records) == 0.0

    def test_known_corruption_matches_direct_integral(self):
        dgp = get_preset("single-logistic")
        records = generate(dgp, 100_000, seed=10)
        oracle = oracle_nuisances(dgp)
        truth = oracle.point_nuisance_fit(records)
        corrupted = NuisanceFit(
            pi=np.clip(truth.pi + 0.1, 0.0, 1.0), mu1=truth.mu1, mu0=truth.mu0, folds=None
        )
        b_hat = bias_bound_diagnostic(corrupted, dgp, records)

        g = np.random.default_rng(1001)
        X = g.standard_normal((2_000_000, 2))
        pi = oracle.pi_learner(1).predict(X)
        d = pi - np.clip(pi + 0.1, 0.0, 1.0)
        integrand = d**2  # mu terms are exact, so only the squared term remains
        se_direct = integrand.std(ddof=1) / math.sqrt(len(X))

        per_record = (truth.pi - corrupted.pi) ** 2
        se_hat = per_record.std(ddof=1) / math.sqrt(len(records))
        assert b_hat > 0
        assert abs(b_hat - integrand.mean()) <= 4 * (se_direct + se_hat)

    def test_shrinks_with_sample_size(self):
        dgp = get_preset("single-logistic")
        spec = LearnerSpec("boosted-stumps", rounds=120)
        means = []
        for n in (500, 2000, 8000):
            values = []
            for r in range(8):
                records = generate(dgp, n, seed=child_seed(20, n, r))
                folds = assign_folds(n, 2, seed=child_seed(21, n, r))
                nuis = crossfit_nuisances(records, folds, spec, spec)
                values.append(bias_bound_diagnostic(nuis, dgp, records))
            means.append(np.mean(values))
        assert means[0] > means[1] > means[2]


class TestSpecValidation:
    def test_bad_period_count(self):
        cov = GaussianCov(dim=1, mean_fn=lambda xs, ap: np.zeros((ap.shape[0], 1)), sd=1.0)
        with pytest.raises(ValueError):
            DGPSpec(
                name="bad",
                n_periods=2,
                covariates=(cov,),
                propensities=(lambda xs, ap: np.full(ap.shape[0], 0.5),),
                outcome_mean=lambda xs, a: np.zeros(a.shape[0]),
                noise_sd=1.0,
                positivity=True,
            )

    def test_propensity_out_of_range_rejected(self):
        cov = GaussianCov(dim=1, mean_fn=lambda xs, ap: np.zeros((ap.shape[0], 1)), sd=1.0)
        dgp = DGPSpec(
            name="bad-pi",
            n_periods=1,
            covariates=(cov,),
            propensities=(lambda xs, ap: np.full(ap.shape[0], 1.5),),
            outcome_mean=lambda xs, a: np.zeros(a.shape[0]),
            noise_sd=1.0,
            positivity=True,
        )
        with pytest.raises(ValueError):
            generate(dgp, 10, seed=0)
