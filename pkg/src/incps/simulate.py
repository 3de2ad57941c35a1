"""Synthetic data-generating processes with known truth, and their oracles.

A :class:`DGPSpec` fully specifies the observational law: per-period
covariate generators (discrete tables or Gaussians), propensity
functions, an outcome mean, and a noise level. Because every nuisance is
known, the same spec yields

* data, via :func:`generate`;
* the true delta curve, via :func:`oracle_psi` (exact enumeration on
  discrete specs, chunked Monte Carlo under the shifted treatment law
  otherwise);
* pass-through "oracle" learners exposing the true pi, mu, and the
  backward pseudo-outcome regressions, via :func:`oracle_nuisances`.

Named presets cover the test surface: a flat-curve null, a smooth
logistic single-period model, discrete two- and three-period models, a
near-positivity-violation stress model, a model with exact pi = 0 and
pi = 1 regions, and a model whose cumulative-treatment MSM is correctly
specified.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .data import Panel, stack_records
from .intervention import shift_propensity
from .longitudinal import DiscreteDGPModel, exact_pseudo_outcome, exact_potential_mean, gcomp_exact
from .nuisance import NuisanceFit, expit
from .longitudinal import NuisanceFitTV

_MC_CHUNK = 1_000_000


@dataclass(frozen=True)
class DiscreteCov:
    """Scalar covariate on a finite support; prob_fn returns (n, len(values))."""

    values: tuple
    prob_fn: object


@dataclass(frozen=True)
class GaussianCov:
    """Gaussian covariate block; mean_fn returns (n, dim)."""

    dim: int
    mean_fn: object
    sd: float


@dataclass(frozen=True)
class DGPSpec:
    """A complete generative model over (X_1, A_1, ..., X_T, A_T, Y).

    ``propensities[t-1]`` maps (list of covariate blocks through t,
    treatment matrix through t-1) to per-subject treatment probabilities;
    ``outcome_mean`` maps (all blocks, full treatment matrix) to the
    conditional outcome mean. Outcome noise is additive Gaussian with a
    constant standard deviation.
    """

    name: str
    n_periods: int
    covariates: tuple
    propensities: tuple
    outcome_mean: object
    noise_sd: float
    positivity: bool

    def __post_init__(self):
        if self.n_periods < 1:
            raise ValueError("n_periods must be positive")
        if len(self.covariates) != self.n_periods or len(self.propensities) != self.n_periods:
            raise ValueError("need one covariate generator and one propensity per period")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    @property
    def discrete(self) -> bool:
        return all(isinstance(c, DiscreteCov) for c in self.covariates)


@dataclass(frozen=True)
class OracleResult:
    """Ground-truth value with its computation method and Monte Carlo error."""

    value: float
    method: str
    draws: int | None = None
    se: float | None = None

    def __post_init__(self):
        if self.method not in ("exact-enumeration", "monte-carlo"):
            raise ValueError(f"unknown oracle method {self.method!r}")
        if self.method == "exact-enumeration" and self.se is not None:
            raise ValueError("exact results carry no standard error")
        if self.method == "monte-carlo" and not (self.se is not None and self.se > 0):
            raise ValueError("Monte Carlo results must carry a positive standard error")


def _draw_covariate(cov, xs, a_prev, rng):
    n = a_prev.shape[0]
    if isinstance(cov, DiscreteCov):
        probs = np.asarray(cov.prob_fn(xs, a_prev), dtype=float)
        if probs.shape != (n, len(cov.values)) or np.any(probs < 0):
            raise ValueError("invalid discrete covariate table")
        if np.max(np.abs(probs.sum(axis=1) - 1.0)) > 1e-8:
            raise ValueError("discrete covariate rows must sum to 1")
        u = rng.random(n)
        idx = (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1)
        idx = np.minimum(idx, len(cov.values) - 1)
        return np.asarray(cov.values, dtype=float)[idx][:, None]
    mean = np.asarray(cov.mean_fn(xs, a_prev), dtype=float)
    return mean + cov.sd * rng.standard_normal((n, cov.dim))


def _check_probs(pi, t):
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or np.any(pi > 1) or not np.all(np.isfinite(pi)):
        raise ValueError(f"propensity at t={t} left [0, 1]")
    return pi


def _simulate(dgp, n, rngs, delta=None, regime=None):
    """One pass through the generative law.

    ``delta`` switches treatment draws to the shifted propensities
    (counterfactual process); ``regime`` forces a fixed treatment vector.
    ``rngs(role, t)`` supplies the generator for each draw site.
    """
    xs = []
    a = np.zeros((n, dgp.n_periods), dtype=np.int64)
    for t in range(1, dgp.n_periods + 1):
        a_prev = a[:, : t - 1]
        xs.append(_draw_covariate(dgp.covariates[t - 1], xs, a_prev, rngs("x", t)))
        if regime is not None:
            a[:, t - 1] = regime[t - 1]
            continue
        pi = _check_probs(dgp.propensities[t - 1](xs, a_prev), t)
        if delta is not None:
            pi = shift_propensity(pi, delta)
        a[:, t - 1] = rngs("a", t).random(n) < pi
    mean = np.asarray(dgp.outcome_mean(xs, a), dtype=float)
    y = mean + dgp.noise_sd * rngs("y", 0).standard_normal(n)
    return xs, a, y


def generate(dgp: DGPSpec, n: int, seed: int):
    """Draw n i.i.d. subjects from the observational law.

    Returns a list of point records when T = 1 and a :class:`Panel`
    otherwise. Deterministic in (dgp, n, seed); the draw for each
    (variable, period) site comes from its own keyed stream.
    """
    if n < 1:
        raise ValueError("n must be positive")
    xs, a, y = _simulate(dgp, n, lambda role, t: stream(seed, role, t))
    panel = Panel(x=tuple(xs), a=a, y=y)
    if dgp.n_periods == 1:
        return panel.to_point_records()
    return panel


def to_discrete_model(dgp: DGPSpec) -> DiscreteDGPModel:
    """Adapter from a discrete spec to the enumeration model."""
    if not dgp.discrete:
        raise ValueError("exact enumeration requires a fully discrete model")

    def _arrays(hist, n_x):
        xs = [np.asarray([[hist[2 * s]]], dtype=float) for s in range(n_x)]
        a_prev = np.asarray([[hist[2 * s + 1] for s in range(min(n_x, (len(hist)) // 2))]], dtype=np.int64)
        return xs, a_prev

    def transition(t, hist):
        xs, a_prev = _arrays(hist, t - 1)
        return np.asarray(dgp.covariates[t - 1].prob_fn(xs, a_prev), dtype=float)[0]

    def propensity(t, hist):
        xs = [np.asarray([[hist[2 * s]]], dtype=float) for s in range(t)]
        a_prev = np.asarray([[hist[2 * s + 1] for s in range(t - 1)]], dtype=np.int64)
        return float(np.asarray(dgp.propensities[t - 1](xs, a_prev), dtype=float)[0])

    def outcome_mean(hist):
        T = dgp.n_periods
        xs = [np.asarray([[hist[2 * s]]], dtype=float) for s in range(T)]
        a = np.asarray([[hist[2 * s + 1] for s in range(T)]], dtype=np.int64)
        return float(np.asarray(dgp.outcome_mean(xs, a), dtype=float)[0])

    return DiscreteDGPModel(
        supports=tuple(tuple(float(v) for v in c.values) for c in dgp.covariates),
        transition=transition,
        propensity=propensity,
        outcome_mean=outcome_mean,
        n_periods=dgp.n_periods,
    )


def _mc_mean(dgp, draws, seed, label, delta=None, regime=None):
    total, total_sq, count = 0.0, 0.0, 0
    n_chunks = math.ceil(draws / _MC_CHUNK)
    for c in range(n_chunks):
        size = min(_MC_CHUNK, draws - c * _MC_CHUNK)
        rng = stream(seed, label, c)
        _, _, y = _simulate(dgp, size, lambda role, t: rng, delta=delta, regime=regime)
        total += float(y.sum())
        total_sq += float(y @ y)
        count += size
    mean = total / count
    var = max(total_sq - count * mean * mean, 0.0) / (count - 1)
    return mean, math.sqrt(var / count)


def oracle_psi(dgp: DGPSpec, delta, method: str = "auto", draws: int = 1_000_000, seed: int = 0) -> OracleResult:
    """True psi(delta): exact enumeration or Monte Carlo under the shifted law.

    The Monte Carlo route simulates the counterfactual process itself,
    drawing A_t from the shifted propensity at every period, so it shares
    no algebra with any estimator.
    """
    if method == "auto":
        method = "exact" if dgp.discrete else "mc"
    if method == "exact":
        if not dgp.discrete:
            raise ValueError("exact oracle requires a discrete model; use method='mc'")
        return OracleResult(value=gcomp_exact(to_discrete_model(dgp), delta), method="exact-enumeration")
    if method != "mc":
        raise ValueError(f"unknown oracle method {method!r}")
    mean, se = _mc_mean(dgp, draws, seed, "oracle-psi", delta=float(delta))
    return OracleResult(value=mean, method="monte-carlo", draws=draws, se=se)


def oracle_potential_mean(
    dgp: DGPSpec, regime, method: str = "auto", draws: int = 1_000_000, seed: int = 0
) -> OracleResult:
    """True E[Y^regime] for a fixed treatment regime."""
    regime = tuple(int(v) for v in np.atleast_1d(regime))
    if len(regime) != dgp.n_periods:
        raise ValueError(f"regime must have {dgp.n_periods} entries")
    if method == "auto":
        method = "exact" if dgp.discrete else "mc"
    if method == "exact":
        if not dgp.discrete:
            raise ValueError("exact oracle requires a discrete model; use method='mc'")
        return OracleResult(
            value=exact_potential_mean(to_discrete_model(dgp), regime), method="exact-enumeration"
        )
    mean, se = _mc_mean(dgp, draws, seed, "oracle-pot", regime=regime)
    return OracleResult(value=mean, method="monte-carlo", draws=draws, se=se)


class _OracleFnModel:
    """Pass-through learner: predictions come from the true function."""

    def __init__(self, fn):
        self._fn = fn

    def fit(self, features, targets):
        return self

    def predict(self, features, clip=False):
        return np.asarray(self._fn(np.asarray(features, dtype=float)), dtype=float)


def _split_history(features, dims, t):
    xs = []
    col = 0
    for s in range(t):
        xs.append(features[:, col : col + dims[s]])
        col += dims[s]
    a_prev = features[:, col : col + t - 1].astype(np.int64)
    return xs, a_prev


class _DiscreteTable:
    """Lookup over flattened discrete histories via radix codes."""

    def __init__(self, columns):
        # columns: list of sorted value arrays, one per feature column
        self.columns = [np.asarray(c, dtype=float) for c in columns]
        self.radix = np.ones(len(columns), dtype=np.int64)
        for j in range(len(columns) - 2, -1, -1):
            self.radix[j] = self.radix[j + 1] * len(self.columns[j + 1])
        self.size = int(self.radix[0] * len(self.columns[0])) if columns else 1
        self.values = np.zeros(self.size)

    def keys_for(self, features):
        key = np.zeros(len(features), dtype=np.int64)
        for j, col_values in enumerate(self.columns):
            idx = np.searchsorted(col_values, features[:, j])
            idx = np.minimum(idx, len(col_values) - 1)
            if np.max(np.abs(col_values[idx] - features[:, j])) > 1e-9:
                raise ValueError("feature value outside the discrete support")
            key += idx * self.radix[j]
        return key

    def fill(self, fn):
        for combo in itertools.product(*(range(len(c)) for c in self.columns)):
            key = int(np.dot(combo, self.radix))
            self.values[key] = fn([self.columns[j][i] for j, i in enumerate(combo)])


class OracleNuisances:
    """True-nuisance pass-through learners for a DGP.

    Satisfies the learner protocols used by the cross-fitting routines:
    ``pi_learner(t)`` and ``arm_learner(arm)`` mimic fitted probability
    and regression models, and ``m_learner(t, arm, delta)`` exposes the
    exact backward pseudo-outcome regression (enumerated, so discrete
    models only for T > 1).
    """

    def __init__(self, dgp: DGPSpec):
        self.dgp = dgp
        self._model = to_discrete_model(dgp) if dgp.discrete else None
        self._dims = tuple(c.dim if isinstance(c, GaussianCov) else 1 for c in dgp.covariates)
        self._m_tables = {}

    def pi_learner(self, t: int = 1):
        dgp, dims = self.dgp, self._dims

        def fn(features):
            xs, a_prev = _split_history(features, dims, t)
            return _check_probs(dgp.propensities[t - 1](xs, a_prev), t)

        return _OracleFnModel(fn)

    def arm_learner(self, arm: int):
        if self.dgp.n_periods != 1:
            raise ValueError("arm_learner is the T=1 outcome regression; use m_learner for panels")
        dgp = self.dgp

        def fn(features):
            a = np.full((len(features), 1), arm, dtype=np.int64)
            return np.asarray(dgp.outcome_mean([features], a), dtype=float)

        return _OracleFnModel(fn)

    def m_learner(self, t: int, arm: int, delta):
        T = self.dgp.n_periods
        if T == 1:
            return self.arm_learner(arm)
        if self._model is None:
            raise ValueError("exact pseudo-outcome oracles need a discrete model")
        key = (t, arm, float(delta))
        table = self._m_tables.get(key)
        if table is None:
            model = self._model
            columns = [np.sort(np.asarray(model.supports[s], dtype=float)) for s in range(t)]
            columns += [np.asarray([0.0, 1.0])] * (t - 1)
            table = _DiscreteTable(columns)

            def value(col_values):
                # columns are x_1..x_t then a_1..a_{t-1}; rebuild the interleaved history
                xs = col_values[:t]
                a_prev = col_values[t:]
                hist = []
                for s in range(t - 1):
                    hist += [xs[s], int(a_prev[s])]
                hist.append(xs[t - 1])
                return exact_pseudo_outcome(model, float(delta), t, tuple(hist), arm)

            table.fill(value)
            self._m_tables[key] = table

        def fn(features):
            return table.values[table.keys_for(features)]

        return _OracleFnModel(fn)

    def point_nuisance_fit(self, data) -> NuisanceFit:
        """True (pi, mu1, mu0) evaluated at the records."""
        X, _, _ = stack_records(data)
        return NuisanceFit(
            pi=self.pi_learner(1).predict(X),
            mu1=self.arm_learner(1).predict(X),
            mu0=self.arm_learner(0).predict(X),
            folds=None,
        )

    def panel_nuisance_fit(self, panel: Panel, grid) -> NuisanceFitTV:
        """True (pi_t, m_t) evaluated at the panel subjects for each delta."""
        from .data import history_features

        n, T = panel.n_subjects, panel.n_periods
        pi = np.empty((n, T))
        feats = [history_features(panel, t) for t in range(1, T + 1)]
        for t in range(1, T + 1):
            pi[:, t - 1] = self.pi_learner(t).predict(feats[t - 1])
        m1 = {}
        m0 = {}
        for delta in grid:
            d = float(delta)
            m1[d] = np.column_stack(
                [self.m_learner(t, 1, d).predict(feats[t - 1]) for t in range(1, T + 1)]
            )
            m0[d] = np.column_stack(
                [self.m_learner(t, 0, d).predict(feats[t - 1]) for t in range(1, T + 1)]
            )
        return NuisanceFitTV(pi=pi, m1=m1, m0=m0, folds=None)


def oracle_nuisances(dgp: DGPSpec) -> OracleNuisances:
    return OracleNuisances(dgp)


def bias_bound_diagnostic(nuis: NuisanceFit, dgp: DGPSpec, data) -> float:
    """Empirical second-order bias bound of the fitted nuisances.

    mean[(pi - pi_hat)^2] + mean[(pi - pi_hat) * max_a(mu_a - mu_hat_a)]
    over the fitted records, whose covariates are draws from the model
    law, so the averages are Monte Carlo integrals against it.
    """
    if dgp.n_periods != 1:
        raise ValueError("the bias bound diagnostic covers single-time-point fits")
    X, _, _ = stack_records(data)
    oracle = OracleNuisances(dgp)
    d_pi = oracle.pi_learner(1).predict(X) - nuis.pi
    d_mu = np.maximum(
        oracle.arm_learner(1).predict(X) - nuis.mu1,
        oracle.arm_learner(0).predict(X) - nuis.mu0,
    )
    return float(np.mean(d_pi**2) + np.mean(d_pi * d_mu))


def _x1(xs):
    return xs[0][:, 0]


def _preset_null() -> DGPSpec:
    cov = GaussianCov(dim=2, mean_fn=lambda xs, ap: np.zeros((ap.shape[0], 2)), sd=1.0)
    return DGPSpec(
        name="null",
        n_periods=1,
        covariates=(cov,),
        propensities=(lambda xs, ap: expit(0.3 + 0.5 * xs[0][:, 0] - 0.4 * xs[0][:, 1]),),
        outcome_mean=lambda xs, a: np.full(a.shape[0], 1.0),
        noise_sd=1.0,
        positivity=True,
    )


def _preset_single_logistic() -> DGPSpec:
    cov = GaussianCov(dim=2, mean_fn=lambda xs, ap: np.zeros((ap.shape[0], 2)), sd=1.0)

    def mu(xs, a):
        x1, x2 = xs[0][:, 0], xs[0][:, 1]
        return x1 + 0.5 * x2 + a[:, 0] * (1.0 + 0.5 * np.tanh(x1))

    return DGPSpec(
        name="single-logistic",
        n_periods=1,
        covariates=(cov,),
        propensities=(lambda xs, ap: expit(0.2 + 0.9 * xs[0][:, 0] - 0.6 * xs[0][:, 1]),),
        outcome_mean=mu,
        noise_sd=1.0,
        positivity=True,
    )


def _bern(p):
    p = np.asarray(p, dtype=float)
    return np.column_stack([1.0 - p, p])


def _binary_cov(prob1_fn) -> DiscreteCov:
    return DiscreteCov(values=(0.0, 1.0), prob_fn=lambda xs, ap: _bern(prob1_fn(xs, ap)))


def _preset_discrete_t2() -> DGPSpec:
    covs = (
        _binary_cov(lambda xs, ap: np.full(ap.shape[0], 0.5)),
        _binary_cov(lambda xs, ap: 0.2 + 0.3 * _x1(xs) + 0.3 * ap[:, 0]),
    )
    pis = (
        lambda xs, ap: 0.3 + 0.4 * _x1(xs),
        lambda xs, ap: 0.25 + 0.2 * _x1(xs) + 0.2 * ap[:, 0] + 0.25 * xs[1][:, 0],
    )

    def mu(xs, a):
        return (
            0.3
            + 0.3 * _x1(xs)
            + 0.2 * xs[1][:, 0]
            + 0.3 * a[:, 0]
            + 0.5 * a[:, 1]
            + 0.2 * a[:, 0] * a[:, 1]
        )

    return DGPSpec(
        name="discrete-T2",
        n_periods=2,
        covariates=covs,
        propensities=pis,
        outcome_mean=mu,
        noise_sd=0.5,
        positivity=True,
    )


def _preset_discrete_t3() -> DGPSpec:
    covs = (
        _binary_cov(lambda xs, ap: np.full(ap.shape[0], 0.5)),
        _binary_cov(lambda xs, ap: 0.2 + 0.3 * _x1(xs) + 0.3 * ap[:, 0]),
        _binary_cov(lambda xs, ap: 0.2 + 0.25 * xs[1][:, 0] + 0.35 * ap[:, 1]),
    )
    pis = (
        lambda xs, ap: 0.3 + 0.4 * _x1(xs),
        lambda xs, ap: 0.25 + 0.2 * _x1(xs) + 0.2 * ap[:, 0] + 0.25 * xs[1][:, 0],
        lambda xs, ap: 0.2 + 0.15 * _x1(xs) + 0.2 * ap[:, 1] + 0.3 * xs[2][:, 0],
    )

    def mu(xs, a):
        return (
            0.2
            + 0.25 * _x1(xs)
            + 0.15 * xs[1][:, 0]
            + 0.2 * xs[2][:, 0]
            + 0.25 * a[:, 0]
            + 0.3 * a[:, 1]
            + 0.45 * a[:, 2]
            + 0.15 * a[:, 1] * a[:, 2]
        )

    return DGPSpec(
        name="discrete-T3",
        n_periods=3,
        covariates=covs,
        propensities=pis,
        outcome_mean=mu,
        noise_sd=0.5,
        positivity=True,
    )


def _preset_near_violation() -> DGPSpec:
    covs = (
        _binary_cov(lambda xs, ap: np.full(ap.shape[0], 0.5)),
        _binary_cov(lambda xs, ap: 0.3 + 0.4 * _x1(xs)),
    )
    pis = (
        lambda xs, ap: expit(-5.29 + 3.2 * _x1(xs)),
        lambda xs, ap: expit(-5.29 + 2.6 * xs[1][:, 0] + 2.6 * ap[:, 0]),
    )

    def mu(xs, a):
        return 0.5 + 0.3 * _x1(xs) + 0.3 * xs[1][:, 0] + 0.5 * (a[:, 0] + a[:, 1])

    return DGPSpec(
        name="near-violation",
        n_periods=2,
        covariates=covs,
        propensities=pis,
        outcome_mean=mu,
        noise_sd=1.0,
        positivity=True,
    )


def _preset_structural_violation() -> DGPSpec:
    cov = DiscreteCov(
        values=(0.0, 1.0, 2.0, 3.0),
        prob_fn=lambda xs, ap: np.full((ap.shape[0], 4), 0.25),
    )
    table = np.asarray([0.0, 0.35, 0.65, 1.0])

    def mu(xs, a):
        x = _x1(xs)
        return 0.2 + 0.25 * x + a[:, 0] * (0.8 - 0.1 * x)

    return DGPSpec(
        name="structural-violation",
        n_periods=1,
        covariates=(cov,),
        propensities=(lambda xs, ap: table[_x1(xs).astype(np.int64)],),
        outcome_mean=mu,
        noise_sd=0.5,
        positivity=False,
    )


def _preset_msm_compatible() -> DGPSpec:
    covs = (
        _binary_cov(lambda xs, ap: np.full(ap.shape[0], 0.5)),
        _binary_cov(lambda xs, ap: 0.3 + 0.4 * _x1(xs)),
    )
    pis = (
        lambda xs, ap: expit(-0.4 + 0.8 * _x1(xs)),
        lambda xs, ap: expit(-0.7 + 0.6 * _x1(xs) + 0.8 * xs[1][:, 0] + 0.5 * ap[:, 0]),
    )

    def mu(xs, a):
        # potential-outcome mean is 0.65 + 0.5 * (a1 + a2): x2 does not react
        # to a1, so the cumulative-linear working model is exactly correct
        return 0.4 + 0.3 * _x1(xs) + 0.2 * xs[1][:, 0] + 0.5 * (a[:, 0] + a[:, 1])

    return DGPSpec(
        name="msm-compatible",
        n_periods=2,
        covariates=covs,
        propensities=pis,
        outcome_mean=mu,
        noise_sd=1.0,
        positivity=True,
    )


_PRESET_BUILDERS = {
    "null": _preset_null,
    "single-logistic": _preset_single_logistic,
    "discrete-T2": _preset_discrete_t2,
    "discrete-T3": _preset_discrete_t3,
    "near-violation": _preset_near_violation,
    "structural-violation": _preset_structural_violation,
    "msm-compatible": _preset_msm_compatible,
}

PRESET_NAMES = tuple(_PRESET_BUILDERS)


def get_preset(name: str) -> DGPSpec:
    builder = _PRESET_BUILDERS.get(name)
    if builder is None:
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    return builder()
