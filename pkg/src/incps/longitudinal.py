"""Time-varying estimators of the delta curve.

Three routes to psi(delta) for panels:

* :func:`gcomp_exact` evaluates the g-formula identification exactly on a
  finite discrete model by enumerating every treatment regime and
  covariate path (the per-period treatment factor is a_t*q_t +
  (1-a_t)*(1-q_t) with q_t the shifted propensity).
* :func:`estimate_ipw_tv` averages y times the product of per-period
  incremental weights.
* :func:`estimate_eif_crossfit_tv` averages the un-centered efficient
  influence value, with the pseudo-outcome regressions m_t estimated by
  backward recursion through time and all nuisances cross-fitted.

The influence value sums, over periods t,

    [A_t(1 - pi_t) - (1 - A_t) delta pi_t] * (1-delta)/delta
        * V_t * prod_{s<=t} w_s   +   y * prod_{t<=T} w_t,

where w_s is the incremental weight at period s and V_t = q_t m_t(H_t,1)
+ (1-q_t) m_t(H_t,0). The (1-delta)/delta factor is exactly 0 at delta=1,
so the estimate reduces to mean(y) there for any nuisances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FoldAssignment, Panel, history_features
from .intervention import DeltaGrid, _check_delta, shift_propensity, weight_matrix
from .nuisance import RegressionModel, _ConstantModel, _fit_prob_like, _fit_reg_like
from .single import IFMatrix

ENUMERATION_GUARD = 10_000_000


class EnumerationTooLarge(ValueError):
    """Exact enumeration would exceed the term guard; use the Monte Carlo oracle."""


@dataclass(frozen=True)
class DiscreteDGPModel:
    """Finite-support generative model, the input to exact enumeration.

    Histories are flat tuples alternating covariate values and treatments
    (x_1, a_1, x_2, a_2, ...). ``transition(t, hist)`` returns the
    distribution of x_t over ``supports[t-1]`` given the history through
    period t-1; ``propensity(t, hist)`` takes the history including x_t;
    ``outcome_mean`` takes the complete (x_1, a_1, ..., x_T, a_T) tuple.
    """

    supports: tuple
    transition: object
    propensity: object
    outcome_mean: object
    n_periods: int

    def path_count(self) -> int:
        count = 1
        for values in self.supports:
            count *= 2 * len(values)
        return count


def _transition_probs(model, t, hist):
    probs = np.asarray(model.transition(t, hist), dtype=float)
    if probs.shape != (len(model.supports[t - 1]),):
        raise ValueError(f"transition at t={t} returned {probs.shape}, want ({len(model.supports[t-1])},)")
    if abs(probs.sum() - 1.0) > 1e-10 or np.any(probs < 0):
        raise ValueError(f"transition probabilities at t={t} do not form a distribution")
    return probs


def _guard(model):
    count = model.path_count()
    if count > ENUMERATION_GUARD:
        raise EnumerationTooLarge(
            f"{count} enumeration terms exceed the {ENUMERATION_GUARD} guard; "
            "use the Monte Carlo oracle instead"
        )


def gcomp_exact(model: DiscreteDGPModel, delta) -> float:
    """Exact psi(delta) by enumerating all regimes and covariate paths."""
    delta = _check_delta(delta)
    _guard(model)

    def rec(t, hist, weight):
        if t > model.n_periods:
            return weight * model.outcome_mean(hist)
        total = 0.0
        for x, px in zip(model.supports[t - 1], _transition_probs(model, t, hist)):
            if px == 0.0:
                continue
            q = shift_propensity(model.propensity(t, hist + (x,)), delta)
            if q > 0.0:
                total += rec(t + 1, hist + (x, 1), weight * px * q)
            if q < 1.0:
                total += rec(t + 1, hist + (x, 0), weight * px * (1.0 - q))
        return total

    return rec(1, (), 1.0)


def exact_pseudo_outcome(model: DiscreteDGPModel, delta, t, history, a_t) -> float:
    """m_t(h_t, a_t): outcome mean under the intervention from period t+1 on.

    ``history`` is the flat tuple (x_1, a_1, ..., x_t); the recursion
    marginalizes x_{t+1}..x_T over the model transitions and a_s over the
    shifted propensities. m_T is the outcome regression itself.
    """
    delta = _check_delta(delta)
    _guard(model)
    if not 1 <= t <= model.n_periods:
        raise ValueError(f"t must be in 1..{model.n_periods}")
    if len(history) != 2 * t - 1:
        raise ValueError(f"history for t={t} must have {2 * t - 1} entries, got {len(history)}")
    memo = {}

    def rec(s, hist):
        if s == model.n_periods:
            return model.outcome_mean(hist)
        key = hist
        cached = memo.get(key)
        if cached is not None:
            return cached
        val = 0.0
        for x, px in zip(model.supports[s], _transition_probs(model, s + 1, hist)):
            if px == 0.0:
                continue
            q = shift_propensity(model.propensity(s + 1, hist + (x,)), delta)
            val += px * (q * rec(s + 1, hist + (x, 1)) + (1.0 - q) * rec(s + 1, hist + (x, 0)))
        memo[key] = val
        return val

    return rec(t, tuple(history) + (a_t,))


def exact_observational_mean(model: DiscreteDGPModel) -> float:
    """E(Y) under the observational law by direct total-expectation enumeration.

    Treatments are weighted by the raw propensities, without any shift
    machinery, so this is an independent cross-check for gcomp_exact at
    delta = 1.
    """
    _guard(model)

    def rec(t, hist, weight):
        if t > model.n_periods:
            return weight * model.outcome_mean(hist)
        total = 0.0
        for x, px in zip(model.supports[t - 1], _transition_probs(model, t, hist)):
            if px == 0.0:
                continue
            pi = float(model.propensity(t, hist + (x,)))
            if pi > 0.0:
                total += rec(t + 1, hist + (x, 1), weight * px * pi)
            if pi < 1.0:
                total += rec(t + 1, hist + (x, 0), weight * px * (1.0 - pi))
        return total

    return rec(1, (), 1.0)


def exact_potential_mean(model: DiscreteDGPModel, regime) -> float:
    """E(Y^regime) for a fixed treatment regime, by the g-formula."""
    regime = tuple(int(a) for a in regime)
    if len(regime) != model.n_periods or any(a not in (0, 1) for a in regime):
        raise ValueError(f"regime must be {model.n_periods} binary values")
    _guard(model)

    def rec(t, hist, weight):
        if t > model.n_periods:
            return weight * model.outcome_mean(hist)
        total = 0.0
        for x, px in zip(model.supports[t - 1], _transition_probs(model, t, hist)):
            if px > 0.0:
                total += rec(t + 1, hist + (x, regime[t - 1]), weight * px)
        return total

    return rec(1, (), 1.0)


@dataclass(frozen=True)
class NuisanceFitTV:
    """Out-of-fold time-varying nuisances.

    ``pi`` is (n, T); ``m1[delta]`` and ``m0[delta]`` are (n, T) arrays of
    pseudo-outcome regression predictions for each grid delta (m_t depends
    on delta through the shifted propensities inside its recursion).
    """

    pi: np.ndarray
    m1: dict
    m0: dict
    folds: FoldAssignment | None = None
    fallbacks: tuple = ()

    def __post_init__(self):
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ValueError("propensity predictions must lie in [0, 1]")


def _eif_values(a, y, pi, m1, m0, delta):
    """Vectorized un-centered efficient influence values, one per subject."""
    delta = _check_delta(delta)
    af = a.astype(float)
    denom = delta * pi + (1.0 - pi)
    cumw = weight_matrix(af, pi, delta)
    fluct = (delta * pi * m1 + (1.0 - pi) * m0) / denom
    scale = 0.0 if delta == 1.0 else (1.0 - delta) / delta
    bracket = (af * (1.0 - pi) - (1.0 - af) * delta * pi) * scale
    return (bracket * fluct * cumw).sum(axis=1) + cumw[:, -1] * y


def uncentered_eif_tv(treatments, outcome, propensities, m1, m0, delta) -> float:
    """Influence value for one subject trajectory; exactly y at delta = 1."""
    a = np.atleast_2d(np.asarray(treatments, dtype=float))
    pi = np.atleast_2d(np.asarray(propensities, dtype=float))
    m1 = np.atleast_2d(np.asarray(m1, dtype=float))
    m0 = np.atleast_2d(np.asarray(m0, dtype=float))
    if not (a.shape == pi.shape == m1.shape == m0.shape):
        raise ValueError("trajectory slices must share one shape")
    if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(m1)) and np.all(np.isfinite(m0))):
        raise ValueError("non-finite nuisance values")
    return float(_eif_values(a, np.asarray([outcome], dtype=float), pi, m1, m0, delta)[0])


def _pi_matrix(nuis_tv):
    return nuis_tv.pi if hasattr(nuis_tv, "pi") else np.asarray(nuis_tv, dtype=float)


def estimate_ipw_tv(panel: Panel, nuis_tv, grid: DeltaGrid) -> np.ndarray:
    """IPW plug-in: mean of y times the full trajectory weight, per delta."""
    pi = _pi_matrix(nuis_tv)
    af = panel.a.astype(float)
    out = []
    for delta in grid:
        cumw = weight_matrix(af, pi, delta)
        out.append(float(np.mean(panel.y * cumw[:, -1])))
    return np.asarray(out)


@dataclass(frozen=True)
class BackwardFit:
    """Per-period arm-specific pseudo-outcome regressions, t = T..1."""

    models: tuple
    m1: np.ndarray
    m0: np.ndarray
    fallbacks: tuple = ()


def _fit_backward(panel, pi, delta, spec_m, train):
    """Backward recursion on training rows; predictions for all rows.

    Fits m_T by regressing y on H_T (one model per treatment arm), then
    for t < T regresses the pseudo-outcome V_{t+1} = q_{t+1} m_{t+1}(.,1)
    + (1 - q_{t+1}) m_{t+1}(.,0) on H_t, again per arm. q uses the pi
    predictions supplied by the caller, so cross-fitting is controlled
    entirely by (pi, train).
    """
    n, T = panel.n_subjects, panel.n_periods
    m1 = np.empty((n, T))
    m0 = np.empty((n, T))
    models = [None] * T
    fallbacks = []
    target = panel.y
    for t in range(T, 0, -1):
        feats = history_features(panel, t)
        pair = {}
        for arm in (1, 0):
            if hasattr(spec_m, "m_learner"):
                model = spec_m.m_learner(t, arm, delta).fit(feats[train], target[train])
            else:
                sub = train[panel.a[train, t - 1] == arm]
                if len(sub) == 0:
                    model = RegressionModel(_ConstantModel(target[train].mean()), feats.shape[1])
                    fallbacks.append((t, arm))
                else:
                    model = _fit_reg_like(spec_m, feats[sub], target[sub])
            pair[arm] = model
            (m1 if arm == 1 else m0)[:, t - 1] = model.predict(feats)
        models[t - 1] = (pair[1], pair[0])
        if t > 1:
            q = shift_propensity(pi[:, t - 1], delta)
            target = q * m1[:, t - 1] + (1.0 - q) * m0[:, t - 1]
    return BackwardFit(models=tuple(models), m1=m1, m0=m0, fallbacks=tuple(fallbacks))


def backward_pseudo_regressions(panel: Panel, pi_hats, delta, spec_m) -> BackwardFit:
    """Backward pseudo-outcome regressions fit on the whole panel."""
    pi = _pi_matrix(pi_hats)
    if pi.shape != (panel.n_subjects, panel.n_periods):
        raise ValueError(f"propensity matrix {pi.shape} does not match panel")
    return _fit_backward(panel, pi, _check_delta(delta), spec_m, np.arange(panel.n_subjects))


def crossfit_nuisances_tv(
    panel: Panel, folds: FoldAssignment, spec_pi, spec_m, grid: DeltaGrid
) -> NuisanceFitTV:
    """Cross-fitted pi_t and backward m_t for every delta on the grid.

    For each fold, propensities and the full backward recursion are fit
    on the fold complement (the recursion is refit per delta because the
    pseudo-outcomes depend on delta), then evaluated on the held-out
    fold. Subjects stay whole: the fold assignment is per subject.
    """
    n, T = panel.n_subjects, panel.n_periods
    if folds.n_subjects != n:
        raise ValueError(f"fold assignment covers {folds.n_subjects} subjects, panel has {n}")
    pi_oof = np.empty((n, T))
    m1 = {float(d): np.empty((n, T)) for d in grid}
    m0 = {float(d): np.empty((n, T)) for d in grid}
    fallbacks = []
    for k in range(1, folds.n_folds + 1):
        test = folds.fold_indices(k)
        train = folds.complement_indices(k)
        pi_k = np.empty((n, T))
        for t in range(1, T + 1):
            feats = history_features(panel, t)
            if hasattr(spec_pi, "pi_learner"):
                model = spec_pi.pi_learner(t).fit(feats[train], panel.a[train, t - 1].astype(float))
            else:
                model = _fit_prob_like(spec_pi, feats[train], panel.a[train, t - 1].astype(float))
            pi_k[:, t - 1] = model.predict(feats)
        pi_oof[test] = pi_k[test]
        for delta in grid:
            fit = _fit_backward(panel, pi_k, float(delta), spec_m, train)
            m1[float(delta)][test] = fit.m1[test]
            m0[float(delta)][test] = fit.m0[test]
            fallbacks += [(k, float(delta)) + fb for fb in fit.fallbacks]
    return NuisanceFitTV(pi=pi_oof, m1=m1, m0=m0, folds=folds, fallbacks=tuple(fallbacks))


def tv_if_matrix_from_nuisances(panel: Panel, nuis_tv: NuisanceFitTV, grid: DeltaGrid) -> IFMatrix:
    """Influence values at given (possibly oracle) time-varying nuisances."""
    cols = [
        _eif_values(panel.a, panel.y, nuis_tv.pi, nuis_tv.m1[float(d)], nuis_tv.m0[float(d)], float(d))
        for d in grid
    ]
    return IFMatrix(values=np.column_stack(cols), grid=grid)


@dataclass(frozen=True)
class EIFFitTV:
    """Cross-fitted time-varying EIF estimate with its influence matrix."""

    psi_hat: np.ndarray
    if_matrix: IFMatrix
    nuisances: NuisanceFitTV


def estimate_eif_crossfit_tv(
    panel: Panel, folds: FoldAssignment, spec_pi, spec_m, grid: DeltaGrid
) -> EIFFitTV:
    """K-fold cross-fitted efficient-influence-function estimator."""
    nuis = crossfit_nuisances_tv(panel, folds, spec_pi, spec_m, grid)
    if_matrix = tv_if_matrix_from_nuisances(panel, nuis, grid)
    return EIFFitTV(psi_hat=if_matrix.psi_hat, if_matrix=if_matrix, nuisances=nuis)
