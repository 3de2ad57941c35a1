"""Comparator estimands that need positivity: AIPW ATE and IPW-fitted MSMs.

These are the estimators the incremental intervention is measured
against. Their weights divide by (products of) propensities, so the
propensity predictions are always clipped here, and the number of
clipped factors is reported as a diagnostic.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .data import Panel, stack_records
from .inference import normal_quantile
from .nuisance import NuisanceFit, clip_probabilities
from .single import _phi_arm


class SingularModelError(RuntimeError):
    """The MSM design matrix is rank deficient in this sample."""


@dataclass(frozen=True)
class ATEEstimate:
    """AIPW average treatment effect with influence-function inference."""

    estimate: float
    se: float
    ci_lo: float
    ci_hi: float

    def __post_init__(self):
        if not self.ci_lo <= self.estimate <= self.ci_hi:
            raise ValueError("confidence interval must contain the estimate")


def ate_aipw(nuis: NuisanceFit, data, alpha: float = 0.05, eps_clip: float = 0.01) -> ATEEstimate:
    """Mean of phi_1 - phi_0 with clipped propensities.

    Unlike the incremental estimators, the arm pseudo-outcomes divide by
    P(A=a|X), so clipping to [eps_clip, 1-eps_clip] is mandatory.
    """
    _, a, y = stack_records(data)
    pi, _ = clip_probabilities(nuis.pi, eps_clip)
    contrast = _phi_arm(y, a, 1, pi, nuis.mu1) - _phi_arm(y, a, 0, 1.0 - pi, nuis.mu0)
    est = float(contrast.mean())
    se = float(np.std(contrast, ddof=1) / math.sqrt(len(y)))
    z = normal_quantile(1.0 - alpha / 2.0)
    return ATEEstimate(estimate=est, se=se, ci_lo=est - z * se, ci_hi=est + z * se)


def efficiency_bound(dgp, draws: int = 1_000_000, seed: int = 0) -> float:
    """Minimal asymptotic variance for regular ATE estimators under this model.

    Averages var(Y1|X)/pi + var(Y0|X)/(1-pi) + (CATE - ATE)^2 over the
    covariate law, exactly for a discrete covariate and by Monte Carlo
    otherwise. Propensities of exactly 0 or 1 on positive-probability
    covariate values make the bound infinite.
    """
    from .simulate import DiscreteCov  # local import to avoid a cycle

    if dgp.n_periods != 1:
        raise ValueError("the ATE efficiency bound is a single-time-point quantity")
    cov = dgp.covariates[0]
    if isinstance(cov, DiscreteCov):
        values = np.asarray(cov.values, dtype=float)[:, None]
        weights = np.asarray(cov.prob_fn([], np.zeros((1, 0))), dtype=float).ravel()
        X = values
    else:
        rng = stream(seed, "effbound")
        X = cov.mean_fn([], np.zeros((draws, 0))) + cov.sd * rng.standard_normal((draws, cov.dim))
        weights = np.full(len(X), 1.0 / len(X))
    pi = np.asarray(dgp.propensities[0]([X], np.zeros((len(X), 0))), dtype=float)
    boundary = (pi == 0.0) | (pi == 1.0)
    if np.any(boundary & (weights > 0)):
        warnings.warn("positivity violated: propensity hits 0 or 1 with positive probability; bound is infinite")
        return math.inf
    mu1 = dgp.outcome_mean([X], np.ones((len(X), 1), dtype=np.int64))
    mu0 = dgp.outcome_mean([X], np.zeros((len(X), 1), dtype=np.int64))
    cate = mu1 - mu0
    ate = float(weights @ cate)
    var_y = dgp.noise_sd**2
    return float(weights @ (var_y / pi + var_y / (1.0 - pi) + (cate - ate) ** 2))


@dataclass(frozen=True)
class MSMSpec:
    """Cumulative-treatment working model m(a; beta) = beta0 + beta1 * sum(a_t).

    The moment-condition h function is fixed to the model gradient
    (1, sum a_t), which turns the estimating equation into weighted least
    squares.
    """

    weight_kind: str = "standard"
    model: str = "cumulative-linear"

    def __post_init__(self):
        if self.weight_kind not in ("standard", "stabilized"):
            raise ValueError(f"unknown weight kind {self.weight_kind!r}")
        if self.model != "cumulative-linear":
            raise ValueError("only the cumulative-linear working model is supported")


@dataclass(frozen=True)
class MSMFit:
    """Fitted working-model coefficients (intercept, cumulative slope)."""

    beta: np.ndarray
    weight_kind: str
    n_periods: int

    def cumulative_contrast(self) -> float:
        """Implied all-treated minus never-treated contrast, T * beta1."""
        return float(self.n_periods * self.beta[1])


def msm_weights(panel: Panel, nuis_tv, kind: str = "standard", eps_clip: float = 0.01):
    """Per-subject IPW weights for the MSM moment condition.

    Standard weights multiply 1 / P(A_t | H_t); stabilized weights put
    the empirical P(A_t | past treatments) in the numerator (cells of
    identical treatment history, falling back to the marginal frequency
    for the empty history at t = 1). Every denominator factor is clipped
    to [eps_clip, 1-eps_clip]; returns (weights, number clipped).
    """
    if kind not in ("standard", "stabilized"):
        raise ValueError(f"unknown weight kind {kind!r}")
    pi = nuis_tv.pi if hasattr(nuis_tv, "pi") else np.asarray(nuis_tv, dtype=float)
    n, T = pi.shape
    a = panel.a
    af = a.astype(float)
    pi_c, n_clipped = clip_probabilities(pi, eps_clip)
    denom = af * pi_c + (1.0 - af) * (1.0 - pi_c)
    w = 1.0 / denom.prod(axis=1)
    if kind == "stabilized":
        numer = np.empty((n, T))
        for t in range(T):
            _, cell = np.unique(a[:, :t], axis=0, return_inverse=True)
            p1 = np.bincount(cell, weights=af[:, t]) / np.bincount(cell)
            numer[:, t] = af[:, t] * p1[cell] + (1.0 - af[:, t]) * (1.0 - p1[cell])
        w = w * numer.prod(axis=1)
    return w, n_clipped


def fit_msm(panel: Panel, weights, spec: MSMSpec) -> MSMFit:
    """Weighted least squares of y on (1, sum a_t), the gradient basis."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (panel.n_subjects,):
        raise ValueError("weights must align with subjects")
    csum = panel.a.sum(axis=1).astype(float)
    if np.unique(csum).size < 2:
        raise SingularModelError("all subjects share one cumulative treatment; design is singular")
    X = np.column_stack([np.ones(panel.n_subjects), csum])
    gram = (X * w[:, None]).T @ X
    if abs(np.linalg.det(gram)) < 1e-12 * max(1.0, abs(gram[0, 0]) * abs(gram[1, 1])):
        raise SingularModelError("weighted design matrix is numerically singular")
    beta = np.linalg.solve(gram, (X * w[:, None]).T @ panel.y)
    return MSMFit(beta=beta, weight_kind=spec.weight_kind, n_periods=panel.n_periods)
