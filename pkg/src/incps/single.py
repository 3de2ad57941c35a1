"""Single-time-point estimators of the delta curve psi(delta).

Three estimators share the cross-fitted nuisances: an outcome-based
plug-in, an IPW plug-in, and the influence-function one-step estimator,
which averages the un-centered influence value

    [delta*pi*phi1 + (1-pi)*phi0] / (delta*pi + 1 - pi)
        + delta*(mu1 - mu0)*(a - pi) / (delta*pi + 1 - pi)^2.

The first term is expanded before dividing (delta*pi*phi1 collapses to
delta*a*(y - mu1) + delta*pi*mu1, and likewise for the control arm), so
pi in {0, 1} never produces 0/0 and no positivity assumption is needed.
At delta = 1 the influence value reduces to y identically, which pins
psi_hat(1) = mean(y) for arbitrary nuisance predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FoldAssignment, stack_records
from .intervention import DeltaGrid, _check_delta
from .nuisance import NuisanceFit, crossfit_nuisances


@dataclass(frozen=True)
class IFMatrix:
    """Un-centered influence values, subjects by grid deltas.

    Column means equal the one-step estimates, which makes pooled
    variance and multiplier-bootstrap computations bookkeeping-free.
    """

    values: np.ndarray
    grid: DeltaGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[1] != len(self.grid):
            raise ValueError(f"values shape {v.shape} does not match grid size {len(self.grid)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("influence values must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def psi_hat(self) -> np.ndarray:
        return self.values.mean(axis=0)


def aipw_pseudo_outcome(record, arm, pi_hat, mu_hat_arm) -> float:
    """Un-centered influence value for E[mu(X, arm)]: 1(A=a)/P(A=a|X)*(y-mu) + mu.

    This standalone form divides by the arm probability, so it is only
    for positivity-safe uses (ATE with clipped propensities). Incremental
    estimators must use the cancellation form inside
    :func:`uncentered_if` instead.
    """
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    p_arm = pi_hat if arm == 1 else 1.0 - pi_hat
    if record.a == arm:
        if p_arm == 0.0:
            raise ZeroDivisionError(
                "P(A=a|X) is exactly 0 for an observed A=a; use the cancellation "
                "form (uncentered_if) which never divides by the arm probability"
            )
        return (record.y - mu_hat_arm) / p_arm + mu_hat_arm
    return float(mu_hat_arm)


def _phi_arm(y, a, arm, p_arm, mu_arm):
    """Vectorized pseudo-outcomes for one arm; caller guarantees p_arm > 0."""
    ind = (a == arm).astype(float)
    return ind / p_arm * (y - mu_arm) + mu_arm


def _if_values(y, a, pi, mu1, mu0, delta):
    """Influence values in the cancellation form, one entry per record."""
    delta = _check_delta(delta)
    af = a.astype(float)
    denom = delta * pi + (1.0 - pi)
    num = (
        (delta * af + 1.0 - af) * y
        - delta * af * mu1
        - (1.0 - af) * mu0
        + delta * pi * mu1
        + (1.0 - pi) * mu0
    )
    correction = delta * (mu1 - mu0) * (af - pi) / denom**2
    return num / denom + correction


def uncentered_if(record, delta, pi_hat, mu1_hat, mu0_hat) -> float:
    """Un-centered influence value for one record; exactly y at delta = 1."""
    values = _if_values(
        np.asarray([record.y]),
        np.asarray([record.a]),
        np.asarray([float(pi_hat)]),
        np.asarray([float(mu1_hat)]),
        np.asarray([float(mu0_hat)]),
        delta,
    )
    if not np.isfinite(values[0]):
        raise ValueError("non-finite nuisance prediction")
    return float(values[0])


def _grid_map(grid, fn):
    return np.asarray([fn(d) for d in grid])


def estimate_plugin_outcome(nuis: NuisanceFit, data, grid: DeltaGrid) -> np.ndarray:
    """Outcome-based plug-in: average of the shifted-weighted regressions."""
    _, _, y = stack_records(data)
    _check_alignment(nuis, len(y))
    pi, mu1, mu0 = nuis.pi, nuis.mu1, nuis.mu0

    def one(delta):
        denom = delta * pi + (1.0 - pi)
        return float(np.mean((delta * pi * mu1 + (1.0 - pi) * mu0) / denom))

    return _grid_map(grid, one)


def estimate_ipw(nuis: NuisanceFit, data, grid: DeltaGrid) -> np.ndarray:
    """IPW plug-in: average of y * (delta*a + 1 - a) / (delta*pi + 1 - pi)."""
    _, a, y = stack_records(data)
    _check_alignment(nuis, len(y))
    af = a.astype(float)
    pi = nuis.pi

    def one(delta):
        w = (delta * af + 1.0 - af) / (delta * pi + (1.0 - pi))
        return float(np.mean(y * w))

    return _grid_map(grid, one)


def if_matrix_from_nuisances(nuis: NuisanceFit, data, grid: DeltaGrid) -> IFMatrix:
    """Influence values at given (possibly oracle) nuisance predictions."""
    _, a, y = stack_records(data)
    _check_alignment(nuis, len(y))
    cols = [_if_values(y, a, nuis.pi, nuis.mu1, nuis.mu0, delta) for delta in grid]
    return IFMatrix(values=np.column_stack(cols), grid=grid)


@dataclass(frozen=True)
class OneStepFit:
    """Cross-fitted one-step estimate with its influence matrix."""

    psi_hat: np.ndarray
    if_matrix: IFMatrix
    nuisances: NuisanceFit


def estimate_onestep_crossfit(
    data, folds: FoldAssignment, spec_pi, spec_mu, grid: DeltaGrid
) -> OneStepFit:
    """K-fold cross-fitted one-step estimator over the whole grid.

    Nuisances are fit on each fold's complement and evaluated out of
    fold; the pooled mean of influence values equals the fold-size
    weighted average of per-fold means.
    """
    nuis = crossfit_nuisances(data, folds, spec_pi, spec_mu)
    if_matrix = if_matrix_from_nuisances(nuis, data, grid)
    return OneStepFit(psi_hat=if_matrix.psi_hat, if_matrix=if_matrix, nuisances=nuis)


def _check_alignment(nuis, n):
    if len(nuis.pi) != n:
        raise ValueError(f"nuisance predictions cover {len(nuis.pi)} records, data has {n}")
