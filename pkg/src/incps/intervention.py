"""The incremental propensity-score shift and its inverse-probability weights.

The intervention multiplies the odds of treatment by delta: a propensity
pi becomes delta*pi / (delta*pi + 1 - pi). The shift leaves pi = 0 and
pi = 1 fixed, so no positivity assumption is needed anywhere downstream;
every weight denominator is bounded below by min(1, delta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DeltaGrid:
    """Strictly increasing positive odds multipliers."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if v.size == 0:
            raise ValueError("grid must be non-empty")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("grid values must be finite and positive")
        if np.any(np.diff(v) <= 0):
            raise ValueError("grid values must be strictly increasing")

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def default_grid(lo=0.2, hi=5.0, points=50, log=True) -> DeltaGrid:
    """Default delta range 0.2..5, logarithmically spaced (symmetric about 1)."""
    if points == 1:
        return DeltaGrid(np.asarray([lo]))
    if log:
        return DeltaGrid(np.exp(np.linspace(np.log(lo), np.log(hi), points)))
    return DeltaGrid(np.linspace(lo, hi, points))


def _check_delta(delta):
    if not np.isfinite(delta) or delta <= 0:
        raise ValueError(f"delta must be a positive real, got {delta!r}")
    return float(delta)


def _check_pi(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or np.any(pi > 1):
        raise ValueError("propensities must lie in [0, 1]")
    return pi


def shift_propensity(pi, delta):
    """Propensity under the intervention: delta*pi / (delta*pi + 1 - pi).

    Equals pi at delta = 1, exactly 0 at pi = 0 and exactly 1 at pi = 1
    for any delta. Scalar or array pi.
    """
    delta = _check_delta(delta)
    pi = _check_pi(pi)
    out = delta * pi / (delta * pi + (1.0 - pi))
    return out if out.ndim else float(out)


def ipw_factor(a, pi, delta):
    """Weight (delta*a + 1 - a) / (delta*pi + 1 - pi).

    Finite for every pi in [0, 1]: the denominator is at least min(1, delta).
    Equals 1 when delta = 1. Scalar or array arguments.
    """
    delta = _check_delta(delta)
    pi = _check_pi(pi)
    a = np.asarray(a, dtype=float)
    if not np.isin(a, (0.0, 1.0)).all():
        raise ValueError("treatments must be 0 or 1")
    out = (delta * a + 1.0 - a) / (delta * pi + (1.0 - pi))
    return out if out.ndim else float(out)


def trajectory_weight(treatments, propensities, delta):
    """Product of per-period ipw factors along one trajectory."""
    a = np.atleast_1d(np.asarray(treatments, dtype=float))
    pi = np.atleast_1d(np.asarray(propensities, dtype=float))
    if a.shape != pi.shape:
        raise ValueError(f"treatments {a.shape} and propensities {pi.shape} differ in length")
    return float(np.prod(ipw_factor(a, pi, delta)))


def weight_matrix(a, pi, delta):
    """Cumulative trajectory weights, subjects by periods.

    Column t holds the product of ipw factors over periods 1..t+1; the
    last column is the full trajectory weight.
    """
    delta = _check_delta(delta)
    a = np.asarray(a, dtype=float)
    factors = (delta * a + 1.0 - a) / (delta * pi + (1.0 - pi))
    return np.cumprod(factors, axis=1)
