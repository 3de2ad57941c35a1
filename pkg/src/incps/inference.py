"""Variance estimation, pointwise and uniform bands, and the no-effect test.

Pointwise Wald intervals use psi_hat +/- z * sigma_hat / sqrt(n) with
sigma_hat the per-delta sample standard deviation of the pooled influence
values. Uniform bands replace z by c_alpha, a multiplier-bootstrap
estimate of the (1-alpha) quantile of the sup over the grid of the
absolute standardized empirical process: draws S_b = max_delta
| n^{-1/2} sum_i xi_i phi_tilde_i(delta) | with i.i.d. Rademacher signs
xi (Gaussian multipliers behind a switch).

c_alpha is floored at z_{1-alpha/2}: the sup weakly dominates every
single coordinate, so the uniform band always contains the pointwise one.

The test of no incremental effect asks whether a horizontal line fits
inside the uniform band; its p-value is the largest alpha at which one
still does, found by monotone bisection against the stored bootstrap
draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import stream
from .intervention import DeltaGrid
from .single import IFMatrix

_BOOT_BLOCK = 256


def normal_quantile(p: float) -> float:
    """Standard normal inverse CDF.

    Rational approximation (Acklam coefficients) polished with one Halley
    step through erfc; absolute error well below 1e-12 across (0, 1).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p!r}")
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    # Halley refinement; the CDF error is computed on the tail side where
    # erfc is a small well-conditioned number (1-p is exact for p >= 0.5)
    if x > 0:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    else:
        e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def variance_estimate(if_matrix: IFMatrix) -> np.ndarray:
    """Per-delta standard deviation of the pooled influence values (ddof 1)."""
    if if_matrix.n < 2:
        raise ValueError("variance needs at least 2 observations")
    return np.sqrt(np.var(if_matrix.values, axis=0, ddof=1))


def pointwise_ci(psi_hat, sigma_hat, n: int, alpha: float):
    """Wald interval psi_hat +/- z_{1-alpha/2} sigma_hat / sqrt(n)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    z = normal_quantile(1.0 - alpha / 2.0)
    half = z * np.asarray(sigma_hat) / math.sqrt(n)
    psi_hat = np.asarray(psi_hat)
    return psi_hat - half, psi_hat + half


@dataclass(frozen=True)
class BootstrapBand:
    """Multiplier-bootstrap sup draws with the derived critical value."""

    alpha: float
    c_alpha: float
    sup_draws: np.ndarray = field(repr=False)  # sorted ascending
    n: int
    n_boot: int
    seed: int
    multiplier: str
    degenerate_cols: tuple = ()

    def critical_value(self, alpha: float) -> float:
        """(1-alpha) draw quantile, floored at the pointwise z quantile."""
        z = normal_quantile(1.0 - alpha / 2.0)
        if len(self.sup_draws) == 0:
            return z
        k = min(len(self.sup_draws), max(1, math.ceil((1.0 - alpha) * len(self.sup_draws))))
        return max(float(self.sup_draws[k - 1]), z)


def multiplier_bootstrap(
    if_matrix: IFMatrix,
    alpha: float = 0.05,
    n_boot: int = 5000,
    seed: int = 0,
    multiplier: str = "rademacher",
) -> BootstrapBand:
    """Bootstrap the sup of the standardized influence process.

    Columns are centered and scaled to unit standard deviation; columns
    with zero variance carry no distributional information and are
    excluded from the sup (reported in ``degenerate_cols``). Replication
    b draws its multipliers from the stream keyed (seed, "boot", b), so
    results do not depend on evaluation order or thread count.
    """
    if multiplier not in ("rademacher", "gaussian"):
        raise ValueError(f"unknown multiplier {multiplier!r}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    values = if_matrix.values
    n = if_matrix.n
    sd = np.std(values, axis=0, ddof=1)
    valid = sd > 0
    degenerate = tuple(int(j) for j in np.flatnonzero(~valid))
    if valid.any():
        scaled = (values[:, valid] - values[:, valid].mean(axis=0)) / sd[valid]
        sups = np.empty(n_boot)
        root_n = math.sqrt(n)
        for lo in range(0, n_boot, _BOOT_BLOCK):
            size = min(_BOOT_BLOCK, n_boot - lo)
            xi = np.empty((size, n))
            for j in range(size):
                rng = stream(seed, "boot", lo + j)
                if multiplier == "rademacher":
                    xi[j] = rng.integers(0, 2, n) * 2.0 - 1.0
                else:
                    xi[j] = rng.standard_normal(n)
            sups[lo : lo + size] = np.abs(xi @ scaled).max(axis=1) / root_n
        sups.sort()
    else:
        sups = np.empty(0)
    band = BootstrapBand(
        alpha=alpha,
        c_alpha=math.nan,
        sup_draws=sups,
        n=n,
        n_boot=n_boot,
        seed=seed,
        multiplier=multiplier,
        degenerate_cols=degenerate,
    )
    return replace(band, c_alpha=band.critical_value(alpha))


def uniform_band(psi_hat, sigma_hat, n: int, c_alpha: float):
    half = c_alpha * np.asarray(sigma_hat) / math.sqrt(n)
    psi_hat = np.asarray(psi_hat)
    return psi_hat - half, psi_hat + half


@dataclass(frozen=True, eq=False)
class CurveEstimate:
    """The estimated delta curve with pointwise and uniform inference."""

    grid: DeltaGrid
    psi_hat: np.ndarray
    sigma_hat: np.ndarray
    n: int
    alpha: float
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    c_alpha: float
    p_value: float
    bootstrap: BootstrapBand | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if np.any(np.asarray(self.sigma_hat) < 0):
            raise ValueError("sigma_hat must be nonnegative")


def build_curve(
    if_matrix: IFMatrix,
    alpha: float = 0.05,
    n_boot: int = 5000,
    seed: int = 0,
    multiplier: str = "rademacher",
) -> CurveEstimate:
    """Assemble the full curve: point estimates, bands, and the null test."""
    psi = if_matrix.psi_hat
    sigma = variance_estimate(if_matrix)
    n = if_matrix.n
    ci_lo, ci_hi = pointwise_ci(psi, sigma, n, alpha)
    boot = multiplier_bootstrap(if_matrix, alpha=alpha, n_boot=n_boot, seed=seed, multiplier=multiplier)
    band_lo, band_hi = uniform_band(psi, sigma, n, boot.c_alpha)
    curve = CurveEstimate(
        grid=if_matrix.grid,
        psi_hat=psi,
        sigma_hat=sigma,
        n=n,
        alpha=alpha,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        band_lo=band_lo,
        band_hi=band_hi,
        c_alpha=boot.c_alpha,
        p_value=math.nan,
        bootstrap=boot,
    )
    return replace(curve, p_value=test_no_effect(curve))


def test_no_effect(curve: CurveEstimate, tol: float = 1e-4) -> float:
    """P-value for the null that the curve is flat.

    The null is retained at level alpha when a horizontal line passes
    through the level-alpha uniform band, i.e. when min(psi + c_alpha s)
    >= max(psi - c_alpha s) with s = sigma_hat / sqrt(n). The p-value is
    the largest alpha at which a line still fits, located by bisection
    (the band tightens monotonically as alpha grows).
    """
    if curve.bootstrap is None:
        raise ValueError("curve carries no bootstrap draws; run multiplier_bootstrap first")
    psi = np.asarray(curve.psi_hat)
    scale = np.asarray(curve.sigma_hat) / math.sqrt(curve.n)

    def fits(alpha):
        c = curve.bootstrap.critical_value(alpha)
        return float(np.min(psi + c * scale)) >= float(np.max(psi - c * scale))

    lo, hi = 0.0, 1.0
    if fits(1.0 - 1e-9):
        return 1.0
    if not fits(1e-9):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
