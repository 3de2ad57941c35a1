"""Incremental propensity score intervention effects.

Estimates the delta curve psi(delta), the mean outcome when everyone's
odds of treatment are multiplied by delta, for single-time-point and
longitudinal binary-treatment data. Cross-fitted influence-function
estimators, pointwise Wald and uniform multiplier-bootstrap bands, a test
of no incremental effect, positivity-sensitive baselines (AIPW ATE,
IPW-fitted MSMs) for comparison, and simulation presets with exact or
Monte Carlo oracles for every estimand.

Submodules import lazily so the command-line entry point can pin thread
pools before numpy loads.
"""

import importlib

_EXPORTS = {
    # data
    "PointRecord": "data",
    "Panel": "data",
    "History": "data",
    "FoldAssignment": "data",
    "SchemaError": "data",
    "ValidationError": "data",
    "load_point_csv": "data",
    "save_point_csv": "data",
    "load_panel_csv": "data",
    "save_panel_csv": "data",
    "assign_folds": "data",
    "history_at": "data",
    "history_features": "data",
    "infer_n_periods": "data",
    # nuisance
    "LearnerSpec": "nuisance",
    "ProbabilityModel": "nuisance",
    "RegressionModel": "nuisance",
    "NuisanceFit": "nuisance",
    "fit_probability": "nuisance",
    "fit_regression": "nuisance",
    "crossfit_nuisances": "nuisance",
    "clip_probabilities": "nuisance",
    # intervention
    "DeltaGrid": "intervention",
    "default_grid": "intervention",
    "shift_propensity": "intervention",
    "ipw_factor": "intervention",
    "trajectory_weight": "intervention",
    # single
    "IFMatrix": "single",
    "OneStepFit": "single",
    "aipw_pseudo_outcome": "single",
    "uncentered_if": "single",
    "estimate_plugin_outcome": "single",
    "estimate_ipw": "single",
    "estimate_onestep_crossfit": "single",
    "if_matrix_from_nuisances": "single",
    # longitudinal
    "DiscreteDGPModel": "longitudinal",
    "NuisanceFitTV": "longitudinal",
    "EIFFitTV": "longitudinal",
    "EnumerationTooLarge": "longitudinal",
    "gcomp_exact": "longitudinal",
    "exact_pseudo_outcome": "longitudinal",
    "exact_observational_mean": "longitudinal",
    "exact_potential_mean": "longitudinal",
    "estimate_ipw_tv": "longitudinal",
    "backward_pseudo_regressions": "longitudinal",
    "uncentered_eif_tv": "longitudinal",
    "crossfit_nuisances_tv": "longitudinal",
    "estimate_eif_crossfit_tv": "longitudinal",
    "tv_if_matrix_from_nuisances": "longitudinal",
    # inference
    "CurveEstimate": "inference",
    "BootstrapBand": "inference",
    "normal_quantile": "inference",
    "variance_estimate": "inference",
    "pointwise_ci": "inference",
    "multiplier_bootstrap": "inference",
    "uniform_band": "inference",
    "build_curve": "inference",
    "test_no_effect": "inference",
    # baselines
    "MSMSpec": "baselines",
    "MSMFit": "baselines",
    "ATEEstimate": "baselines",
    "SingularModelError": "baselines",
    "ate_aipw": "baselines",
    "efficiency_bound": "baselines",
    "msm_weights": "baselines",
    "fit_msm": "baselines",
    # simulate
    "DGPSpec": "simulate",
    "DiscreteCov": "simulate",
    "GaussianCov": "simulate",
    "OracleResult": "simulate",
    "OracleNuisances": "simulate",
    "PRESET_NAMES": "simulate",
    "get_preset": "simulate",
    "generate": "simulate",
    "to_discrete_model": "simulate",
    "oracle_psi": "simulate",
    "oracle_potential_mean": "simulate",
    "oracle_nuisances": "simulate",
    "bias_bound_diagnostic": "simulate",
}

__all__ = sorted(_EXPORTS)
__version__ = "0.1.0"


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'incps' has no attribute {name!r}")
    return getattr(importlib.import_module(f".{module}", __name__), name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
