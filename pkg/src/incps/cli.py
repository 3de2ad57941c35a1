"""Command-line front end: simulate, estimate, test-null, and compare.

Outputs are machine readable: curve estimates go to JSON plus a plot
CSV (one row per delta), simulation runs write the data CSV plus a
ground-truth sidecar used by ``compare`` for scoring. Every command is
deterministic given its full flag set including the seed.

Exit codes: 0 success, 2 validation or schema errors, 3 runtime errors.
"""

import os

# Pin BLAS pools before numpy loads so CLI output is byte-identical
# regardless of the caller's thread environment.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ[_var] = "1"

import argparse
import csv
import json
import sys

import numpy as np

from ._rng import child_seed
from .baselines import MSMSpec, ate_aipw, fit_msm, msm_weights
from .data import (
    SchemaError,
    ValidationError,
    assign_folds,
    infer_n_periods,
    load_panel_csv,
    load_point_csv,
    save_panel_csv,
    save_point_csv,
)
from .inference import CurveEstimate, build_curve
from .intervention import DeltaGrid, default_grid
from .longitudinal import estimate_eif_crossfit_tv, estimate_ipw_tv
from .nuisance import LearnerSpec, crossfit_nuisances
from .simulate import generate, get_preset, oracle_potential_mean, oracle_psi
from .single import estimate_ipw, estimate_onestep_crossfit

_STAGE = "[incps]"


def _log(msg):
    print(f"{_STAGE} {msg}", file=sys.stderr)


def parse_learner(text: str) -> LearnerSpec:
    """Parse 'kind' or 'kind:key=value,...' into a LearnerSpec."""
    kind, _, rest = text.partition(":")
    keys = {
        "lr": "learning_rate",
        "learning-rate": "learning_rate",
        "rounds": "rounds",
        "k": "k",
        "ridge": "ridge",
        "clip": "eps_clip",
    }
    kwargs = {}
    if rest:
        for item in rest.split(","):
            name, _, value = item.partition("=")
            if name not in keys or not value:
                raise ValueError(f"bad learner option {item!r} (known: {', '.join(keys)})")
            field = keys[name]
            kwargs[field] = int(value) if field in ("rounds", "k") else float(value)
    return LearnerSpec(kind=kind.strip(), **kwargs)


def _grid_from_args(args) -> DeltaGrid:
    return default_grid(args.grid_min, args.grid_max, args.grid_points, log=args.grid_log)


def _add_grid_flags(p):
    p.add_argument("--grid-min", type=float, default=0.2)
    p.add_argument("--grid-max", type=float, default=5.0)
    p.add_argument("--grid-points", type=int, default=50)
    p.add_argument("--grid-log", action=argparse.BooleanOptionalAction, default=True)


def _add_estimate_flags(p):
    p.add_argument("--input", required=True, help="data CSV (point or panel layout)")
    p.add_argument("--output", required=True, help="result JSON path")
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--learner-pi", default="logistic")
    p.add_argument("--learner-mu", default="linear")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bootstrap-b", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    _add_grid_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incps", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a preset dataset plus its truth sidecar")
    p.add_argument("--preset", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="data CSV path")
    _add_grid_flags(p)

    p = sub.add_parser("estimate", help="estimate the delta curve with uniform bands")
    _add_estimate_flags(p)

    p = sub.add_parser("test-null", help="test the no-incremental-effect null")
    _add_estimate_flags(p)

    p = sub.add_parser("compare", help="compare incremental estimators with ATE/MSM baselines")
    p.add_argument("--preset")
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--input", help="data CSV (alternative to --preset)")
    p.add_argument("--output", required=True)
    p.add_argument("--k-folds", type=int, default=2)
    p.add_argument("--learner-pi", default="logistic")
    p.add_argument("--learner-mu", default="linear")
    p.add_argument("--seed", type=int, default=0)
    return parser


def curve_to_dict(curve: CurveEstimate, meta: dict) -> dict:
    rows = [
        {
            "delta": float(curve.grid.values[j]),
            "psi_hat": float(curve.psi_hat[j]),
            "sigma_hat": float(curve.sigma_hat[j]),
            "ci_lo": float(curve.ci_lo[j]),
            "ci_hi": float(curve.ci_hi[j]),
            "band_lo": float(curve.band_lo[j]),
            "band_hi": float(curve.band_hi[j]),
        }
        for j in range(len(curve.grid))
    ]
    out = dict(meta)
    out.update(
        {
            "n": curve.n,
            "alpha": curve.alpha,
            "c_alpha": float(curve.c_alpha),
            "p_value": float(curve.p_value),
            "curve": rows,
        }
    )
    return out


def curve_from_dict(payload: dict) -> CurveEstimate:
    rows = payload["curve"]
    grid = DeltaGrid(np.asarray([r["delta"] for r in rows]))

    def col(name):
        return np.asarray([r[name] for r in rows])

    return CurveEstimate(
        grid=grid,
        psi_hat=col("psi_hat"),
        sigma_hat=col("sigma_hat"),
        n=int(payload["n"]),
        alpha=float(payload["alpha"]),
        ci_lo=col("ci_lo"),
        ci_hi=col("ci_hi"),
        band_lo=col("band_lo"),
        band_hi=col("band_hi"),
        c_alpha=float(payload["c_alpha"]),
        p_value=float(payload["p_value"]),
        bootstrap=None,
    )


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_plot_csv(curve: CurveEstimate, path):
    cols = ("delta", "psi_hat", "sigma_hat", "ci_lo", "ci_hi", "band_lo", "band_hi")
    arrays = (
        curve.grid.values,
        curve.psi_hat,
        curve.sigma_hat,
        curve.ci_lo,
        curve.ci_hi,
        curve.band_lo,
        curve.band_hi,
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for j in range(len(curve.grid)):
            writer.writerow(["%.17g" % arr[j] for arr in arrays])


def _plot_csv_path(output):
    stem, ext = os.path.splitext(output)
    return (stem if ext else output) + ".csv"


def cmd_simulate(args) -> int:
    dgp = get_preset(args.preset)
    grid = _grid_from_args(args)
    _log(f"generating {args.n} subjects from preset {dgp.name!r}")
    data = generate(dgp, args.n, args.seed)
    if dgp.n_periods == 1:
        save_point_csv(data, args.output)
    else:
        save_panel_csv(data, args.output)
    _log("computing oracle curve for the truth sidecar")
    psi, se = [], []
    for j, delta in enumerate(grid):
        res = oracle_psi(dgp, float(delta), method="auto", draws=1_000_000, seed=child_seed(args.seed, "truth", j))
        psi.append(res.value)
        se.append(res.se)
    method = "exact-enumeration" if dgp.discrete else "monte-carlo"
    if dgp.positivity:
        ey1 = oracle_potential_mean(dgp, [1] * dgp.n_periods, seed=child_seed(args.seed, "ey1")).value
        ey0 = oracle_potential_mean(dgp, [0] * dgp.n_periods, seed=child_seed(args.seed, "ey0")).value
    else:
        ey1 = ey0 = None
    sidecar = {
        "preset": dgp.name,
        "n": args.n,
        "seed": args.seed,
        "n_periods": dgp.n_periods,
        "identified_ate": dgp.positivity,
        "ey1": ey1,
        "ey0": ey0,
        "method": method,
        "grid": [float(d) for d in grid],
        "psi": psi,
        "se": se,
    }
    _write_json(sidecar, args.output + ".truth.json")
    print(args.output)
    return 0


def _run_estimate(args):
    n_periods = infer_n_periods(args.input)
    grid = _grid_from_args(args)
    spec_pi = parse_learner(args.learner_pi)
    spec_mu = parse_learner(args.learner_mu)
    _log(f"loading {args.input} (T={n_periods})")
    if n_periods == 1:
        records = load_point_csv(args.input)
        folds = assign_folds(len(records), args.k_folds, args.seed)
        _log(f"cross-fitting one-step estimator on {len(records)} records, K={args.k_folds}")
        fit = estimate_onestep_crossfit(records, folds, spec_pi, spec_mu, grid)
        n = len(records)
    else:
        panel = load_panel_csv(args.input, n_periods)
        folds = assign_folds(panel.n_subjects, args.k_folds, args.seed)
        _log(f"cross-fitting EIF estimator on {panel.n_subjects} subjects, T={n_periods}, K={args.k_folds}")
        fit = estimate_eif_crossfit_tv(panel, folds, spec_pi, spec_mu, grid)
        n = panel.n_subjects
    _log(f"multiplier bootstrap, B={args.bootstrap_b}")
    curve = build_curve(fit.if_matrix, alpha=args.alpha, n_boot=args.bootstrap_b, seed=args.seed)
    meta = {
        "input": args.input,
        "n_periods": n_periods,
        "k_folds": args.k_folds,
        "seed": args.seed,
        "bootstrap_b": args.bootstrap_b,
        "learner_pi": args.learner_pi,
        "learner_mu": args.learner_mu,
    }
    assert n == curve.n
    return curve, meta


def cmd_estimate(args) -> int:
    curve, meta = _run_estimate(args)
    _write_json(curve_to_dict(curve, meta), args.output)
    _write_plot_csv(curve, _plot_csv_path(args.output))
    print(args.output)
    return 0


def cmd_test_null(args) -> int:
    curve, meta = _run_estimate(args)
    payload = {
        **meta,
        "n": curve.n,
        "alpha": curve.alpha,
        "c_alpha": float(curve.c_alpha),
        "p_value": float(curve.p_value),
        "reject": bool(curve.p_value < curve.alpha),
    }
    _write_json(payload, args.output)
    print(args.output)
    return 0


_COMPARE_DELTAS = (0.5, 2.0)


def _compare_one(data, n_periods, spec_pi, spec_mu, k_folds, seed):
    """Estimates for one dataset at the reference deltas."""
    from .data import Panel
    from .intervention import weight_matrix

    grid = DeltaGrid(np.asarray(_COMPARE_DELTAS))
    out = {}
    if n_periods == 1:
        folds = assign_folds(len(data), k_folds, seed)
        fit = estimate_onestep_crossfit(data, folds, spec_pi, spec_mu, grid)
        panel = Panel.from_point_records(data)
        pi_matrix = fit.nuisances.pi[:, None]
        out["ipw"] = list(estimate_ipw(fit.nuisances, data, grid))
        ate = ate_aipw(fit.nuisances, data)
        out["ate"] = {"estimate": ate.estimate, "se": ate.se}
    else:
        panel = data
        folds = assign_folds(panel.n_subjects, k_folds, seed)
        fit = estimate_eif_crossfit_tv(panel, folds, spec_pi, spec_mu, grid)
        pi_matrix = fit.nuisances.pi
        out["ipw"] = list(estimate_ipw_tv(panel, fit.nuisances, grid))
        out["ate"] = None
    out["onestep"] = list(fit.psi_hat)
    n = fit.if_matrix.n
    out["onestep_se"] = list(np.std(fit.if_matrix.values, axis=0, ddof=1) / np.sqrt(n))
    out["ipw_se"] = [
        float(np.std(panel.y * weight_matrix(panel.a.astype(float), pi_matrix, d)[:, -1], ddof=1))
        / np.sqrt(n)
        for d in _COMPARE_DELTAS
    ]
    for kind in ("standard", "stabilized"):
        w, n_clipped = msm_weights(panel, pi_matrix, kind=kind)
        msm = fit_msm(panel, w, MSMSpec(weight_kind=kind))
        out[f"msm_{kind}"] = {"contrast": msm.cumulative_contrast(), "clipped": n_clipped}
    return out


def cmd_compare(args) -> int:
    if bool(args.preset) == bool(args.input):
        raise ValueError("compare needs exactly one of --preset or --input")
    spec_pi = parse_learner(args.learner_pi)
    spec_mu = parse_learner(args.learner_mu)
    report = {"delta_ref": list(_COMPARE_DELTAS), "k_folds": args.k_folds, "seed": args.seed}
    oracle = None

    if args.preset:
        dgp = get_preset(args.preset)
        runs = []
        for r in range(args.replications):
            rep_seed = child_seed(args.seed, "rep", r)
            data = generate(dgp, args.n, rep_seed)
            runs.append(_compare_one(data, dgp.n_periods, spec_pi, spec_mu, args.k_folds, rep_seed))
            if (r + 1) % 25 == 0:
                _log(f"replication {r + 1}/{args.replications}")
        report.update({"preset": dgp.name, "n": args.n, "replications": args.replications})
        oracle = _oracle_block(dgp, args.seed)
    else:
        n_periods = infer_n_periods(args.input)
        data = load_point_csv(args.input) if n_periods == 1 else load_panel_csv(args.input, n_periods)
        runs = [_compare_one(data, n_periods, spec_pi, spec_mu, args.k_folds, args.seed)]
        report.update({"input": args.input, "replications": 1})
        sidecar_path = args.input + ".truth.json"
        if os.path.exists(sidecar_path):
            with open(sidecar_path, encoding="utf-8") as fh:
                sidecar = json.load(fh)
            oracle = _oracle_block(get_preset(sidecar["preset"]), args.seed)
        else:
            _log("no truth sidecar found; reporting internal diagnostics only")

    report["oracle"] = oracle
    report["estimators"] = _aggregate_runs(runs, oracle)
    _write_json(report, args.output)
    print(args.output)
    return 0


def _oracle_block(dgp, seed):
    psi = [
        oracle_psi(dgp, d, method="auto", draws=2_000_000, seed=child_seed(seed, "cmp-oracle", j)).value
        for j, d in enumerate(_COMPARE_DELTAS)
    ]
    block = {"preset": dgp.name, "psi": psi, "identified_ate": dgp.positivity}
    if dgp.positivity:
        ey1 = oracle_potential_mean(dgp, [1] * dgp.n_periods, seed=child_seed(seed, "cmp-ey1")).value
        ey0 = oracle_potential_mean(dgp, [0] * dgp.n_periods, seed=child_seed(seed, "cmp-ey0")).value
        block.update({"ey1": ey1, "ey0": ey0, "ate": ey1 - ey0})
    else:
        block.update({"ey1": None, "ey0": None, "ate": None})
    return block


def _aggregate_runs(runs, oracle):
    def stats(values):
        arr = np.asarray(values, dtype=float)
        out = {"mean": arr.mean(axis=0).tolist()}
        if len(arr) > 1:
            out["mc_sd"] = arr.std(axis=0, ddof=1).tolist()
        return out

    est = {}
    for key in ("onestep", "ipw"):
        block = stats([r[key] for r in runs])
        if oracle is not None:
            block["bias"] = (np.asarray(block["mean"]) - np.asarray(oracle["psi"])).tolist()
        block["se_mean"] = (
            np.asarray([r[f"{key}_se"] for r in runs], dtype=float).mean(axis=0).tolist()
        )
        block["clipped"] = 0  # incremental weights never clip
        est[key] = block
    for kind in ("standard", "stabilized"):
        key = f"msm_{kind}"
        block = stats([[r[key]["contrast"]] for r in runs])
        block["clipped_mean"] = float(np.mean([r[key]["clipped"] for r in runs]))
        est[key] = block
    ate_runs = [r["ate"] for r in runs if r["ate"] is not None]
    if oracle is not None and not oracle["identified_ate"]:
        est["ate"] = {"status": "undefined"}
    elif ate_runs:
        block = stats([[r["estimate"]] for r in ate_runs])
        block["se_mean"] = float(np.mean([r["se"] for r in ate_runs]))
        if oracle is not None and oracle["ate"] is not None:
            block["bias"] = [block["mean"][0] - oracle["ate"]]
        est["ate"] = block
    else:
        est["ate"] = {"status": "not-computed"}
    if len(runs) > 1:
        sd_one = np.asarray([r["onestep"][1] for r in runs]).std(ddof=1)
        sd_std = np.asarray([r["msm_standard"]["contrast"] for r in runs]).std(ddof=1)
        sd_stab = np.asarray([r["msm_stabilized"]["contrast"] for r in runs]).std(ddof=1)
        est["sd_ratio_msm_standard_vs_onestep_delta2"] = float(sd_std / sd_one)
        est["sd_ratio_msm_stabilized_vs_onestep_delta2"] = float(sd_stab / sd_one)
    return est


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "estimate": cmd_estimate,
        "test-null": cmd_test_null,
        "compare": cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except (SchemaError, ValidationError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/numeric failures
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
