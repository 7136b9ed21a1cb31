"""``popsreg`` command line: synth, fit, predict, eval, bench, refmin.

Exit status is 0 on success, 1 on bad input or data, and 2 when an internal
post-condition fails.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import metrics
from ._io import atomic_write, fmt_float
from .bayes_ridge import RidgeFit, epistemic_predict, fit_min_loss
from .dataset import (
    ENGINE_KINDS,
    Dataset,
    EngineSpec,
    load_csv,
    load_features,
    split,
    synth_engine,
    write_csv,
    write_table,
)
from .ensemble import ENSEMBLE_N_LIMIT, EnsembleWeights, ensemble_predict, fit_ensemble
from .errors import InvariantViolation, PopsError, ScaleTooSmall
from .hypercube import DEFAULT_RANK_REL_TOL, Hypercube, build_hypercube, predict_envelope
from .pops_core import CorrectionSet, pointwise_fits
from .refmin import GeConfig, minimize_ge

FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# model file
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Model:
    fit: RidgeFit
    hypercube: Hypercube
    feature_names: tuple
    target_name: str = "y"
    corrections: CorrectionSet | None = None
    weights: EnsembleWeights | None = None

    @property
    def has_ensemble(self):
        return self.weights is not None


def _arr(a):
    return np.asarray(a, dtype=np.float64).tolist()


def model_to_dict(model: Model) -> dict:
    fit, hc = model.fit, model.hypercube
    doc = {
        "format_version": FORMAT_VERSION,
        "feature_names": list(model.feature_names),
        "target_name": model.target_name,
        "theta_star": _arr(fit.theta_star),
        "a_matrix": _arr(fit.a_matrix),
        "noise_var": fit.noise_var,
        "prior_precision_scale": fit.prior_precision_scale,
        "n_train": fit.n_train,
        "loss_residual_var": fit.loss_residual_var,
        "hypercube": {
            "basis": _arr(hc.basis),
            "lower": _arr(hc.lower),
            "upper": _arr(hc.upper),
            "rank": hc.rank,
            "rank_rel_tol": hc.rank_rel_tol,
        },
    }
    if model.has_ensemble:
        cs, w = model.corrections, model.weights
        doc["ensemble"] = {
            "corrections": _arr(cs.corrections),
            "residuals": _arr(cs.residuals),
            "leverages": _arr(cs.leverages),
            "weights": _arr(w.values),
            "data_weights": _arr(w.data_weights),
            "mass_scale": w.mass_scale,
            "normalization": w.normalization,
        }
    return doc


def _mat(rows, p):
    a = np.asarray(rows, dtype=np.float64)
    return a.reshape(-1, p) if a.size == 0 else a


def model_from_dict(doc: dict) -> Model:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise PopsError(f"unsupported model format_version {version!r}")
    theta = np.asarray(doc["theta_star"], dtype=np.float64)
    p = theta.size
    fit = RidgeFit(
        theta_star=theta,
        a_matrix=_mat(doc["a_matrix"], p),
        noise_var=float(doc["noise_var"]),
        prior_precision_scale=float(doc["prior_precision_scale"]),
        n_train=int(doc["n_train"]),
        loss_residual_var=float(doc["loss_residual_var"]),
    )
    h = doc["hypercube"]
    hc = Hypercube(
        basis=_mat(h["basis"], p),
        lower=np.asarray(h["lower"], dtype=np.float64),
        upper=np.asarray(h["upper"], dtype=np.float64),
        base=fit,
        rank_rel_tol=float(h["rank_rel_tol"]),
    )
    if hc.rank != int(h["rank"]):
        raise PopsError("model file is inconsistent: basis rows do not match rank")
    cs = weights = None
    if "ensemble" in doc:
        e = doc["ensemble"]
        cs = CorrectionSet(
            corrections=_mat(e["corrections"], p),
            residuals=np.asarray(e["residuals"], dtype=np.float64),
            leverages=np.asarray(e["leverages"], dtype=np.float64),
            base=fit,
        )
        weights = EnsembleWeights(
            values=np.asarray(e["weights"], dtype=np.float64),
            mass_scale=float(e["mass_scale"]),
            normalization=float(e["normalization"]),
            data_weights=np.asarray(e["data_weights"], dtype=np.float64),
        )
    return Model(
        fit=fit,
        hypercube=hc,
        feature_names=tuple(doc["feature_names"]),
        target_name=doc.get("target_name", "y"),
        corrections=cs,
        weights=weights,
    )


def save_model(model: Model, path):
    # json writes floats with repr(), the shortest string that round-trips
    with atomic_write(path) as handle:
        json.dump(model_to_dict(model), handle, indent=1)
        handle.write("\n")


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as handle:
        try:
            doc = json.load(handle)
        except json.JSONDecodeError as exc:
            raise PopsError(f"{path}: not a model file ({exc})") from None
    return model_from_dict(doc)


# --------------------------------------------------------------------------
# pipeline pieces shared by the commands
# --------------------------------------------------------------------------


def fit_model(
    data: Dataset,
    noise_var=1e-8,
    prior_scale=None,
    rank_tol=DEFAULT_RANK_REL_TOL,
    with_ensemble=False,
    sigma_scale=1.0,
) -> Model:
    fit = fit_min_loss(data, prior_scale, noise_var)
    cs = pointwise_fits(fit, data)
    hc = build_hypercube(cs, rank_tol)
    # every training target must sit inside its own envelope
    bundle = predict_envelope(hc, data.features)
    if metrics.violations(bundle, data.targets).any():
        raise InvariantViolation("hypercube envelope misses a training point")
    weights = fit_ensemble(cs, data, sigma_scale) if with_ensemble else None
    return Model(
        fit=fit,
        hypercube=hc,
        feature_names=data.feature_names,
        target_name=data.target_name,
        corrections=cs if with_ensemble else None,
        weights=weights,
    )


def predict_model(model: Model, F, use_ensemble=False):
    if use_ensemble:
        if not model.has_ensemble:
            raise PopsError("model file has no ensemble; refit with --with-ensemble")
        return ensemble_predict(model.corrections, model.weights, F)
    return predict_envelope(model.hypercube, F)


def bench_cell(engine, p, ratio, seed, *, test_fraction=0.1, noise_std=0.0, resamples=64, baseline_only=False):
    """Synthesize, split, fit and score one benchmark cell.

    The total sample count is chosen so the training part has about
    ``ratio * p`` rows after the split.
    """
    if engine == "sinusoid":
        spec = EngineSpec("sinusoid", 1, p - 1, noise_std, seed)
    else:
        spec = EngineSpec(engine, p - 1, 1, noise_std, seed)
    n_total = int(math.ceil(ratio * p / (1.0 - test_fraction)))
    train, test = split(synth_engine(spec, n_total, seed), test_fraction, seed)
    row = {"P": p, "ratio": ratio, "seed": seed, "n_train": train.n, "n_test": test.n}
    if baseline_only:
        t0 = time.perf_counter()
        fit = fit_min_loss(train)
        t1 = time.perf_counter()
        epistemic_predict(fit, test.features)
        t2 = time.perf_counter()
        row.update(EV=math.nan, mae_ratio=math.nan)
    else:
        t0 = time.perf_counter()
        fit = fit_min_loss(train)
        hc = build_hypercube(pointwise_fits(fit, train))
        t1 = time.perf_counter()
        bundle = predict_envelope(hc, test.features)
        t2 = time.perf_counter()
        row["EV"] = metrics.envelope_violation(bundle, test.targets)
        row["mae_ratio"] = metrics.mae_ratio(fit, hc, test, resamples, seed)[2]
    row["coverage"] = metrics.gaussian_coverage(fit, test, 3.0)
    row["fit_wall_time"] = t1 - t0
    row["predict_wall_time"] = t2 - t1
    return row


BENCH_COLUMNS = (
    "P", "ratio", "seed", "n_train", "n_test", "EV", "mae_ratio", "coverage",
    "fit_wall_time", "predict_wall_time", "error",
)


def _cell_text(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else fmt_float(v)
    return str(v)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _out(msg):
    print(msg, flush=True)


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr, flush=True)


def cmd_synth(args):
    spec = EngineSpec(args.engine, args.input_dim, args.feature_degree, args.noise_std, args.coefficient_seed)
    data = synth_engine(spec, args.n, args.seed)
    if args.test_out:
        train, test = split(data, args.test_fraction, args.seed)
        write_csv(args.out, train)
        write_csv(args.test_out, test)
        _out(f"wrote {train.n} rows to {args.out} and {test.n} rows to {args.test_out}")
    else:
        write_csv(args.out, data)
        _out(f"wrote {data.n} rows to {args.out}")
    return 0


def cmd_fit(args):
    data = load_csv(args.train_csv, args.target, args.weight_column)
    if args.with_ensemble and data.n > ENSEMBLE_N_LIMIT and not args.force_ensemble:
        raise PopsError(
            f"the ensemble needs an N x N mass matrix (N={data.n}, O(N^2) time and memory); "
            f"pass --force-ensemble to build it anyway above N={ENSEMBLE_N_LIMIT}"
        )
    model = fit_model(
        data,
        noise_var=args.noise_var,
        prior_scale=args.prior_scale,
        rank_tol=args.rank_tol,
        with_ensemble=args.with_ensemble,
        sigma_scale=args.sigma_scale,
    )
    save_model(model, args.out)
    fit = model.fit
    _out(f"N={data.n}")
    _out(f"P={data.p}")
    _out(f"N/P={fmt_float(data.n / data.p)}")
    _out(f"loss_residual_var={fmt_float(fit.loss_residual_var)}")
    _out(f"hypercube_rank={model.hypercube.rank}")
    if model.hypercube.rank == 0:
        _warn("model appears specified: every residual is zero and the hypercube has rank 0")
    return 0


def cmd_predict(args):
    model = load_model(args.model)
    F, _ = load_features(args.test_csv, list(model.feature_names))
    bundle = predict_model(model, F, args.ensemble)
    columns, cols = ["mean"], [bundle.mean]
    if args.std:
        columns += ["std_misspec", "std_epistemic"]
        cols += [bundle.std_misspec, bundle.std_epistemic]
    if args.combined_std:
        columns.append("std_combined")
        cols.append(bundle.std_combined)
    if args.bounds:
        columns += ["max", "min"]
        cols += [bundle.max, bundle.min]
    write_table(args.out, columns, np.column_stack(cols))
    _out(f"wrote {F.shape[0]} predictions to {args.out}")
    return 0


def cmd_eval(args):
    model = load_model(args.model)
    target = args.target or model.target_name
    test = load_csv(args.test_csv, target, feature_columns=list(model.feature_names))
    report = metrics.calibrate(model.fit, model.hypercube, test, args.resamples, args.seed)
    lines = [f"{k}={fmt_float(v) if isinstance(v, float) else v}" for k, v in report.as_records()]
    text = "\n".join(lines) + "\n"
    if args.report:
        with atomic_write(args.report) as handle:
            handle.write(text)
    sys.stdout.write(text)
    if args.histogram:
        write_table(
            args.histogram,
            ["bin_low", "bin_high", "observed_count", "predicted_count"],
            np.array(report.histogram, dtype=np.float64).reshape(-1, 4),
        )
    if args.triples:
        bundle = predict_envelope(model.hypercube, test.features)
        write_table(
            args.triples,
            ["abs_error", "std_misspec", "envelope_width"],
            metrics.error_triples(model.fit, bundle, test),
        )
    return 0


def cmd_bench(args):
    rows = []
    for p in args.p_grid:
        for ratio in args.ratio_grid:
            for seed in range(args.seeds):
                try:
                    row = bench_cell(
                        args.engine, p, ratio, seed,
                        test_fraction=args.test_fraction,
                        noise_std=args.noise_std,
                        resamples=args.resamples,
                        baseline_only=args.baseline_only,
                    )
                    row["error"] = ""
                except PopsError as exc:
                    row = {"P": p, "ratio": ratio, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}
                rows.append(row)
                _out(",".join(_cell_text(row.get(c, math.nan)) for c in BENCH_COLUMNS))
    with atomic_write(args.out) as handle:
        handle.write(",".join(BENCH_COLUMNS) + "\n")
        for row in rows:
            handle.write(",".join(_cell_text(row.get(c, math.nan)).replace(",", ";") for c in BENCH_COLUMNS) + "\n")
    return 0


def cmd_refmin(args):
    data = load_csv(args.train_csv, args.target, args.weight_column)
    fit = fit_min_loss(data, args.prior_scale, args.noise_var)
    init = "pops_ensemble" if args.init == "pops" else args.init
    cfg = GeConfig(
        members=args.members,
        sigma_scale=args.sigma_scale,
        max_iters=args.steps,
        step_size=args.step_size,
        init=init,
        seed=args.seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise PopsError(str(exc)) from None
    log_handle = open(args.log, "w", encoding="utf-8") if args.log else None

    def emit(record):
        if log_handle is not None:
            log_handle.write(json.dumps(record) + "\n")

    try:
        result = minimize_ge(data, fit, cfg, callback=emit)
    except ScaleTooSmall as exc:
        _out("status=scale_too_small")
        _out(f"message={exc}")
        return 0
    finally:
        if log_handle is not None:
            log_handle.close()
    if args.out:
        write_table(args.out, list(data.feature_names), result.members)
    initial, final = result.initial_value, result.ge_value
    _out(f"status={result.status}")
    _out(f"converged={str(result.converged).lower()}")
    _out(f"iterations={result.iterations}")
    _out(f"initial_objective={fmt_float(initial)}")
    _out(f"final_objective={fmt_float(final)}")
    _out(f"relative_improvement={fmt_float((initial - final) / abs(initial) if initial else 0.0)}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    parser = _Parser(prog="popsreg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic engine dataset as CSV")
    p.add_argument("--engine", choices=ENGINE_KINDS, default="cubic")
    p.add_argument("--input-dim", type=int, default=1)
    p.add_argument("--feature-degree", type=int, default=1)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--coefficient-seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--test-out", help="also split and write the test part here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit the ridge baseline and POPS hypercube")
    p.add_argument("train_csv")
    p.add_argument("--target", default="y")
    p.add_argument("--weight-column")
    p.add_argument("--noise-var", type=float, default=1e-8)
    p.add_argument("--prior-scale", type=float, default=None)
    p.add_argument("--with-ensemble", action="store_true")
    p.add_argument("--force-ensemble", action="store_true")
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.add_argument("--rank-tol", type=float, default=DEFAULT_RANK_REL_TOL)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict mean, std and bounds")
    p.add_argument("model")
    p.add_argument("test_csv")
    p.add_argument("--bounds", action="store_true")
    p.add_argument("--std", action="store_true")
    p.add_argument("--combined-std", action="store_true")
    p.add_argument("--ensemble", action="store_true", help="use the stored ensemble instead of the hypercube")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="calibration report on a labelled test set")
    p.add_argument("model")
    p.add_argument("test_csv")
    p.add_argument("--target")
    p.add_argument("--resamples", type=int, default=metrics.DEFAULT_RESAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.add_argument("--histogram")
    p.add_argument("--triples")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="sweep synthetic benchmark cells")
    p.add_argument("--engine", choices=ENGINE_KINDS, default="cubic")
    p.add_argument("--p-grid", type=_int_list, default=[10, 20, 50])
    p.add_argument("--ratio-grid", type=_int_list, default=[10, 30, 100])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--resamples", type=int, default=metrics.DEFAULT_RESAMPLES)
    p.add_argument("--baseline-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("refmin", help="directly minimize the ensemble generalization error")
    p.add_argument("train_csv")
    p.add_argument("--target", default="y")
    p.add_argument("--weight-column")
    p.add_argument("--members", type=int)
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.add_argument("--init", choices=("min_loss_jitter", "pops_ensemble", "pops"), default="min_loss_jitter")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--step-size", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-var", type=float, default=1e-8)
    p.add_argument("--prior-scale", type=float, default=None)
    p.add_argument("--out", help="members CSV")
    p.add_argument("--log", help="line-delimited JSON iteration log")
    p.set_defaults(func=cmd_refmin)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"popsreg: internal error: {exc}", file=sys.stderr)
        return 2
    except (PopsError, ValueError, OSError) as exc:
        print(f"popsreg: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - reported, not swallowed silently
        print(f"popsreg: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
