"""Command-line entry points.

Subcommands: ``simulate``, ``fit``, ``forecast``, ``evaluate``,
``compete``.  Every run is driven by a JSON configuration document plus a
few overriding flags (--seed, --out, --reps, --jobs).  Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .competition import (
    _score_binary_window,
    _score_covariates,
    _window_label,
    compete,
    derive_seed,
    write_raw_cells_csv,
)
from .dataset import (
    LongitudinalDataset,
    ModelFormula,
    SplitSpec,
    design_matrix,
    load_csv,
    split,
    write_csv,
)
from .errors import (
    ConfigError,
    DataError,
    FormulaError,
    InvalidArgumentError,
    LongcastError,
    MissingArtifactError,
    ShapeError,
    SplitError,
)
from .gee import GeeFit, fit_gee, fitted_marginal, forecast_marginal
from .mmrem import MmremFit, MmremForecastConfig, fit_mmrem, fitted_probs_mmrem, forecast_mmrem
from .pnmtrem import (
    NAMED_VARIANTS,
    PnmtremFit,
    PnmtremForecastConfig,
    fit_pnmtrem,
    fitted_probs_pnmtrem,
    forecast_pnmtrem,
)
from .simgen import SimConfig, build_covariance, generate

CONFIG_ERRORS = (
    ConfigError,
    DataError,
    FormulaError,
    InvalidArgumentError,
    MissingArtifactError,
    SplitError,
    json.JSONDecodeError,
    KeyError,
)


def _read_config(args) -> dict:
    if args.config is None:
        config = {}
    else:
        path = Path(args.config)
        if not path.exists():
            raise MissingArtifactError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        config["replications"] = args.reps
    if getattr(args, "jobs", None) is not None:
        config["jobs"] = args.jobs
    return config


def _sim_config(config: dict, seed: int) -> SimConfig:
    kwargs = dict(config.get("sim") or {})
    for key in ("response_names", "covariate_names", "time_invariant"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return SimConfig(seed=seed, **kwargs)


def cmd_simulate(args) -> int:
    config = _read_config(args)
    master = int(config.get("seed", 1))
    reps = int(config.get("replications", 1))
    out = Path(args.out or "sim_out")
    out.mkdir(parents=True, exist_ok=True)
    seeds = []
    projection = None
    for r in range(reps):
        seed = derive_seed(master, r)
        seeds.append(seed)
        sim = _sim_config(config, seed)
        cov_model = build_covariance(sim)
        projection = {
            "raw_min_eigenvalue": cov_model.raw_min_eigenvalue,
            "projection_distance": cov_model.projection_distance,
        }
        ds, _ = generate(sim, cov_model)
        write_csv(ds, out / f"sim_r{r:04d}.csv",
                  schema_path=out / "schema.json" if r == 0 else None)
    with open(out / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "command": "simulate",
                "seed": master,
                "replications": reps,
                "derived_seeds": seeds,
                "sim": config.get("sim") or {},
                "psd_projection": projection,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"wrote {reps} dataset(s) to {out}")
    return 0


def _load_train_holdout(config: dict):
    if "dataset" not in config:
        raise ConfigError("configuration needs a 'dataset' path")
    ds = load_csv(config["dataset"], config.get("schema"))
    spec = SplitSpec(tuple(config["split"]["train"]), tuple(config["split"]["forecast"]))
    train, holdout = split(ds, spec)
    return ds, train, holdout


def _model_formula(spec: dict, train: LongitudinalDataset):
    family = spec["family"]
    if family == "gee" and spec.get("name", "UMM") == "UMM":
        terms = tuple(spec.get("terms", tuple(train.covariates)))
        return [ModelFormula((r,), terms, per_response=True) for r in train.response_names]
    if family in ("gee", "mmrem") and spec.get("name") != "MMM2":
        terms = tuple(spec.get("terms", tuple(train.covariates)))
        return ModelFormula(train.response_names, terms, per_response=True)
    indicators = tuple(f"resp({r})" for r in train.response_names[1:])
    terms = tuple(spec.get("terms", indicators + tuple(train.covariates)))
    return ModelFormula(train.response_names, terms, per_response=False)


def cmd_fit(args) -> int:
    config = _read_config(args)
    _, train, _ = _load_train_holdout(config)
    spec = config.get("model")
    if not spec or "family" not in spec:
        raise ConfigError("configuration needs a 'model' entry with a 'family'")
    family = spec["family"]
    quad = int(config.get("quad_order", 40))
    out = Path(args.out or "fit_out")
    out.mkdir(parents=True, exist_ok=True)
    if family == "gee":
        name = spec.get("name", "UMM")
        corr = spec.get("corr", "independence")
        formulas = _model_formula(spec, train)
        if name == "UMM":
            fits = [fit_gee(train, f, corr, "umm") for f in formulas]
        else:
            fits = [fit_gee(train, formulas, corr, name.lower())]
        payload = {
            "artifact": "gee_set",
            "name": name,
            "fits": [json.loads(f.to_json()) for f in fits],
        }
    elif family == "mmrem":
        formula = _model_formula(spec, train)
        fit = fit_mmrem(train, formula, quad_order=quad)
        payload = {"artifact": "mmrem", "fit": json.loads(fit.to_json())}
    elif family == "pnmtrem":
        formula = _model_formula(spec, train)
        baseline_terms = spec.get("baseline_terms")
        bform = (
            ModelFormula(train.response_names, tuple(baseline_terms), per_response=False)
            if baseline_terms is not None
            else None
        )
        fit = fit_pnmtrem(
            train, formula, baseline_formula=bform,
            z_terms=tuple(spec.get("z_terms", ())), quad_order=quad,
        )
        payload = {"artifact": "pnmtrem", "fit": json.loads(fit.to_json())}
    else:
        raise ConfigError(f"unknown model family {family!r}")
    fit_path = out / "fit.json"
    with open(fit_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(f"wrote {fit_path}")
    return 0


def _load_fit(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"fit file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return payload


def _write_probs_csv(path, train, holdout, fitted, fore):
    """Long-format probabilities for both windows; NaN cells are skipped."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("subject,time,resp_id,window,p\n")
        for window, ds, probs in (("train", train, fitted), ("forecast", holdout, fore)):
            for si, sid in enumerate(ds.subjects):
                for ti, t in enumerate(ds.times):
                    for rj, rid in enumerate(ds.response_names):
                        p = probs[si, ti, rj]
                        if np.isnan(p):
                            continue
                        fh.write(f"{sid},{t:g},{rid},{window},{float(p)!r}\n")


def cmd_forecast(args) -> int:
    config = _read_config(args)
    _, train, holdout = _load_train_holdout(config)
    payload = _load_fit(config.get("fit", "fit.json"))
    overrides = _score_covariates(
        config.get("covariate_models") or {}, train, holdout, {}
    )
    holdout_x = holdout.with_covariates(**overrides)
    seed = int(config.get("seed", 0))

    kind = payload.get("artifact")
    if kind == "gee_set":
        fits = [GeeFit.from_json(json.dumps(d)) for d in payload["fits"]]
        if payload["name"] == "UMM":
            fitted = np.empty(train.responses.shape)
            fore = np.empty(holdout.responses.shape)
            for j, fit in enumerate(fits):
                fitted[:, :, j] = fitted_marginal(fit, train)
                fore[:, :, j] = forecast_marginal(
                    fit, design_matrix(holdout_x, fit.formula)
                )
        else:
            fit = fits[0]
            fitted = fitted_marginal(fit, train)
            fore = forecast_marginal(fit, design_matrix(holdout_x, fit.formula))
    elif kind == "mmrem":
        fit = MmremFit.from_json(json.dumps(payload["fit"]))
        cfg = MmremForecastConfig(
            config.get("variant", "MMREM2"),
            k_draws=int(config.get("k_draws", 150)),
            seed=seed,
        )
        fitted = fitted_probs_mmrem(fit, train, cfg.variant, cfg.k_draws, seed)
        fore = forecast_mmrem(fit, design_matrix(holdout_x, fit.formula), cfg)
    elif kind == "pnmtrem":
        fit = PnmtremFit.from_json(json.dumps(payload["fit"]))
        variant = config.get("variant", "PNMTREM1")
        if isinstance(variant, str):
            z_source, history = NAMED_VARIANTS[variant]
        else:
            z_source, history = variant
        cfg = PnmtremForecastConfig(
            z_source=z_source, history_mode=history,
            smoothing=config.get("smoothing", "auto"), seed=seed,
        )
        fitted = fitted_probs_pnmtrem(fit, train, z_source)
        fore, _ = forecast_pnmtrem(
            fit, train, holdout_x, cfg,
            holdout_y=holdout.responses if history == "observed" else None,
        )
    else:
        raise ConfigError(f"unrecognized fit artifact {kind!r}")

    out = Path(args.out or "forecast_out")
    out.mkdir(parents=True, exist_ok=True)
    probs_path = out / "probabilities.csv"
    _write_probs_csv(probs_path, train, holdout, fitted, fore)
    print(f"wrote {probs_path}")
    return 0


def _read_probs_csv(path, train, holdout):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"probabilities file not found: {path}")
    fitted = np.full(train.responses.shape, np.nan)
    fore = np.full(holdout.responses.shape, np.nan)
    subj = {str(s): i for i, s in enumerate(train.subjects)}
    resp = {str(r): j for j, r in enumerate(train.response_names)}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["subject", "time", "resp_id", "window", "p"]:
            raise DataError(f"{path}: unexpected header {header}")
        for line in fh:
            sid, t, rid, window, p = line.rstrip("\n").split(",")
            target, ds = (fitted, train) if window == "train" else (fore, holdout)
            ti = np.flatnonzero(ds.times == float(t))
            if len(ti) == 0:
                raise ShapeError(f"{path}: time {t} not in the {window} window")
            target[subj[sid], ti[0], resp[rid]] = float(p)
    return fitted, fore


def cmd_evaluate(args) -> int:
    config = _read_config(args)
    _, train, holdout = _load_train_holdout(config)
    fitted, fore = _read_probs_csv(config.get("probabilities", "probabilities.csv"),
                                   train, holdout)
    model = config.get("model_name", "model")
    rows: dict = {}
    _score_binary_window(rows, model, train.responses, fitted, train.times,
                         train.response_names,
                         pooled_label=_window_label(train.times[0], train.times[-1]),
                         per_time=False)
    _score_binary_window(rows, model, holdout.responses, fore, holdout.times,
                         train.response_names,
                         pooled_label=_window_label(holdout.times[0], holdout.times[-1]),
                         per_time=True)
    out = Path(args.out or "evaluate_out")
    out.mkdir(parents=True, exist_ok=True)
    report = out / "report.csv"
    write_raw_cells_csv(report, rows, ("model", "response", "time", "measure"))
    print(f"wrote {report}")
    return 0


def cmd_compete(args) -> int:
    config = _read_config(args)
    compete(config, out_dir=args.out or "competition_out")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="longcast",
        description="Forecast multivariate longitudinal binary outcomes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", cmd_simulate),
        ("fit", cmd_fit),
        ("forecast", cmd_forecast),
        ("evaluate", cmd_evaluate),
        ("compete", cmd_compete),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--reps", type=int, help="replication count override")
        p.add_argument("--jobs", type=int, help="worker processes for replications")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except LongcastError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
