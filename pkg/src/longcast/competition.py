"""Forecasting-competition orchestration.

One replication: simulate (or load) a panel, split it, forecast the
time-varying covariates with transition models, fit every configured
response model on the training window, forecast the holdout window with
each model variant, and score everything.  The competition repeats this
over R replications with independently derived seeds and aggregates the
accuracy cells (mean, sd, se) across replications.

Within a replication models run sequentially so per-model wall-clock
times are comparable; replications themselves may run in a worker pool.
Reports are written with fixed float formatting so a fixed master seed
reproduces them byte for byte.
"""
from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import __version__
from .accuracy import auroc, epcp, mae, mase
from .covforecast import fit_tm, forecast_tm, insample_errors
from .dataset import (
    LongitudinalDataset,
    ModelFormula,
    SplitSpec,
    design_matrix,
    load_csv,
    split,
)
from .errors import ConfigError, LongcastError
from .gee import fit_gee, fitted_marginal, forecast_marginal
from .mmrem import (
    MmremForecastConfig,
    fit_mmrem,
    fitted_probs_mmrem,
    forecast_mmrem,
)
from .pnmtrem import (
    NAMED_VARIANTS,
    PnmtremForecastConfig,
    fit_pnmtrem,
    fitted_probs_pnmtrem,
    forecast_pnmtrem,
)
from .simgen import SimConfig, generate

__all__ = [
    "default_config",
    "normalize_config",
    "derive_seed",
    "run_replication",
    "compete",
    "CompetitionResult",
    "write_cells_csv",
    "format_float",
]

FAILURE_LIMIT = 0.2


def format_float(v) -> str:
    return f"{v:.10g}"


def derive_seed(master: int, *path: int) -> int:
    """Stable integer sub-seed for (replication, model, ...) paths."""
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(2, np.uint64)[0])


def _name_salt(name: str) -> int:
    # independent of model ordering in the config
    return zlib.crc32(name.encode("utf-8"))


def default_config() -> dict:
    """Paper-scale defaults: simulated panel, the six competition models."""
    return {
        "seed": 1,
        "replications": 100,
        "sim": {},
        "split": {"train": [1, 4], "forecast": [5, 8]},
        "quad_order": 40,
        "models": [
            {"family": "gee", "name": "UMM", "corr": "unstructured"},
            {"family": "gee", "name": "MMM1", "corr": "unstructured"},
            {"family": "mmrem", "variants": ["MMREM2", "MMREM4"]},
            {"family": "pnmtrem", "variants": ["PNMTREM1", "PNMTREM2"]},
        ],
        "covariate_models": {"orders": [1, 2], "substitute_order": 1},
        "keep_replication_reports": False,
        "jobs": 1,
    }


def normalize_config(config: dict) -> dict:
    """Fill defaults and validate the run configuration."""
    out = default_config()
    unknown = set(config) - set(out) - {"dataset", "schema"}
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    out.update(config)
    if "dataset" in config and config.get("sim"):
        raise ConfigError("specify either 'dataset' or 'sim', not both")
    if not isinstance(out["models"], list) or not out["models"]:
        raise ConfigError("'models' must be a non-empty list")
    names = []
    for spec in out["models"]:
        family = spec.get("family")
        if family not in ("gee", "mmrem", "pnmtrem"):
            raise ConfigError(f"unknown model family {family!r}")
        if family == "gee":
            name = spec.get("name", "UMM")
            if name not in ("UMM", "MMM1", "MMM2"):
                raise ConfigError(f"unknown GEE layout {name!r}")
            corr = spec.get("corr", "independence")
            if corr not in ("independence", "exchangeable", "ar1", "unstructured"):
                raise ConfigError(f"unknown working correlation {corr!r}")
            names.append(name)
        elif family == "mmrem":
            variants = spec.get("variants", ["MMREM2"])
            bad = [v for v in variants if v not in ("MMREM1", "MMREM2", "MMREM3", "MMREM4")]
            if bad:
                raise ConfigError(f"unknown MMREM variants {bad}")
            names.extend(variants)
        else:
            for v in spec.get("variants", ["PNMTREM1"]):
                if isinstance(v, str) and v not in NAMED_VARIANTS:
                    raise ConfigError(
                        f"unknown PNMTREM methodology {v!r}; named ones are "
                        f"{sorted(NAMED_VARIANTS)} (or give [z_source, history_mode])"
                    )
                names.append(v if isinstance(v, str) else f"PNMTREM[{v[0]},{v[1]}]")
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate model names in config: {names}")
    r = out["replications"]
    if not isinstance(r, int) or r < 1:
        raise ConfigError(f"'replications' must be a positive integer, got {r!r}")
    return out


def _window_label(lo, hi) -> str:
    return f"{lo:g} to {hi:g}" if lo != hi else f"{lo:g}"


def _score_binary_window(rows, model, y, probs, time_labels, response_names, pooled_label=None, per_time=True):
    """Append (model, response, time, measure) -> value rows.

    ``y`` and ``probs`` are (N, T_sel, k); cells count when the truth is
    observed and the probability is finite.
    """
    valid = ~np.isnan(y) & np.isfinite(probs)
    for j, resp in enumerate(response_names):
        if per_time:
            for ti, lab in enumerate(time_labels):
                m = valid[:, ti, j]
                rows[(model, resp, f"{lab:g}", "epcp")] = epcp(y[m, ti, j], probs[m, ti, j])
                rows[(model, resp, f"{lab:g}", "auroc")] = auroc(y[m, ti, j], probs[m, ti, j])
        if pooled_label is not None:
            m = valid[:, :, j]
            rows[(model, resp, pooled_label, "epcp")] = epcp(y[:, :, j][m], probs[:, :, j][m])
            rows[(model, resp, pooled_label, "auroc")] = auroc(y[:, :, j][m], probs[:, :, j][m])


def _default_terms(ds: LongitudinalDataset) -> tuple:
    return tuple(ds.covariates)


def _default_shared_terms(ds: LongitudinalDataset) -> tuple:
    indicators = tuple(f"resp({r})" for r in ds.response_names[1:])
    return indicators + tuple(ds.covariates)


def _run_gee(spec, train, holdout_x, pooled_train, pooled_fore, quad_order, rows, master_seed, rep):
    name = spec.get("name", "UMM")
    corr = spec.get("corr", "independence")
    k = train.n_responses
    time_labels = holdout_x.times
    if name == "UMM":
        terms = tuple(spec.get("terms", _default_terms(train)))
        fitted = np.empty(train.responses.shape)
        fore = np.empty(holdout_x.responses.shape)
        for j, resp in enumerate(train.response_names):
            formula = ModelFormula((resp,), terms, per_response=True)
            fit = fit_gee(train, formula, corr, "umm")
            fitted[:, :, j] = fitted_marginal(fit, train)
            fore[:, :, j] = forecast_marginal(fit, design_matrix(holdout_x, formula))
    elif name == "MMM1":
        terms = tuple(spec.get("terms", _default_terms(train)))
        formula = ModelFormula(train.response_names, terms, per_response=True)
        fit = fit_gee(train, formula, corr, "mmm1")
        fitted = fitted_marginal(fit, train)
        fore = forecast_marginal(fit, design_matrix(holdout_x, formula))
    else:  # MMM2
        terms = tuple(spec.get("terms", _default_shared_terms(train)))
        formula = ModelFormula(train.response_names, terms, per_response=False)
        fit = fit_gee(train, formula, corr, "mmm2")
        fitted = fitted_marginal(fit, train)
        fore = forecast_marginal(fit, design_matrix(holdout_x, formula))
    _score_binary_window(rows, name, train.responses, fitted,
                         train.times, train.response_names,
                         pooled_label=pooled_train, per_time=False)
    _score_binary_window(rows, name, holdout_x.responses, fore,
                         time_labels, train.response_names,
                         pooled_label=pooled_fore, per_time=True)


def _run_mmrem(spec, train, holdout_x, pooled_train, pooled_fore, quad_order, rows, master_seed, rep):
    terms = tuple(spec.get("terms", _default_terms(train)))
    formula = ModelFormula(train.response_names, terms, per_response=True)
    fit = fit_mmrem(train, formula, quad_order=quad_order)
    xhat_design = design_matrix(holdout_x, formula)
    for variant in spec.get("variants", ["MMREM2"]):
        seed = spec.get("seed", derive_seed(master_seed, rep, _name_salt(variant)))
        cfg = MmremForecastConfig(
            variant, k_draws=int(spec.get("k_draws", 150)), seed=seed
        )
        fitted = fitted_probs_mmrem(fit, train, variant, cfg.k_draws, seed)
        fore = forecast_mmrem(fit, xhat_design, cfg)
        _score_binary_window(rows, variant, train.responses, fitted,
                             train.times, train.response_names,
                             pooled_label=pooled_train, per_time=False)
        _score_binary_window(rows, variant, holdout_x.responses, fore,
                             holdout_x.times, train.response_names,
                             pooled_label=pooled_fore, per_time=True)


def _run_pnmtrem(spec, train, holdout_x, holdout_y, pooled_train, pooled_fore, quad_order, rows, master_seed, rep):
    terms = tuple(spec.get("terms", _default_shared_terms(train)))
    formula = ModelFormula(train.response_names, terms, per_response=False)
    baseline_terms = spec.get("baseline_terms")
    baseline_formula = (
        ModelFormula(train.response_names, tuple(baseline_terms), per_response=False)
        if baseline_terms is not None
        else None
    )
    fit = fit_pnmtrem(
        train,
        formula,
        baseline_formula=baseline_formula,
        z_terms=tuple(spec.get("z_terms", ())),
        quad_order=quad_order,
    )
    for variant in spec.get("variants", ["PNMTREM1"]):
        if isinstance(variant, str):
            vname = variant
            z_source, history = NAMED_VARIANTS[variant]
        else:
            z_source, history = variant
            vname = f"PNMTREM[{z_source},{history}]"
        seed = spec.get("seed", derive_seed(master_seed, rep, _name_salt(vname)))
        cfg = PnmtremForecastConfig(
            z_source=z_source,
            history_mode=history,
            smoothing=spec.get("smoothing", "auto"),
            ets_threshold=int(spec.get("ets_threshold", 8)),
            seed=seed,
        )
        fitted = fitted_probs_pnmtrem(fit, train, z_source)
        fore, _ = forecast_pnmtrem(
            fit, train, holdout_x, cfg,
            holdout_y=holdout_y if history == "observed" else None,
        )
        _score_binary_window(rows, vname, train.responses, fitted,
                             train.times, train.response_names,
                             pooled_label=pooled_train, per_time=False)
        _score_binary_window(rows, vname, holdout_x.responses, fore,
                             holdout_x.times, train.response_names,
                             pooled_label=pooled_fore, per_time=True)


def _score_covariates(cfg, train, holdout, rows):
    """Transition-model covariate forecasts and their MAE/MASE cells.

    Returns the covariate panel overrides used by the response models.
    """
    covariates = cfg.get("covariates")
    if covariates is None:
        covariates = [c for c in train.covariates if c not in train.time_invariant]
    orders = cfg.get("orders", [1, 2])
    substitute_order = cfg.get("substitute_order", 1)
    horizon = holdout.n_times
    overrides = {}
    for cov in covariates:
        truth = holdout.covariates[cov]
        hist = train.covariates[cov]
        scale = np.mean(np.abs(np.diff(hist, axis=1)), axis=1)
        for order in orders:
            fit = fit_tm(train, cov, order)
            model = f"TM({order})"
            fore = forecast_tm(fit, train, horizon)
            if order == substitute_order:
                overrides[cov] = fore
            # in-sample one-step errors, pooled over usable occasions
            resid = insample_errors(fit, train)
            lab = _window_label(train.times[order], train.times[-1])
            rows[(model, cov, lab, "mae")] = float(np.mean(np.abs(resid)))
            rows[(model, cov, lab, "mase")] = float(
                np.mean(np.abs(resid) / scale[:, None])
            )
            for h, t in enumerate(holdout.times):
                rows[(model, cov, f"{t:g}", "mae")] = mae(truth[:, h], fore[:, h])
                rows[(model, cov, f"{t:g}", "mase")] = mase(
                    truth[:, h], fore[:, h], hist, subjects=train.subjects
                )
            pooled = _window_label(holdout.times[0], holdout.times[-1])
            rows[(model, cov, pooled, "mae")] = float(np.mean(np.abs(truth - fore)))
            rows[(model, cov, pooled, "mase")] = float(
                np.mean(np.abs(truth - fore) / scale[:, None])
            )
    return overrides


@dataclass
class RepResult:
    rep: int
    binary: dict = field(default_factory=dict)
    covariate: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)  # model name -> message


def run_replication(config: dict, rep: int, dataset: LongitudinalDataset | None = None) -> RepResult:
    """Run one full replication: simulate/load, forecast, fit, score."""
    master = int(config["seed"])
    if dataset is None:
        if "dataset" in config:
            dataset = load_csv(config["dataset"], config.get("schema"))
        else:
            sim_kwargs = dict(config.get("sim") or {})
            for key in ("response_names", "covariate_names", "time_invariant"):
                if key in sim_kwargs:
                    sim_kwargs[key] = tuple(sim_kwargs[key])
            sim = SimConfig(seed=derive_seed(master, rep), **sim_kwargs)
            dataset, _ = generate(sim)
    spec = SplitSpec(tuple(config["split"]["train"]), tuple(config["split"]["forecast"]))
    train, holdout = split(dataset, spec)
    pooled_train = _window_label(train.times[0], train.times[-1])
    pooled_fore = _window_label(holdout.times[0], holdout.times[-1])
    quad_order = int(config.get("quad_order", 40))

    result = RepResult(rep=rep)
    overrides = _score_covariates(
        config.get("covariate_models") or {}, train, holdout, result.covariate
    )
    holdout_x = holdout.with_covariates(**overrides)

    for spec_m in config["models"]:
        family = spec_m["family"]
        label = spec_m.get("name", family.upper()) if family == "gee" else family
        rows: dict = {}
        t0 = time.perf_counter()
        try:
            if family == "gee":
                _run_gee(spec_m, train, holdout_x, pooled_train, pooled_fore,
                         quad_order, rows, master, rep)
            elif family == "mmrem":
                _run_mmrem(spec_m, train, holdout_x, pooled_train, pooled_fore,
                           quad_order, rows, master, rep)
            else:
                _run_pnmtrem(spec_m, train, holdout_x, holdout.responses,
                             pooled_train, pooled_fore, quad_order, rows, master, rep)
            result.binary.update(rows)
        except LongcastError as exc:
            result.failures[label] = f"{type(exc).__name__}: {exc}"
        result.timings[label] = time.perf_counter() - t0
    return result


@dataclass
class CompetitionResult:
    binary_cells: dict
    covariate_cells: dict
    timings: dict
    failures: dict
    provenance: dict
    replications: list = field(default_factory=list)


def _aggregate_cells(per_rep: list) -> dict:
    keys = sorted({k for rep in per_rep for k in rep})
    out = {}
    for key in keys:
        vals = np.array([rep[key] for rep in per_rep if key in rep])
        cell = {"mean": float(vals.mean()), "n": len(vals)}
        if len(vals) >= 2:
            sd = float(np.std(vals, ddof=1))
            cell["sd"] = sd
            cell["se"] = sd / np.sqrt(len(vals))
        else:
            cell["sd"] = ""
            cell["se"] = ""
        out[key] = cell
    return out


def write_cells_csv(path, cells: dict, key_names) -> None:
    """Write aggregated (or single-replication) cells sorted by key."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(list(key_names) + ["mean", "sd", "se", "n"]) + "\n")
        for key in sorted(cells):
            cell = cells[key]
            sd = format_float(cell["sd"]) if cell["sd"] != "" else ""
            se = format_float(cell["se"]) if cell["se"] != "" else ""
            fh.write(
                ",".join(list(key) + [format_float(cell["mean"]), sd, se, str(cell["n"])])
                + "\n"
            )


def write_raw_cells_csv(path, rows: dict, key_names) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(list(key_names) + ["value"]) + "\n")
        for key in sorted(rows):
            fh.write(",".join(list(key) + [format_float(rows[key])]) + "\n")


def _pool_worker(args):
    config, rep = args
    return run_replication(config, rep)


def compete(config: dict, out_dir=None, quiet: bool = False) -> CompetitionResult:
    """Run the full competition and (optionally) write report files.

    Model failures are recorded per replication; any model failing in more
    than 20% of replications aborts the run with its collected messages.
    """
    config = normalize_config(config)
    reps = int(config["replications"])
    jobs = int(config.get("jobs", 1))
    t_start = time.perf_counter()
    if jobs > 1 and reps > 1:
        with Pool(processes=jobs) as pool:
            results = pool.map(_pool_worker, [(config, r) for r in range(reps)])
    else:
        results = [run_replication(config, r) for r in range(reps)]

    failures: dict = {}
    for res in results:
        for model, msg in res.failures.items():
            failures.setdefault(model, []).append((res.rep, msg))
    for model, fails in failures.items():
        if len(fails) > FAILURE_LIMIT * reps:
            details = "; ".join(f"rep {r}: {m}" for r, m in fails[:5])
            raise LongcastError(
                f"model {model} failed in {len(fails)}/{reps} replications "
                f"(> {FAILURE_LIMIT:.0%}): {details}"
            )

    binary_cells = _aggregate_cells([r.binary for r in results])
    covariate_cells = _aggregate_cells([r.covariate for r in results])
    mean_timings = {}
    for res in results:
        for model, sec in res.timings.items():
            mean_timings.setdefault(model, []).append(sec)
    mean_timings = {m: float(np.mean(v)) for m, v in mean_timings.items()}

    provenance = {
        "engine_version": __version__,
        "seed": config["seed"],
        "replications": reps,
        "config": {k: v for k, v in config.items() if k != "jobs"},
        "mean_seconds_per_model": mean_timings,
        "failures": {m: [r for r, _ in v] for m, v in failures.items()},
        "total_seconds": time.perf_counter() - t_start,
    }
    result = CompetitionResult(
        binary_cells=binary_cells,
        covariate_cells=covariate_cells,
        timings=mean_timings,
        failures=failures,
        provenance=provenance,
        replications=results,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_cells_csv(out / "competition_binary.csv", binary_cells,
                        ("model", "response", "time", "measure"))
        write_cells_csv(out / "competition_covariates.csv", covariate_cells,
                        ("model", "covariate", "time", "measure"))
        with open(out / "provenance.json", "w", encoding="utf-8") as fh:
            json.dump(provenance, fh, indent=2, default=str)
            fh.write("\n")
        if config.get("keep_replication_reports"):
            for res in results:
                write_raw_cells_csv(
                    out / "replications" / f"rep_{res.rep:04d}_binary.csv",
                    res.binary, ("model", "response", "time", "measure"))
                write_raw_cells_csv(
                    out / "replications" / f"rep_{res.rep:04d}_covariates.csv",
                    res.covariate, ("model", "covariate", "time", "measure"))
    if not quiet:
        _print_summary(result)
    return result


def _print_summary(result: CompetitionResult) -> None:
    cells = result.binary_cells
    if not cells:
        return
    models = sorted({k[0] for k in cells})
    responses = sorted({k[1] for k in cells})
    times = sorted({k[2] for k in cells})
    for resp in responses:
        print(f"\nresponse={resp}")
        header = ["model"] + [f"{t} {m}" for t in times for m in ("epcp", "auroc")]
        print("  " + "  ".join(f"{h:>14}" for h in header))
        for model in models:
            row = [f"{model:>14}"]
            for t in times:
                for measure in ("epcp", "auroc"):
                    cell = cells.get((model, resp, t, measure))
                    row.append(f"{cell['mean']:14.3f}" if cell else f"{'-':>14}")
            print("  " + "  ".join(row))
    if result.covariate_cells:
        print("\ncovariate forecasts")
        ccells = result.covariate_cells
        for key in sorted(ccells):
            model, cov, t, measure = key
            print(f"  {model:>6} {cov:>4} {t:>8} {measure:>5}: {ccells[key]['mean']:.3f}")
