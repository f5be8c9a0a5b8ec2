"""Command-line interface: ``effectcurve estimate | simulate | contrast | convert``.

Every command reads a YAML (or JSON) config; ``--seed``, ``--threads`` and
``--output`` override the corresponding config entries.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Any

import click
import numpy as np
import pandas as pd
import yaml

from .data import DataError, NodeSpec, apply_policy, read_wide_csv, to_long
from .estimators import ESTIMATORS, CurveEstimate, estimate
from .inference import InferenceResult, contrast as contrast_inference
from .learners import Learner, gbt_ensemble
from .policy import Policy, identity
from .simulation import StudyConfig, run_study

log = logging.getLogger("effectcurve")

PLOT_COLUMNS = ["t", "estimate", "pw_lo", "pw_hi", "band_lo", "band_hi"]
ESTIMATOR_DEFAULTS = {"k": None, "folds": 5, "cap": 50.0, "calibrate": True,
                      "ratio": "classification"}
INFERENCE_DEFAULTS = {"alpha": 0.05, "B": 1000, "multiplier": "rademacher"}


class ConfigError(click.ClickException):
    pass


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        cfg = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    cfg["_dir"] = str(path.parent.resolve())
    return cfg


def _resolve_path(cfg: dict, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.get("_dir", ".")) / p


def _output_dir(cfg: dict, output: str | None) -> Path:
    out = Path(output or cfg.get("output", "effectcurve-out"))
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory not writable: {out}")
    return out


def _set_threads(threads: int | None) -> int:
    """Resolve the worker count (replications run in separate processes)."""
    return max(1, int(threads or os.cpu_count() or 1))


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, pd.DataFrame):
        return _to_jsonable(obj.to_dict(orient="records"))
    return obj


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_to_jsonable(doc), indent=2, sort_keys=False) + "\n")


def plot_frame(times, theta, inf: InferenceResult | None) -> pd.DataFrame:
    df = pd.DataFrame({"t": times, "estimate": theta})
    for col in PLOT_COLUMNS[2:]:
        df[col] = getattr(inf, col) if inf is not None else np.nan
    return df[PLOT_COLUMNS]


def _learner(cfg: dict) -> Learner:
    spec = cfg.get("learner")
    return gbt_ensemble((25, 50, 100), with_glm=True) if spec is None else Learner.from_config(spec)


def _policies(cfg: dict) -> list[Policy]:
    raw = cfg.get("policies") or ([cfg["policy"]] if cfg.get("policy") else [])
    if not raw:
        raise ConfigError("config needs a 'policy' or 'policies' entry")
    out = []
    for j, p in enumerate(raw):
        try:
            pol = Policy.from_config(p)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"policy #{j + 1}: {exc}") from exc
        out.append(pol if pol.name else Policy.from_config({**p, "name": f"policy{j + 1}"}))
    names = [p.name for p in out]
    if len(set(names)) != len(names):
        raise ConfigError("policy names must be unique")
    return out


def _resolved(cfg: dict, seed: int, threads: int) -> dict:
    doc = {k: v for k, v in cfg.items() if not k.startswith("_")}
    doc["seed"] = seed
    doc["threads"] = threads
    return doc


def _results_doc(cfg, est: CurveEstimate, inf: InferenceResult | None, save_influence: bool) -> dict:
    doc: dict[str, Any] = {
        "estimator": est.estimator,
        "policy": est.policy,
        "times": est.times,
        "estimate": est.theta,
        "outcome_fits": est.outcome_fits,
        "nuisance_fits": est.nuisance_fits,
        "wall_time": est.wall_time,
    }
    if inf is not None:
        doc["inference"] = inf.to_dict()
        doc["covariance"] = inf.cov
    if "weights" in est.diagnostics:
        doc["weight_diagnostics"] = est.diagnostics["weights"]
    if save_influence and est.influence is not None:
        doc["influence"] = est.influence
    return doc


def _read_data(cfg: dict):
    if "data" not in cfg:
        raise ConfigError("config needs a 'data' entry (path to a wide CSV)")
    if "nodes" not in cfg:
        raise ConfigError("config needs a 'nodes' block")
    path = _resolve_path(cfg, cfg["data"])
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    try:
        spec = NodeSpec.from_config(cfg["nodes"])
        return read_wide_csv(path, spec)
    except (DataError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose: int) -> None:
    """Longitudinal effect-curve estimation under modified treatment policies."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _common(f):
    f = click.option("--figures/--no-figures", default=False,
                     help="Also render PNG figures next to the CSV output.")(f)
    f = click.option("--output", "output", type=click.Path(file_okay=False), default=None,
                     help="Output directory.")(f)
    f = click.option("--threads", type=int, default=None, help="Worker threads.")(f)
    f = click.option("--seed", type=int, default=None, help="Master seed.")(f)
    f = click.option("--config", "config", type=click.Path(dir_okay=False), required=True,
                     help="YAML or JSON config file.")(f)
    return f


@main.command("estimate")
@_common
def cmd_estimate(config, seed, threads, output, figures):
    """Estimate curves for each configured policy and estimator."""
    cfg = load_config(config)
    seed = int(seed if seed is not None else cfg.get("seed", 0))
    threads = _set_threads(threads or cfg.get("threads"))
    out = _output_dir(cfg, output)
    ds = _read_data(cfg)
    policies = _policies(cfg)
    estimators = cfg.get("estimators", ["sdr"])
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimators {bad}; expected a subset of {ESTIMATORS}")
    opts = {**ESTIMATOR_DEFAULTS, **(cfg.get("estimator") or {})}
    inf_opts = {**INFERENCE_DEFAULTS, **(cfg.get("inference") or {})}
    save_influence = bool(cfg.get("save_influence", True))
    learner = _learner(cfg)

    results: dict[str, dict] = {}
    curves: dict[str, pd.DataFrame] = {}
    for pol in policies:
        for name in estimators:
            kw: dict[str, Any] = {"learner": learner, "k": opts["k"], "seed": seed}
            if name in ("sdr", "benchmark"):
                kw.update(folds=int(opts["folds"]), cap=float(opts["cap"]), ratio=opts["ratio"])
                if name == "sdr":
                    kw["calibrate"] = bool(opts["calibrate"])
            try:
                est = estimate(ds, pol, name, **kw)
            except Exception as exc:
                raise click.ClickException(f"{name} under policy {pol.name!r}: {exc}") from exc
            inf = None
            if est.influence is not None:
                inf = est.infer(float(inf_opts["alpha"]), int(inf_opts["B"]),
                                inf_opts["multiplier"], seed)
            key = f"{pol.name}/{name}"
            results[key] = _results_doc(cfg, est, inf, save_influence)
            frame = plot_frame(est.times, est.theta, inf)
            frame.to_csv(out / f"curve_{pol.name}_{name}.csv", index=False)
            curves[key] = frame
            if "weights" in est.diagnostics:
                est.diagnostics["weights"].to_csv(out / f"weights_{pol.name}_{name}.csv",
                                                  index=False)

    contrasts = {}
    for pair in cfg.get("contrasts", []) or []:
        a, b = pair
        name = estimators[0] if len(estimators) == 1 else "sdr"
        ra, rb = results.get(f"{a}/{name}"), results.get(f"{b}/{name}")
        if ra is None or rb is None or "influence" not in ra or "influence" not in rb:
            raise ConfigError(f"contrast {a} - {b}: both policies need {name} results with influence")
        inf = contrast_inference(ra["influence"], rb["influence"], ra["estimate"], rb["estimate"],
                                 alpha=float(inf_opts["alpha"]), B=int(inf_opts["B"]),
                                 multiplier=inf_opts["multiplier"], seed=seed)
        frame = plot_frame(ra["times"], inf.theta, inf)
        frame.to_csv(out / f"contrast_{a}_vs_{b}.csv", index=False)
        contrasts[f"{a} - {b}"] = {"estimate": inf.theta, "inference": inf.to_dict()}
        curves[f"{a} - {b}"] = frame

    doc = {"command": "estimate", "created": _dt.datetime.now().isoformat(timespec="seconds"),
           "config": _resolved(cfg, seed, threads), "n_units": ds.n, "tau": ds.tau,
           "results": results, "contrasts": contrasts}
    write_json(out / "results.json", doc)
    if figures:
        from .plotting import plot_curves

        main_curves = {k: v for k, v in curves.items() if " - " not in k}
        plot_curves(main_curves, out / "curves.png")
        for key, frame in curves.items():
            if " - " in key:
                plot_curves({key: frame}, out / f"contrast_{key.replace(' - ', '_vs_')}.png",
                            title=key, ylabel="difference")
    click.echo(f"wrote {out / 'results.json'}")


@main.command("simulate")
@_common
def cmd_simulate(config, seed, threads, output, figures):
    """Run a Monte Carlo study and write metric and coverage tables."""
    cfg = load_config(config)
    body = {k: v for k, v in cfg.items() if not k.startswith("_") and k != "output"}
    if seed is not None:
        body["seed"] = seed
    body["threads"] = _set_threads(threads or body.get("threads"))
    try:
        study = StudyConfig.from_config(body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid study config: {exc}") from exc
    out = _output_dir(cfg, output)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_study(study)
    res.metrics.to_csv(out / "metrics.csv", index=False)
    res.coverage.to_csv(out / "coverage.csv", index=False)
    res.records.to_csv(out / "replications.csv", index=False)
    write_json(out / "manifest.json", {
        "command": "simulate", "created": _dt.datetime.now().isoformat(timespec="seconds"),
        "config": study.to_config(), "truths": res.truths,
        "files": ["metrics.csv", "coverage.csv", "replications.csv"],
    })
    if figures:
        from .plotting import plot_study_metrics

        plot_study_metrics(res.metrics, out / "mae.png")
    click.echo(res.metrics.to_string(index=False))


@main.command("contrast")
@click.argument("results_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("results_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--key-a", default=None, help="Result key in file A (policy/estimator).")
@click.option("--key-b", default=None, help="Result key in file B (policy/estimator).")
@click.option("--alpha", type=float, default=0.05)
@click.option("--draws", "B", type=int, default=1000, help="Multiplier draws.")
@click.option("--seed", type=int, default=0)
@click.option("--output", type=click.Path(file_okay=False), default="effectcurve-out")
@click.option("--figures/--no-figures", default=False)
def cmd_contrast(results_a, results_b, key_a, key_b, alpha, B, seed, output, figures):
    """Effect curve (A minus B) from two results files on the same units."""
    def pick(path, key):
        doc = json.loads(Path(path).read_text())
        res = doc.get("results", {})
        if key is None:
            if len(res) != 1:
                raise ConfigError(f"{path}: {len(res)} results present; choose one with --key")
            key = next(iter(res))
        if key not in res or "influence" not in res[key]:
            raise ConfigError(f"{path}: no influence values for {key!r}")
        return key, res[key]

    ka, ra = pick(results_a, key_a)
    kb, rb = pick(results_b, key_b)
    phi_a, phi_b = np.asarray(ra["influence"]), np.asarray(rb["influence"])
    if phi_a.shape != phi_b.shape:
        raise ConfigError(f"mismatched units: {phi_a.shape} vs {phi_b.shape}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        inf = contrast_inference(phi_a, phi_b, ra["estimate"], rb["estimate"], alpha=alpha, B=B,
                                 seed=seed)
    degenerate = bool(np.any(inf.sigma == 0))
    if degenerate:
        click.echo("warning: zero-variance contrast at some times (degenerate intervals)", err=True)
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    frame = plot_frame(ra["times"], inf.theta, inf)
    frame.to_csv(out / "contrast.csv", index=False)
    write_json(out / "contrast.json", {
        "command": "contrast", "created": _dt.datetime.now().isoformat(timespec="seconds"),
        "config": {"a": str(results_a), "key_a": ka, "b": str(results_b), "key_b": kb,
                   "alpha": alpha, "B": B, "seed": seed},
        "estimate": inf.theta, "inference": inf.to_dict(), "degenerate": degenerate,
    })
    if figures:
        from .plotting import plot_curves

        plot_curves({f"{ka} - {kb}": frame}, out / "contrast.png", ylabel="difference")
    click.echo(f"wrote {out / 'contrast.csv'}")


@main.command("convert")
@_common
def cmd_convert(config, seed, threads, output, figures):
    """Dump the person-period (long) table built from the wide CSV."""
    cfg = load_config(config)
    out = _output_dir(cfg, output)
    ds = _read_data(cfg)
    try:
        pol = _policies(cfg)[0]
    except ConfigError:
        pol = identity()
    long = to_long(apply_policy(ds, pol), (cfg.get("estimator") or {}).get("k"))
    long.to_frame().to_csv(out / "long.csv", index=False)
    click.echo(f"wrote {out / 'long.csv'} ({long.n_rows} rows)")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
