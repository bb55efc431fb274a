"""Command-line interface: estimation, regression, simulation, reporting.

Configuration comes from an optional flat-key JSON file; command-line
flags override file values. Data artifacts are deterministic given
(config, seed); wall-clock timestamps live in a separate run_meta.json.
Exit codes: 0 ok, 1 estimation failure, 2 config/IO error.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .cir import MODES, CIRConfig, fit_cir, fit_nuisances
from .cox import bootstrap_cox, fit_cox
from .data_model import CovariateSchema, ingest_csv
from .nuisance import lean_ensemble_spec
from .simulate import ScenarioSpec, run_bootstrap_study, run_cir_study


class ConfigError(Exception):
    pass


class EstimationError(Exception):
    pass


def _load_config(args, defaults):
    """Merge defaults <- config file <- explicit CLI flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config) as f:
            try:
                file_cfg = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            cfg[key] = val
    return cfg


def _config_hash(cfg):
    # the output location is not part of the run's identity
    core = {k: v for k, v in cfg.items() if k != "out_dir"}
    blob = json.dumps(core, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _provenance(cfg):
    return {"config_hash": _config_hash(cfg), "seed": cfg.get("seed"),
            "version": __version__}


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def _prepare_outdir(cfg):
    out = cfg.get("out_dir") or "."
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory not writable: {out}")
    return out


def _finish(out, cfg, artifacts, t_start):
    manifest = dict(_provenance(cfg))
    manifest["config"] = {k: v for k, v in cfg.items() if k != "out_dir"}
    manifest["artifacts"] = sorted(artifacts)
    _write_json(os.path.join(out, "manifest.json"), manifest)
    # timestamps kept out of the data artifacts so reruns are byte-identical
    _write_json(os.path.join(out, "run_meta.json"),
                {"wall_clock_s": time.time() - t_start,
                 "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")})


def _load_dataset(cfg):
    for key in ("input", "schema"):
        if not cfg.get(key):
            raise ConfigError(f"missing required option: --{key}")
    if not os.path.exists(cfg["schema"]):
        raise ConfigError(f"schema not found: {cfg['schema']}")
    if not os.path.exists(cfg["input"]):
        raise ConfigError(f"input not found: {cfg['input']}")
    if cfg.get("c0") is None:
        raise ConfigError("missing required option: --c0")
    schema = CovariateSchema.from_json(cfg["schema"])
    b0 = cfg.get("b0")
    if b0 is None:
        b0 = 1e-8
    return ingest_csv(cfg["input"], schema, c0=float(cfg["c0"]),
                      b0=float(b0)), schema


def cmd_fit_cir(args):
    defaults = {"input": None, "schema": None, "t0": None, "t1": None,
                "c0": None, "b0": None, "mode": "extended", "seed": 0,
                "n-grid": 100, "out_dir": None}
    cfg = _load_config(args, defaults)
    d, _ = _load_dataset(cfg)
    if cfg["t0"] is None or cfg["t1"] is None:
        raise ConfigError("missing required options: --t0/--t1")
    out = _prepare_outdir(cfg)
    t_start = time.time()
    modes = [m.strip() for m in str(cfg["mode"]).split(",")]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode: {m}")
    artifacts = []
    for m in modes:
        try:
            nuis = fit_nuisances(d, m, seed=int(cfg["seed"]))
            est = fit_cir(d, CIRConfig(t0=float(cfg["t0"]), t1=float(cfg["t1"]),
                                       mode=m, n_grid=int(cfg["n-grid"])),
                          nuisances=nuis)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise EstimationError(f"CIR fit failed in mode {m}: {exc}")
        curve_csv = os.path.join(out, f"curve_{m}.csv")
        est.to_csv(curve_csv)
        payload = est.to_json()
        payload.update(_provenance(cfg))
        _write_json(os.path.join(out, f"curve_{m}.json"), payload)
        artifacts += [f"curve_{m}.csv", f"curve_{m}.json"]
    # plot-data file: survival curve with CI band plus response-time counts
    hist_counts, hist_edges = np.histogram(d.y[d.y < d.c0], bins=20)
    plot_path = os.path.join(out, "plot_curve.csv")
    with open(plot_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["series", "x", "y", "y_lower", "y_upper"])
        for m in modes:
            with open(os.path.join(out, f"curve_{m}.json")) as jf:
                pj = json.load(jf)
            for i in range(len(pj["times"])):
                writer.writerow([f"survival_{m}", repr(pj["times"][i]),
                                 repr(pj["survival"][i]),
                                 repr(pj["ci_lower"][i]),
                                 repr(pj["ci_upper"][i])])
        for i in range(len(hist_counts)):
            writer.writerow(["response_time_hist",
                             repr(float(0.5 * (hist_edges[i] + hist_edges[i + 1]))),
                             int(hist_counts[i]), "", ""])
    artifacts.append("plot_curve.csv")
    _finish(out, cfg, artifacts, t_start)
    return 0


def cmd_fit_cox(args):
    defaults = {"input": None, "schema": None, "c0": None, "b0": None,
                "B": 1000, "seed": 0, "out_dir": None, "resample": "full"}
    cfg = _load_config(args, defaults)
    d, schema = _load_dataset(cfg)
    out = _prepare_outdir(cfg)
    t_start = time.time()
    # joint tests and (ref) rows come from the schema's categorical columns
    groups = {}
    ref_rows = []
    names = list(d.covariate_names)
    for col in schema.columns:
        if col.kind != "categorical":
            continue
        idxs = [j for j, nm in enumerate(names) if nm.startswith(f"{col.name}=")]
        if idxs:
            groups[col.name] = idxs
            ref_rows.append((idxs[0], f"{col.name}={col.reference}"))
    try:
        fit = fit_cox(d)
        bs = bootstrap_cox(d, B=int(cfg["B"]), seed=int(cfg["seed"]),
                           groups=groups or None, resample=cfg["resample"])
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise EstimationError(f"Cox fit failed: {exc}")
    table_path = os.path.join(out, "cox_table.csv")
    bs.to_table_csv(table_path, reference_rows=ref_rows)
    fit_payload = fit.to_json()
    fit_payload.update(_provenance(cfg))
    fit_payload["B"] = int(cfg["B"])
    _write_json(os.path.join(out, "cox_fit.json"), fit_payload)
    bs_payload = bs.to_json()
    bs_payload.update(_provenance(cfg))
    _write_json(os.path.join(out, "cox_bootstrap.json"), bs_payload)
    _finish(out, cfg, ["cox_table.csv", "cox_fit.json", "cox_bootstrap.json"],
            t_start)
    return 0


def cmd_simulate(args):
    defaults = {"profile": "desk", "study": "cir", "scenario": None,
                "n": None, "reps": None, "B": 100, "seed": 0,
                "threads": 1, "out_dir": None}
    cfg = _load_config(args, defaults)
    out = _prepare_outdir(cfg)
    t_start = time.time()
    if cfg["profile"] not in ("desk", "full"):
        raise ConfigError(f"unknown profile: {cfg['profile']}")
    if cfg["study"] not in ("cir", "bootstrap"):
        raise ConfigError(f"unknown study: {cfg['study']}")
    if cfg["profile"] == "desk":
        cells = [("S3", 1000)]
        reps = 300
    else:
        cells = [(s, n) for s in ("S1", "S2", "S3")
                 for n in (500, 1000, 1500, 2000)]
        reps = 1000
    if cfg["scenario"]:
        cells = [(s, n) for (s, n) in cells if s == cfg["scenario"]] or \
            [(cfg["scenario"], int(cfg["n"] or 1000))]
    if cfg["n"]:
        scenarios = list(dict.fromkeys(s for s, _ in cells))
        cells = [(s, int(cfg["n"])) for s in scenarios]
    if cfg["reps"]:
        reps = int(cfg["reps"])
    artifacts = []
    workers = int(cfg["threads"])
    for s, n in cells:
        scn = ScenarioSpec(name=s, n=n, reps=reps, seed=int(cfg["seed"]))
        if cfg["study"] == "cir":
            rep = run_cir_study(scn, mu_spec=lean_ensemble_spec(),
                                density_bins=(5, 10, 20), workers=workers)
        else:
            rep = run_bootstrap_study(scn, n_list=[n], B_list=[int(cfg["B"])],
                                      reps=reps, workers=workers)
        stem = f"metrics_{cfg['study']}_{s}_n{n}"
        payload = rep.to_json()
        payload.update(_provenance(cfg))
        _write_json(os.path.join(out, stem + ".json"), payload)
        artifacts.append(stem + ".json")
        if cfg["study"] == "cir":
            rep.to_csv(os.path.join(out, stem + ".csv"))
            artifacts.append(stem + ".csv")
        if rep.error:
            raise EstimationError(rep.error)
    _finish(out, cfg, artifacts, t_start)
    return 0


def cmd_report(args):
    defaults = {"run_dir": None, "out_dir": None, "seed": 0}
    cfg = _load_config(args, defaults)
    run_dir = cfg.get("run_dir")
    if not run_dir or not os.path.isdir(run_dir):
        raise ConfigError(f"run directory not found: {run_dir}")
    out = _prepare_outdir(cfg)
    t_start = time.time()
    rows = []
    for fn in sorted(os.listdir(run_dir)):
        if not fn.endswith(".json") or fn in ("manifest.json", "run_meta.json"):
            continue
        with open(os.path.join(run_dir, fn)) as f:
            try:
                pj = json.load(f)
            except json.JSONDecodeError:
                continue
        if "survival" in pj:
            s = np.asarray(pj["survival"])
            rows.append([fn, "survival_curve",
                         f"points={len(s)}",
                         f"survival_range={s.min():.4f}..{s.max():.4f}"])
        elif "beta" in pj and "wald_ci" in pj:
            rows.append([fn, "cox_bootstrap",
                         "beta=" + ",".join(f"{b:.4f}" for b in pj["beta"]),
                         f"B_used={pj.get('B_used')}"])
        elif "cir" in pj or "cox" in pj:
            keys = sorted(list(pj.get("cir", {}).keys())
                          + list(pj.get("cox", {}).keys()))
            rows.append([fn, "metrics", "cells=" + ";".join(keys),
                         f"scenario={pj.get('scenario')}"])
    if not rows:
        raise ConfigError(f"no report-able artifacts in {run_dir}")
    with open(os.path.join(out, "report_summary.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["artifact", "kind", "detail_1", "detail_2"])
        writer.writerows(rows)
    _finish(out, cfg, ["report_summary.csv"], t_start)
    return 0


def _add_common(sp):
    sp.add_argument("--config", help="flat-key JSON config file")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--seed", type=int)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="currstat",
        description="Event-time distribution estimation from current status "
                    "data with survey nonresponse")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit-cir", help="estimate the survival curve")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--schema")
    p.add_argument("--t0", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--c0", type=float)
    p.add_argument("--b0", type=float)
    p.add_argument("--mode", help="comma-separated subset of "
                                  "extended,complete_case,npmle")
    p.add_argument("--n-grid", dest="n_grid", type=int)
    p.set_defaults(func=cmd_fit_cir)

    p = sub.add_parser("fit-cox", help="proportional hazards regression")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--schema")
    p.add_argument("--c0", type=float)
    p.add_argument("--b0", type=float)
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--resample", choices=("full", "respondents"))
    p.set_defaults(func=cmd_fit_cox)

    p = sub.add_parser("simulate", help="run Monte Carlo studies")
    _add_common(p)
    p.add_argument("--profile", choices=("desk", "full"))
    p.add_argument("--study", choices=("cir", "bootstrap"))
    p.add_argument("--scenario", choices=("S1", "S2", "S3"))
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize run artifacts")
    _add_common(p)
    p.add_argument("--run-dir", dest="run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def _emit_error(args, code, message):
    payload = {"error": message, "exit_code": code,
               "subcommand": getattr(args, "subcommand", None)}
    out = getattr(args, "out_dir", None)
    try:
        if out:
            os.makedirs(out, exist_ok=True)
            _write_json(os.path.join(out, "error.json"), payload)
    except OSError:
        pass
    json.dump(payload, sys.stderr)
    sys.stderr.write("\n")


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _emit_error(args, 2, str(exc))
        return 2
    except EstimationError as exc:
        _emit_error(args, 1, str(exc))
        return 1
    except OSError as exc:
        _emit_error(args, 2, str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
