"""Command-line entry point.

Subcommands ``simulate``, ``fit``, ``evaluate``, ``report`` and
``run-experiment``.  The exit status is 0 only when every requested
replication succeeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .data import DataError, StandardizationParams, load_dataset, save_dataset
from .evaluate import PredictionModel, default_t_star, integrated_brier, prediction_error_curve
from .experiment import (
    CHAIN_PRESETS,
    PRESETS,
    ExperimentConfig,
    _write_csv,
    _write_json,
    config_hash,
    fit_model,
    report,
    resolve_priors,
    run_experiment,
)
from .posterior import select_variables, summarize
from .sampler import MODELS, load_chain, save_chain
from .simulate import SimulationDesign, paper_design, simulate_train_test


def _load_config(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    design_d = cfg.get("design", {})
    if "weibull_scale" in design_d:
        design = SimulationDesign.from_dict({**design_d, "seed": args.seed})
    else:
        extra = {k: v for k, v in design_d.items() if k not in ("kind", "p", "n")}
        p = args.p or (design_d.get("p", [20])[0] if isinstance(design_d.get("p"), list) else design_d.get("p", 20))
        n = args.n or (design_d.get("n", [100])[0] if isinstance(design_d.get("n"), list) else design_d.get("n", 100))
        design = paper_design(p=p, n=n, seed=args.seed, **extra)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash({"design": design.to_dict(), "replication": args.replication})
    train, test = simulate_train_test(design, args.replication)
    save_dataset(train, out / "train.csv", header=f"config_hash: {chash}")
    save_dataset(test, out / "test.csv", header=f"config_hash: {chash}")
    _write_json({"design": design.to_dict(), "replication": args.replication}, out / "design.json", chash)
    print(f"wrote {out}/train.csv ({train.n} rows) and {out}/test.csv ({test.n} rows)")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    train = load_dataset(args.train, cfg.get("schema"))
    preset = args.preset or cfg.get("preset", "simulation")
    priors = resolve_priors(preset, train.p, cfg.get("priors"))
    chain = dict(CHAIN_PRESETS["desk"])
    chain.update(CHAIN_PRESETS.get(args.chain, {}) if args.chain else {})
    chain.update(cfg.get("chain", {}))
    chain.pop("seed", None)
    chain.pop("model", None)
    resolved = {"priors": priors.to_dict(), "chain": chain, "model": args.model, "seed": args.seed,
                "train": Path(args.train).name}
    chash = config_hash(resolved)
    samples, params = fit_model(train, args.model, priors, chain, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_chain(samples, out / "chain", extra={"config_hash": chash, "standardization": params.to_dict(),
                                              "model": args.model})
    summary = summarize(samples)
    _write_csv(summary.to_frame(train.covariate_names), out / "summary.csv", chash)
    within, between = summary.edges_frame()
    _write_csv(within, out / "edges_within.csv", chash)
    _write_csv(between, out / "edges_between.csv", chash)
    _write_json({"selected": [[int(i) + 1 for i in s] for s in select_variables(summary)],
                 "mean_model_size": summary.mean_model_size.tolist()}, out / "selection.json", chash)
    print(f"stored {samples.n_draws} draws in {out}/chain.npz")
    return 0


def cmd_evaluate(args) -> int:
    chain_path = Path(args.chain)
    manifest = json.loads(chain_path.with_suffix(".json").read_text())
    samples = load_chain(chain_path)
    params = StandardizationParams.from_dict(manifest["standardization"])
    test = load_dataset(args.test)
    pooled = manifest.get("model") == "Pooled"
    chash = manifest.get("config_hash", "")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ibs_rows, pec_rows = [], []
    for method in ("mpm", "bma"):
        pm = PredictionModel.from_samples(samples, method, params, pooled=pooled)
        for s in range(1, test.S + 1):
            idx = test.subgroup == s
            ts = args.t_star if args.t_star is not None else default_t_star(test.time[idx], test.event[idx])
            ibs_rows.append({"method": method, "subgroup": s, "t_star": ts,
                             "ibs": integrated_brier(pm, test, ts, subgroup=s)})
            grid = np.linspace(0.0, ts, args.grid_points + 1)[1:]
            bs = prediction_error_curve(pm, test, grid, subgroup=s)
            pec_rows.extend({"method": method, "subgroup": s, "t": t, "bs": b} for t, b in zip(grid, bs))
    _write_csv(pd.DataFrame(ibs_rows), out / "ibs.csv", chash)
    _write_csv(pd.DataFrame(pec_rows), out / "pec.csv", chash)
    for r in ibs_rows:
        print(f"{r['method']} subgroup {r['subgroup']}: IBS {r['ibs']:.4f} (t* = {r['t_star']:.4g})")
    return 0


def cmd_report(args) -> int:
    tables = report(args.out)
    for name, frame in tables.items():
        print(f"{name}: {len(frame)} rows")
    return 0


def cmd_run_experiment(args) -> int:
    d = _load_config(args.config)
    if args.preset:
        d["preset"] = args.preset
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out:
        d["output_dir"] = args.out
    if args.workers:
        d["workers"] = args.workers
    cfg = ExperimentConfig.from_dict(d)
    manifest = run_experiment(cfg)
    print(f"{manifest['cells']} cells, {manifest['chain_runs']} chain runs, "
          f"{len(manifest['failed_cells'])} failed cells")
    return 0 if manifest["ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coxbvs", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate one training/test replication")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--out", required=True)
    sp.add_argument("--p", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--replication", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="sample one model variant on a training CSV")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--out", required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--model", choices=MODELS, default="CoxBVS-SL")
    sp.add_argument("--chain", choices=sorted(CHAIN_PRESETS))
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("evaluate", help="prediction-error curves and IBS of a stored chain")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--out", required=True)
    sp.add_argument("--chain", required=True, help="chain path without suffix")
    sp.add_argument("--test", required=True)
    sp.add_argument("--t-star", type=float)
    sp.add_argument("--grid-points", type=int, default=50)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="aggregate an experiment directory")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--out", required=True, help="experiment output directory")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("run-experiment", help="run a configured experiment grid")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--out")
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_run_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
