"""Configuration-driven experiment pipeline: simulate, fit, evaluate, report.

A configuration is one JSON document.  Hyperparameter sets come from a
named preset and can be overridden per model variant.  Every output file
carries the hash of the resolved configuration, and no output depends on
wall-clock time, so re-running an unchanged configuration rewrites
identical bytes.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import Dataset, StandardizationParams, load_dataset, save_dataset, standardize, stratified_split
from .evaluate import PredictionModel, default_t_star, integrated_brier, prediction_error_curve
from .posterior import select_variables, summarize
from .sampler import MODELS, ChainConfig, ChainError, PriorConfig, prepare_subgroups, run_mcmc, save_chain
from .simulate import SimulationDesign, paper_design, simulate_train_test

log = logging.getLogger(__name__)

__all__ = [
    "PRESETS",
    "CHAIN_PRESETS",
    "ExperimentConfig",
    "resolve_priors",
    "config_hash",
    "fit_model",
    "run_experiment",
    "report",
    "load_report",
]

PRESETS = {
    "simulation": {
        "selection": {"bernoulli_pi": 0.02, "tau": 0.0375, "c": 20.0},
        "mrf": {"a": -4.0, "b_within": 1.0, "b_between": 1.0},
        "graph": {"nu0": 0.1, "nu1": 10.0, "lam": 1.0, "pi_edge": "2/(p-1)"},
        "a0": 2.0,
    },
    "case-study": {
        "selection": {"bernoulli_pi": 0.2, "tau": 0.0375, "c": 20.0},
        "mrf": {"a": -1.75, "b_within": 0.5, "b_between": 0.5},
        "graph": {"nu0": 0.6, "nu1": 360.0, "lam": 1.0, "pi_edge": "2/(p-1)"},
        "a0": 2.0,
    },
}

CHAIN_PRESETS = {
    "desk": {"iterations": 2000, "burn_in": 1000},
    "full": {"iterations": 20000, "burn_in": 10000},
}

DEFAULT_MODELS = [{"name": m, "model": m} for m in MODELS]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_priors(preset: str | dict, p: int, overrides: dict | None = None) -> PriorConfig:
    """Build a PriorConfig from a preset name (or dict) plus overrides.

    An edge probability given as ``"2/(p-1)"`` or null becomes ``2/(p-1)``.
    """
    base = PRESETS[preset] if isinstance(preset, str) else preset
    d = _merge(base, overrides or {})
    pi_edge = d.get("graph", {}).get("pi_edge")
    if pi_edge is None or pi_edge == "2/(p-1)":
        if p < 2:
            raise ValueError("edge probability 2/(p-1) needs p >= 2")
        d.setdefault("graph", {})["pi_edge"] = 2.0 / (p - 1)
    return PriorConfig.from_dict(d)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """Resolved experiment settings.

    ``design`` is either ``{"kind": "simulation", "p": [...], "n": [...], ...}``
    with optional design overrides, or ``{"kind": "dataset", "path": ...,
    "train_fraction": 0.8, "schema": {...}}``.
    """

    design: dict = field(default_factory=lambda: {"kind": "simulation", "p": [20], "n": [100]})
    replications: int = 10
    models: list = field(default_factory=lambda: copy.deepcopy(DEFAULT_MODELS))
    chain: dict = field(default_factory=lambda: dict(CHAIN_PRESETS["desk"]))
    evaluation: dict = field(default_factory=lambda: {"t_star": None, "threshold": 0.05, "grid_points": 50})
    preset: str = "simulation"
    seed: int = 1
    workers: int = 1
    output_dir: str = "out"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.models:
            raise ValueError("at least one model variant is required")
        names = [m["name"] for m in self.models]
        if len(set(names)) != len(names):
            raise ValueError(f"model names must be unique: {names}")
        for m in self.models:
            if m.get("model") not in MODELS:
                raise ValueError(f"model variant {m.get('name')!r}: unknown model {m.get('model')!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        kind = self.design.get("kind", "simulation")
        if kind not in ("simulation", "dataset"):
            raise ValueError(f"design kind must be 'simulation' or 'dataset', got {kind!r}")
        ChainConfig(**{k: v for k, v in self.chain.items() if k != "seed"})

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        chain = d.pop("chain", {})
        if isinstance(chain, str):
            chain = CHAIN_PRESETS[chain]
        elif "preset" in chain:
            chain = _merge(CHAIN_PRESETS[chain.pop("preset")], chain)
        cfg = cls(**{k: v for k, v in d.items() if k != "config_hash"})
        cfg.chain = _merge(CHAIN_PRESETS["desk"], chain)
        ChainConfig(**cfg.chain)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "design": self.design, "replications": self.replications, "models": self.models,
            "chain": self.chain, "evaluation": self.evaluation, "preset": self.preset,
            "seed": self.seed, "workers": self.workers, "output_dir": self.output_dir,
        }

    def hash(self) -> str:
        # worker count and output location do not change any result
        d = self.to_dict()
        d.pop("workers")
        d.pop("output_dir")
        return config_hash(d)

    def scenarios(self) -> list[tuple[int | None, int | None]]:
        if self.design.get("kind", "simulation") == "dataset":
            return [(None, None)]
        return [(int(p), int(n)) for p in self.design["p"] for n in self.design["n"]]


def _scenario_label(p, n) -> str:
    return "dataset" if p is None else f"p{p}_n{n}"


def _write_csv(frame: pd.DataFrame, path: Path, chash: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {chash}\n")
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")


def _write_json(obj: dict, path: Path, chash: str) -> None:
    path.write_text(json.dumps({"config_hash": chash, **obj}, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _chain_seed(seed: int, p, n, rep: int) -> int:
    key = [seed, rep] if p is None else [seed, p, n, rep]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def _make_design(cfg: ExperimentConfig, p: int, n: int) -> SimulationDesign:
    extra = {k: v for k, v in cfg.design.items() if k not in ("kind", "p", "n")}
    return paper_design(p=p, n=n, seed=cfg.seed, **extra)


def _data_for(cfg: ExperimentConfig, p, n, rep: int) -> tuple[Dataset, Dataset, dict]:
    if p is None:
        full = load_dataset(cfg.design["path"], cfg.design.get("schema"))
        train, test = stratified_split(full, cfg.design.get("train_fraction", 0.8), [cfg.seed, rep])
        return train, test, {"kind": "dataset", "path": str(cfg.design["path"]), "replication": rep}
    design = _make_design(cfg, p, n)
    train, test = simulate_train_test(design, rep)
    return train, test, {"kind": "simulation", "replication": rep, "design": design.to_dict()}


def fit_model(train: Dataset, model: str, priors: PriorConfig, chain: dict, seed: int):
    """Standardize, group and sample one model variant.

    Returns ``(samples, standardization_params)``.
    """
    scope = "pooled" if model == "Pooled" else "per-subgroup"
    train_std, _, params = standardize(train, None, scope=scope)
    subgroups = prepare_subgroups(train_std, model, priors.a0)
    cfg = ChainConfig(**{**chain, "seed": seed, "model": model, "priors": priors})
    return run_mcmc(subgroups, cfg), params


def evaluate_model(samples, params: StandardizationParams, model: str, test: Dataset,
                   evaluation: dict, t_stars: dict[int, float]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """IBS per (method, subgroup) and prediction-error curves on a time grid."""
    ibs_rows, pec_rows = [], []
    for method in ("mpm", "bma"):
        pm = PredictionModel.from_samples(samples, method, params, pooled=(model == "Pooled"))
        for s in range(1, test.S + 1):
            ts = t_stars[s]
            ibs_rows.append({"method": method, "subgroup": s, "t_star": ts,
                             "ibs": integrated_brier(pm, test, ts, subgroup=s)})
            grid = np.linspace(0.0, ts, int(evaluation.get("grid_points", 50)) + 1)[1:]
            bs = prediction_error_curve(pm, test, grid, subgroup=s)
            pec_rows.extend({"method": method, "subgroup": s, "t": t, "bs": b} for t, b in zip(grid, bs))
    return pd.DataFrame(ibs_rows), pd.DataFrame(pec_rows)


def _t_stars(test: Dataset, evaluation: dict) -> dict[int, float]:
    fixed = evaluation.get("t_star")
    out = {}
    for s in range(1, test.S + 1):
        idx = test.subgroup == s
        out[s] = float(fixed) if fixed is not None else default_t_star(
            test.time[idx], test.event[idx], evaluation.get("threshold", 0.05))
    return out


def _run_replication(cfg_dict: dict, p, n, rep: int) -> dict:
    """One (scenario, replication) cell: data, every model variant, evaluation."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    chash = cfg.hash()
    root = Path(cfg.output_dir) / _scenario_label(p, n) / f"rep{rep:02d}"
    root.mkdir(parents=True, exist_ok=True)
    status = {"scenario": _scenario_label(p, n), "replication": rep, "models": {}, "failures": []}
    stage = "data"
    try:
        train, test, meta = _data_for(cfg, p, n, rep)
        save_dataset(train, root / "train.csv", header=f"config_hash: {chash}")
        save_dataset(test, root / "test.csv", header=f"config_hash: {chash}")
        _write_json(meta, root / "data.json", chash)
        stage = "t_star"
        t_stars = _t_stars(test, cfg.evaluation)
    except Exception as exc:  # recorded in the failure manifest
        status["failures"].append({"stage": stage, "model": None, "error": repr(exc),
                                   "traceback": traceback.format_exc()})
        return status

    seed = _chain_seed(cfg.seed, p, n, rep)
    for spec in cfg.models:
        name, model = spec["name"], spec["model"]
        out = root / name
        out.mkdir(exist_ok=True)
        stage = "fit"
        try:
            priors = resolve_priors(cfg.preset, train.p, spec.get("priors"))
            samples, params = fit_model(train, model, priors, cfg.chain, seed)
            save_chain(samples, out / "chain", extra={
                "config_hash": chash, "standardization": params.to_dict(), "model": model,
                "name": name, "replication": rep, "scenario": _scenario_label(p, n)})
            stage = "summarize"
            summary = summarize(samples)
            frame = summary.to_frame(train.covariate_names)
            frame.insert(0, "model", name)
            frame.insert(0, "replication", rep)
            _write_csv(frame, out / "summary.csv", chash)
            if model in ("CoxBVS-SL", "Sub-struct"):
                within, between = summary.edges_frame()
                _write_csv(within, out / "edges_within.csv", chash)
                _write_csv(between, out / "edges_between.csv", chash)
            selected = select_variables(summary)
            _write_json({"selected": [[int(i) + 1 for i in sel] for sel in selected],
                         "mean_model_size": summary.mean_model_size.tolist(),
                         "acceptance": samples.acceptance.tolist()}, out / "selection.json", chash)
            stage = "evaluate"
            ibs, pec = evaluate_model(samples, params, model, test, cfg.evaluation, t_stars)
            ibs.insert(0, "model", name)
            ibs.insert(0, "replication", rep)
            _write_csv(ibs, out / "ibs.csv", chash)
            _write_csv(pec, out / "pec.csv", chash)
            status["models"][name] = "ok"
        except Exception as exc:
            entry = {"stage": stage, "model": name, "error": repr(exc), "traceback": traceback.format_exc()}
            if isinstance(exc, ChainError):
                entry["iteration"] = exc.iteration
                entry["state"] = exc.state
            status["failures"].append(entry)
            status["models"][name] = "failed"
            log.warning("%s rep %d model %s failed at %s: %r", _scenario_label(p, n), rep, name, stage, exc)
    return status


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every (scenario, replication) cell, then aggregate.

    Failures are recorded per replication and the remaining cells still
    run.  Returns the run manifest, whose ``ok`` flag is True only when
    every cell succeeded.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.hash()
    _write_json({"config": {k: v for k, v in config.to_dict().items() if k not in ("workers", "output_dir")}},
                out / "config.json", chash)
    cells = [(p, n, r) for p, n in config.scenarios() for r in range(config.replications)]
    cfg_dict = config.to_dict()
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_replication, cfg_dict, p, n, r) for p, n, r in cells]
            statuses = [f.result() for f in futures]
    else:
        statuses = [_run_replication(cfg_dict, p, n, r) for p, n, r in cells]
    failures = [dict(f, scenario=s["scenario"], replication=s["replication"])
                for s in statuses for f in s["failures"]]
    manifest = {
        "cells": len(cells),
        "chain_runs": len(cells) * len(config.models),
        "failed_cells": sorted({(f["scenario"], f["replication"]) for f in failures}),
        "ok": not failures,
        "status": statuses,
    }
    _write_json({"failures": failures}, out / "failures.json", chash)
    report(out)
    manifest["failed_cells"] = [list(c) for c in manifest["failed_cells"]]
    _write_json(manifest, out / "manifest.json", chash)
    return manifest


def _read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def report(run_dir) -> dict[str, pd.DataFrame]:
    """Aggregate per-replication outputs of a run directory.

    Selection probabilities, coefficient moments and edge probabilities
    are averaged over replications (undefined conditional moments are
    skipped); IBS values stay per split.
    """
    run_dir = Path(run_dir)
    chash = json.loads((run_dir / "config.json").read_text())["config_hash"]
    summaries, ibs, within, between = [], [], [], []
    for scen in sorted(p for p in run_dir.iterdir() if p.is_dir() and p.name != "report"):
        for rep in sorted(scen.glob("rep*")):
            for mdir in sorted(d for d in rep.iterdir() if d.is_dir()):
                tag = {"scenario": scen.name}
                if (mdir / "summary.csv").exists():
                    summaries.append(_read_csv(mdir / "summary.csv").assign(**tag))
                if (mdir / "ibs.csv").exists():
                    ibs.append(_read_csv(mdir / "ibs.csv").assign(**tag))
                r = int(rep.name[3:])
                if (mdir / "edges_within.csv").exists():
                    within.append(_read_csv(mdir / "edges_within.csv").assign(model=mdir.name, replication=r, **tag))
                    eb = _read_csv(mdir / "edges_between.csv")
                    if not eb.empty:
                        between.append(eb.assign(model=mdir.name, replication=r, **tag))
    tables: dict[str, pd.DataFrame] = {}
    cols = ["selection_prob", "marginal_mean", "marginal_sd", "conditional_mean", "conditional_sd"]
    if summaries:
        allsum = pd.concat(summaries, ignore_index=True)
        keys = ["scenario", "model", "subgroup", "covariate", "name"]
        agg = allsum.groupby(keys, sort=True)[cols].mean().reset_index()
        agg["replications"] = allsum.groupby(keys, sort=True)["replication"].nunique().to_numpy()
        tables["selection"] = agg
    if ibs:
        tables["ibs"] = pd.concat(ibs, ignore_index=True).sort_values(
            ["scenario", "model", "method", "subgroup", "replication"], kind="stable").reset_index(drop=True)
    if within:
        w = pd.concat(within, ignore_index=True)
        tables["edges_within"] = w.groupby(["scenario", "model", "subgroup", "i", "j"], sort=True)["prob"].mean().reset_index()
    if between:
        b = pd.concat(between, ignore_index=True)
        if not b.empty:
            tables["edges_between"] = b.groupby(["scenario", "model", "r", "s", "i"], sort=True)["prob"].mean().reset_index()
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    for name, frame in tables.items():
        _write_csv(frame, out / f"{name}.csv", chash)
    payload = {name: json.loads(frame.to_json(orient="records", double_precision=15)) for name, frame in tables.items()}
    _write_json({"tables": payload}, out / "report.json", chash)
    return tables


def load_report(run_dir) -> dict[str, pd.DataFrame]:
    out = Path(run_dir) / "report"
    return {p.stem: _read_csv(p) for p in sorted(out.glob("*.csv"))}
