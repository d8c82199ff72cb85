"""Turn an :class:`ExperimentConfig` into problems, graphs and logged runs."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, resolved_text
from .datasets import (Dataset, generate_cached, parse_libsvm, split_and_shard)
from .diagnostics import CsvSink, is_finite_record
from .noise import STREAM_SHUFFLE, stream
from .optimizer import EPS_NORM, HyperParams, run, with_ablation
from .problems import MLPHyperOpt, random_quadratic
from .topology import build_topology, metropolis_weights, read_adjacency


def code_version() -> str:
    try:
        return metadata.version("dnsvrgda")
    except metadata.PackageNotFoundError:
        return "unknown"


def data_seed(cfg: ExperimentConfig, seed: int) -> int:
    return seed if cfg.dataset.get("seed", "run") == "run" else int(cfg.dataset["seed"])


def generator_params(cfg: ExperimentConfig, alpha: float) -> dict:
    d = cfg.dataset
    params = {"n": d["n"], "d": d["d"], "alpha": alpha}
    if d["source"] == "syn2":
        params["common_frac"] = d["common_frac"]
    return params


def load_libsvm(cfg: ExperimentConfig, seed: int) -> Dataset:
    d = cfg.dataset
    ds = parse_libsvm(d["path"], feature_dim=d.get("feature_dim"), label_map=d.get("label_map"))
    sub = d.get("subsample")
    if sub is not None and sub < ds.n:
        idx = np.sort(stream(seed, STREAM_SHUFFLE, 1).choice(ds.n, size=sub, replace=False))
        ds = ds.subset(idx)
    return ds


def build_graph(cfg: ExperimentConfig):
    t = cfg.topology
    adj = read_adjacency(t["adjacency"]) if t["kind"] == "custom" else None
    return metropolis_weights(build_topology(t["kind"], t["K"], adj))


def build_problem(cfg: ExperimentConfig, seed: int, alpha: float | None = None, cache_dir=None):
    p, d = cfg.problem, cfg.dataset
    dseed = data_seed(cfg, seed)
    if p["kind"] == "quadratic":
        return random_quadratic(cfg.K, p["dim_x"], p["dim_y"], seed=dseed, noise=cfg.noise,
                                n_samples=p["n_samples"], coupling=p["coupling"],
                                spread=p["spread"], identical=p["identical"],
                                shared_curvature=p["shared_curvature"])
    if d["source"] == "libsvm":
        sharded = split_and_shard(load_libsvm(cfg, dseed), cfg.K, d["ratios"], seed=dseed)
    else:
        a = d["alpha"][0] if alpha is None else alpha
        splits, _ = generate_cached(d["source"], generator_params(cfg, a), dseed, cache_dir)
        sharded = split_and_shard(splits, cfg.K)
    return MLPHyperOpt(sharded, hidden=p["hidden"], activation=p["activation"])


def design_decisions(hp: HyperParams) -> dict:
    return {
        "mixing_rule": "metropolis-hastings",
        "zero_direction_guard": EPS_NORM,
        "momentum_interpretation": "gamma = 1 - momentum (one_minus_gamma) unless configured otherwise",
        "shared_zeta": hp.shared_zeta,
        "z0": "y0",
        "upper_batches": "validation shard",
        "lower_batches": "training shard",
        "loss": "logistic",
        "tie_rule": "sgn(0)=+1",
        "rng": "numpy Philox keyed by SeedSequence(seed, spawn_key=(stream, worker, family))",
    }


@dataclass
class RunOutcome:
    seed: int
    variant: str
    alpha: float | None
    csv: Path
    final_loss: float | None
    final_accuracy: float | None
    diverged: str | None


def run_dir(out: Path, variant: str, alpha: float | None, multi_alpha: bool) -> Path:
    return out / (f"alpha{alpha:g}" if multi_alpha else "") / variant


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, cache_dir=None,
                   log=print) -> list[RunOutcome]:
    """Every (alpha, seed, variant) run of ``cfg``; CSV, .cfg and .json per run plus summary.json."""
    out = Path(out if out is not None else cfg.output)
    matrix = build_graph(cfg)
    alphas = cfg.dataset.get("alpha") if cfg.dataset.get("source") in ("syn1", "syn2") else [None]
    multi = len(alphas) > 1
    outcomes = []
    for alpha in alphas:
        for seed in cfg.seed_list():
            problem = build_problem(cfg, seed, alpha, cache_dir)
            base_hp = cfg.resolve_hyperparams(matrix.lam)
            for variant in cfg.variants:
                hp = with_ablation(base_hp, variant == "normalized")
                d = run_dir(out, variant, alpha, multi)
                d.mkdir(parents=True, exist_ok=True)
                csv_path = d / f"seed{seed}.csv"
                run_cfg = cfg if not multi else replace(cfg, dataset={**cfg.dataset, "alpha": [alpha]})
                (d / f"seed{seed}.cfg").write_text(resolved_text(run_cfg, seed, variant, hp))
                with CsvSink(csv_path) as sink:
                    res = run(problem, matrix, hp, seed=seed, diag_every=cfg.diag_every, sink=sink)
                last = next((r for r in reversed(res.records) if is_finite_record(r)), None)
                div = str(res.diverged) if res.diverged else None
                meta = {
                    "name": cfg.name, "seed": seed, "variant": variant, "alpha": alpha,
                    "code_version": code_version(),
                    "hyperparams": hp.as_dict(),
                    "topology": {**cfg.topology, "lambda": matrix.lam, "spectral_gap": 1 - matrix.lam},
                    "problem": problem.describe(), "data_seed": data_seed(cfg, seed),
                    "design_decisions": design_decisions(hp),
                    "diverged": div, "records": len(res.records),
                }
                (d / f"seed{seed}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
                oc = RunOutcome(seed, variant, alpha, csv_path,
                                None if last is None else last.upper_loss,
                                None if last is None else last.test_accuracy, div)
                outcomes.append(oc)
                log(f"{cfg.name} alpha={alpha} seed={seed} {variant}: loss={_show(oc.final_loss)} "
                    f"acc={_show(oc.final_accuracy)}" + (f"  DIVERGED: {div}" if div else ""))
    summary = summarize(outcomes)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return outcomes


def _show(v):
    return "n/a" if v is None else f"{v:.4f}"


def _median(vals):
    vals = [v for v in vals if v is not None and math.isfinite(v)]
    return statistics.median(vals) if vals else None


def summarize(outcomes: list[RunOutcome]) -> dict:
    """Median over seeds of the final loss and accuracy, per (alpha, variant)."""
    groups: dict = {}
    for oc in outcomes:
        groups.setdefault((oc.alpha, oc.variant), []).append(oc)
    out = {}
    for (alpha, variant), ocs in groups.items():
        key = variant if alpha is None else f"alpha={alpha:g}/{variant}"
        out[key] = {
            "seeds": [o.seed for o in ocs],
            "median_final_loss": _median([o.final_loss for o in ocs]),
            "median_final_accuracy": _median([o.final_accuracy for o in ocs]),
            "diverged_seeds": [o.seed for o in ocs if o.diverged],
        }
    return out
