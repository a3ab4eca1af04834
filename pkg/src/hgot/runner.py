"""Implementations behind the CLI subcommands."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import RunConfig, SweepSpec
from .encoder import HGOTEncoder
from .errors import ConfigError, DataError, HGOTError
from .evaluation import (
    evaluate_embeddings,
    export_embeddings,
    merge_reports,
    write_metrics,
)
from .hetgraph import HeteroGraph, SyntheticConfig, generate_synthetic, load_heterograph, write_heterograph
from .objective import (
    TrainResult,
    embed,
    prepare,
    solve_graph_space,
    train,
    write_loss_history,
)
from .transport import FgwProblem, Marginals, PlanMatrix, SolverConfig, feature_cost_matrix, sinkhorn_plan

log = logging.getLogger(__name__)


def load_graph(cfg: RunConfig) -> HeteroGraph:
    if cfg.data.synthetic is not None:
        return generate_synthetic(cfg.data.synthetic)
    path = Path(cfg.data.path)
    if not path.exists():
        raise ConfigError(f"data.path: {path} does not exist")
    return load_heterograph(path)


def select_metapaths(g: HeteroGraph, cfg: RunConfig):
    if cfg.metapaths is None:
        return g.metapaths
    return [g.metapath(name) for name in cfg.metapaths]


def _labels(g: HeteroGraph) -> np.ndarray:
    if g.labels is None:
        raise DataError("evaluation needs labels for the target nodes")
    return g.labels


def evaluate(cfg: RunConfig, Z: np.ndarray, labels: np.ndarray) -> dict:
    return evaluate_embeddings(
        Z, labels, cfg.eval.probe, range(cfg.eval.probe_seeds), cfg.eval.linkage, cfg.eval.normalize
    )


def dump_plan(plan: PlanMatrix, path) -> None:
    """Plan as CSV plus a JSON sidecar with objective, residuals and iterations."""
    path = Path(path)
    pi = plan.pi.detach().numpy() if isinstance(plan.pi, torch.Tensor) else plan.pi
    np.savetxt(path, pi, delimiter=",", fmt="%.17g")
    meta = {
        "objective": plan.objective_value,
        "row_residual": plan.row_residual,
        "col_residual": plan.col_residual,
        "iterations": plan.iterations,
        "converged": plan.converged,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def _dump_plans(result: TrainResult, cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    data = result.data
    with torch.no_grad():
        out = result.model(data.x, data.adj_tensors)
    targets = solve_graph_space(out.h, data.adjacencies, data.agg_adjacency, data.names, cfg.train)
    zs = out.zs
    for t in targets:
        safe = t.name.replace("~", "_")
        if t.plan is not None:
            dump_plan(t.plan, directory / f"{safe}_graph.csv")
        right = out.fused.z if t.right is None else zs[t.right]
        R = feature_cost_matrix(zs[t.left].numpy(), right.numpy())
        dump_plan(sinkhorn_plan(R, Marginals.uniform(*R.shape), cfg.train.solver), directory / f"{safe}_repr.csv")


def run_train(cfg: RunConfig, out_dir, dump_plans: bool = False) -> dict:
    """Train once per seed; write loss history, checkpoint and embeddings per seed
    and a merged metrics report."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: cannot create output directory ({exc.strerror})") from None
    g = load_graph(cfg)
    metapaths = select_metapaths(g, cfg)
    reports = []
    for seed in cfg.seeds:
        tcfg = cfg.train.model_copy(update={"seed": seed})
        result = train(g, metapaths, tcfg, cfg.encoder)
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        write_loss_history(result.history, seed_dir / "loss_history.csv")
        result.model.save(seed_dir / "checkpoint.json")
        export_embeddings(result.embeddings, range(len(result.embeddings)), seed_dir / "embeddings.csv")
        if dump_plans:
            _dump_plans(result, cfg.model_copy(update={"train": tcfg}), seed_dir / "plans")
        if g.labels is not None:
            reports.append(evaluate(cfg, result.embeddings, g.labels))
        log.info("seed %d: %d epochs, best %d", seed, len(result.history), result.best_epoch)
    report = merge_reports(reports) if reports else {}
    write_metrics(report, out / "metrics.json")
    return report


def run_eval(cfg: RunConfig, checkpoint, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = load_graph(cfg)
    data = prepare(g, select_metapaths(g, cfg), self_loops=cfg.encoder.self_loops)
    model = HGOTEncoder.load(checkpoint)
    if model.metapath_names != data.names:
        raise DataError(f"checkpoint meta-paths {model.metapath_names} do not match {data.names}")
    Z = embed(model, data)
    export_embeddings(Z, range(len(Z)), out / "embeddings.csv")
    report = evaluate(cfg, Z, _labels(g))
    write_metrics(report, out / "metrics.json")
    return report


SWEEP_METRICS = (
    ("classification", "macro_f1"),
    ("classification", "micro_f1"),
    ("clustering", "acc"),
    ("clustering", "nmi"),
    ("clustering", "ari"),
)


def run_sweep(spec: SweepSpec, out_dir) -> list[dict]:
    """One training run per grid value and seed; rows in grid order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in spec.values:
        cfg = spec.run_config(value)
        g = load_graph(cfg)
        labels = _labels(g)
        metapaths = select_metapaths(g, cfg)
        per_seed, failed = [], 0
        for seed in cfg.seeds:
            try:
                res = train(g, metapaths, cfg.train.model_copy(update={"seed": seed}), cfg.encoder)
                per_seed.append(evaluate(cfg, res.embeddings, labels))
            except HGOTError as exc:
                log.warning("sweep cell %s=%s seed %d failed: %s", spec.parameter, value, seed, exc)
                failed += 1
        row = {"parameter": spec.parameter, "value": value, "runs": len(per_seed), "failed": failed}
        for task, metric in SWEEP_METRICS:
            vals = [r[task][metric]["mean"] for r in per_seed]
            row[f"{metric}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{metric}_std"] = float(np.std(vals)) if vals else None
        rows.append(row)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return rows


def _random_instance(n: int, rng: np.random.Generator, density: float = 0.1):
    a = rng.random((n, n)) < density
    a = np.triu(a, 1)
    a = (a | a.T).astype(np.uint8)
    np.fill_diagonal(a, 1)
    b = rng.random((n, n)) < density
    b = np.triu(b, 1)
    b = (b | b.T).astype(np.uint8)
    np.fill_diagonal(b, 1)
    H = rng.normal(size=(n, 16))
    return FgwProblem(H, H, a, b, 0.5)


def _best_time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


# asymptotic per-iteration exponents: dense matrix products vs. matrix-vector scaling
EXPECTED_SLOPES = {"cg": (2.5, 3.5), "sinkhorn": (1.5, 2.3)}


def run_bench(sizes: Sequence[int], out_dir=None, repeats: int = 7, seed: int = 0) -> dict:
    """Per-iteration timings with log-log slopes fitted over ``sizes``.

    The CG iteration is timed through its gradient, whose structure term is the
    cubic part; the Sinkhorn figure is a fixed-length run divided by its length.
    """
    rng = np.random.default_rng(seed)
    cfg = SolverConfig()
    sink_iters = 50
    fixed = cfg.model_copy(update={"sinkhorn_max_iter": sink_iters, "sinkhorn_tol": 1e-300})
    rows = []
    for n in sizes:
        prob = _random_instance(n, rng)
        pi = np.outer(prob.marginals.mu, prob.marginals.nu)
        cg = _best_time(lambda: prob.gradient(pi), repeats)
        cost = prob.gradient(pi)
        sk = _best_time(lambda: sinkhorn_plan(cost, prob.marginals, fixed), repeats) / sink_iters
        rows.append({"solver": "cg", "n": n, "seconds_per_iteration": cg})
        rows.append({"solver": "sinkhorn", "n": n, "seconds_per_iteration": sk})
    slopes = {}
    for solver in ("cg", "sinkhorn"):
        pts = [(r["n"], r["seconds_per_iteration"]) for r in rows if r["solver"] == solver]
        ns, ts = np.array(pts).T
        if (ts < 1e-6).any():
            warnings.warn(f"{solver}: timings below 1 microsecond; timer resolution may be insufficient")
        slopes[solver] = float(np.polyfit(np.log(ns), np.log(ts), 1)[0]) if len(ns) > 1 else float("nan")
        slopes[f"{solver}_monotone"] = bool(np.all(np.diff(ts[np.argsort(ns)]) > 0))
        lo, hi = EXPECTED_SLOPES[solver]
        if not lo <= slopes[solver] <= hi:
            warnings.warn(
                f"{solver}: fitted slope {slopes[solver]:.2f} outside [{lo}, {hi}]; "
                "per-call overhead dominates at these sizes"
            )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["solver", "n", "seconds_per_iteration"], lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        (out / "bench_slopes.json").write_text(json.dumps(slopes, indent=2) + "\n", encoding="utf-8")
    return {"rows": rows, "slopes": slopes}


def run_generate(cfg: SyntheticConfig, out_dir) -> Path:
    try:
        return write_heterograph(generate_synthetic(cfg), out_dir)
    except OSError as exc:
        raise DataError(f"{out_dir}: cannot write dataset ({exc.strerror})") from None
