"""End-to-end acceptance checks. Each test prints one PASS/FAIL verdict line."""

import csv
import json
import time
import warnings

import numpy as np
import pytest
import torch

from hgot import runner
from hgot.cli import main
from hgot.config import RunConfig, SweepSpec
from hgot.encoder import EncoderConfig
from hgot.evaluation import cluster_report, probe_over_seeds
from hgot.hetgraph import SyntheticConfig, generate_synthetic
from hgot.objective import (
    AblationMode,
    TrainConfig,
    embed,
    make_encoder,
    prepare,
    representation_loss,
    solve_graph_space,
    train,
)
from hgot.transport import (
    FgwProblem,
    Marginals,
    SolverConfig,
    exact_ot_oracle,
    fgw_solve,
    sinkhorn_plan,
    structure_cost_apply,
)
from oracles import structure_cost_loops

pytestmark = pytest.mark.acceptance

# Planted-partition benchmark: 150 targets, 3 communities, PAP and PSP views.
# Graph seed 0 gives a raw-feature probe Macro-F1 of about 0.70.
BENCHMARK = {
    "version": 1,
    "data": {"synthetic": {"feature_dim": 128, "feature_noise": 5.0, "intra_edge_prob": 0.15, "seed": 0}},
    "train": {"epochs": 300, "learning_rate": 0.005},
    "seeds": [0, 1, 2, 3, 4],
}


def random_binary(rng, n, p=0.4):
    a = np.triu(rng.random((n, n)) < p, 1)
    a = a | a.T
    np.fill_diagonal(a, True)
    return a.astype(np.uint8)


def random_fgw(rng, n, m, sigma, d=4):
    return FgwProblem(rng.normal(size=(n, d)), rng.normal(size=(m, d)), random_binary(rng, n), random_binary(rng, m), sigma)


# -- 1 --------------------------------------------------------------------------------------


def test_solver_exactness(verdict):
    rng = np.random.default_rng(2024)
    cfg = SolverConfig(epsilon=1e-3)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 6))
        C = rng.random((n, n))
        C /= C.max()
        ot = sinkhorn_plan(C, Marginals.uniform(n), cfg).objective_value
        exact = exact_ot_oracle(C).objective_value
        worst = max(worst, abs(ot - exact) / exact)
    elapsed = time.perf_counter() - start
    ok = worst <= 0.01 and elapsed < 30
    verdict(1, "solver exactness", ok, f"worst relative gap {worst:.2e} (<= 1e-2), {elapsed:.1f} s (< 30 s)")
    assert ok


# -- 2 --------------------------------------------------------------------------------------


def test_marginal_feasibility(verdict, plan_audit):
    rng = np.random.default_rng(7)
    for eps in (1e-4, 1e-3, 1e-2, 0.05, 0.5):
        for n, m in ((1, 1), (2, 7), (9, 3), (12, 12)):
            marg = Marginals(rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m)))
            sinkhorn_plan(rng.random((n, m)) * 10, marg, SolverConfig(epsilon=eps))
    for sigma in (0.0, 0.3, 1.0):
        fgw_solve(random_fgw(rng, 10, 8, sigma), SolverConfig())
    g = generate_synthetic(SyntheticConfig(n_target=20, n_bridge_per_relation=6, feature_dim=6, seed=3))
    train(g, None, TrainConfig(epochs=3), EncoderConfig(d=8, heads=2, semantic_dim=4))
    bad = len(plan_audit["violations"])
    ok = bad == 0
    verdict(2, "marginal feasibility (so far)", ok, f"{plan_audit['plans']} plans audited, {bad} violations above 1e-6")
    assert ok


# -- 3 --------------------------------------------------------------------------------------


def test_fgw_interpolation(verdict):
    rng = np.random.default_rng(3)
    cfg = SolverConfig()
    start = time.perf_counter()
    worst_dist = worst_fact = 0.0
    for _ in range(50):
        n, m = int(rng.integers(2, 13)), int(rng.integers(2, 13))
        prob = random_fgw(rng, n, m, 1.0)
        _, dist = fgw_solve(prob, cfg)
        wass = sinkhorn_plan(prob.feature_cost, prob.marginals, cfg.linear_subproblem(), anneal=False).objective_value
        worst_dist = max(worst_dist, abs(dist - wass))
        A = (rng.random((n, n)) < 0.5).astype(np.uint8)
        B = (rng.random((m, m)) < 0.5).astype(np.uint8)
        pi = sinkhorn_plan(rng.random((n, m)), Marginals.uniform(n, m), cfg).pi
        worst_fact = max(worst_fact, np.abs(structure_cost_apply(A, B, pi) - structure_cost_loops(A, B, pi)).max())
    elapsed = time.perf_counter() - start
    ok = worst_dist <= 1e-6 and worst_fact <= 1e-12 and elapsed < 60
    verdict(
        3,
        "FGW interpolation",
        ok,
        f"|D(sigma=1) - W| max {worst_dist:.1e} (<= 1e-6), factorization max {worst_fact:.1e} (<= 1e-12), {elapsed:.1f} s",
    )
    assert ok


# -- 4 --------------------------------------------------------------------------------------


def test_cg_monotonicity(verdict):
    rng = np.random.default_rng(4)
    worst = -np.inf
    for _ in range(100):
        n, m = int(rng.integers(2, 16)), int(rng.integers(2, 16))
        plan, _ = fgw_solve(random_fgw(rng, n, m, float(rng.random())), SolverConfig())
        if len(plan.history) > 1:
            worst = max(worst, float(np.diff(plan.history).max()))
    ok = worst <= 1e-12
    verdict(4, "CG monotonicity", ok, f"largest objective increase {worst:.1e} over 100 problems (<= 1e-12)")
    assert ok


# -- 5 --------------------------------------------------------------------------------------


def test_full_model_gradient(verdict):
    start = time.perf_counter()
    g = generate_synthetic(SyntheticConfig(n_target=10, n_bridge_per_relation=4, feature_dim=5, intra_edge_prob=0.4, seed=0))
    data = prepare(g)
    assert len(data.names) == 2
    cfg = TrainConfig()
    model = make_encoder(g, data, EncoderConfig(d=8, heads=2, semantic_dim=4), 1)
    with torch.no_grad():
        out = model(data.x, data.adj_tensors)
    targets = solve_graph_space(out.h, data.adjacencies, data.agg_adjacency, data.names, cfg)

    def loss_value():
        with torch.no_grad():
            return float(representation_loss(model(data.x, data.adj_tensors), targets, cfg)[0])

    model.zero_grad()
    representation_loss(model(data.x, data.adj_tensors), targets, cfg)[0].backward()
    worst, worst_name = 0.0, ""
    step = 1e-6
    for name, p in model.named_parameters():
        arr = p.detach().numpy()
        fd = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss_value()
            flat[i] = old - step
            down = loss_value()
            flat[i] = old
            gflat[i] = (up - down) / (2 * step)
        analytic = p.grad.numpy() if p.grad is not None else np.zeros_like(arr)
        scale = max(np.linalg.norm(fd), np.linalg.norm(analytic))
        err = np.linalg.norm(analytic - fd) / scale if scale > 1e-10 else 0.0
        if err > worst:
            worst, worst_name = err, name
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 120
    verdict(5, "gradient check", ok, f"worst relative error {worst:.1e} ({worst_name or 'n/a'}), {elapsed:.1f} s")
    assert ok


# -- 6 --------------------------------------------------------------------------------------


def test_synthetic_recovery(verdict):
    start = time.perf_counter()
    cfg = RunConfig.from_dict({**BENCHMARK, "seeds": [0]})
    g = runner.load_graph(cfg)
    y = g.labels
    raw = probe_over_seeds(g.features[g.target_type], y)["macro_f1"]["mean"]
    data = prepare(g)
    untrained = embed(make_encoder(g, data, cfg.encoder, 0), data)
    result = train(g, None, cfg.train, cfg.encoder)
    elapsed = time.perf_counter() - start

    def scores(Z):
        return probe_over_seeds(Z, y)["macro_f1"]["mean"], cluster_report(Z, y, normalize=True).nmi

    f1, nmi = scores(result.embeddings)
    f1_u, nmi_u = scores(untrained)
    ok = raw <= 0.75 and f1 >= 0.85 and f1 - f1_u >= 0.10 and nmi - nmi_u >= 0.10 and elapsed < 300
    verdict(
        6,
        "synthetic recovery",
        ok,
        f"raw F1 {raw:.3f} (<= 0.75), trained F1 {f1:.3f} (>= 0.85) vs untrained {f1_u:.3f}, "
        f"NMI {nmi:.3f} vs untrained {nmi_u:.3f}, {len(result.history)} epochs in {elapsed:.0f} s",
    )
    assert ok


# -- 7 and 8 ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_sweeps(tmp_path_factory):
    """Five-seed sweep rows over rho and sigma plus a DISTANCE_ONLY run."""
    out = tmp_path_factory.mktemp("bench")
    base = RunConfig.from_dict(BENCHMARK)
    rho = runner.run_sweep(SweepSpec(parameter="rho", values=[0.0, 1.0], base=base), out / "rho")
    sigma = runner.run_sweep(SweepSpec(parameter="sigma", values=[0.0, 1.0], base=base), out / "sigma")
    dist_cfg = base.model_copy(update={"train": base.train.model_copy(update={"mode": AblationMode.DISTANCE_ONLY})})
    dist = runner.run_train(dist_cfg, out / "dist")
    return {"rho": rho, "sigma": sigma, "distance_only": dist}


def test_ablation_ordering(verdict, benchmark_sweeps):
    full = benchmark_sweeps["rho"][1]  # rho = 1 at the default sigma is the FULL configuration
    assert full["value"] == 1.0 and full["failed"] == 0
    full_f1 = full["macro_f1_mean"]
    dist_f1 = benchmark_sweeps["distance_only"]["classification"]["macro_f1"]["mean"]
    ok = full_f1 - dist_f1 >= 0.02
    verdict(7, "ablation ordering", ok, f"FULL F1 {full_f1:.3f} vs DISTANCE_ONLY {dist_f1:.3f} (gap >= 0.02)")
    assert ok


def test_sensitivity_direction(verdict, benchmark_sweeps):
    r0, r1 = benchmark_sweeps["rho"]
    s0, s1 = benchmark_sweeps["sigma"]
    rho_ok = r1["macro_f1_mean"] >= r0["macro_f1_mean"]
    sigma_ok = s1["macro_f1_mean"] >= s0["macro_f1_mean"]
    ok = rho_ok and sigma_ok
    verdict(
        8,
        "sensitivity direction",
        ok,
        f"F1 rho=1 {r1['macro_f1_mean']:.3f} vs rho=0 {r0['macro_f1_mean']:.3f}; "
        f"sigma=1 {s1['macro_f1_mean']:.3f} vs sigma=0 {s0['macro_f1_mean']:.3f}",
    )
    assert ok


# -- 9 --------------------------------------------------------------------------------------


def test_complexity_scaling(verdict, tmp_path):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = runner.run_bench([50, 100, 200], tmp_path)
    slopes = result["slopes"]
    monotone = slopes["cg_monotone"] and slopes["sinkhorn_monotone"]
    in_range = all(lo <= slopes[s] <= hi for s, (lo, hi) in runner.EXPECTED_SLOPES.items())
    note = "" if in_range else f" (warning: {'; '.join(str(w.message) for w in caught)})"
    verdict(
        9,
        "complexity scaling",
        monotone,
        f"slopes cg {slopes['cg']:.2f} in [2.5, 3.5]?, sinkhorn {slopes['sinkhorn']:.2f} in [1.5, 2.3]?, "
        f"monotone timings {monotone}{note}",
    )
    assert monotone


# -- 10 -------------------------------------------------------------------------------------


def test_determinism(verdict, tmp_path):
    config = {
        "version": 1,
        "data": {"synthetic": {"n_target": 40, "n_bridge_per_relation": 10, "feature_dim": 16, "seed": 5}},
        "encoder": {"d": 16, "heads": 2, "semantic_dim": 8},
        "train": {"epochs": 20, "learning_rate": 0.005},
        "eval": {"probe_seeds": 2},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    codes = [main(["train", "--config", str(path), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    a, b = ((tmp_path / d / "seed_0" / "loss_history.csv").read_bytes() for d in ("a", "b"))
    with open(tmp_path / "a" / "seed_0" / "loss_history.csv", newline="") as fh:
        epochs = len(list(csv.reader(fh))) - 1
    ok = codes == [0, 0] and a == b
    verdict(10, "determinism", ok, f"two train runs ({epochs} epochs) give byte-identical loss histories: {a == b}")
    assert ok
