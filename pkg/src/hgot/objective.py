"""Transport-alignment losses, ablation variants and the training loop."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Literal, Optional, Sequence

import numpy as np
import torch
from pydantic import Field

from .configbase import StrictModel
from .encoder import EncoderConfig, EncoderOutput, HGOTEncoder, graph_tensors
from .errors import ConfigError, DataError, NumericalError
from .hetgraph import HeteroGraph, MetaPath, aggregate_adjacency, build_views
from .transport import (
    FgwProblem,
    Marginals,
    PlanMatrix,
    SolverConfig,
    feature_cost_matrix,
    fgw_solve,
    sinkhorn_plan,
)

log = logging.getLogger(__name__)


class AblationMode(str, Enum):
    FULL = "full"
    NO_AGG = "no_agg"  # match meta-path views pairwise, no aggregated view
    NO_STR = "no_str"  # drop the structure loss
    DISTANCE_ONLY = "distance_only"  # |D_g - D_n| instead of plan matching
    CONTRASTIVE = "contrastive"  # InfoNCE between each view and the aggregate


class LossWeights(StrictModel):
    rho: float = Field(1.0, ge=0.0)
    sigma: float = Field(0.5, ge=0.0, le=1.0)


class ContrastiveConfig(StrictModel):
    tau: float = Field(0.5, gt=0.0)
    similarity: Literal["cosine", "inner"] = "cosine"


class TrainConfig(StrictModel):
    learning_rate: float = Field(1e-3, ge=0.0)
    epochs: int = Field(100, ge=0)
    patience: int = Field(20, ge=1)
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = Field(0.0, ge=0.0)
    mode: AblationMode = AblationMode.FULL
    loss: LossWeights = LossWeights()
    solver: SolverConfig = SolverConfig()
    contrastive: ContrastiveConfig = ContrastiveConfig()


@dataclass
class ViewLoss:
    """Loss terms for one (view, counterpart) pair.

    ``l_mat`` holds the mode's matching term: plan discrepancy in FULL/NO_STR/
    NO_AGG, ``|D_g - D_n|`` in DISTANCE_ONLY and InfoNCE in CONTRASTIVE.
    """

    name: str
    l_mat: float
    l_str: float
    cg_iterations: int = 0
    graph_residual: float = 0.0
    repr_residual: float = 0.0


@dataclass
class LossBreakdown:
    views: list[ViewLoss]
    total: float
    mode: AblationMode = AblationMode.FULL


# -- loss terms ---------------------------------------------------------------


def _as_plan_array(p):
    return p.pi if isinstance(p, PlanMatrix) else p


def matching_loss(plan_graph, plan_repr):
    """Frobenius distance between two plans (arrays, tensors or PlanMatrix)."""
    a, b = _as_plan_array(plan_graph), _as_plan_array(plan_repr)
    if tuple(a.shape) != tuple(b.shape):
        raise DataError(f"plan shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if isinstance(a, torch.Tensor) or isinstance(b, torch.Tensor):
        a = torch.as_tensor(a, dtype=torch.float64)
        b = torch.as_tensor(b, dtype=torch.float64)
        return torch.linalg.norm(a - b)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def structure_loss(F, e_pi, R, sigma: float):
    """``|| sigma F + (1 - sigma) (E (x) pi_G) - R ||_F``; gradients flow only via ``R``."""
    target = sigma * np.asarray(F, dtype=np.float64) + (1.0 - sigma) * np.asarray(
        e_pi, dtype=np.float64
    )
    if tuple(target.shape) != tuple(R.shape):
        raise DataError(f"cost shapes differ: {target.shape} vs {tuple(R.shape)}")
    if isinstance(R, torch.Tensor):
        return torch.linalg.norm(torch.as_tensor(target) - R)
    return float(np.linalg.norm(target - np.asarray(R)))


def distance_only_loss(d_graph, d_repr):
    return abs(d_graph - d_repr)


def contrastive_loss(z1, z2, cfg: Optional[ContrastiveConfig] = None):
    """InfoNCE with node i of ``z1`` and ``z2`` as the positive pair."""
    cfg = cfg or ContrastiveConfig()
    if cfg.tau <= 0:
        raise ConfigError("tau must be positive")
    z1 = torch.as_tensor(z1, dtype=torch.float64)
    z2 = torch.as_tensor(z2, dtype=torch.float64)
    if z1.shape != z2.shape or z1.shape[0] < 1:
        raise DataError("contrastive_loss needs two equally shaped, non-empty matrices")
    if cfg.similarity == "cosine":
        z1 = z1 / z1.norm(dim=1, keepdim=True).clamp_min(1e-12)
        z2 = z2 / z2.norm(dim=1, keepdim=True).clamp_min(1e-12)
    logits = z1 @ z2.T / cfg.tau
    return -torch.diagonal(torch.log_softmax(logits, dim=1)).mean()


def total_loss(components: Sequence, rho: float, mode: AblationMode = AblationMode.FULL):
    """Mean over pairs of ``l_mat + rho l_str`` (structure term dropped outside
    FULL and NO_AGG). ``components`` holds ``(l_mat, l_str)`` pairs or ViewLoss."""
    if not components:
        return 0.0
    uses_str = mode in (AblationMode.FULL, AblationMode.NO_AGG)
    acc = 0.0
    for c in components:
        l_mat, l_str = (c.l_mat, c.l_str) if isinstance(c, ViewLoss) else c
        acc = acc + l_mat + (rho * l_str if uses_str else 0.0)
    return acc / len(components)


# -- graph-space targets --------------------------------------------------------


@dataclass
class GraphTarget:
    """Detached graph-space quantities for one pair (left view, right view)."""

    name: str
    left: int  # index into the view list
    right: Optional[int]  # None means the aggregated view
    plan: Optional[PlanMatrix]
    feature_cost: np.ndarray
    structure_cost: np.ndarray  # E (x) pi_G
    distance: float


def view_pairs(names: Sequence[str], mode: AblationMode) -> list[tuple[str, int, Optional[int]]]:
    if mode is AblationMode.NO_AGG:
        if len(names) < 2:
            raise ConfigError("no_agg needs at least two meta-paths")
        return [
            (f"{names[p]}~{names[q]}", p, q)
            for p in range(len(names))
            for q in range(p + 1, len(names))
        ]
    return [(n, p, None) for p, n in enumerate(names)]


def solve_graph_space(
    h: torch.Tensor,
    adjacencies: Sequence[np.ndarray],
    agg_adjacency: np.ndarray,
    names: Sequence[str],
    cfg: TrainConfig,
) -> list[GraphTarget]:
    """FGW plans between each view graph and its counterpart, on detached features."""
    H = h.detach().cpu().numpy()
    F = feature_cost_matrix(H, H)
    n = len(H)
    marg = Marginals.uniform(n)
    targets = []
    for name, p, q in view_pairs(names, cfg.mode):
        right_adj = agg_adjacency if q is None else adjacencies[q]
        if cfg.mode is AblationMode.CONTRASTIVE:
            targets.append(GraphTarget(name, p, q, None, F, np.zeros_like(F), 0.0))
            continue
        prob = FgwProblem(H, H, adjacencies[p], right_adj, cfg.loss.sigma, marg, feature_cost=F)
        plan, dist = fgw_solve(prob, cfg.solver)
        targets.append(GraphTarget(name, p, q, plan, F, prob.structure_term(plan.pi), dist))
    return targets


def representation_loss(
    out: EncoderOutput, targets: Sequence[GraphTarget], cfg: TrainConfig
) -> tuple[torch.Tensor, LossBreakdown]:
    """Differentiable loss of the encoder outputs against fixed graph-space targets."""
    mode = cfg.mode
    sigma, rho = cfg.loss.sigma, cfg.loss.rho
    zs = out.zs
    terms, views = [], []
    for t in targets:
        z_left = zs[t.left]
        z_right = out.fused.z if t.right is None else zs[t.right]
        if mode is AblationMode.CONTRASTIVE:
            l_mat = contrastive_loss(z_left, z_right, cfg.contrastive)
            l_str = torch.zeros((), dtype=torch.float64)
            z_res = 0.0
        else:
            R = feature_cost_matrix(z_left, z_right)
            n, m = R.shape
            plan_z = sinkhorn_plan(R, Marginals.uniform(n, m), cfg.solver, differentiable=True)
            z_res = plan_z.max_residual
            l_str = structure_loss(t.feature_cost, t.structure_cost, R, sigma)
            if mode is AblationMode.DISTANCE_ONLY:
                l_mat = distance_only_loss(t.distance, (R * plan_z.pi).sum())
            else:
                l_mat = matching_loss(torch.as_tensor(t.plan.pi), plan_z.pi)
        terms.append((l_mat, l_str))
        views.append(
            ViewLoss(
                t.name,
                float(l_mat.detach()),
                float(l_str.detach()),
                t.plan.iterations if t.plan else 0,
                t.plan.max_residual if t.plan else 0.0,
                z_res,
            )
        )
    loss = total_loss(terms, rho, mode)
    return loss, LossBreakdown(views, float(loss.detach()), mode)


# -- training -------------------------------------------------------------------


@dataclass
class PreparedGraph:
    x: torch.Tensor
    adj_tensors: list[torch.Tensor]
    adjacencies: list[np.ndarray]
    agg_adjacency: np.ndarray
    names: list[str]


def prepare(g: HeteroGraph, metapaths: Optional[Sequence[MetaPath]] = None, self_loops: bool = True) -> PreparedGraph:
    views = build_views(g, metapaths, self_loops=self_loops)
    agg = aggregate_adjacency(views)
    adjs = [v.adjacency for v in views]
    x, adj_t = graph_tensors(g.features[g.target_type], adjs)
    return PreparedGraph(x, adj_t, adjs, agg.adjacency, [v.metapath.name for v in views])


def make_encoder(g: HeteroGraph, data: PreparedGraph, enc_cfg: EncoderConfig, seed: int) -> HGOTEncoder:
    raw_dims = {t: x.shape[1] for t, x in g.features.items()}
    return HGOTEncoder(raw_dims, g.target_type, data.names, enc_cfg, seed=seed)


def _state_dump(model: HGOTEncoder, breakdown: LossBreakdown) -> dict:
    return {
        "param_norms": {k: float(p.detach().norm()) for k, p in model.named_parameters()},
        "views": [vars(v) for v in breakdown.views],
        "total": breakdown.total,
    }


def train_step(
    model: HGOTEncoder,
    optimizer: torch.optim.Optimizer,
    data: PreparedGraph,
    cfg: TrainConfig,
) -> LossBreakdown:
    """One forward/solve/backward/update pass. Returns the pre-update losses."""
    optimizer.zero_grad()
    out = model(data.x, data.adj_tensors)
    targets = solve_graph_space(out.h, data.adjacencies, data.agg_adjacency, data.names, cfg)
    loss, breakdown = representation_loss(out, targets, cfg)
    if not math.isfinite(breakdown.total):
        raise NumericalError("non-finite training loss", _state_dump(model, breakdown))
    if loss.requires_grad:
        loss.backward()
    optimizer.step()
    return breakdown


@dataclass
class TrainResult:
    model: HGOTEncoder
    history: list[LossBreakdown]
    embeddings: np.ndarray
    best_epoch: int = -1
    stopped_early: bool = False
    data: Optional[PreparedGraph] = field(default=None, repr=False)


def embed(model: HGOTEncoder, data: PreparedGraph) -> np.ndarray:
    with torch.no_grad():
        return model(data.x, data.adj_tensors).fused.z.numpy().copy()


def train(
    g: HeteroGraph,
    metapaths: Optional[Sequence[MetaPath]],
    cfg: TrainConfig,
    encoder_cfg: Optional[EncoderConfig] = None,
    on_epoch: Optional[Callable[[int, LossBreakdown], None]] = None,
) -> TrainResult:
    """Train with Adam and early stopping on the training loss.

    Returns the parameters that achieved the lowest recorded loss.
    """
    encoder_cfg = encoder_cfg or EncoderConfig()
    data = prepare(g, metapaths, self_loops=encoder_cfg.self_loops)
    model = make_encoder(g, data, encoder_cfg, cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, weight_decay=cfg.weight_decay
    )
    history: list[LossBreakdown] = []
    best_state = copy.deepcopy(model.state_dict())
    best_loss, best_epoch, stale = math.inf, -1, 0
    stopped = False
    for epoch in range(cfg.epochs):
        state = copy.deepcopy(model.state_dict())
        breakdown = train_step(model, optimizer, data, cfg)
        history.append(breakdown)
        if on_epoch:
            on_epoch(epoch, breakdown)
        if breakdown.total < best_loss:
            best_loss, best_epoch, best_state, stale = breakdown.total, epoch, state, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                stopped = True
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    model.load_state_dict(best_state)
    return TrainResult(model, history, embed(model, data), best_epoch, stopped, data)


def write_loss_history(history: Sequence[LossBreakdown], path) -> None:
    """CSV: epoch, per-view l_mat / l_str, total, CG iterations summed over views."""
    names = [v.name for v in history[0].views] if history else []
    header = ["epoch"]
    for n in names:
        header += [f"{n}:l_mat", f"{n}:l_str"]
    header += ["total", "cg_iterations"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for epoch, b in enumerate(history):
            row = [epoch]
            for v in b.views:
                row += [repr(v.l_mat), repr(v.l_str)]
            row += [repr(b.total), sum(v.cg_iterations for v in b.views)]
            w.writerow(row)
