"""Optimal-transport solvers.

Plans between a meta-path view and the aggregated view are computed in two
places: in graph space by fused Gromov-Wasserstein (conditional gradient, no
gradients needed) and in representation space by entropic Sinkhorn, which can
be unrolled in torch so gradients reach the cost matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch
from pydantic import Field
from scipy.special import logsumexp

from .configbase import StrictModel
from .errors import DataError

_TINY = 1e-300

# Observers see every non-differentiable plan produced by sinkhorn_plan / fgw_solve.
plan_observers: list[Callable[["PlanMatrix"], None]] = []


class SolverConfig(StrictModel):
    epsilon: float = Field(0.05, gt=0)
    sinkhorn_max_iter: int = Field(20000, ge=1)
    sinkhorn_tol: float = Field(1e-8, gt=0)
    cg_max_iter: int = Field(30, ge=1)
    cg_tol: float = Field(1e-6, gt=0)
    cg_inner_max_iter: int = Field(200, ge=1)
    unroll_iters: int = Field(50, ge=1)

    def linear_subproblem(self) -> "SolverConfig":
        """Settings for the conditional-gradient direction finding: epsilon / 10 and
        a capped iteration budget (the direction only needs to be approximate)."""
        return self.model_copy(
            update={"epsilon": self.epsilon / 10, "sinkhorn_max_iter": self.cg_inner_max_iter}
        )


@dataclass(frozen=True)
class Marginals:
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        for name in ("mu", "nu"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.ndim != 1 or len(v) == 0:
                raise DataError(f"marginal {name} must be a non-empty vector")
            if (v < 0).any() or abs(v.sum() - 1.0) > 1e-12:
                raise DataError(f"marginal {name} must be a probability vector")
            object.__setattr__(self, name, v)

    @classmethod
    def uniform(cls, n: int, m: Optional[int] = None) -> "Marginals":
        m = n if m is None else m
        return cls(np.full(n, 1.0 / n), np.full(m, 1.0 / m))


@dataclass
class PlanMatrix:
    pi: np.ndarray | torch.Tensor
    row_residual: float
    col_residual: float
    objective_value: float
    iterations: int = 0
    converged: bool = True
    differentiable: bool = False
    history: list[float] = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return max(self.row_residual, self.col_residual)


def _notify(plan: PlanMatrix) -> PlanMatrix:
    for obs in plan_observers:
        obs(plan)
    return plan


def _residuals(pi, marg: Marginals) -> tuple[float, float]:
    if isinstance(pi, torch.Tensor):
        pi = pi.detach().cpu().numpy()
    return (
        float(np.abs(pi.sum(axis=1) - marg.mu).max()),
        float(np.abs(pi.sum(axis=0) - marg.nu).max()),
    )


# -- costs -------------------------------------------------------------------


def feature_cost_matrix(X, Y):
    """Cosine distance ``1 - cos(x_i, y_j)``; zero rows count as distance 1.

    Works on numpy arrays and on torch tensors (differentiably).
    """
    if isinstance(X, torch.Tensor):
        if X.shape[1] != Y.shape[1]:
            raise DataError(f"column mismatch: {X.shape[1]} vs {Y.shape[1]}")
        if not (torch.isfinite(X).all() and torch.isfinite(Y).all()):
            raise DataError("non-finite input to feature_cost_matrix")
        xn = X / X.norm(dim=1, keepdim=True).clamp_min(1e-12)
        yn = Y / Y.norm(dim=1, keepdim=True).clamp_min(1e-12)
        return (1.0 - xn @ yn.T).clamp(0.0, 2.0)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise DataError(f"column mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise DataError("non-finite input to feature_cost_matrix")
    xn = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-12)
    yn = Y / np.maximum(np.linalg.norm(Y, axis=1, keepdims=True), 1e-12)
    return np.clip(1.0 - xn @ yn.T, 0.0, 2.0)


def _check_binary(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise DataError(f"{name} must be binary for the |a - b| factorization")
    return a.astype(np.float64)


def structure_cost_apply(A_p, A_agg, pi, check: bool = True) -> np.ndarray:
    """``(E (x) pi)_ij = sum_kl |A_p[i,k] - A_agg[j,l]| pi[k,l]`` in O(nm(n+m)).

    Uses ``|a - b| = a + b - 2ab`` for binary entries.
    """
    if check:
        A_p = _check_binary(A_p, "A_p")
        A_agg = _check_binary(A_agg, "A_agg")
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (A_p.shape[0], A_agg.shape[0]):
        raise DataError(f"plan shape {pi.shape} does not match adjacencies")
    left = A_p @ pi.sum(axis=1)
    right = A_agg @ pi.sum(axis=0)
    return left[:, None] + right[None, :] - 2.0 * (A_p @ pi @ A_agg.T)


def structure_cost_direct(A_p, A_agg, pi) -> np.ndarray:
    """Four-index reference for :func:`structure_cost_apply` (tests only)."""
    A_p = np.asarray(A_p, dtype=np.float64)
    A_agg = np.asarray(A_agg, dtype=np.float64)
    E = np.abs(A_p[:, None, :, None] - A_agg[None, :, None, :])  # i j k l
    return np.einsum("ijkl,kl->ij", E, pi)


# -- Sinkhorn ----------------------------------------------------------------


def _sinkhorn_scaling(C, mu, nu, eps, max_iter, tol):
    K = np.exp(-C / eps)
    if (K.sum(axis=1) < 1e-200).any() or (K.sum(axis=0) < 1e-200).any():
        return None
    u = np.ones_like(mu)
    v = np.ones_like(nu)
    err = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        u = mu / (K @ v)
        v = nu / (K.T @ u)
        if it % 10 == 0 or it == max_iter:
            # non-finite values propagate, so checking here catches overflow
            if not (np.isfinite(u).all() and np.isfinite(v).all()) or (v == 0).any():
                return None
            err = np.abs(u * (K @ v) - mu).max()
            if err <= tol:
                break
    return u[:, None] * K * v[None, :], it, err


def _log_update(C, f, g, log_mu, log_nu, eps):
    f = eps * (log_mu - logsumexp((g[None, :] - C) / eps, axis=1))
    g = eps * (log_nu - logsumexp((f[:, None] - C) / eps, axis=0))
    return f, g


def _sinkhorn_log(C, mu, nu, eps, max_iter, tol, absorb_at=1e30):
    """Log-domain Sinkhorn: scaling iterations on a kernel stabilized by dual
    potentials, with epsilon annealing and absorption of large scalings."""
    log_mu, log_nu = np.log(mu), np.log(nu)
    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    schedule = []
    e = max(eps, 1.0)
    while e > eps:
        schedule.append(e)
        e /= 2.0
    schedule.append(eps)
    it = 0
    err = np.inf
    for stage, e in enumerate(schedule):
        last = stage == len(schedule) - 1
        budget = max_iter - it if last else min(100, max_iter - it)
        f, g = _log_update(C, f, g, log_mu, log_nu, e)
        it += 1
        K = np.exp((f[:, None] + g[None, :] - C) / e)
        u = np.ones_like(mu)
        v = np.ones_like(nu)
        for k in range(1, budget + 1):
            it += 1
            Kv = K @ v
            if (Kv <= 0).any():
                f, g = f + e * np.log(u), g + e * np.log(v)
                f, g = _log_update(C, f, g, log_mu, log_nu, e)
                K = np.exp((f[:, None] + g[None, :] - C) / e)
                u = np.ones_like(mu)
                v = np.ones_like(nu)
                continue
            u = mu / Kv
            v = nu / (K.T @ u)
            if max(u.max(), v.max(), 1 / u.min(), 1 / v.min()) > absorb_at:
                f, g = f + e * np.log(u), g + e * np.log(v)
                K = np.exp((f[:, None] + g[None, :] - C) / e)
                u = np.ones_like(mu)
                v = np.ones_like(nu)
            if last and (k % 10 == 0 or k == budget):
                err = np.abs(u * (K @ v) - mu).max()
                if err <= tol:
                    break
        f, g = f + e * np.log(u), g + e * np.log(v)
        if it >= max_iter:
            break
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    if not np.isfinite(err):
        err = np.abs(P.sum(axis=1) - mu).max()
    return P, it, err


def _round_to_polytope(P, mu, nu):
    """Project an approximate plan onto the transport polytope (rescale rows and
    columns down, then add a rank-one correction). Output has exact marginals up
    to floating point."""
    P = P * np.minimum(mu / np.maximum(P.sum(axis=1), _TINY), 1.0)[:, None]
    P = P * np.minimum(nu / np.maximum(P.sum(axis=0), _TINY), 1.0)[None, :]
    err_r = mu - P.sum(axis=1)
    err_c = nu - P.sum(axis=0)
    total = err_r.sum()
    if total > 0:
        P = P + np.outer(err_r, err_c) / total
    return P


def _sinkhorn_torch(C: torch.Tensor, mu, nu, eps: float, iters: int) -> torch.Tensor:
    log_mu = torch.as_tensor(np.log(mu), dtype=C.dtype)
    log_nu = torch.as_tensor(np.log(nu), dtype=C.dtype)
    f = torch.zeros_like(log_mu)
    g = torch.zeros_like(log_nu)
    for _ in range(iters):
        f = eps * (log_mu - torch.logsumexp((g[None, :] - C) / eps, dim=1))
        g = eps * (log_nu - torch.logsumexp((f[:, None] - C) / eps, dim=0))
    return torch.exp((f[:, None] + g[None, :] - C) / eps)


def sinkhorn_plan(
    cost, marg: Marginals, cfg: SolverConfig, differentiable: bool = False, anneal: bool = True
) -> PlanMatrix:
    """Entropic OT plan on the max-normalized cost.

    Non-differentiable mode iterates to ``sinkhorn_tol``, switching to the log
    domain when the Gibbs kernel underflows and, if ``anneal``, when plain
    scaling stalls before the tolerance. Differentiable mode runs exactly
    ``unroll_iters`` log-domain iterations in torch; ``pi`` is then a tensor
    carrying gradients to ``cost``. The reported objective is ``<cost, pi>``.
    """
    if differentiable:
        if not isinstance(cost, torch.Tensor):
            cost = torch.as_tensor(cost, dtype=torch.float64)
        if not torch.isfinite(cost).all():
            raise DataError("non-finite cost matrix")
        scale = cost.abs().max().clamp_min(1e-12)
        pi = _sinkhorn_torch(cost / scale, marg.mu, marg.nu, cfg.epsilon, cfg.unroll_iters)
        row, col = _residuals(pi, marg)
        return PlanMatrix(
            pi=pi,
            row_residual=row,
            col_residual=col,
            objective_value=float((cost * pi).sum().detach()),
            iterations=cfg.unroll_iters,
            converged=max(row, col) <= cfg.sinkhorn_tol,
            differentiable=True,
        )

    C = np.asarray(cost, dtype=np.float64)
    if C.shape != (len(marg.mu), len(marg.nu)):
        raise DataError(f"cost shape {C.shape} does not match marginals")
    if not np.isfinite(C).all():
        raise DataError("non-finite cost matrix")
    scale = max(float(np.abs(C).max()), 1e-12)
    Cn = C / scale
    res = _sinkhorn_scaling(Cn, marg.mu, marg.nu, cfg.epsilon, cfg.sinkhorn_max_iter, cfg.sinkhorn_tol)
    if res is None or (anneal and res[2] > cfg.sinkhorn_tol):
        # underflow or slow convergence at small epsilon: anneal in the log domain
        alt = _sinkhorn_log(Cn, marg.mu, marg.nu, cfg.epsilon, cfg.sinkhorn_max_iter, cfg.sinkhorn_tol)
        if res is None or alt[2] <= res[2]:
            res = alt[0], alt[1] + (res[1] if res else 0), alt[2]
    pi, iters, err = res
    pi = _round_to_polytope(pi, marg.mu, marg.nu)
    row, col = _residuals(pi, marg)
    return _notify(
        PlanMatrix(
            pi=pi,
            row_residual=row,
            col_residual=col,
            objective_value=float((C * pi).sum()),
            iterations=iters,
            converged=bool(err <= cfg.sinkhorn_tol),
        )
    )


def exact_ot_oracle(cost) -> PlanMatrix:
    """Exhaustive search over permutation plans (uniform square marginals, n <= 8)."""
    C = np.asarray(cost, dtype=np.float64)
    n = C.shape[0]
    if C.shape != (n, n):
        raise DataError("exact_ot_oracle needs a square cost matrix")
    if n > 8:
        raise DataError(f"exact_ot_oracle refuses n={n} > 8 ({math.factorial(n)} permutations)")
    rows = np.arange(n)
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        v = C[rows, perm].sum()
        if v < best:
            best, best_perm = v, perm
    pi = np.zeros((n, n))
    pi[rows, best_perm] = 1.0 / n
    return PlanMatrix(pi=pi, row_residual=0.0, col_residual=0.0, objective_value=best / n)


def wasserstein_distance(X, Y, marg: Optional[Marginals] = None, cfg: Optional[SolverConfig] = None) -> float:
    marg = marg or Marginals.uniform(len(X), len(Y))
    cfg = cfg or SolverConfig()
    return sinkhorn_plan(feature_cost_matrix(X, Y), marg, cfg).objective_value


# -- fused Gromov-Wasserstein ------------------------------------------------


@dataclass
class FgwProblem:
    H_p: np.ndarray
    H_agg: np.ndarray
    A_p: np.ndarray
    A_agg: np.ndarray
    sigma: float
    marginals: Optional[Marginals] = None
    feature_cost: Optional[np.ndarray] = None  # precomputed F(H_p, H_agg)

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise DataError(f"sigma must lie in [0, 1], got {self.sigma}")
        n, m = len(self.H_p), len(self.H_agg)
        self.A_p = _check_binary(self.A_p, "A_p")
        self.A_agg = _check_binary(self.A_agg, "A_agg")
        if self.A_p.shape != (n, n) or self.A_agg.shape != (m, m):
            raise DataError("adjacency shapes do not match feature matrices")
        if self.marginals is None:
            self.marginals = Marginals.uniform(n, m)
        if self.feature_cost is None:
            self.feature_cost = feature_cost_matrix(self.H_p, self.H_agg)

    def structure_term(self, pi) -> np.ndarray:
        return structure_cost_apply(self.A_p, self.A_agg, pi, check=False)

    def objective(self, pi) -> float:
        val = self.sigma * float((self.feature_cost * pi).sum())
        if self.sigma < 1.0:
            val += (1.0 - self.sigma) * float((self.structure_term(pi) * pi).sum())
        return val

    def gradient(self, pi) -> np.ndarray:
        """Gradient of :meth:`objective`; equals ``sigma F + 2 (1 - sigma) E (x) pi``
        for symmetric adjacencies."""
        grad = self.sigma * self.feature_cost
        if self.sigma < 1.0:
            e = self.structure_term(pi)
            e_t = structure_cost_apply(self.A_p.T, self.A_agg.T, pi, check=False)
            grad = grad + (1.0 - self.sigma) * (e + e_t)
        return grad


def _line_search(prob: FgwProblem, pi, delta, grad) -> float:
    # objective(pi + g delta) = objective(pi) + b g + a g^2
    a = (1.0 - prob.sigma) * float((prob.structure_term(delta) * delta).sum())
    b = float((grad * delta).sum())
    if a > 0:
        return min(max(-b / (2 * a), 0.0), 1.0)
    return 1.0 if a + b < 0 else 0.0


def fgw_solve(prob: FgwProblem, cfg: SolverConfig) -> tuple[PlanMatrix, float]:
    """Fused Gromov-Wasserstein plan by conditional gradient.

    Starts from ``mu nu^T``; each step solves the linearized problem with
    Sinkhorn at ``epsilon / 10`` and moves by an exact line search. The
    objective history is non-increasing.
    """
    marg = prob.marginals
    sub = cfg.linear_subproblem()
    pi = np.outer(marg.mu, marg.nu)
    f = prob.objective(pi)
    history = [f]
    converged = False
    it = 0
    worst_residual = 0.0
    for it in range(1, cfg.cg_max_iter + 1):
        grad = prob.gradient(pi)
        direction = sinkhorn_plan(grad, marg, sub, anneal=False)
        worst_residual = max(worst_residual, direction.max_residual)
        delta = direction.pi - pi
        gamma = _line_search(prob, pi, delta, grad)
        candidate = pi + gamma * delta
        f_new = prob.objective(candidate)
        if f_new > f + 1e-12:
            gamma = 2.0 / (it + 2.0)
            candidate = pi + gamma * delta
            f_new = prob.objective(candidate)
            if f_new > f + 1e-12:
                converged = True
                break
        pi = candidate
        decrease = f - f_new
        f = f_new
        history.append(f)
        if gamma == 0.0 or decrease <= cfg.cg_tol * max(abs(f), 1e-12):
            converged = True
            break
    row, col = _residuals(pi, marg)
    plan = PlanMatrix(
        pi=pi,
        row_residual=row,
        col_residual=col,
        objective_value=f,
        iterations=it,
        converged=converged and worst_residual <= cfg.sinkhorn_tol,
        history=history,
    )
    return _notify(plan), f
