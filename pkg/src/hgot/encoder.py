"""Type-specific projection, per-meta-path node attention and semantic fusion.

All computation is float64 torch so that gradients can be checked against
finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import Field, model_validator
from torch import nn

from .configbase import StrictModel
from .errors import ConfigError, DataError, StateError

DTYPE = torch.float64
CHECKPOINT_VERSION = 1


class EncoderConfig(StrictModel):
    d: int = Field(64, ge=1)
    heads: int = Field(4, ge=1)
    semantic_dim: int = Field(32, ge=1)
    activation: str = "elu"
    attention_activation: str = "leaky_relu"
    negative_slope: float = 0.2
    depth: int = Field(1, ge=0)
    self_loops: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.d % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        for name in (self.activation, self.attention_activation):
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d // self.heads


_ACTIVATIONS = {
    "elu": F.elu,
    "relu": F.relu,
    "leaky_relu": None,  # bound to negative_slope at call time
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


def _activation(name: str, slope: float = 0.2):
    if name == "leaky_relu":
        return lambda x: F.leaky_relu(x, slope)
    return _ACTIVATIONS[name]


@dataclass
class ViewRepresentation:
    z: torch.Tensor
    attention: list[torch.Tensor]  # one (n, n) matrix per head, zero off the neighborhood


@dataclass
class FusedRepresentation:
    z: torch.Tensor
    beta: torch.Tensor
    omega: torch.Tensor


@dataclass
class EncoderOutput:
    h: torch.Tensor
    views: list[ViewRepresentation]
    fused: FusedRepresentation

    @property
    def zs(self) -> list[torch.Tensor]:
        return [v.z for v in self.views]


# -- functional building blocks ---------------------------------------------


def project_features(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """``h_i = W x_i + b`` for every row of ``x``."""
    if x.shape[1] != weight.shape[1]:
        raise ConfigError(
            f"projection expects {weight.shape[1]} raw features, got {x.shape[1]}"
        )
    return x @ weight.T + bias


def node_attention(
    h: torch.Tensor,
    adjacency: torch.Tensor,
    weight: torch.Tensor,
    attn: torch.Tensor,
    activation="elu",
    attention_activation="leaky_relu",
    negative_slope: float = 0.2,
) -> ViewRepresentation:
    """Multi-head graph attention restricted to meta-path neighbors.

    ``weight`` has shape ``(K, m, d_in)`` and ``attn`` shape ``(K, 2m)``. Logits
    use the projected features ``W h``; heads are concatenated.
    """
    n = h.shape[0]
    if adjacency.shape != (n, n):
        raise DataError(f"adjacency is {tuple(adjacency.shape)} but there are {n} nodes")
    mask = adjacency > 0
    if not mask.any(dim=1).all():
        raise DataError("a node has an empty meta-path neighborhood")
    act = _activation(activation, negative_slope) if isinstance(activation, str) else activation
    att_act = (
        _activation(attention_activation, negative_slope)
        if isinstance(attention_activation, str)
        else attention_activation
    )
    m = weight.shape[1]
    outs, alphas = [], []
    for k in range(weight.shape[0]):
        wh = h @ weight[k].T  # n x m
        src = wh @ attn[k, :m]
        dst = wh @ attn[k, m:]
        logits = att_act(src[:, None] + dst[None, :])
        logits = logits.masked_fill(~mask, float("-inf"))
        alpha = torch.softmax(logits, dim=1)
        alphas.append(alpha)
        outs.append(act(alpha @ wh))
    return ViewRepresentation(torch.cat(outs, dim=1), alphas)


def semantic_fuse(
    zs: Sequence[torch.Tensor], q: torch.Tensor, M: torch.Tensor, b: torch.Tensor
) -> FusedRepresentation:
    """Attention over meta-paths: ``omega_p = mean_i q . tanh(M z_i + b)``,
    ``beta = softmax(omega)``, ``Z = sum_p beta_p Z_p``."""
    if not zs:
        raise DataError("semantic_fuse needs at least one view")
    shape = zs[0].shape
    if any(z.shape != shape for z in zs):
        raise DataError("all views must have the same shape")
    omega = torch.stack([(torch.tanh(z @ M.T + b) @ q).mean() for z in zs])
    beta = torch.softmax(omega, dim=0)
    fused = sum(beta[p] * z for p, z in enumerate(zs))
    return FusedRepresentation(fused, beta, omega)


# -- module -------------------------------------------------------------------


class _ViewLayer(nn.Module):
    def __init__(self, heads: int, head_dim: int, d_in: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(heads, head_dim, d_in, dtype=DTYPE))
        self.attn = nn.Parameter(torch.empty(heads, 2 * head_dim, dtype=DTYPE))


class HGOTEncoder(nn.Module):
    """Projection + per-view attention + semantic fusion.

    ``forward`` records its outputs so that :meth:`backward` can return
    parameter gradients for a given upstream gradient.
    """

    def __init__(
        self,
        raw_dims: Mapping[str, int],
        target_type: str,
        metapath_names: Sequence[str],
        config: Optional[EncoderConfig] = None,
        seed: int = 0,
    ):
        super().__init__()
        self.config = config or EncoderConfig()
        self.raw_dims = dict(raw_dims)
        self.target_type = target_type
        self.metapath_names = list(metapath_names)
        if target_type not in self.raw_dims:
            raise ConfigError(f"no raw feature dimension for target type {target_type!r}")
        if len(set(self.metapath_names)) != len(self.metapath_names) or not self.metapath_names:
            raise ConfigError("meta-path names must be non-empty and unique")
        cfg = self.config
        self.proj = nn.ModuleDict()
        for t, dim in self.raw_dims.items():
            lin = nn.Module()
            lin.weight = nn.Parameter(torch.empty(cfg.d, dim, dtype=DTYPE))
            lin.bias = nn.Parameter(torch.empty(cfg.d, dtype=DTYPE))
            self.proj[t] = lin
        self.views = nn.ModuleDict(
            {
                name: nn.ModuleList(
                    [_ViewLayer(cfg.heads, cfg.head_dim, cfg.d) for _ in range(cfg.depth)]
                )
                for name in self.metapath_names
            }
        )
        self.sem_q = nn.Parameter(torch.empty(cfg.semantic_dim, dtype=DTYPE))
        self.sem_M = nn.Parameter(torch.empty(cfg.semantic_dim, cfg.d, dtype=DTYPE))
        self.sem_b = nn.Parameter(torch.empty(cfg.semantic_dim, dtype=DTYPE))
        self._recorded: Optional[list[torch.Tensor]] = None
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        """Glorot-uniform weights, zero biases, seeded."""
        gen = torch.Generator().manual_seed(seed)

        def glorot(p, fan_in, fan_out):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            with torch.no_grad():
                p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)

        for t in self.raw_dims:
            lin = self.proj[t]
            glorot(lin.weight, lin.weight.shape[1], lin.weight.shape[0])
            nn.init.zeros_(lin.bias)
        for name in self.metapath_names:
            for layer in self.views[name]:
                k, m, d_in = layer.weight.shape
                glorot(layer.weight, d_in, m)
                glorot(layer.attn, 2 * m, 1)
        glorot(self.sem_q, self.sem_q.shape[0], 1)
        glorot(self.sem_M, self.sem_M.shape[1], self.sem_M.shape[0])
        nn.init.zeros_(self.sem_b)

    def project(self, x: torch.Tensor) -> torch.Tensor:
        lin = self.proj[self.target_type]
        return project_features(x, lin.weight, lin.bias)

    def encode_view(self, h: torch.Tensor, adjacency: torch.Tensor, name: str) -> ViewRepresentation:
        cfg = self.config
        rep = ViewRepresentation(h, [])
        for layer in self.views[name]:
            rep = node_attention(
                rep.z,
                adjacency,
                layer.weight,
                layer.attn,
                cfg.activation,
                cfg.attention_activation,
                cfg.negative_slope,
            )
        return rep

    def fuse(self, zs: Sequence[torch.Tensor]) -> FusedRepresentation:
        return semantic_fuse(zs, self.sem_q, self.sem_M, self.sem_b)

    def forward(self, x: torch.Tensor, adjacencies: Sequence[torch.Tensor]) -> EncoderOutput:
        if len(adjacencies) != len(self.metapath_names):
            raise DataError(
                f"expected {len(self.metapath_names)} view adjacencies, got {len(adjacencies)}"
            )
        h = self.project(x)
        views = [
            self.encode_view(h, a, name) for a, name in zip(adjacencies, self.metapath_names)
        ]
        fused = self.fuse([v.z for v in views])
        out = EncoderOutput(h, views, fused)
        self._recorded = [h, *out.zs, fused.z] if torch.is_grad_enabled() else None
        return out

    def backward(self, grad_h=None, grad_zs=None, grad_fused=None) -> dict[str, torch.Tensor]:
        """Parameter gradients for upstream gradients at ``(H, Z_1..Z_P, Z_agg)``.

        Missing upstream gradients count as zero.
        """
        if self._recorded is None:
            raise StateError("backward called without a recorded forward pass")
        outputs = self._recorded
        grads = [grad_h, *(grad_zs or [None] * (len(outputs) - 2)), grad_fused]
        if len(grads) != len(outputs):
            raise DataError("number of upstream gradients does not match the outputs")
        pairs = [(o, g) for o, g in zip(outputs, grads) if g is not None]
        named = dict(self.named_parameters())
        if not pairs:
            return {k: torch.zeros_like(p) for k, p in named.items()}
        res = torch.autograd.grad(
            [o for o, _ in pairs],
            list(named.values()),
            grad_outputs=[torch.as_tensor(g, dtype=DTYPE) for _, g in pairs],
            retain_graph=True,
            allow_unused=True,
        )
        return {
            k: (torch.zeros_like(p) if g is None else g) for (k, p), g in zip(named.items(), res)
        }

    # -- checkpoints ----------------------------------------------------------

    def save(self, path) -> None:
        """JSON checkpoint; float64 values survive a round-trip exactly."""
        payload = {
            "version": CHECKPOINT_VERSION,
            "config": self.config.model_dump(),
            "raw_dims": self.raw_dims,
            "target_type": self.target_type,
            "metapaths": self.metapath_names,
            "params": {
                name: {
                    "shape": list(p.shape),
                    "data": p.detach().reshape(-1).tolist(),
                }
                for name, p in self.named_parameters()
            },
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "HGOTEncoder":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot read checkpoint ({exc})") from None
        if payload.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
        model = cls(
            payload["raw_dims"],
            payload["target_type"],
            payload["metapaths"],
            EncoderConfig.from_dict(payload["config"]),
        )
        params = dict(model.named_parameters())
        if set(params) != set(payload["params"]):
            raise DataError(f"{path}: parameter names do not match the architecture")
        with torch.no_grad():
            for name, entry in payload["params"].items():
                t = torch.tensor(entry["data"], dtype=DTYPE).reshape(entry["shape"])
                if t.shape != params[name].shape:
                    raise DataError(f"{path}: shape mismatch for {name}")
                params[name].copy_(t)
        return model


def graph_tensors(features: np.ndarray, adjacencies: Sequence[np.ndarray]):
    """Convert target features and view adjacencies to float64 tensors."""
    x = torch.as_tensor(np.asarray(features, dtype=np.float64))
    adjs = [torch.as_tensor(np.asarray(a, dtype=np.float64)) for a in adjacencies]
    return x, adjs
