"""Heterogeneous graphs, meta-path views and the on-disk dataset format.

A dataset directory holds ``manifest.json`` plus one ``edges_<edge type>.tsv``
per edge type, one ``features_<node type>.csv`` per node type and an optional
``labels.tsv``. Node indices are 0-based within their type.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import Field, model_validator

from .configbase import StrictModel
from .errors import ConfigError, DataError

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class MetaPath:
    name: str
    edge_types: tuple[str, ...]

    def __post_init__(self):
        if len(self.edge_types) < 1:
            raise ConfigError(f"meta-path {self.name!r} needs at least one edge type")
        object.__setattr__(self, "edge_types", tuple(self.edge_types))


@dataclass(eq=False)
class HeteroGraph:
    """Typed nodes, typed edges and per-type raw features.

    ``edges`` maps an edge-type name to an ``(E, 2)`` integer array of
    ``(src_index, dst_index)`` pairs; ``edge_types`` maps the same name to its
    ``(src_type, dst_type)`` pair.
    """

    node_counts: dict[str, int]
    edge_types: dict[str, tuple[str, str]]
    edges: dict[str, np.ndarray]
    features: dict[str, np.ndarray]
    target_type: str
    metapaths: list[MetaPath] = field(default_factory=list)
    labels: Optional[np.ndarray] = None
    homogeneous: bool = False

    def __post_init__(self):
        self.edge_types = {k: tuple(v) for k, v in self.edge_types.items()}
        self.edges = {
            k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in self.edges.items()
        }
        self.features = {k: np.asarray(v, dtype=np.float64) for k, v in self.features.items()}
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    @property
    def node_types(self) -> list[str]:
        return list(self.node_counts)

    @property
    def num_targets(self) -> int:
        return self.node_counts[self.target_type]

    def validate(self) -> None:
        if self.target_type not in self.node_counts:
            raise DataError(f"target type {self.target_type!r} is not a declared node type")
        for t, c in self.node_counts.items():
            if c < 0:
                raise DataError(f"node type {t!r} has negative count {c}")
        if not self.homogeneous and len(self.node_counts) + len(self.edge_types) <= 2:
            raise DataError(
                "graph is not heterogeneous (node types + edge types must exceed 2); "
                "pass homogeneous=True to allow it"
            )
        for name, (src, dst) in self.edge_types.items():
            for t in (src, dst):
                if t not in self.node_counts:
                    raise DataError(f"edge type {name!r} references unknown node type {t!r}")
            e = self.edges.get(name)
            if e is None:
                raise DataError(f"no edge list for edge type {name!r}")
            if len(e) and (
                e.min() < 0
                or e[:, 0].max() >= self.node_counts[src]
                or e[:, 1].max() >= self.node_counts[dst]
            ):
                raise DataError(f"edge type {name!r} has an endpoint outside its node type")
        for name in self.edges:
            if name not in self.edge_types:
                raise DataError(f"edges given for undeclared edge type {name!r}")
        for t, c in self.node_counts.items():
            x = self.features.get(t)
            if x is None:
                raise DataError(f"no features for node type {t!r}")
            if x.ndim != 2 or x.shape[0] != c:
                raise DataError(
                    f"features of node type {t!r} have {x.shape[0] if x.ndim else 0} rows, "
                    f"expected {c}"
                )
        if self.labels is not None and self.labels.shape != (self.num_targets,):
            raise DataError(
                f"labels have shape {self.labels.shape}, expected ({self.num_targets},)"
            )

    def biadjacency(self, edge_type: str) -> np.ndarray:
        src, dst = self.edge_types[edge_type]
        b = np.zeros((self.node_counts[src], self.node_counts[dst]), dtype=bool)
        e = self.edges[edge_type]
        b[e[:, 0], e[:, 1]] = True
        return b

    def metapath(self, name: str) -> MetaPath:
        for p in self.metapaths:
            if p.name == name:
                return p
        raise ConfigError(f"unknown meta-path {name!r}")

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        if (
            self.node_counts != other.node_counts
            or self.edge_types != other.edge_types
            or self.target_type != other.target_type
            or self.metapaths != other.metapaths
            or self.homogeneous != other.homogeneous
            or self.edges.keys() != other.edges.keys()
            or self.features.keys() != other.features.keys()
        ):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        return all(np.array_equal(self.edges[k], other.edges[k]) for k in self.edges) and all(
            np.array_equal(self.features[k], other.features[k]) for k in self.features
        )


@dataclass(frozen=True, eq=False)
class MetaPathView:
    metapath: MetaPath
    adjacency: np.ndarray  # n x n, uint8 in {0, 1}

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True, eq=False)
class AggregatedStructure:
    adjacency: np.ndarray


def _step(g: HeteroGraph, current: str, edge_type: str) -> tuple[np.ndarray, str]:
    if edge_type not in g.edge_types:
        raise ConfigError(f"meta-path uses unknown edge type {edge_type!r}")
    src, dst = g.edge_types[edge_type]
    if current == src:
        return g.biadjacency(edge_type), dst
    if current == dst:
        # traverse the relation backwards, e.g. paper-author-paper over one "pa" type
        return g.biadjacency(edge_type).T, src
    raise ConfigError(
        f"edge type {edge_type!r} ({src} -> {dst}) cannot follow node type {current!r}"
    )


def build_metapath_view(g: HeteroGraph, p: MetaPath, self_loops: bool = True) -> MetaPathView:
    """Boolean reachability over target nodes along ``p``."""
    n = g.num_targets
    if n < 1:
        raise DataError(f"target type {g.target_type!r} has no nodes")
    reach = np.eye(n, dtype=np.float64)
    current = g.target_type
    for et in p.edge_types:
        b, current = _step(g, current, et)
        reach = ((reach @ b.astype(np.float64)) > 0).astype(np.float64)
    if current != g.target_type:
        raise ConfigError(
            f"meta-path {p.name!r} ends at {current!r}, not the target type {g.target_type!r}"
        )
    adj = (reach > 0).astype(np.uint8)
    if self_loops:
        np.fill_diagonal(adj, 1)
    adj.setflags(write=False)
    return MetaPathView(p, adj)


def build_views(
    g: HeteroGraph, metapaths: Optional[Sequence[MetaPath]] = None, self_loops: bool = True
) -> list[MetaPathView]:
    paths = g.metapaths if metapaths is None else metapaths
    if not paths:
        raise ConfigError("no meta-paths given")
    return [build_metapath_view(g, p, self_loops=self_loops) for p in paths]


def aggregate_adjacency(views: Sequence[MetaPathView]) -> AggregatedStructure:
    """Elementwise logical OR of all view adjacencies."""
    if not views:
        raise DataError("cannot aggregate an empty list of views")
    n = views[0].n
    out = np.zeros((n, n), dtype=bool)
    for v in views:
        if v.n != n:
            raise DataError(f"view {v.metapath.name!r} has {v.n} nodes, expected {n}")
        out |= v.adjacency.astype(bool)
    adj = out.astype(np.uint8)
    adj.setflags(write=False)
    return AggregatedStructure(adj)


# -- dataset directory format -------------------------------------------------


def _edges_file(edge_type: str) -> str:
    return f"edges_{edge_type}.tsv"


def _features_file(node_type: str) -> str:
    return f"features_{node_type}.csv"


def write_heterograph(g: HeteroGraph, directory) -> Path:
    """Write ``g`` in the dataset directory format. Floats use 17 significant digits."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": MANIFEST_VERSION,
        "node_types": [{"name": t, "count": c} for t, c in g.node_counts.items()],
        "edge_types": [
            {"name": name, "src": s, "dst": t} for name, (s, t) in g.edge_types.items()
        ],
        "target_type": g.target_type,
        "metapaths": [{"name": p.name, "edge_types": list(p.edge_types)} for p in g.metapaths],
        "features": {t: _features_file(t) for t in g.node_counts},
        "labels": "labels.tsv" if g.labels is not None else None,
        "homogeneous": g.homogeneous,
    }
    with open(d / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for name, e in g.edges.items():
        with open(d / _edges_file(name), "w", encoding="utf-8", newline="\n") as fh:
            for s, t in e:
                fh.write(f"{s}\t{t}\n")
    for t, x in g.features.items():
        with open(d / _features_file(t), "w", encoding="utf-8", newline="\n") as fh:
            for row in x:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    if g.labels is not None:
        with open(d / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for i, y in enumerate(g.labels):
                fh.write(f"{i}\t{y}\n")
    return d


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with open(path, encoding="utf-8") as fh:
        return fh.read().split("\n")


def _parse_int_pairs(path: Path, sep: str = "\t") -> np.ndarray:
    rows = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        parts = line.split(sep)
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            rows.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer value in {line!r}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def _parse_features(path: Path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        rows.append(row)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


def load_heterograph(manifest_path) -> HeteroGraph:
    """Load and validate a dataset. Accepts the manifest file or its directory."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    root = path.parent
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    try:
        node_counts = {d["name"]: int(d["count"]) for d in manifest["node_types"]}
        edge_types = {d["name"]: (d["src"], d["dst"]) for d in manifest["edge_types"]}
        target = manifest["target_type"]
        metapaths = [
            MetaPath(d["name"], tuple(d["edge_types"])) for d in manifest.get("metapaths", [])
        ]
        feature_files = manifest.get("features") or {
            t: _features_file(t) for t in node_counts
        }
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc!r})") from None

    edges = {}
    for name, (src, dst) in edge_types.items():
        f = root / _edges_file(name)
        e = _parse_int_pairs(f)
        for lineno, (s, t) in enumerate(e, start=1):
            if not (0 <= s < node_counts.get(src, 0)) or not (0 <= t < node_counts.get(dst, 0)):
                raise DataError(
                    f"{f}:{lineno}: dangling node reference ({s}, {t}) for "
                    f"{src} ({node_counts.get(src, 0)} nodes) -> {dst} ({node_counts.get(dst, 0)} nodes)"
                )
        edges[name] = e

    features = {}
    for t, count in node_counts.items():
        if t not in feature_files:
            raise DataError(f"{path}: no feature file for node type {t!r}")
        f = root / feature_files[t]
        x = _parse_features(f)
        if x.shape[0] != count:
            raise DataError(f"{f}: node type {t!r} has {x.shape[0]} feature rows, expected {count}")
        features[t] = x

    labels = None
    if manifest.get("labels"):
        f = root / manifest["labels"]
        pairs = _parse_int_pairs(f)
        n = node_counts.get(target, 0)
        labels = np.full(n, -1, dtype=np.int64)
        for lineno, (i, y) in enumerate(pairs, start=1):
            if not 0 <= i < n:
                raise DataError(f"{f}:{lineno}: dangling node reference {i} (target has {n} nodes)")
            labels[i] = y
        if (labels < 0).any():
            missing = int(np.flatnonzero(labels < 0)[0])
            raise DataError(f"{f}: no label for target node {missing}")

    return HeteroGraph(
        node_counts=node_counts,
        edge_types=edge_types,
        edges=edges,
        features=features,
        target_type=target,
        metapaths=metapaths,
        labels=labels,
        homogeneous=bool(manifest.get("homogeneous", False)),
    )


# -- synthetic planted-partition heterographs --------------------------------


class SyntheticConfig(StrictModel):
    """Planted-partition heterograph with one target type and two bridge types."""

    n_target: int = Field(150, ge=1)
    n_bridge_per_relation: int = Field(30, ge=1)
    n_communities: int = Field(3, ge=1)
    intra_edge_prob: float = Field(0.1, ge=0.0, le=1.0)
    inter_edge_prob: float = Field(0.02, ge=0.0, le=1.0)
    feature_dim: int = Field(32, ge=1)
    feature_noise: float = Field(1.0, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.n_communities > self.n_target:
            raise ValueError("n_communities must not exceed n_target")
        return self


def generate_synthetic(cfg: SyntheticConfig) -> HeteroGraph:
    """Paper/author/subject-style graph with PAP and PSP meta-paths.

    Target and bridge nodes get community ids; a target links to a bridge
    node with ``intra_edge_prob`` when their communities agree and with
    ``inter_edge_prob`` otherwise. Features are community centroids plus
    Gaussian noise; bridge nodes get features the same way.
    """
    rng = np.random.default_rng(cfg.seed)
    n, k, nb = cfg.n_target, cfg.n_communities, cfg.n_bridge_per_relation
    labels = rng.permutation(np.arange(n) % k)
    centroids = rng.normal(size=(k, cfg.feature_dim))

    edges = {}
    bridge_labels = {}
    for rel, bridge in (("pa", "author"), ("ps", "subject")):
        bl = np.arange(nb) % k
        bridge_labels[bridge] = bl
        prob = np.where(labels[:, None] == bl[None, :], cfg.intra_edge_prob, cfg.inter_edge_prob)
        hit = rng.random((n, nb)) < prob
        edges[rel] = np.argwhere(hit)

    def feats(lab):
        return centroids[lab] + cfg.feature_noise * rng.normal(size=(len(lab), cfg.feature_dim))

    features = {"paper": feats(labels)}
    for bridge, bl in bridge_labels.items():
        features[bridge] = feats(bl)

    return HeteroGraph(
        node_counts={"paper": n, "author": nb, "subject": nb},
        edge_types={"pa": ("paper", "author"), "ps": ("paper", "subject")},
        edges=edges,
        features=features,
        target_type="paper",
        metapaths=[MetaPath("PAP", ("pa", "pa")), MetaPath("PSP", ("ps", "ps"))],
        labels=labels,
    )
