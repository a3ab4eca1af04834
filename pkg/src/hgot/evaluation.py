"""Downstream evaluation of frozen embeddings."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import Field
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.optimize import linear_sum_assignment
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import adjusted_rand_score, f1_score, normalized_mutual_info_score
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from .configbase import StrictModel
from .errors import DataError


class ProbeConfig(StrictModel):
    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)
    l2_penalty: float = Field(1e-2, ge=0.0)
    probe_epochs: int = Field(1000, ge=1)
    seed: int = 0


@dataclass
class ClusterReport:
    acc: float
    nmi: float
    ari: float
    assignment: np.ndarray


def f1_scores(y_true, y_pred) -> tuple[float, float]:
    return (
        float(f1_score(y_true, y_pred, average="micro")),
        float(f1_score(y_true, y_pred, average="macro", zero_division=0)),
    )


def linear_probe(Z, labels, cfg: Optional[ProbeConfig] = None) -> tuple[float, float]:
    """Multinomial logistic regression on a stratified split; returns (micro, macro) F1
    on the held-out part."""
    cfg = cfg or ProbeConfig()
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2 or len(Z) != len(y):
        raise DataError("linear_probe needs matching labels with at least two classes")
    if counts.min() < 2:
        raise DataError(
            f"class {classes[counts.argmin()]} has a single member; cannot stratify the split"
        )
    z_tr, z_te, y_tr, y_te = train_test_split(
        Z, y, train_size=cfg.train_fraction, stratify=y, random_state=cfg.seed
    )
    scaler = StandardScaler().fit(z_tr)
    # sklearn minimizes C * sum(loss) + ||w||^2 / 2; l2_penalty is per-sample
    C = 1.0 / (cfg.l2_penalty * len(y_tr)) if cfg.l2_penalty > 0 else np.inf
    clf = LogisticRegression(C=C, max_iter=cfg.probe_epochs)
    clf.fit(scaler.transform(z_tr), y_tr)
    return f1_scores(y_te, clf.predict(scaler.transform(z_te)))


def probe_over_seeds(Z, labels, cfg: Optional[ProbeConfig] = None, seeds: Iterable[int] = range(10)) -> dict:
    cfg = cfg or ProbeConfig()
    micro, macro = [], []
    for s in seeds:
        mi, ma = linear_probe(Z, labels, cfg.model_copy(update={"seed": s}))
        micro.append(mi)
        macro.append(ma)
    return {"micro_f1": _summary(micro), "macro_f1": _summary(macro)}


def hierarchical_cluster(Z, k: int, method: str = "average") -> np.ndarray:
    """Agglomerative clustering on Euclidean distances cut to ``k`` clusters.

    Cluster ids are numbered by first appearance in node order.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = len(Z)
    if not 1 <= k <= n:
        raise DataError(f"cannot form {k} clusters from {n} points")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    raw = cut_tree(linkage(Z, method=method, metric="euclidean"), n_clusters=k).ravel()
    _, first = np.unique(raw, return_index=True)
    order = {c: i for i, c in enumerate(raw[np.sort(first)])}
    return np.array([order[c] for c in raw], dtype=np.int64)


def clustering_accuracy(assignment, labels) -> float:
    a = np.asarray(assignment)
    y = np.asarray(labels)
    ca, ai = np.unique(a, return_inverse=True)
    cy, yi = np.unique(y, return_inverse=True)
    confusion = np.zeros((len(ca), len(cy)), dtype=np.int64)
    np.add.at(confusion, (ai, yi), 1)
    r, c = linear_sum_assignment(-confusion)
    return float(confusion[r, c].sum() / len(y))


def clustering_metrics(assignment, labels) -> ClusterReport:
    a = np.asarray(assignment)
    y = np.asarray(labels)
    if a.shape != y.shape:
        raise DataError(f"assignment has {len(a)} entries but there are {len(y)} labels")
    return ClusterReport(
        acc=clustering_accuracy(a, y),
        nmi=float(normalized_mutual_info_score(y, a, average_method="arithmetic")),
        ari=float(adjusted_rand_score(y, a)),
        assignment=a,
    )


def l2_normalize(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    return Z / np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), 1e-12)


def cluster_report(Z, labels, method: str = "average", normalize: bool = False) -> ClusterReport:
    """Cluster into as many groups as there are label classes. ``normalize`` clusters
    unit-norm rows, so Euclidean linkage tracks cosine geometry."""
    k = len(np.unique(labels))
    if normalize:
        Z = l2_normalize(Z)
    return clustering_metrics(hierarchical_cluster(Z, k, method), labels)


def _summary(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(v.mean()) if len(v) else float("nan"),
        "std": float(v.std()) if len(v) else float("nan"),
        "values": [float(x) for x in v],
    }


def evaluate_embeddings(
    Z,
    labels,
    probe: Optional[ProbeConfig] = None,
    probe_seeds=range(10),
    linkage_method="average",
    normalize: bool = False,
) -> dict:
    """Metrics report: ``{task: {metric: {mean, std, values}}}``."""
    rep = cluster_report(Z, labels, linkage_method, normalize)
    return {
        "classification": probe_over_seeds(Z, labels, probe, probe_seeds),
        "clustering": {
            "acc": _summary([rep.acc]),
            "nmi": _summary([rep.nmi]),
            "ari": _summary([rep.ari]),
        },
    }


def merge_reports(reports: Sequence[dict]) -> dict:
    """Combine per-seed reports: each metric's mean/std over the per-seed means."""
    out: dict = {}
    for task in reports[0]:
        out[task] = {}
        for metric in reports[0][task]:
            out[task][metric] = _summary([r[task][metric]["mean"] for r in reports])
    return out


def write_metrics(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def export_embeddings(Z, ids, path) -> Path:
    """CSV with an ``id`` column followed by one column per embedding dimension."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        Z = Z.reshape(len(Z), -1)
    ids = list(ids)
    if len(ids) != len(Z):
        raise DataError(f"{len(ids)} ids for {len(Z)} embeddings")
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + [f"z{j}" for j in range(Z.shape[1])])
            for i, row in zip(ids, Z):
                w.writerow([i] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise DataError(f"{path}: cannot write embeddings ({exc.strerror})") from None
    return path


def load_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    d = len(rows[0]) - 1
    ids = [r[0] for r in rows[1:]]
    Z = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(len(ids), d)
    return ids, Z
