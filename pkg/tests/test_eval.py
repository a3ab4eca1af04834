import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgot.errors import ConfigError, DataError
from hgot.evaluation import (
    ProbeConfig,
    cluster_report,
    clustering_metrics,
    evaluate_embeddings,
    export_embeddings,
    f1_scores,
    hierarchical_cluster,
    linear_probe,
    load_embeddings,
    merge_reports,
    probe_over_seeds,
    write_metrics,
)

# -- linear probe -------------------------------------------------------------------------


def test_separable_classes_score_perfectly():
    Z = np.zeros((40, 3))
    Z[:20, 0], Z[20:, 0] = 10.0, -10.0
    y = np.array([0] * 20 + [1] * 20)
    assert linear_probe(Z, y) == (1.0, 1.0)


def test_shuffled_labels_are_chance_level(rng):
    Z = rng.normal(size=(400, 8))
    y = rng.permutation(np.repeat([0, 1], 200))
    micro = probe_over_seeds(Z, y)["micro_f1"]["mean"]
    assert abs(micro - 0.5) <= 0.1


def test_constant_prediction_hand_values():
    micro, macro = f1_scores([0, 0, 1, 1], [1, 1, 1, 1])
    assert micro == 0.5
    assert math.isclose(macro, 1 / 3, abs_tol=1e-15)


def test_probe_is_deterministic(rng):
    Z = rng.normal(size=(60, 4))
    y = np.arange(60) % 3
    assert probe_over_seeds(Z, y, seeds=range(3)) == probe_over_seeds(Z, y, seeds=range(3))


def test_probe_errors():
    with pytest.raises(DataError, match="two classes"):
        linear_probe(np.zeros((4, 2)), [0, 0, 0, 0])
    with pytest.raises(DataError, match="single member"):
        linear_probe(np.zeros((5, 2)), [0, 0, 0, 0, 1])
    with pytest.raises(ConfigError):
        ProbeConfig(train_fraction=1.0)
    with pytest.raises(ConfigError):
        ProbeConfig(l2_penalty=-1.0)


# -- hierarchical clustering ----------------------------------------------------------------


def test_far_blobs_are_separated(rng):
    Z = np.vstack([rng.normal(0, 0.01, (10, 2)), rng.normal(100, 0.01, (10, 2))])
    a = hierarchical_cluster(Z, 2)
    assert len(set(a[:10])) == 1 and len(set(a[10:])) == 1 and a[0] != a[10]


def test_k_equal_n_gives_singletons(rng):
    assert sorted(hierarchical_cluster(rng.normal(size=(6, 2)), 6)) == list(range(6))


def test_points_on_a_line():
    a = hierarchical_cluster(np.array([[0.0], [1.0], [10.0], [11.0]]), 2)
    assert a.tolist() == [0, 0, 1, 1]


def test_too_many_clusters_rejected():
    with pytest.raises(DataError):
        hierarchical_cluster(np.zeros((3, 2)), 4)


def test_normalized_clustering_uses_directions():
    # same directions at very different radii: raw Euclidean splits by radius
    Z = np.array([[1.0, 0.0], [100.0, 0.0], [0.0, 1.0], [0.0, 100.0]])
    y = [0, 0, 1, 1]
    assert cluster_report(Z, y, normalize=True).acc == 1.0
    assert cluster_report(Z, y).acc < 1.0


# -- clustering metrics ------------------------------------------------------------------------


def test_identical_assignment_scores_one():
    r = clustering_metrics([0, 1, 2, 0, 1, 2], [0, 1, 2, 0, 1, 2])
    assert (r.acc, r.nmi, r.ari) == (1.0, 1.0, 1.0)


def test_relabeled_assignment_has_full_accuracy():
    assert clustering_metrics([2, 0, 1, 2, 0, 1], [0, 1, 2, 0, 1, 2]).acc == 1.0


def test_accuracy_hand_value():
    assert clustering_metrics([0, 1, 1, 1], [0, 0, 1, 1]).acc == 0.75


def test_length_mismatch_rejected():
    with pytest.raises(DataError):
        clustering_metrics([0, 1], [0, 1, 1])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_metric_invariances_and_bounds(n, k, seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, k, n)
    y = rng.integers(0, k, n)
    r = clustering_metrics(a, y)
    assert 0.0 <= r.acc <= 1.0 and -1e-12 <= r.nmi <= 1.0 + 1e-12 and r.ari <= 1.0 + 1e-12
    perm = rng.permutation(k)
    assert clustering_metrics(perm[a], y).acc == r.acc
    s = clustering_metrics(y, a)
    assert math.isclose(s.nmi, r.nmi, abs_tol=1e-12)
    assert math.isclose(s.ari, r.ari, abs_tol=1e-12)


# -- reports and export ------------------------------------------------------------------------


def test_report_shape_and_merge(rng, tmp_path):
    Z = rng.normal(size=(30, 3))
    y = np.arange(30) % 3
    rep = evaluate_embeddings(Z, y, probe_seeds=range(2))
    assert set(rep) == {"classification", "clustering"}
    assert set(rep["classification"]) == {"micro_f1", "macro_f1"}
    assert set(rep["clustering"]) == {"acc", "nmi", "ari"}
    assert len(rep["classification"]["macro_f1"]["values"]) == 2
    merged = merge_reports([rep, rep])
    assert merged["clustering"]["acc"]["std"] == 0.0
    write_metrics(merged, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == merged


def test_export_round_trip(rng, tmp_path):
    Z = rng.normal(size=(7, 5))
    ids = [f"p{i}" for i in range(7)]
    got_ids, got = load_embeddings(export_embeddings(Z, ids, tmp_path / "z.csv"))
    assert got_ids == ids and np.array_equal(got, Z)


def test_export_empty_is_header_only(tmp_path):
    path = export_embeddings(np.zeros((0, 3)), [], tmp_path / "z.csv")
    assert path.read_text().splitlines() == ["id,z0,z1,z2"]


def test_export_width_64(rng, tmp_path):
    path = export_embeddings(rng.normal(size=(3, 64)), ["a", "b", "c"], tmp_path / "z.csv")
    with open(path, newline="") as fh:
        assert {len(row) for row in csv.reader(fh)} == {65}


def test_export_errors(tmp_path):
    with pytest.raises(DataError, match="cannot write"):
        export_embeddings(np.zeros((1, 2)), ["a"], tmp_path / "missing" / "z.csv")
    with pytest.raises(DataError):
        export_embeddings(np.zeros((2, 2)), ["a"], tmp_path / "z.csv")
