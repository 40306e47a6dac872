import numpy as np
import pytest

from treepheno.synthtree import (
    N_CLASSES, TreeSpec, build_skeleton, cohort, generate, iter_cohort, read_manifest,
    summary_statistics, write_manifest,
)
from treepheno.volume import count_components


def test_trachea_only_tree():
    vol = generate(TreeSpec.for_class(0, seed=3, max_generation=0))
    assert set(np.unique(vol.data)) == {0, 1}


def test_generation_is_deterministic():
    spec = TreeSpec.for_class(1, seed=11)
    assert np.array_equal(generate(spec).data, generate(spec).data)


def test_small_volumes_refused():
    with pytest.raises(ValueError):
        generate(TreeSpec.for_class(0, seed=1, volume_dims=(63, 96, 96)))


@pytest.mark.parametrize("shape_class", range(N_CLASSES))
def test_volume_invariants(shape_class):
    spec = TreeSpec.for_class(shape_class, seed=100 + shape_class)
    vol = generate(spec)
    assert vol.data.max() <= 17
    assert vol.foreground_count() > 0
    assert count_components(vol.data > 0) == 1
    # every generation of the skeleton survives rasterization
    gens = {s.generation for s in build_skeleton(spec)}
    assert set(np.unique(vol.data[vol.data > 0]) - 1) == gens


@pytest.mark.parametrize("seed", range(5))
def test_generations_increase_along_paths(seed):
    for c in range(N_CLASSES):
        segs = build_skeleton(TreeSpec.for_class(c, seed=seed))
        assert segs[0].generation == 0 and segs[0].parent == -1
        for s in segs[1:]:
            parent = segs[s.parent]
            assert s.generation == parent.generation + 1
            assert np.allclose(s.start, parent.end)


def test_class_differences_are_planted():
    stats = {c: [summary_statistics(build_skeleton(TreeSpec.for_class(c, seed=s))) for s in range(20)]
             for c in range(N_CLASSES)}
    mean = {c: {k: np.mean([d[k] for d in v]) for k in v[0]} for c, v in stats.items()}
    assert mean[0]["branch_angle"] < mean[3]["branch_angle"] < mean[1]["branch_angle"]
    assert mean[2]["trachea_length"] < mean[0]["trachea_length"] / 2
    assert mean[2]["max_depth"] > mean[0]["max_depth"]
    assert mean[3]["depth_asymmetry"] >= 3 > mean[0]["depth_asymmetry"]


def _stat_matrix(n_per_class, offset):
    rows, labels = [], []
    for c in range(N_CLASSES):
        for i in range(n_per_class):
            s = summary_statistics(build_skeleton(TreeSpec.for_class(c, seed=offset + 1000 * c + i)))
            rows.append([s["branch_angle"], s["max_depth"], s["depth_asymmetry"], s["trachea_length"]])
            labels.append(c)
    return np.array(rows), np.array(labels)


def test_linear_probe_separates_classes():
    # one-vs-rest least squares on standardized skeleton statistics
    x_tr, y_tr = _stat_matrix(100, 0)
    x_te, y_te = _stat_matrix(100, 500_000)
    mu, sd = x_tr.mean(axis=0), x_tr.std(axis=0)
    design = lambda x: np.hstack([(x - mu) / sd, np.ones((len(x), 1))])
    w, *_ = np.linalg.lstsq(design(x_tr), np.eye(N_CLASSES)[y_tr], rcond=None)
    accuracy = np.mean(np.argmax(design(x_te) @ w, axis=1) == y_te)
    assert accuracy >= 0.95


def test_single_subject_per_class():
    out = cohort(1, base_seed=5)
    assert len(out) == 4
    assert sorted(label for _, label in out) == [0, 1, 2, 3]


def test_cohort_is_reproducible():
    a, b = cohort(1, base_seed=9), cohort(1, base_seed=9)
    assert all(np.array_equal(va.data, vb.data) and la == lb for (va, la), (vb, lb) in zip(a, b))
    c = cohort(1, base_seed=10)
    assert not np.array_equal(a[0][0].data, c[0][0].data)


def test_balanced_cohort_counts():
    labels = [spec.shape_class for _, spec, _ in iter_cohort(50, base_seed=2, volume_dims=(64, 64, 64))]
    assert len(labels) == 200
    assert np.bincount(labels).tolist() == [50, 50, 50, 50]


def test_cohort_rejects_empty_request():
    with pytest.raises(ValueError):
        cohort(0, base_seed=1)


def test_manifest_roundtrip(tmp_path):
    rows = [("subj0000", 0, 123), ("subj0001", 1, 2 ** 63 + 5)]
    write_manifest(tmp_path / "m.csv", rows)
    assert read_manifest(tmp_path / "m.csv") == rows
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "subject_id,class_label,seed"
