import csv
import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ari_exhaustive_permutations, ari_permutation_oracle, pair_counts_bruteforce, rand_index_bruteforce
from treepheno.errors import EmptyReference, SizeMismatch
from treepheno.evalmetrics import (
    RECON_CSV_HEADER, ReconReport, adjusted_rand_index, agreement, contingency, fold_summary, mean_report,
    rand_index, recon_metrics, threshold, write_recon_csv,
)
from treepheno.skel2d import skeletonize


def _mask(seed, shape=(16, 16), p=0.3):
    return np.random.default_rng(seed).random(shape) < p


# -- reconstruction metrics ---------------------------------------------------------

def test_identity_prediction():
    m = _mask(0)
    s = skeletonize(m)
    r = recon_metrics(m, m, s, s)
    assert (r.dice, r.fpr, r.tl, r.cl) == (1.0, 0.0, 1.0, 0.0)


def test_disjoint_prediction():
    m = np.zeros((8, 8), bool)
    m[:, :3] = True
    mh = np.zeros((8, 8), bool)
    mh[:, 5:] = True
    r = recon_metrics(m, mh, skeletonize(m), skeletonize(mh))
    assert r.dice == 0.0
    assert r.fpr == mh.sum() / m.sum()
    assert r.tl == 0.0


def test_half_overlap_counts():
    m = np.zeros((8, 8), bool)
    m[:, :4] = True
    mh = np.zeros((8, 8), bool)
    mh[:4, :] = True
    r = recon_metrics(m, mh, skeletonize(m), skeletonize(mh))
    assert r.dice == 2 * 16 / (32 + 32) == 0.5
    assert r.fpr == 16 / 32


def test_tl_and_cl_from_hand_counts():
    m = np.zeros((6, 6), bool)
    m[1:5, 1:3] = True
    s = np.zeros_like(m)
    s[1:5, 1] = True
    mh = np.zeros_like(m)
    mh[1:3, 1:5] = True
    sh = np.zeros_like(m)
    sh[1, 1:5] = True
    r = recon_metrics(m, mh, s, sh)
    assert r.tl == 2 / 4  # rows 1-2 of the reference centerline are covered
    assert r.cl == 2 / 4  # predicted centerline pixels at cols 3, 4 fall outside M


def test_empty_reference():
    z = np.zeros((4, 4), bool)
    with pytest.raises(EmptyReference):
        recon_metrics(z, z, z, z)


def test_shape_mismatch():
    with pytest.raises(SizeMismatch):
        recon_metrics(np.ones((4, 4)), np.ones((4, 5)), np.ones((4, 4)), np.ones((4, 4)))


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_recon_metric_properties(s1, s2):
    m, mh = _mask(s1), _mask(s2)
    m[0, 0] = True
    s, sh = skeletonize(m), skeletonize(mh)
    r = recon_metrics(m, mh, s, sh)
    assert 0 <= r.dice <= 1 and 0 <= r.tl <= 1 and r.fpr >= 0 and r.cl >= 0
    assert r.dice == pytest.approx(2 * (m & mh).sum() / (m.sum() + mh.sum()))
    assert r.fpr == pytest.approx((mh & ~m).sum() / m.sum())
    assert r.tl == pytest.approx((s & mh).sum() / s.sum())
    assert r.cl == pytest.approx((sh & ~m).sum() / s.sum())


def test_dice_is_symmetric():
    m, mh = _mask(3), _mask(4)
    a = recon_metrics(m, mh, skeletonize(m), skeletonize(mh))
    b = recon_metrics(mh, m, skeletonize(mh), skeletonize(m))
    assert a.dice == b.dice


def test_fpr_zero_and_equal_size_means_perfect_dice():
    m = _mask(5)
    r = recon_metrics(m, m.copy(), skeletonize(m), skeletonize(m))
    assert r.fpr == 0 and r.dice == 1


def test_threshold_is_strict():
    assert threshold(np.array([0.49, 0.5, 0.51])).tolist() == [False, False, True]


def test_view_average_and_fold_summary():
    reports = [ReconReport(1.0, 0.0, 1.0, 0.0), ReconReport(0.5, 0.2, 0.8, 0.1)]
    mean = mean_report(reports)
    assert mean.averaged_over_views and mean.dice == 0.75 and mean.fpr == pytest.approx(0.1)
    summary = fold_summary(reports)
    assert summary["dice"]["mean"] == 0.75
    assert summary["dice"]["sd"] == pytest.approx(np.std([1.0, 0.5], ddof=1))
    assert summary["n_folds"] == 2


def test_recon_csv(tmp_path):
    rows = [{"train_data": "D+T", "eval_data": "ND+T", "fold": 0, "subject_id": "s", "view": "axial",
             "dice": 0.5, "fpr": 0.25, "tl": 1.0, "cl": 0.0}]
    write_recon_csv(tmp_path / "r.csv", rows)
    with open(tmp_path / "r.csv") as fh:
        back = list(csv.DictReader(fh))
    assert list(back[0]) == RECON_CSV_HEADER
    assert back[0]["eval_data"] == "ND+T" and float(back[0]["dice"]) == 0.5


# -- clustering agreement -------------------------------------------------------------

def test_rand_index_examples():
    # pairs ab, cd together only in the first; ac, bd together only in the
    # second; ad, bc apart in both: TP = 0, TN = 2
    assert pair_counts_bruteforce([0, 0, 1, 1], [0, 1, 0, 1])[:2] == (0, 2)
    assert rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(2 / 6)
    assert rand_index([0, 1, 2, 3], [0, 0, 0, 0]) == 0.0
    c = [2, 2, 0, 1, 1, 0]
    assert rand_index(c, c) == 1.0


def test_identical_up_to_renaming():
    a = [0, 0, 1, 1, 2]
    b = [7, 7, 3, 3, 5]
    assert adjusted_rand_index(a, b) == 1.0 and rand_index(a, b) == 1.0


def test_ari_against_exhaustive_permutations_n6():
    a, b = [1, 1, 1, 2, 2, 2], [1, 1, 2, 2, 3, 3]
    assert adjusted_rand_index(a, b) == pytest.approx(ari_exhaustive_permutations(a, b), abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_ari_against_exhaustive_permutations_small(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(4, 8))
    a, b = r.integers(0, 3, n), r.integers(0, 3, n)
    if len(set(a)) == 1 and len(set(b)) == 1:
        return
    expected = ari_exhaustive_permutations(a.tolist(), b.tolist())
    assert adjusted_rand_index(a, b) == pytest.approx(expected, abs=1e-12)


@given(st.integers(2, 50), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=80)
def test_closed_forms_equal_pair_enumeration(n, ka, kb, seed):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, ka, n), r.integers(0, kb, n)
    assert rand_index(a, b) == pytest.approx(rand_index_bruteforce(a, b), abs=1e-12)
    tp, tn, fp, fn = pair_counts_bruteforce(a, b)
    assert tp + tn + fp + fn == n * (n - 1) // 2
    degenerate = (len(set(a)) == len(set(b)) == 1) or (len(set(a)) == len(set(b)) == n)
    if not degenerate and (fp + fn) > 0:
        assert adjusted_rand_index(a, b) == pytest.approx(ari_permutation_oracle(a, b), abs=1e-12)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a), abs=1e-15)
    assert 0 <= rand_index(a, b) <= 1 and adjusted_rand_index(a, b) <= 1


def test_ari_random_labelings_average_zero():
    r = np.random.default_rng(12)
    values = [adjusted_rand_index(r.integers(0, 4, 200), r.integers(0, 4, 200)) for _ in range(1000)]
    assert abs(np.mean(values)) < 0.02


def test_degenerate_partitions():
    assert adjusted_rand_index([0, 0, 0], [5, 5, 5]) == 1.0
    assert adjusted_rand_index([0, 1, 2], [2, 0, 1]) == 1.0
    assert adjusted_rand_index([0, 0, 0], [0, 1, 2]) == 0.0


def test_ari_one_iff_identical():
    r = np.random.default_rng(2)
    for _ in range(200):
        a, b = r.integers(0, 3, 8), r.integers(0, 3, 8)
        same = len({(x, y) for x, y in zip(a, b)}) == len(set(a)) == len(set(b))
        assert (adjusted_rand_index(a, b) == 1.0) == same


def test_merging_agreed_clusters_never_reduces_true_positives():
    r = np.random.default_rng(8)
    for _ in range(50):
        ref = r.integers(0, 3, 20)
        c = ref * 2 + r.integers(0, 2, 20)  # refinement of ref
        merged = c // 2  # merge pairs that ref keeps together
        together = lambda x, y: sum(comb(int(v), 2) for v in contingency(x, y).ravel())
        assert together(ref, merged) >= together(ref, c)


def test_size_mismatch():
    with pytest.raises(SizeMismatch):
        rand_index([0, 1], [0, 1, 1])
    with pytest.raises(SizeMismatch):
        adjusted_rand_index([0], [0])


def test_contingency_and_agreement():
    table = contingency([0, 0, 1, 1], [1, 0, 1, 0])
    assert table.tolist() == [[1, 1], [1, 1]]
    ag = agreement([0, 0, 1, 1], [0, 0, 1, 1])
    assert (ag.ri, ag.ari) == (1.0, 1.0)


def test_every_pair_category_is_counted_once():
    for a in itertools.product(range(2), repeat=4):
        for b in itertools.product(range(2), repeat=4):
            assert rand_index(a, b) == pytest.approx(rand_index_bruteforce(a, b), abs=1e-15)
