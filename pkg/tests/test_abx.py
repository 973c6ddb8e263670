import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spokenlm import abx
from spokenlm.data import EvalManifest, FeatureSequence, ManifestItem
from spokenlm.errors import ValidationError


def all_paths(t, s):
    """Every monotone path from (0, 0) to (t-1, s-1) with unit steps."""
    def rec(i, j):
        if (i, j) == (t - 1, s - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < t and j + dj < s:
                for rest in rec(i + di, j + dj):
                    yield [(i, j)] + rest
    return list(rec(0, 0))


def test_path_count_matches_delannoy_numbers():
    # D(2,2) = 13, D(3,2) = 25
    assert len(all_paths(3, 3)) == 13
    assert len(all_paths(4, 3)) == 25


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6))
def test_dtw_is_the_cheapest_path(t, s, seed):
    cost = np.random.default_rng(seed).random((t, s))
    total, path = abx.dtw_path(cost)
    best = min(sum(cost[i, j] for i, j in p) for p in all_paths(t, s))
    assert abs(total - best) <= 1e-12
    assert path[0] == (0, 0) and path[-1] == (t - 1, s - 1)
    assert all((i2 - i1, j2 - j1) in ((1, 1), (1, 0), (0, 1)) for (i1, j1), (i2, j2) in zip(path, path[1:]))
    assert abs(sum(cost[i, j] for i, j in path) - total) <= 1e-12


def test_dtw_tie_prefers_diagonal():
    _, path = abx.dtw_path(np.zeros((3, 3)))
    assert path == [(0, 0), (1, 1), (2, 2)]


def test_angular_distance():
    assert abx.angular_distance([1, 0], [0, 2]) == pytest.approx(math.pi / 2)
    assert abx.angular_distance([1, 1], [2, 2]) == pytest.approx(0.0, abs=1e-7)
    assert abx.angular_distance([1, 0], [-1, 0]) == pytest.approx(math.pi)
    with pytest.raises(ValidationError):
        abx.angular_distance([0, 0], [1, 0])
    x = np.random.default_rng(0).normal(size=(4, 3))
    m = abx.angular_matrix(x, x[::-1])
    for i, j in itertools.product(range(4), range(4)):
        assert m[i, j] == pytest.approx(abx.angular_distance(x[i], x[::-1][j]), abs=1e-7)


def test_dtw_distance_is_path_mean_and_symmetric_in_identical_input():
    x = np.random.default_rng(1).normal(size=(5, 3))
    assert abx.dtw_distance(x, x) == pytest.approx(0.0, abs=1e-7)
    assert abx.dtw_distance(x, np.repeat(x, 2, axis=0)) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ValidationError):
        abx.dtw_distance(x, np.ones((2, 4)))


def _abx_manifest(groups=2):
    items = []
    for g, spk in ((g, f"s{g % 2 + 1}") for g in range(groups)):
        for n, cat in enumerate(("p-a-q", "p-a-q", "p-b-q")):
            iid = f"g{g}-{n}"
            items.append(ManifestItem(iid, f"{iid}.zfea", "abx", spk, cat, f"g{g}", "clean"))
    return EvalManifest(tuple(items))


def test_triplet_expansion():
    man = _abx_manifest()
    within = abx.triplets_from_manifest(man, "within")
    # per group: A and X the two same-category items in both orientations, B the odd one
    assert len(within) == 4
    assert {(t.a_ref, t.x_ref, t.b_ref) for t in within if t.a_ref.startswith("g0")} == {
        ("g0-0", "g0-1", "g0-2"), ("g0-1", "g0-0", "g0-2")}
    across = abx.triplets_from_manifest(man, "across")
    # per ordered group pair: A from the doubled category has 2 matching X
    # in the other group, A from the single category has 1; 2 A's of each kind
    assert len(across) == 2 * (2 * 2 + 2 * 1)
    assert all(t.speaker_ab != t.speaker_x for t in across)
    with pytest.raises(ValidationError):
        abx.triplets_from_manifest(man, "sideways")


def test_scores_and_cells():
    man = _abx_manifest()
    feats = {m.item_id: FeatureSequence(np.array([[1.0, 0.0]] * 3 if m.category_label == "p-a-q" else [[0.0, 1.0]] * 3))
             for m in man}
    rep = abx.abx_report(man, feats)
    assert rep.value == 0.0
    assert set(rep.breakdown) == {"within/clean", "across/clean"}
    # everything identical: every triplet ties
    same = {k: FeatureSequence(np.ones((2, 2))) for k in feats}
    assert abx.abx_report(man, same).value == 0.5
    triplets = abx.triplets_from_manifest(man, "within")
    scores = np.array([0.0, 1.0, 1.0, 1.0])
    # cells: (a, b, speaker) -> g0 mean 0.5, g1 mean 1.0
    assert abx.aggregate(triplets, scores, "within", "cells") == 0.75
    assert abx.aggregate(triplets, scores, "within", "flat") == 0.75
    with pytest.raises(ValidationError):
        abx.score_triplets(triplets, {})


def test_jobs_do_not_change_scores():
    rng = np.random.default_rng(2)
    man = _abx_manifest(8)  # enough distinct pairs to go through the worker pool
    feats = {m.item_id: FeatureSequence(rng.normal(size=(int(rng.integers(2, 6)), 3))) for m in man}
    triplets = abx.triplets_from_manifest(man, "within") + abx.triplets_from_manifest(man, "across")
    a = abx.score_triplets(triplets, feats, jobs=1)
    b = abx.score_triplets(triplets, feats, jobs=2)
    assert np.array_equal(a, b)
