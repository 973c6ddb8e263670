import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spokenlm import scoring
from spokenlm.data import EvalManifest, ManifestItem
from spokenlm.errors import ValidationError
from spokenlm.mlm import MaskedPredictionModel, ModelConfig


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 60), st.integers(1, 12), st.integers(1, 6))
def test_window_starts(length, size, step):
    wins = scoring.window_starts(length, scoring.WindowSpec(size, step))
    if length < size:
        assert wins == [(0, length)]
        return
    assert wins[0] == (0, size)
    assert all(s + w <= length for s, w in wins)
    assert len(wins) == (length - size) // step + 1
    assert all(b[0] - a[0] == step for a, b in zip(wins, wins[1:]))


def _tiny(loss="NLL-l", target="discrete", seed=0, **kw):
    cfg = ModelConfig(input_mode="discrete", target_mode=target, loss=loss, vocab_size=3, feature_dim=2,
                      model_dim=4, layers=1, heads=2, max_len=10, **kw)
    return MaskedPredictionModel.initialize(cfg, seed)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10**6))
def test_mplp_equals_sum_of_single_window_passes(t, size, step, seed):
    model = _tiny(loss="NLL-e", seed=seed % 7)
    rng = np.random.default_rng(seed)
    x, y = rng.integers(0, 3, t), rng.integers(0, 3, t)
    w = scoring.WindowSpec(size, step)
    want = 0.0
    count = 0
    for start, n in scoring.window_starts(t, w):
        mask = np.zeros((1, t), dtype=bool)
        mask[0, start : start + n] = True
        res, _ = model.loss(x[None], y[None], mask, need_grad=False)
        want += float(res.plp.sum())
        count += n
    assert scoring.m_plp(model, x, y, w, chunk=2) == pytest.approx(want, abs=1e-9)
    assert scoring.m_plp(model, x, y, w, normalize=True) == pytest.approx(want / count, abs=1e-9)


def test_mplp_errors():
    model = _tiny()
    with pytest.raises(ValidationError):
        scoring.m_plp(model, np.zeros(11, int), np.zeros(11, int), scoring.WindowSpec(2, 1))
    with pytest.raises(ValidationError):
        scoring.m_plp(model, np.zeros(3, int), np.zeros(4, int), scoring.WindowSpec(2, 1))
    with pytest.raises(ValidationError):
        scoring.WindowSpec(0, 1)
    with pytest.raises(ValidationError):
        scoring.PoolingSpec(0, "median")


def _pairs(n, swap=False, subset=lambda i: "s"):
    items = []
    good, bad = ("word", "nonword") if not swap else ("nonword", "word")
    for i in range(n):
        items.append(ManifestItem(f"g{i}", f"g{i}.zfea", "pair_a", "0", good, f"p{i}", subset(i)))
        items.append(ManifestItem(f"b{i}", f"b{i}.zfea", "pair_b", "0", bad, f"p{i}", subset(i)))
    return EvalManifest(tuple(items))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_pair_accuracy_label_swap_is_exact(rows):
    scores = {}
    for i, (g, b) in enumerate(rows):
        scores[f"g{i}"], scores[f"b{i}"] = float(g), float(b)
    a = scoring.pair_accuracy(_pairs(len(rows)), scores).value
    b = scoring.pair_accuracy(_pairs(len(rows), swap=True), scores).value
    assert b == 1.0 - a
    wins = sum(g > b_ for g, b_ in rows) + 0.5 * sum(g == b_ for g, b_ in rows)
    assert a == pytest.approx(wins / len(rows), abs=1e-15)


def test_pair_accuracy_ties_and_subsets():
    man = _pairs(4, subset=lambda i: "short" if i < 2 else "long")
    rep = scoring.pair_accuracy(man, lambda _: 0.0)
    assert rep.value == 0.5
    rep = scoring.pair_accuracy(man, {"g0": 1, "b0": 0, "g1": 1, "b1": 0, "g2": 0, "b2": 1, "g3": 2, "b3": 2})
    assert rep.value == 0.625
    assert rep.breakdown == {"long": {"value": 0.25, "weight": 2}, "short": {"value": 1.0, "weight": 2}}
    bad = EvalManifest((ManifestItem("a", "a", "pair_a", "0", "word", "g", "s"),
                        ManifestItem("b", "b", "pair_b", "0", "word", "g", "s")))
    with pytest.raises(ValidationError):
        scoring.pair_accuracy(bad, lambda _: 0.0)
    with pytest.raises(ValidationError, match="empty manifest"):
        scoring.pair_accuracy(EvalManifest(()), lambda _: 0.0)


def test_pearson_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.normal(size=12), rng.normal(size=12)
        assert scoring.pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)
    with pytest.raises(ValidationError):
        scoring.pearson([1, 1, 1], [1, 2, 3])


def test_wsimi_weighting():
    # domain a: sizes 10 and 30 with PCC 0 and 1 -> 0.75; domain b: PCC -1 -> mean of domains
    x0 = np.array([1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 2.0, -2.0, 2.0, -2.0])
    y0 = np.array([1.0, 1.0, -1.0, -1.0, 3.0, -3.0, 1.0, 1.0, -1.0, -1.0])
    y1 = np.arange(30.0)
    rep = scoring.wsimi({"a/x": (x0, y0), "a/y": (y1, y1), "b/z": (-y1[:5], y1[:5])})
    assert rep.breakdown["domain:a"]["value"] == 75.0
    assert rep.value == pytest.approx(100 * (0.75 - 1.0) / 2)
    rep = scoring.wsimi({"a/x": ([1, 1, 1], [1, 2, 3]), "a/y": (y1, y1)})
    assert rep.value == 100.0 and rep.notes
    with pytest.raises(ValidationError):
        scoring.wsimi({"a/x": ([1.0], [2.0])})


def _simi_manifest(n=6):
    items = []
    for g in range(n):
        for j in range(2):
            items.append(ManifestItem(f"s{g}-{j}", "", "simi", "0", f"w{g}", f"g{g}", "dom/x", g / n))
    return EvalManifest(tuple(items))


def test_similarity_and_pooling():
    model = _tiny()
    man = _simi_manifest()
    rng = np.random.default_rng(3)
    seqs = {m.item_id: (rng.integers(0, 3, 5), None) for m in man}
    p = scoring.PoolingSpec(1, "max")
    scores = scoring.similarity_scores(model, man, seqs, p)
    for g in range(6):
        u = scoring.pooled_representation(model, seqs[f"s{g}-0"][0], p)
        v = scoring.pooled_representation(model, seqs[f"s{g}-1"][0], p)
        assert scores[f"g{g}"] == pytest.approx(float(u @ v / np.linalg.norm(u) / np.linalg.norm(v)))
    h = model.forward(seqs["s0-0"][0][None], np.zeros((1, 5), bool)).hidden[1][0]
    assert scoring.pooled_representation(model, seqs["s0-0"][0], scoring.PoolingSpec(1, "min")).tolist() == \
        h.min(0).tolist()
    with pytest.raises(ValidationError):
        scoring.pooled_representation(model, seqs["s0-0"][0], scoring.PoolingSpec(2))


def test_tuning_tie_breaks():
    model = _tiny()
    man = _pairs(3)
    seqs = {m.item_id: (np.array([0, 1, 2]), np.array([0, 1, 2])) for m in man}
    grid = [scoring.WindowSpec(3, 2), scoring.WindowSpec(2, 2), scoring.WindowSpec(2, 1)]
    best = scoring.tune_inference(model, {"swuggy": man}, seqs, windows=grid)["swuggy"]
    assert best["spec"] == scoring.WindowSpec(2, 1) and best["dev_value"] == 0.5
    simi = _simi_manifest()
    same = {m.item_id: (np.array([0, 1, 2]), None) for m in simi}
    # identical inputs give cosine 1 everywhere: zero variance, so a distinct pair is needed
    same["s0-1"] = (np.array([2, 2, 2]), None)
    pools = [scoring.PoolingSpec(1, "min"), scoring.PoolingSpec(0, "max"), scoring.PoolingSpec(0, "mean")]
    res = scoring.tune_inference(model, {"simi": simi}, same, poolings=pools)["simi"]
    top = max(v for _, _, v in res["grid"])
    first = next((layer, pool) for layer, pool, v in res["grid"] if v == top)
    assert (res["spec"].layer, res["spec"].pooling) == first
    assert [(layer, pool) for layer, pool, _ in res["grid"]] == [(0, "mean"), (0, "max"), (1, "min")]
    with pytest.raises(ValidationError):
        scoring.tune_inference(model, {"swuggy": man}, seqs, windows=[])
    with pytest.raises(ValidationError):
        scoring.tune_inference(model, {"swuggy": EvalManifest(())}, seqs, windows=grid)
    assert math.isfinite(res["dev_value"])
