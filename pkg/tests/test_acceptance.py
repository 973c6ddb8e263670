"""The ten acceptance criteria, each at its stated tolerance.

Every test prints one pass/fail line; the lines are repeated in the
"acceptance criteria" section of the pytest summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from spokenlm import abx, pipeline, scoring
from spokenlm.cli import main as cli_main
from spokenlm.data import EvalManifest, FeatureSequence, ManifestItem
from spokenlm.mlm import LOSSES, MaskedPredictionModel, ModelConfig, gradient_check
from spokenlm.quantizer import assign, kmeans_fit, write_codebook
from spokenlm.synth import CorpusConfig, generate_corpus, write_corpus

pytestmark = pytest.mark.acceptance


def _corpus_dir(tmp_path_factory, name, **overrides):
    cfg = pipeline.load_config(overrides=[f"corpus.{k}={v}" for k, v in overrides.items()])
    out = tmp_path_factory.mktemp(name)
    write_corpus(generate_corpus(pipeline.corpus_config(cfg), 0), out)
    return cfg, pipeline.read_corpus(out)


@pytest.fixture(scope="module")
def default_corpus(tmp_path_factory):
    return _corpus_dir(tmp_path_factory, "default")


# 1 -----------------------------------------------------------------------------


def test_gradient_fidelity(criterion):
    rng = np.random.default_rng(0)
    worst = {}
    slowest = 0.0
    for loss in LOSSES:
        target = "discrete" if loss in ("NLL-l", "NLL-e") else "continuous"
        for mode in ("discrete", "continuous"):
            cfg = ModelConfig(input_mode=mode, target_mode=target, loss=loss, vocab_size=5, feature_dim=3,
                              model_dim=8, layers=2, heads=2, ffn_dim=16, nce_negatives=4, max_len=12)
            model = MaskedPredictionModel.initialize(cfg, 7)
            assert model.num_parameters <= 2000
            x = rng.integers(0, 5, (2, 7)) if mode == "discrete" else rng.normal(size=(2, 7, 3))
            y = rng.integers(0, 5, (2, 7)) if target == "discrete" else rng.normal(size=(2, 7, 3))
            mask = np.zeros((2, 7), dtype=bool)
            mask[:, 1:4] = True
            t0 = time.perf_counter()
            res = gradient_check(model, x, y, mask)
            slowest = max(slowest, time.perf_counter() - t0)
            worst[f"{loss}/{mode}"] = res.max_relative_deviation
    top = max(worst.values())
    ok = top < 1e-3 and slowest < 60
    criterion(1, "gradient fidelity", ok, f"max rel dev {top:.2e} (<1e-3), slowest check {slowest:.1f}s (<60s)")
    assert ok, worst


# 2 -----------------------------------------------------------------------------


def _brute_force_dtw(cost):
    t, s = cost.shape
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        acc += cost[i, j]
        if (i, j) == (t - 1, s - 1):
            best = min(best, acc)
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < t and j + dj < s:
                walk(i + di, j + dj, acc)

    walk(0, 0, 0.0)
    return best


def test_dtw_oracle_equivalence(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        t, s = rng.integers(1, 7, size=2)
        x, y = rng.normal(size=(t, 3)), rng.normal(size=(s, 3))
        cost = abx.angular_matrix(x, y)
        total, path = abx.dtw_path(cost)
        worst = max(worst, abs(total - _brute_force_dtw(cost)), abs(sum(cost[i, j] for i, j in path) - total))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 60
    criterion(2, "DTW oracle", ok, f"1000 pairs, max |dp - brute force| {worst:.1e} (<=1e-9), {elapsed:.1f}s")
    assert ok


# 3 -----------------------------------------------------------------------------


def _hand_mplp(model, x, y, size, step):
    t = len(x)
    starts = [0] if t < size else list(range(0, t - size + 1, step))
    total = 0.0
    for start in starts:
        mask = np.zeros(t, dtype=bool)
        mask[start : start + size] = True
        logits = model.forward(x[None], mask[None]).outputs[0]
        for pos in np.flatnonzero(mask):
            row = logits[pos]
            top = row.max()
            total += row[y[pos]] - (top + math.log(sum(math.exp(v - top) for v in row)))
    return total


def test_mplp_oracle_equivalence(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    for case in range(100):
        k = int(rng.integers(2, 4))
        t = int(rng.integers(1, 7))
        size, step = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        cfg = ModelConfig(input_mode="discrete", target_mode="discrete", loss="NLL-l", vocab_size=k, model_dim=4,
                          layers=1, heads=2, max_len=8)
        model = MaskedPredictionModel.initialize(cfg, case)
        x, y = rng.integers(0, k, t), rng.integers(0, k, t)
        got = scoring.m_plp(model, x, y, scoring.WindowSpec(size, step))
        worst = max(worst, abs(got - _hand_mplp(model, x, y, size, step)))
    ok = worst <= 1e-9
    criterion(3, "m-PLP oracle", ok, f"100 cases, max |m-PLP - hand sum| {worst:.1e} (<=1e-9)")
    assert ok


# 4 -----------------------------------------------------------------------------


def test_abx_calibration(tmp_path_factory, default_corpus, criterion):
    # noise-free and speaker-free: every item equals its triphone's means
    _, clean = _corpus_dir(tmp_path_factory, "noise_free", emission_scale=0.0, offset_scale=0.0)
    man = clean.manifest("abx_dev")
    feats = {m.item_id: clean.item_features(m) for m in man}
    zero = abx.abx_report(man, feats)
    zero_ok = zero.value == 0.0 and all(r["value"] == 0.0 for r in zero.breakdown.values())

    _, corpus = default_corpus
    man = corpus.manifest("abx_dev")
    ids = [m.item_id for m in man]
    perm = np.random.default_rng(4).permutation(len(ids))
    shuffled = {ids[i]: corpus.item_features(man.items[j]) for i, j in enumerate(perm)}
    triplets = abx.triplets_from_manifest(man, "within") + abx.triplets_from_manifest(man, "across")
    err = float(abx.score_triplets(triplets, shuffled).mean())
    shuffle_ok = len(triplets) >= 1000 and abs(err - 0.5) <= 0.05
    ok = zero_ok and shuffle_ok
    criterion(4, "ABX calibration", ok, f"noise-free error {zero.value:.4f} (=0); shuffled error {err:.4f} "
              f"over {len(triplets)} triplets (0.5 +- 0.05)")
    assert ok, zero.breakdown


# 5 -----------------------------------------------------------------------------


def test_kmeans_battery(tmp_path, criterion):
    bad = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        centres = rng.normal(0, 3, size=(6, 4))
        x = centres[rng.integers(0, 6, 300)] + rng.normal(size=(300, 4))
        k = int(rng.integers(2, 12))
        cb = kmeans_fit(x, k, seed=seed)
        trace = np.array(cb.inertia_trace)
        if np.any(np.diff(trace) > 0):
            bad.append(f"seed {seed}: inertia rose")
        d = ((x[:, None, :] - cb.centroids.astype(np.float64)[None]) ** 2).sum(-1)
        labels = assign(x, cb)
        best = d.min(1)
        if np.any(d[np.arange(len(x)), labels] > best) or np.any(labels != (d == best[:, None]).argmax(1)):
            bad.append(f"seed {seed}: assignment not the lowest-index nearest centroid")
        again = kmeans_fit(x, k, seed=seed)
        write_codebook(cb, tmp_path / "a.zcbk")
        write_codebook(again, tmp_path / "b.zcbk")
        if cb.centroids.tobytes() != again.centroids.tobytes() or \
                (tmp_path / "a.zcbk").read_bytes() != (tmp_path / "b.zcbk").read_bytes():
            bad.append(f"seed {seed}: not byte-deterministic")
    ok = not bad
    criterion(5, "k-means battery", ok, "50 seeds: monotone inertia, nearest-centroid, byte-exact"
              if ok else "; ".join(bad[:3]))
    assert ok


# 6 -----------------------------------------------------------------------------


def _pair_accuracy_for(cfg, corpus, cb, mode, loss, seed):
    mcfg = pipeline.model_config({**cfg, "model": dict(cfg["model"], input_mode=mode, target_mode=mode, loss=loss)},
                                 vocab_size=cb.k, feature_dim=int(corpus.meta["config"]["dim"]))
    model = pipeline.train_model(cfg, corpus, cb, mcfg, seed).model
    return pipeline.evaluate_pairs(model, corpus, cb, "swuggy", pipeline.windows(cfg)).value


def test_discrete_beats_continuous(default_corpus, criterion):
    cfg, corpus = default_corpus
    t0 = time.perf_counter()
    cb = pipeline.fit_codebook(corpus, cfg, 20)
    seeds = (1, 2, 3)
    disc = [_pair_accuracy_for(cfg, corpus, cb, "discrete", "NLL-e", s) for s in seeds]
    cont = [_pair_accuracy_for(cfg, corpus, cb, "continuous", "L2", s) for s in seeds]
    elapsed = time.perf_counter() - t0
    gap = float(np.mean(disc) - np.mean(cont))
    ok = gap >= 0.05 and elapsed < 30 * 60
    criterion(6, "disc/disc > cont/cont", ok, f"spot-the-word disc {np.mean(disc):.3f} {np.round(disc, 3).tolist()} "
              f"vs cont {np.mean(cont):.3f} {np.round(cont, 3).tolist()}, gap {100 * gap:.1f} pts (>=5), "
              f"{elapsed / 60:.1f} min (<30)")
    assert ok


# 7 -----------------------------------------------------------------------------


def test_speaker_probe_trend(tmp_path_factory, criterion):
    # 8 phones x 32 speakers: the K grid runs from below the phone count up to
    # phone x speaker resolution
    cfg, corpus = _corpus_dir(tmp_path_factory, "probe", num_phones=8, num_speakers=32)
    seeds = (1, 2, 3, 4, 5)
    acc = {"cont": np.mean([pipeline.speaker_probe_report(corpus, cfg, None, s).value for s in seeds])}
    for k in (8, 16, 64, 256):
        cb = pipeline.fit_codebook(corpus, cfg, k)
        acc[k] = np.mean([pipeline.speaker_probe_report(corpus, cfg, cb, s).value for s in seeds])
    curve = [acc[k] for k in (8, 16, 64, 256)]
    gap = acc["cont"] - acc[8]
    ok = gap >= 0.20 and all(b >= a for a, b in zip(curve, curve[1:]))
    criterion(7, "speaker probe", ok, f"continuous {acc['cont']:.3f}; K=8/16/64/256 "
              f"{' / '.join(f'{v:.3f}' for v in curve)}; gap {100 * gap:.1f} pts (>=20), non-decreasing in K")
    assert ok


# 8 -----------------------------------------------------------------------------


def test_u_curve(default_corpus, criterion):
    cfg, corpus = default_corpus
    assert corpus.meta["config"]["num_phones"] == 20
    seeds = (1, 2, 3)
    acc = {}
    for k in (4, 8, 16, 64, 256):
        cb = pipeline.fit_codebook(corpus, cfg, k)
        acc[k] = float(np.mean([_pair_accuracy_for(cfg, corpus, cb, "discrete", "NLL-e", s) for s in seeds]))
    best_k = max((8, 16, 64), key=lambda k: acc[k])
    ok = acc[best_k] > acc[4] and acc[best_k] > acc[256]
    criterion(8, "U-curve", ok, "spot-the-word " + ", ".join(f"K={k}: {v:.3f}" for k, v in acc.items())
              + f"; best interior K={best_k}")
    assert ok


# 9 -----------------------------------------------------------------------------


def _pairs(scores_good, scores_bad, swap=False):
    items = []
    for n, _ in enumerate(scores_good):
        good, bad = ("word", "nonword") if not swap else ("nonword", "word")
        items.append(ManifestItem(f"g{n}", f"g{n}.zfea", "pair_a", "0", good, f"p{n}", "s"))
        items.append(ManifestItem(f"b{n}", f"b{n}.zfea", "pair_b", "0", bad, f"p{n}", "s"))
    return EvalManifest(tuple(items))


def test_metric_arithmetic(criterion):
    rng = np.random.default_rng(9)
    # PCC 0 on 10 pairs and PCC 1 on 30 pairs in one domain -> (10*0 + 30*1) / 40
    x0 = np.array([1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 2.0, -2.0, 2.0, -2.0])
    y0 = np.array([1.0, 1.0, -1.0, -1.0, 3.0, -3.0, 1.0, 1.0, -1.0, -1.0])
    assert scoring.pearson(x0, y0) == 0.0
    y1 = rng.normal(size=30)
    w = scoring.wsimi({"dom/a": (x0, y0), "dom/b": (2.0 * y1 + 1.0, y1)}).value
    wsimi_ok = w == 75.0

    anti_ok = True
    for _ in range(50):
        n = int(rng.integers(1, 20))
        good, bad = rng.integers(0, 3, n).astype(float), rng.integers(0, 3, n).astype(float)
        scores = {**{f"g{i}": good[i] for i in range(n)}, **{f"b{i}": bad[i] for i in range(n)}}
        a = scoring.pair_accuracy(_pairs(good, bad), scores).value
        b = scoring.pair_accuracy(_pairs(good, bad, swap=True), scores).value
        anti_ok &= b == 1.0 - a
    tie = scoring.pair_accuracy(_pairs(range(7), range(7)), lambda _: 1.0).value
    ok = wsimi_ok and anti_ok and tie == 0.5
    criterion(9, "metric arithmetic", ok, f"wSIMI {w!r} (=75), label-swap a -> 1-a {anti_ok}, all-tie {tie!r} (=0.5)")
    assert ok


# 10 ----------------------------------------------------------------------------

SMOKE = [
    "seed=5", "corpus.num_utterances=400", "corpus.abx_groups=40", "corpus.word_pairs=40",
    "corpus.sentence_pairs=40", "corpus.simi_pairs=30", "train.steps=200", "probe.epochs=3",
]


def _smoke_pipeline(root):
    sets = list(itertools.chain.from_iterable(("--set", s) for s in SMOKE))
    c, u, m, r = root / "corpus", root / "units", root / "model.zmlm", root / "reports"
    steps = [
        ["gen", "--out", str(c)],
        ["quantize", "--corpus", str(c), "--out", str(u)],
        ["train", "--corpus", str(c), "--codebook", str(u / "codebook.zcbk"), "--out", str(m)],
        ["eval-abx", "--corpus", str(c), "--representation", "units", "--codebook", str(u / "codebook.zcbk"),
         "--report", str(r / "abx")],
        ["eval-pairs", "--corpus", str(c), "--model", str(m), "--codebook", str(u / "codebook.zcbk"),
         "--task", "swuggy", "--report", str(r / "swuggy")],
        ["eval-pairs", "--corpus", str(c), "--model", str(m), "--codebook", str(u / "codebook.zcbk"),
         "--task", "sblimp", "--report", str(r / "sblimp")],
        ["eval-simi", "--corpus", str(c), "--model", str(m), "--codebook", str(u / "codebook.zcbk"),
         "--report", str(r / "simi")],
        ["probe-speaker", "--corpus", str(c), "--codebook", str(u / "codebook.zcbk"), "--report", str(r / "probe")],
    ]
    for argv in steps:
        assert cli_main(argv[:1] + sets + argv[1:]) == 0, argv
    outputs = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix != ".zfea")
    return {p.relative_to(root): p.read_bytes() for p in outputs}


def test_end_to_end_determinism(tmp_path, criterion):
    t0 = time.perf_counter()
    first = _smoke_pipeline(tmp_path / "run1")
    elapsed = time.perf_counter() - t0
    second = _smoke_pipeline(tmp_path / "run2")
    reports = [p for p in first if p.suffix in (".json", ".tsv", ".txt") and "corpus" not in p.parts[:1]]
    differ = [str(p) for p in first if first[p] != second.get(p)]
    ok = not differ and set(first) == set(second) and elapsed < 300
    criterion(10, "end-to-end determinism", ok, f"{len(first)} output files ({len(reports)} report files) "
              f"byte-identical across two runs: {not differ}; smoke pipeline {elapsed:.0f}s (<300s)")
    assert ok, differ
