"""Zero-shot scoring: m-PLP, pair accuracies, pooled similarity, wSIMI."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import CORRECT_LABELS, FOIL_LABELS, EvalManifest, FeatureSequence, Report
from .errors import ValidationError
from .mlm import MaskedPredictionModel
from .quantizer import Codebook, assign

log = logging.getLogger(__name__)

PAPER_WINDOW_GRID_100HZ = (15, 25, 35, 45, 55)
PAPER_WINDOW_GRID_50HZ = (5, 10, 15, 20, 25)
PAPER_WINDOW_STEP = 5
POOLINGS = ("mean", "max", "min")


@dataclass(frozen=True, order=True)
class WindowSpec:
    size: int
    step: int = 5

    def __post_init__(self):
        if self.size < 1 or self.step < 1:
            raise ValidationError(f"window size and step must be >= 1, got {self.size}, {self.step}")


@dataclass(frozen=True)
class PoolingSpec:
    layer: int
    pooling: str = "mean"

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValidationError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.layer < 0:
            raise ValidationError("layer must be >= 0")

    def sort_key(self):
        return (self.layer, POOLINGS.index(self.pooling))


def window_starts(length: int, w: WindowSpec) -> list[tuple[int, int]]:
    """(start, size) of every window; a sequence shorter than the window
    gets a single window covering all of it."""
    if length < 1:
        raise ValidationError("sequence must not be empty")
    if length < w.size:
        return [(0, length)]
    return [(j * w.step, w.size) for j in range((length - w.size) // w.step + 1)]


def sequences_for(model_cfg, features: FeatureSequence, codebook: Codebook | None):
    """Model input and target arrays for one item."""
    frames = features.frames.astype(np.float64)
    units = None
    if "discrete" in (model_cfg.input_mode, model_cfg.target_mode):
        if codebook is None:
            raise ValidationError("a codebook is needed for discrete inputs or targets")
        units = assign(frames, codebook)
    inp = units if model_cfg.input_mode == "discrete" else frames
    tgt = units if model_cfg.target_mode == "discrete" else frames
    return inp, tgt


def m_plp(model: MaskedPredictionModel, inputs, targets, w: WindowSpec, negatives_seed: int = 0,
          normalize: bool = False, chunk: int = 64) -> float:
    """Sum over sliding masked windows of the per-position PLP of every
    masked target, one forward pass per window."""
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    t = len(inputs)
    if len(targets) != t:
        raise ValidationError(f"input length {t} differs from target length {len(targets)}")
    if t > model.config.max_len:
        raise ValidationError(f"sequence length {t} exceeds max_len {model.config.max_len}")
    windows = window_starts(t, w)
    terms: list[float] = []
    for lo in range(0, len(windows), chunk):
        part = windows[lo : lo + chunk]
        mask = np.zeros((len(part), t), dtype=bool)
        for row, (start, size) in enumerate(part):
            mask[row, start : start + size] = True
        xb = np.broadcast_to(inputs, (len(part),) + inputs.shape)
        yb = np.broadcast_to(targets, (len(part),) + targets.shape)
        res, _ = model.loss(xb, yb, mask, negatives_seed=negatives_seed, need_grad=False)
        terms.extend(res.plp.tolist())
    total = math.fsum(terms)
    return total / len(terms) if normalize else total


def _share(halves: int, n: int) -> float:
    """halves / (2n), divided on the majority side so that swapping which
    member is correct maps the result to exactly 1 - value."""
    if halves >= n:
        return halves / (2 * n)
    return 1.0 - (2 * n - halves) / (2 * n)


def pair_accuracy(manifest: EvalManifest, score: Callable[[str], float] | Mapping[str, float],
                  name: str = "pair_accuracy") -> Report:
    """Fraction of pairs where the correct member outscores the foil; ties count 0.5."""
    lookup = score.__getitem__ if isinstance(score, Mapping) else score
    per_subset: dict[str, list[int]] = {}
    outcomes = []
    for gid, members in sorted(manifest.groups().items()):
        if members[0].kind not in ("pair_a", "pair_b"):
            continue
        good = [m for m in members if m.category_label in CORRECT_LABELS]
        bad = [m for m in members if m.category_label in FOIL_LABELS]
        if len(good) != 1 or len(bad) != 1:
            raise ValidationError(f"group {gid!r} must have exactly one correct and one foil member")
        sg, sb = lookup(good[0].item_id), lookup(bad[0].item_id)
        halves = 2 if sg > sb else (0 if sg < sb else 1)
        outcomes.append(halves)
        per_subset.setdefault(good[0].subset_name, []).append(halves)
    if not outcomes:
        raise ValidationError("empty manifest: no pairs to score")
    breakdown = {k: {"value": _share(sum(v), len(v)), "weight": len(v)} for k, v in sorted(per_subset.items())}
    return Report(name, _share(sum(outcomes), len(outcomes)), breakdown)


def mplp_scorer(model: MaskedPredictionModel, sequences: Mapping[str, tuple], w: WindowSpec,
                normalize: bool = False) -> dict[str, float]:
    return {iid: m_plp(model, inp, tgt, w, normalize=normalize) for iid, (inp, tgt) in sorted(sequences.items())}


def pooled_representation(model: MaskedPredictionModel, inputs, p: PoolingSpec) -> np.ndarray:
    if p.layer > model.config.layers:
        raise ValidationError(f"layer {p.layer} exceeds model depth {model.config.layers}")
    inputs = np.asarray(inputs)
    mask = np.zeros((1, len(inputs)), dtype=bool)
    fwd = model.forward(inputs[None], mask)
    h = fwd.hidden[p.layer][0]
    if model.config.prepend_bos:
        h = h[1:]
    return {"mean": h.mean(0), "max": h.max(0), "min": h.min(0)}[p.pooling]


def cosine(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValidationError("zero pooled vector: cosine undefined")
    return float(np.dot(u, v) / (nu * nv))


def similarity_scores(model: MaskedPredictionModel, manifest: EvalManifest, sequences: Mapping[str, tuple],
                      p: PoolingSpec) -> dict[str, float]:
    """Cosine of pooled hidden states per simi group."""
    cache: dict[str, np.ndarray] = {}
    out = {}
    for gid, members in sorted(manifest.groups().items()):
        if members[0].kind != "simi":
            continue
        vecs = []
        for m in members:
            if m.item_id not in cache:
                cache[m.item_id] = pooled_representation(model, sequences[m.item_id][0], p)
            vecs.append(cache[m.item_id])
        out[gid] = cosine(*vecs)
    return out


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float((xc * xc).sum()) * float((yc * yc).sum()))
    if denom == 0:
        raise ValidationError("zero variance: Pearson correlation undefined")
    return max(-1.0, min(1.0, float((xc * yc).sum()) / denom))


def wsimi(subsets: Mapping[str, tuple[Sequence[float], Sequence[float]]]) -> Report:
    """Size-weighted mean of per-subset PCCs inside each domain (the part of
    the subset name before '/'), unweighted mean across domains, x100."""
    domains: dict[str, list[tuple[int, float]]] = {}
    breakdown = {}
    notes = []
    for name in sorted(subsets):
        model_scores, human = subsets[name]
        if len(model_scores) != len(human):
            raise ValidationError(f"subset {name!r}: score lists differ in length")
        if len(model_scores) < 2 or np.ptp(model_scores) == 0 or np.ptp(human) == 0:
            msg = f"subset {name!r} excluded: fewer than 2 pairs or zero variance"
            log.warning(msg)
            notes.append(msg)
            continue
        r = pearson(model_scores, human)
        breakdown[name] = {"value": 100.0 * r, "weight": len(model_scores)}
        domains.setdefault(name.split("/", 1)[0], []).append((len(model_scores), r))
    if not domains:
        raise ValidationError("no usable similarity subset")
    domain_scores = {}
    for dom, rows in sorted(domains.items()):
        sizes = np.array([n for n, _ in rows], dtype=np.float64)
        rs = np.array([r for _, r in rows])
        domain_scores[dom] = float((sizes * rs).sum() / sizes.sum())
        breakdown[f"domain:{dom}"] = {"value": 100.0 * domain_scores[dom], "weight": int(sizes.sum())}
    value = 100.0 * float(np.mean([domain_scores[d] for d in sorted(domain_scores)]))
    return Report("wsimi", value, breakdown, notes=notes)


def simi_report(model, manifest: EvalManifest, sequences, p: PoolingSpec) -> Report:
    scores = similarity_scores(model, manifest, sequences, p)
    subsets: dict[str, tuple[list, list]] = {}
    for gid, members in sorted(manifest.groups().items()):
        if gid not in scores:
            continue
        ms, hs = subsets.setdefault(members[0].subset_name, ([], []))
        ms.append(scores[gid])
        hs.append(members[0].human_score)
    if not subsets:
        raise ValidationError("empty manifest: no similarity pairs")
    report = wsimi(subsets)
    report.hyperparameters.update({"layer": p.layer, "pooling": p.pooling})
    return report


def tune_inference(model: MaskedPredictionModel, dev: Mapping[str, EvalManifest], sequences: Mapping[str, tuple],
                   windows: Iterable[WindowSpec] = (), poolings: Iterable[PoolingSpec] = ()) -> dict:
    """Exhaustive dev-set search. Pair metrics pick a WindowSpec (ties go to
    the smaller window, then the smaller step); similarity picks a
    PoolingSpec (ties go to the lower layer, then mean < max < min)."""
    windows = sorted(set(windows))
    poolings = sorted(set(poolings), key=PoolingSpec.sort_key)
    best: dict = {}
    for metric, manifest in sorted(dev.items()):
        if not len(manifest):
            raise ValidationError(f"empty dev set for {metric}")
        kind = manifest.items[0].kind
        if kind in ("pair_a", "pair_b"):
            if not windows:
                raise ValidationError("empty window grid")
            ids = {m.item_id for m in manifest}
            seqs = {k: sequences[k] for k in ids}
            results = [(pair_accuracy(manifest, mplp_scorer(model, seqs, w)).value, w) for w in windows]
            top = max(v for v, _ in results)
            best[metric] = {"spec": next(w for v, w in results if v == top), "dev_value": top,
                            "grid": [(w.size, w.step, v) for v, w in results]}
        elif kind == "simi":
            if not poolings:
                raise ValidationError("empty pooling grid")
            results = [(simi_report(model, manifest, sequences, p).value, p) for p in poolings]
            top = max(v for v, _ in results)
            best[metric] = {"spec": next(p for v, p in results if v == top), "dev_value": top,
                            "grid": [(p.layer, p.pooling, v) for v, p in results]}
        else:
            raise ValidationError(f"cannot tune inference on {kind!r} items")
    return best
