"""ABX phonetic discriminability over DTW-aligned angular distances."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import EvalManifest, FeatureSequence, Report
from .errors import ValidationError

# Path recovery preference: diagonal, then (1,0), then (0,1).
_STEPS = ((1, 1), (1, 0), (0, 1))


@dataclass(frozen=True)
class AbxTriplet:
    a_ref: str
    b_ref: str
    x_ref: str
    category_a: str
    category_b: str
    speaker_ab: str
    speaker_x: str
    subset: str = ""

    def __post_init__(self):
        if len({self.a_ref, self.b_ref, self.x_ref}) != 3:
            raise ValidationError(f"triplet refs must be distinct: {self.a_ref}, {self.b_ref}, {self.x_ref}")
        if self.category_a == self.category_b:
            raise ValidationError(f"A and B share category {self.category_a!r}")


def angular_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValidationError("angular distance is undefined for a zero vector")
    cos = float(np.dot(u, v) / (nu * nv))
    return math.acos(min(1.0, max(-1.0, cos)))


def angular_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise angular distances between the rows of ``x`` and ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ValidationError("angular distance is undefined for a zero frame")
    cos = (x / nx[:, None]) @ (y / ny[:, None]).T
    return np.arccos(np.clip(cos, -1.0, 1.0))


def dtw_path(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum total-cost monotone path from (0,0) to (T-1,S-1)."""
    t, s = cost.shape
    acc = np.full((t + 1, s + 1), np.inf)
    acc[0, 0] = 0.0
    c = cost.tolist()
    rows = acc.tolist()
    for i in range(1, t + 1):
        prev, cur, ci = rows[i - 1], rows[i], c[i - 1]
        for j in range(1, s + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = ci[j - 1] + best
    i, j = t, s
    path = [(t - 1, s - 1)]
    while (i, j) != (1, 1):
        options = [rows[i - di][j - dj] for di, dj in _STEPS]
        best = min(options)
        di, dj = _STEPS[options.index(best)]
        i, j = i - di, j - dj
        path.append((i - 1, j - 1))
    path.reverse()
    return rows[t][s], path


def dtw_distance(rx, ry) -> float:
    """Mean angular distance along the minimum-cost DTW path."""
    x = rx.frames if isinstance(rx, FeatureSequence) else np.asarray(rx)
    y = ry.frames if isinstance(ry, FeatureSequence) else np.asarray(ry)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValidationError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if len(x) < 1 or len(y) < 1:
        raise ValidationError("dtw needs non-empty sequences")
    cost = angular_matrix(x, y)
    _, path = dtw_path(cost)
    return float(sum(cost[i, j] for i, j in path) / len(path))


def triplets_from_manifest(manifest: EvalManifest, mode: str = "within") -> list[AbxTriplet]:
    """Expand abx groups (two items of one triphone, one of a contrasting
    triphone) into scored triplets.

    ``within``: A, B and X come from the same group, both orientations.
    ``across``: A and B from one group, X from another group of the same
    contrast spoken by a different speaker.
    """
    if mode not in ("within", "across"):
        raise ValidationError(f"unknown ABX mode {mode!r}")
    groups = [g for g in manifest.groups().values() if g[0].kind == "abx"]
    triplets = []
    if mode == "within":
        for g in groups:
            for a in g:
                for x in g:
                    if x is a or x.category_label != a.category_label:
                        continue
                    for b in g:
                        if b.category_label != a.category_label:
                            triplets.append(_make(a, b, x))
        return triplets
    by_contrast: dict[tuple, list] = {}
    for g in groups:
        key = (g[0].subset_name, tuple(sorted({m.category_label for m in g})))
        by_contrast.setdefault(key, []).append(g)
    for key in sorted(by_contrast):
        members = by_contrast[key]
        for g in members:
            for h in members:
                if h is g or h[0].speaker_id == g[0].speaker_id:
                    continue
                for a in g:
                    for b in g:
                        if b.category_label == a.category_label:
                            continue
                        for x in h:
                            if x.category_label == a.category_label:
                                triplets.append(_make(a, b, x))
    return triplets


def _make(a, b, x) -> AbxTriplet:
    return AbxTriplet(a.item_id, b.item_id, x.item_id, a.category_label, b.category_label,
                      a.speaker_id, x.speaker_id, a.subset_name)


def _score_chunk(args):
    pairs, features = args
    return [dtw_distance(features[p], features[q]) for p, q in pairs]


def _pair_distances(pairs: Sequence[tuple[str, str]], features: Mapping[str, FeatureSequence], jobs: int) -> dict:
    if jobs <= 1 or len(pairs) < 64:
        return {p: d for p, d in zip(pairs, _score_chunk((pairs, features)))}
    size = math.ceil(len(pairs) / jobs)
    chunks = [pairs[i : i + size] for i in range(0, len(pairs), size)]
    needed = [{k: features[k] for pq in ch for k in pq} for ch in chunks]
    with ProcessPoolExecutor(jobs) as pool:
        results = list(pool.map(_score_chunk, zip(chunks, needed)))
    out = {}
    for ch, res in zip(chunks, results):
        out.update(zip(ch, res))
    return out


def score_triplets(triplets: Sequence[AbxTriplet], features: Mapping[str, FeatureSequence], jobs: int = 1) -> np.ndarray:
    """Per-triplet error: 0 if X is closer to A, 1 if closer to B, 0.5 on ties."""
    for t in triplets:
        for ref in (t.a_ref, t.b_ref, t.x_ref):
            if ref not in features:
                raise ValidationError(f"unresolvable item ref {ref!r}")
    pairs = sorted({(t.a_ref, t.x_ref) for t in triplets} | {(t.b_ref, t.x_ref) for t in triplets})
    dist = _pair_distances(pairs, features, jobs)
    scores = np.empty(len(triplets))
    for n, t in enumerate(triplets):
        dax, dbx = dist[(t.a_ref, t.x_ref)], dist[(t.b_ref, t.x_ref)]
        scores[n] = 0.0 if dax < dbx else (1.0 if dax > dbx else 0.5)
    return scores


def abx_error(triplets: Sequence[AbxTriplet], features: Mapping[str, FeatureSequence], mode: str = "within",
              aggregation: str = "cells", jobs: int = 1) -> float:
    """Error rate in [0, 1].

    ``cells`` averages triplets within each (category pair, speaker context)
    cell and then averages cells; ``flat`` averages triplets directly.
    """
    if not triplets:
        raise ValidationError("no ABX triplets to score")
    scores = score_triplets(triplets, features, jobs)
    return aggregate(triplets, scores, mode, aggregation)


def aggregate(triplets: Sequence[AbxTriplet], scores: np.ndarray, mode: str, aggregation: str = "cells") -> float:
    if aggregation == "flat":
        return float(np.mean(scores))
    if aggregation != "cells":
        raise ValidationError(f"unknown ABX aggregation {aggregation!r}")
    cells: dict[tuple, list[float]] = {}
    for t, s in zip(triplets, scores):
        context = (t.speaker_ab,) if mode == "within" else (t.speaker_ab, t.speaker_x)
        cells.setdefault((t.category_a, t.category_b) + context, []).append(s)
    return float(np.mean([np.mean(cells[key]) for key in sorted(cells)]))


def abx_report(manifest: EvalManifest, features: Mapping[str, FeatureSequence], aggregation: str = "cells",
               jobs: int = 1, label: str = "abx") -> Report:
    """Within/across error per subset; the headline value is their mean."""
    breakdown = {}
    values = []
    for mode in ("within", "across"):
        triplets = triplets_from_manifest(manifest, mode)
        if not triplets:
            continue
        scores = score_triplets(triplets, features, jobs)
        subsets = sorted({t.subset for t in triplets})
        for subset in subsets:
            idx = [n for n, t in enumerate(triplets) if t.subset == subset]
            err = aggregate([triplets[n] for n in idx], scores[idx], mode, aggregation)
            breakdown[f"{mode}/{subset}"] = {"value": err, "weight": len(idx)}
            values.append(err)
    if not values:
        raise ValidationError("manifest holds no ABX triplets")
    return Report(f"{label}_error", float(np.mean(values)), breakdown,
                  {"aggregation": aggregation})
