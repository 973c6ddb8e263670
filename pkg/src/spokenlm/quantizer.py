"""k-means codebooks and frame quantization."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureSequence, UnitSequence
from .errors import CorruptionError, FormatError, ValidationError

CODEBOOK_MAGIC = b"ZCBK"
CODEBOOK_VERSION = 1
_CODEBOOK_HEADER = struct.Struct("<4sIII")

_CHUNK = 2048


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    training_inertia: float | None = None
    inertia_trace: tuple[float, ...] = field(default=(), compare=False)
    n_iter: int = field(default=0, compare=False)

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float32, copy=True)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValidationError(f"centroids must be K x D with K, D >= 1, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("centroids contain non-finite values")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _sq_dists_fast(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _nearest_exact(x: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid by direct differences; argmin keeps the lowest index on ties."""
    labels = np.empty(len(x), dtype=np.int64)
    dists = np.empty(len(x), dtype=np.float64)
    step = max(1, _CHUNK * 16 // max(1, c.shape[0]))
    for lo in range(0, len(x), step):
        block = x[lo : lo + step]
        d = ((block[:, None, :] - c[None, :, :]) ** 2).sum(-1)
        idx = d.argmin(1)
        labels[lo : lo + step] = idx
        dists[lo : lo + step] = d[np.arange(len(block)), idx]
    return labels, dists


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise ValidationError(f"only {j} distinct points, cannot seed {k} clusters")
        idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
        idx = min(idx, n - 1)
        while closest[idx] <= 0:  # cumsum rounding can land on a zero-mass point
            idx = (idx + 1) % n
        centers[j] = x[idx]
        closest = np.minimum(closest, ((x - centers[j]) ** 2).sum(1))
    return centers


def kmeans_fit(data, k: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-6) -> Codebook:
    """Lloyd's algorithm from a k-means++ start.

    ``inertia_trace[i]`` is the inertia of the assignment made at iteration
    ``i``; it never increases. Empty clusters are reseeded onto the point
    farthest from its current centroid.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("kmeans_fit needs a non-empty N x D matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError("kmeans_fit data contains non-finite values")
    n = x.shape[0]
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValidationError(f"need N >= K, got N={n}, K={k}")
    if k > 1 and len(np.unique(x, axis=0)) < k:
        raise ValidationError(f"K={k} exceeds the number of distinct points")

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, k, rng)
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists_fast(x, centers)
        labels = d.argmin(1)
        point_d = d[np.arange(n), labels]
        trace.append(float(point_d.sum()))

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        taken = set()
        for j in np.flatnonzero(~nz):
            # farthest point from its own centroid, measured against the updated centroids
            far = ((x - new[labels]) ** 2).sum(1)
            if taken:
                far[list(taken)] = -1.0
            idx = int(far.argmax())
            taken.add(idx)
            new[j] = x[idx]
            labels[idx] = j

        scale = np.linalg.norm(centers)
        shift = np.linalg.norm(new - centers) / (scale if scale > 0 else 1.0)
        centers = new
        if shift < tol:
            break

    final = np.asarray(centers, dtype=np.float32)
    _, dists = _nearest_exact(x, final.astype(np.float64))
    return Codebook(final, training_inertia=float(dists.sum()), inertia_trace=tuple(trace), n_iter=it)


def assign(data, cb: Codebook) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cb.dim:
        raise ValidationError(f"dimension mismatch: data {x.shape}, codebook D={cb.dim}")
    labels, _ = _nearest_exact(x, cb.centroids.astype(np.float64))
    return labels


def quantize(seq: FeatureSequence, cb: Codebook) -> UnitSequence:
    return UnitSequence(assign(seq.frames, cb), cb.k)


def dequantize(units: UnitSequence, cb: Codebook, frame_rate_hz: float = 100.0) -> FeatureSequence:
    idx = np.asarray(units.units)
    if idx.max() >= cb.k:
        raise ValidationError(f"unit index {idx.max()} out of range for K={cb.k}")
    return FeatureSequence(cb.centroids[idx], frame_rate_hz)


def write_codebook(cb: Codebook, path: str | Path):
    c = np.ascontiguousarray(cb.centroids, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_CODEBOOK_HEADER.pack(CODEBOOK_MAGIC, CODEBOOK_VERSION, *c.shape))
        fh.write(c.tobytes())


def read_codebook(path: str | Path) -> Codebook:
    raw = Path(path).read_bytes()
    if raw[:4] != CODEBOOK_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _CODEBOOK_HEADER.size:
        raise CorruptionError(f"{path}: truncated header")
    _, version, k, d = _CODEBOOK_HEADER.unpack_from(raw)
    if version != CODEBOOK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = raw[_CODEBOOK_HEADER.size :]
    if len(payload) != 4 * k * d:
        raise CorruptionError(f"{path}: payload has {len(payload)} bytes, header declares {4 * k * d}")
    return Codebook(np.frombuffer(payload, dtype="<f4").reshape(k, d))
