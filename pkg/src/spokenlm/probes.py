"""Diagnostics: speaker-identity probing and unit-phone alignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import PhoneAlignment, Report, UnitSequence
from .errors import ValidationError
from .mlm import MaskedPredictionModel, ModelConfig, TrainSettings, pad_batch
from .mlm.train import Optimizer, learning_rate

log = logging.getLogger(__name__)

MIN_PER_SPEAKER = 10


@dataclass(frozen=True)
class ProbeSettings:
    epochs: int = 20
    model_dim: int = 32
    layers: int = 2
    heads: int = 2
    train: TrainSettings = field(default_factory=TrainSettings)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("probe needs at least one epoch")


@dataclass
class ProbeResult:
    test_accuracy: float
    best_epoch: int
    valid_curve: list[float]
    split_sizes: tuple[int, int, int]
    speakers: list[str]

    def to_report(self, label: str = "speaker_probe", hyperparameters: dict | None = None) -> Report:
        breakdown = {f"valid/epoch{e + 1:02d}": {"value": v, "weight": self.split_sizes[1]}
                     for e, v in enumerate(self.valid_curve)}
        hp = {"best_epoch": self.best_epoch, "split_sizes": list(self.split_sizes),
              "num_speakers": len(self.speakers)}
        hp.update(hyperparameters or {})
        return Report(label, self.test_accuracy, breakdown, hp)


def stratified_split(labels: Sequence[int], seed: int, fractions=(0.8, 0.1, 0.1)):
    """Per-class seeded shuffle, then 80/10/10 cut inside every class so all
    three parts see every speaker."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts: tuple[list, list, list] = ([], [], [])
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < MIN_PER_SPEAKER:
            raise ValidationError(f"speaker class {c} has {len(idx)} utterances, need >= {MIN_PER_SPEAKER}")
        idx = idx[rng.permutation(len(idx))]
        n_valid = max(1, int(round(fractions[1] * len(idx))))
        n_test = max(1, int(round(fractions[2] * len(idx))))
        parts[1].extend(idx[:n_valid])
        parts[2].extend(idx[n_valid : n_valid + n_test])
        parts[0].extend(idx[n_valid + n_test :])
    return tuple(np.sort(np.array(p, dtype=np.int64)) for p in parts)


def _accuracy(model, seqs, labels, mode, feature_dim, batch=64) -> float:
    correct = 0
    for lo in range(0, len(seqs), batch):
        xb, valid = pad_batch(seqs[lo : lo + batch], mode, feature_dim)
        _, _, logits = model.bos_loss(xb, labels[lo : lo + batch], valid, need_grad=False)
        correct += int((logits.argmax(1) == labels[lo : lo + batch]).sum())
    return correct / len(seqs)


def speaker_probe(sequences: Sequence, speakers: Sequence[str], seed: int, input_mode: str,
                  vocab_size: int = 0, feature_dim: int = 0, settings: ProbeSettings = ProbeSettings()) -> ProbeResult:
    """Train a small transformer classifier on the BOS position and return
    its test accuracy at the epoch with the best validation accuracy
    (earliest epoch on ties)."""
    if len(sequences) != len(speakers):
        raise ValidationError("sequences and speaker labels differ in length")
    names = sorted(set(speakers))
    if len(names) < 2:
        raise ValidationError("speaker probe needs at least 2 speakers")
    labels = np.array([names.index(s) for s in speakers], dtype=np.int64)
    ts = settings.train
    cfg = ModelConfig(input_mode=input_mode, target_mode="discrete", loss="NLL-l", vocab_size=vocab_size,
                      target_vocab_size=len(names), feature_dim=feature_dim, model_dim=settings.model_dim,
                      layers=settings.layers, heads=settings.heads, prepend_bos=True)
    # evaluation sees at most max_len frames of each utterance
    seqs = [np.asarray(s)[: cfg.max_len] for s in sequences]
    ss = np.random.SeedSequence(seed)
    split_seed, init_rng, batch_rng = ss.spawn(3)
    train_idx, valid_idx, test_idx = stratified_split(labels, int(split_seed.generate_state(1)[0]))
    model = MaskedPredictionModel.initialize(cfg, np.random.default_rng(init_rng)).astype(ts.dtype)
    batch_rng = np.random.default_rng(batch_rng)
    opt = Optimizer(model.params, ts)
    crop = ts.crop_len or cfg.max_len
    sub = lambda idx: ([seqs[i] for i in idx], labels[idx])  # noqa: E731
    valid_seqs, valid_labels = sub(valid_idx)
    best = (-1.0, 0, None)
    curve = []
    step = 0
    for epoch in range(settings.epochs):
        order = train_idx[batch_rng.permutation(len(train_idx))]
        for lo in range(0, len(order), ts.batch_size):
            picks = order[lo : lo + ts.batch_size]
            xs = []
            for i in picks:
                off = int(batch_rng.integers(len(seqs[i]) - crop + 1)) if len(seqs[i]) > crop else 0
                xs.append(seqs[i][off : off + crop])
            xb, valid = pad_batch(xs, input_mode, feature_dim)
            res, grads, _ = model.bos_loss(xb, labels[picks], valid)
            opt.step(model.params, grads, learning_rate(ts, step))
            step += 1
        acc = _accuracy(model, valid_seqs, valid_labels, input_mode, feature_dim)
        curve.append(acc)
        if acc > best[0]:
            best = (acc, epoch + 1, {k: v.copy() for k, v in model.params.items()})
        log.debug("probe epoch %d valid %.3f", epoch + 1, acc)
    final = MaskedPredictionModel(cfg, best[2])
    test_acc = _accuracy(final, *sub(test_idx), input_mode, feature_dim)
    return ProbeResult(test_acc, best[1], curve, (len(train_idx), len(valid_idx), len(test_idx)), names)


# --- unit / phone alignment ------------------------------------------------------


@dataclass
class AlignmentMatrix:
    counts: np.ndarray  # K x P integer co-occurrences
    probs: np.ndarray  # P(phone | unit); zero rows for unused units
    zero_rows: np.ndarray  # bool per unit
    row_order: np.ndarray
    phone_inventory: tuple[str, ...] = ()

    @property
    def purity(self) -> float:
        """Mean over used units of the most likely phone's probability."""
        used = ~self.zero_rows
        return float(self.probs[used].max(1).mean()) if used.any() else 0.0

    def to_tsv(self) -> str:
        phones = self.phone_inventory or tuple(str(p) for p in range(self.probs.shape[1]))
        lines = ["unit\tcount\tzero_row\t" + "\t".join(phones)]
        for u in self.row_order:
            row = "\t".join(f"{p:.6f}" for p in self.probs[u])
            lines.append(f"{u}\t{int(self.counts[u].sum())}\t{int(self.zero_rows[u])}\t{row}")
        return "\n".join(lines) + "\n"

    def to_report(self) -> Report:
        notes = [f"unused units: {np.flatnonzero(self.zero_rows).tolist()}"] if self.zero_rows.any() else []
        return Report("unit_phone_purity", self.purity, {},
                      {"units": int(self.counts.shape[0]), "phones": int(self.counts.shape[1]),
                       "frames": int(self.counts.sum()), "row_order": self.row_order.tolist()}, notes)


def unit_phone_alignment(units: Sequence, alignments: Sequence, vocab_size: int,
                         num_phones: int | None = None) -> AlignmentMatrix:
    """Tally unit/phone co-occurrences frame by frame and normalize rows."""
    if len(units) != len(alignments):
        raise ValidationError(f"{len(units)} unit sequences but {len(alignments)} alignments")
    inventory: tuple[str, ...] = ()
    if num_phones is None:
        if not alignments or not isinstance(alignments[0], PhoneAlignment):
            raise ValidationError("num_phones is required for raw label arrays")
        inventory = alignments[0].phone_inventory
        num_phones = len(inventory)
    counts = np.zeros((vocab_size, num_phones), dtype=np.int64)
    for n, (u, a) in enumerate(zip(units, alignments)):
        u = u.units if isinstance(u, UnitSequence) else np.asarray(u, dtype=np.int64)
        a = a.labels if isinstance(a, PhoneAlignment) else np.asarray(a, dtype=np.int64)
        if len(u) != len(a):
            raise ValidationError(f"utterance {n}: {len(u)} units but {len(a)} aligned frames")
        if len(u) and (u.min() < 0 or u.max() >= vocab_size or a.min() < 0 or a.max() >= num_phones):
            raise ValidationError(f"utterance {n}: unit or phone index out of range")
        np.add.at(counts, (u, a), 1)
    totals = counts.sum(1)
    zero = totals == 0
    probs = np.zeros(counts.shape)
    probs[~zero] = counts[~zero] / totals[~zero, None]
    return AlignmentMatrix(counts, probs, zero, order_rows(probs), inventory)


def order_rows(matrix) -> np.ndarray:
    """Dendrogram leaf order of average-linkage clustering (Euclidean).

    Ties between equal distances go to the pair whose smallest member rows
    come first; each merge puts the cluster holding the smaller row index
    on the left.
    """
    x = np.asarray(matrix.probs if isinstance(matrix, AlignmentMatrix) else matrix, dtype=np.float64)
    k = x.shape[0]
    if k <= 1:
        return np.arange(k)
    # row by row so identical rows are exactly 0 apart and the matrix is exactly symmetric
    dist = np.stack([np.sqrt(((x - row) ** 2).sum(1)) for row in x])
    np.fill_diagonal(dist, np.inf)
    leaves = {i: [i] for i in range(k)}  # slot i holds the cluster whose smallest row is i
    size = np.ones(k)
    for _ in range(k - 1):
        # row-major argmin of a symmetric matrix lands on i < j, lowest i then lowest j
        i, j = divmod(int(np.argmin(dist)), k)
        leaves[i] = leaves[i] + leaves.pop(j)
        merged = (size[i] * dist[i] + size[j] * dist[j]) / (size[i] + size[j])
        dist[i, :] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        size[i] += size[j]
    (root,) = leaves.values()
    return np.array(root, dtype=np.int64)


__all__ = [
    "AlignmentMatrix",
    "ProbeResult",
    "ProbeSettings",
    "order_rows",
    "speaker_probe",
    "stratified_split",
    "unit_phone_alignment",
]
