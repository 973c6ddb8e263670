"""Domain types and their on-disk formats.

Feature files are binary (``ZFEA``), unit and alignment files are plain
text with one utterance per line plus a JSON sidecar, and evaluation
manifests are tab-separated with a header row.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptionError, FormatError, ValidationError

FEATURE_MAGIC = b"ZFEA"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIIIf")

MANIFEST_FIELDS = (
    "item_id",
    "file_ref",
    "kind",
    "speaker_id",
    "category_label",
    "group_id",
    "subset_name",
    "human_score",
)
ITEM_KINDS = frozenset({"abx", "pair_a", "pair_b", "simi"})
CORRECT_LABELS = frozenset({"word", "grammatical"})
FOIL_LABELS = frozenset({"nonword", "ungrammatical"})


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class FeatureSequence:
    """T x D float32 frames at a fixed frame rate."""

    frames: np.ndarray
    frame_rate_hz: float = 100.0

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float32, copy=True)
        if frames.ndim != 2:
            raise ValidationError(f"frames must be 2-D, got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValidationError(f"frames must be at least 1x1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValidationError("frames contain non-finite values")
        rate = float(np.float32(self.frame_rate_hz))
        if not math.isfinite(rate) or rate <= 0:
            raise ValidationError(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")
        object.__setattr__(self, "frames", _frozen(frames))
        object.__setattr__(self, "frame_rate_hz", rate)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self.frame_rate_hz == other.frame_rate_hz and np.array_equal(self.frames, other.frames)


@dataclass(frozen=True)
class UnitSequence:
    units: np.ndarray
    vocab_size: int

    def __post_init__(self):
        units = np.array(self.units, dtype=np.int64, copy=True).reshape(-1)
        if units.size < 1:
            raise ValidationError("unit sequence must not be empty")
        if self.vocab_size < 1:
            raise ValidationError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if units.min() < 0 or units.max() >= self.vocab_size:
            raise ValidationError(
                f"unit index out of range [0, {self.vocab_size}): min={units.min()} max={units.max()}"
            )
        object.__setattr__(self, "units", _frozen(units))
        object.__setattr__(self, "vocab_size", int(self.vocab_size))

    def __len__(self):
        return self.units.shape[0]

    def __eq__(self, other):
        if not isinstance(other, UnitSequence):
            return NotImplemented
        return self.vocab_size == other.vocab_size and np.array_equal(self.units, other.units)


@dataclass(frozen=True)
class PhoneAlignment:
    """Gold phoneme id per frame."""

    labels: np.ndarray
    phone_inventory: tuple[str, ...]

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        inventory = tuple(self.phone_inventory)
        if labels.size < 1:
            raise ValidationError("alignment must not be empty")
        if labels.min() < 0 or labels.max() >= len(inventory):
            raise ValidationError("alignment label outside the phone inventory")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "phone_inventory", inventory)

    def __len__(self):
        return self.labels.shape[0]

    def check_matches(self, length: int):
        if len(self) != length:
            raise ValidationError(f"alignment has {len(self)} frames, sequence has {length}")


@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    file_ref: str
    kind: str
    speaker_id: str
    category_label: str
    group_id: str
    subset_name: str
    human_score: float | None = None


@dataclass(frozen=True)
class EvalManifest:
    items: tuple[ManifestItem, ...]

    def __post_init__(self):
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        seen = set()
        groups: dict[str, list[ManifestItem]] = {}
        for item in items:
            if item.item_id in seen:
                raise ValidationError(f"duplicate item_id {item.item_id!r}")
            seen.add(item.item_id)
            if item.kind not in ITEM_KINDS:
                raise ValidationError(f"item {item.item_id!r}: unknown kind {item.kind!r}")
            if item.human_score is not None and not math.isfinite(item.human_score):
                raise ValidationError(f"item {item.item_id!r}: non-finite human_score")
            groups.setdefault(item.group_id, []).append(item)
        for gid, members in groups.items():
            kinds = sorted(m.kind for m in members)
            if "pair_a" in kinds or "pair_b" in kinds:
                if kinds != ["pair_a", "pair_b"]:
                    raise ValidationError(f"pair group {gid!r} must hold one pair_a and one pair_b, got {kinds}")
            elif kinds[0] == "simi" and len(members) != 2:
                raise ValidationError(f"simi group {gid!r} must hold 2 items, got {len(members)}")
            elif kinds[0] == "abx" and len(members) != 3:
                raise ValidationError(f"abx group {gid!r} must hold 3 items, got {len(members)}")
            if len(set(kinds)) > 1 and set(kinds) != {"pair_a", "pair_b"}:
                raise ValidationError(f"group {gid!r} mixes kinds {kinds}")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def groups(self) -> dict[str, list[ManifestItem]]:
        out: dict[str, list[ManifestItem]] = {}
        for item in self.items:
            out.setdefault(item.group_id, []).append(item)
        return out

    def by_id(self) -> dict[str, ManifestItem]:
        return {item.item_id: item for item in self.items}


@dataclass
class Report:
    """Result of one evaluation, with the per-subset breakdown and the
    hyperparameters needed to reproduce it."""

    metric_name: str
    value: float
    breakdown: dict[str, dict] = field(default_factory=dict)
    hyperparameters: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValidationError(f"report {self.metric_name!r} has non-finite value")

    def to_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "value": self.value,
            "breakdown": self.breakdown,
            "hyperparameters": self.hyperparameters,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n"

    def to_tsv(self) -> str:
        lines = ["subset\tvalue\tweight", f"ALL\t{_fmt(self.value)}\t"]
        for name in sorted(self.breakdown):
            row = self.breakdown[name]
            lines.append(f"{name}\t{_fmt(row.get('value', float('nan')))}\t{row.get('weight', '')}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{self.metric_name}: {_fmt(self.value)}"]
        for name in sorted(self.breakdown):
            row = self.breakdown[name]
            lines.append(f"  {name:<32} {_fmt(row.get('value', float('nan'))):>10}  (n={row.get('weight', '?')})")
        for note in self.notes:
            lines.append(f"  note: {note}")
        return "\n".join(lines) + "\n"

    def write(self, stem: str | Path):
        """Write <stem>.json, <stem>.tsv and <stem>.txt (suffixes are appended)."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        for ext, text in ((".json", self.to_json()), (".tsv", self.to_tsv()), (".txt", self.to_text())):
            stem.with_name(stem.name + ext).write_text(text)


def _fmt(value) -> str:
    return f"{value:.6f}" if isinstance(value, float) else str(value)


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# --- feature files -----------------------------------------------------------


def write_features(seq: FeatureSequence, path: str | Path):
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    t, d = frames.shape
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, t, d, seq.frame_rate_hz)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes(order="C"))


def read_features(path: str | Path) -> FeatureSequence:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FEATURE_HEADER.size:
        if raw[:4] != FEATURE_MAGIC[: len(raw)]:
            raise FormatError(f"{path}: bad magic")
        raise CorruptionError(f"{path}: truncated header")
    magic, version, t, d, rate = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = raw[_FEATURE_HEADER.size :]
    expected = 4 * t * d
    if len(payload) != expected:
        raise CorruptionError(f"{path}: payload has {len(payload)} bytes, header declares {expected}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, d)
    return FeatureSequence(frames, frame_rate_hz=rate)


# --- unit and alignment files --------------------------------------------------


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _parse_int_lines(path: Path) -> list[np.ndarray]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            raise ValidationError(f"{path}:{lineno}: empty line")
        try:
            rows.append(np.array([int(tok) for tok in line.split()], dtype=np.int64))
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return rows


def write_units(seqs: Sequence[UnitSequence], path: str | Path, item_ids: Sequence[str] | None = None):
    path = Path(path)
    if not seqs:
        raise ValidationError("no unit sequences to write")
    vocab = {s.vocab_size for s in seqs}
    if len(vocab) != 1:
        raise ValidationError(f"unit sequences disagree on vocab_size: {sorted(vocab)}")
    if item_ids is not None and len(item_ids) != len(seqs):
        raise ValidationError("item_ids and sequences differ in length")
    path.write_text("".join(" ".join(map(str, s.units.tolist())) + "\n" for s in seqs), encoding="utf-8")
    meta = {"vocab_size": vocab.pop(), "item_ids": list(item_ids) if item_ids is not None else None}
    _sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_unit_ids(path: str | Path) -> list[str] | None:
    side = _sidecar(Path(path))
    if not side.exists():
        return None
    return json.loads(side.read_text())["item_ids"]


def read_units(path: str | Path, vocab_size: int | None = None) -> list[UnitSequence]:
    """Read a unit file. ``vocab_size`` overrides the sidecar."""
    path = Path(path)
    if vocab_size is None:
        side = _sidecar(path)
        if not side.exists():
            raise FormatError(f"{path}: no vocab_size given and no sidecar {side.name}")
        vocab_size = int(json.loads(side.read_text())["vocab_size"])
    return [UnitSequence(row, vocab_size) for row in _parse_int_lines(path)]


def write_alignment(alignments: Sequence[PhoneAlignment], path: str | Path, item_ids: Sequence[str] | None = None):
    path = Path(path)
    inventories = {a.phone_inventory for a in alignments}
    if len(inventories) != 1:
        raise ValidationError("alignments disagree on the phone inventory")
    path.write_text("".join(" ".join(map(str, a.labels.tolist())) + "\n" for a in alignments), encoding="utf-8")
    meta = {"phone_inventory": list(inventories.pop()), "item_ids": list(item_ids) if item_ids is not None else None}
    _sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_alignment(path: str | Path, expected_lengths: Sequence[int] | None = None) -> list[PhoneAlignment]:
    path = Path(path)
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"{path}: missing sidecar {side.name}")
    inventory = tuple(json.loads(side.read_text())["phone_inventory"])
    out = [PhoneAlignment(row, inventory) for row in _parse_int_lines(path)]
    if expected_lengths is not None:
        if len(expected_lengths) != len(out):
            raise ValidationError(f"{path}: {len(out)} lines, expected {len(expected_lengths)}")
        for ali, n in zip(out, expected_lengths):
            ali.check_matches(n)
    return out


# --- manifests -----------------------------------------------------------------


def write_manifest(manifest: EvalManifest | Iterable[ManifestItem], path: str | Path):
    items = manifest.items if isinstance(manifest, EvalManifest) else tuple(manifest)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for it in items:
            score = "" if it.human_score is None else repr(float(it.human_score))
            writer.writerow([it.item_id, it.file_ref, it.kind, it.speaker_id, it.category_label,
                             it.group_id, it.subset_name, score])


def read_manifest(path: str | Path) -> EvalManifest:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        if tuple(header) != MANIFEST_FIELDS:
            raise FormatError(f"{path}: header {header} does not match {list(MANIFEST_FIELDS)}")
        items = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(MANIFEST_FIELDS):
                raise ValidationError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} columns, got {len(row)}")
            score = row[7].strip()
            try:
                human = float(score) if score else None
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad human_score {score!r}") from None
            items.append(ManifestItem(*row[:7], human_score=human))
    return EvalManifest(tuple(items))
