"""Deterministic speech-like corpora with gold phone alignments.

Each utterance is a phone string rendered as frames: every phone holds
for a random number of frames at ``emission_means[p] + speaker_offset[s]``
plus Gaussian noise. Sub-seeds derive from ``(seed, stream, index)`` so
any utterance can be regenerated on its own.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    EvalManifest,
    FeatureSequence,
    ManifestItem,
    PhoneAlignment,
    write_alignment,
    write_features,
    write_manifest,
)
from .errors import InfeasibleConfigError, ValidationError

log = logging.getLogger(__name__)

# sub-seed streams
_MODEL, _LEXICON, _SPLIT, _ABX, _WUGGY, _BLIMP, _SIMI = range(7)


@dataclass(frozen=True)
class PhoneModel:
    emission_means: np.ndarray
    emission_scale: float = 0.5
    duration_range: tuple[int, int] = (2, 5)
    inventory: tuple[str, ...] = ()

    def __post_init__(self):
        means = np.array(self.emission_means, dtype=np.float64)
        means.setflags(write=False)
        object.__setattr__(self, "emission_means", means)
        if means.ndim != 2 or means.shape[0] < 2:
            raise ValidationError("PhoneModel needs at least 2 phones")
        if len(np.unique(means, axis=0)) != means.shape[0]:
            raise ValidationError("phone emission means must be pairwise distinct")
        if self.emission_scale < 0:
            raise ValidationError("emission_scale must be >= 0")
        lo, hi = self.duration_range
        if lo < 1 or hi < lo:
            raise ValidationError(f"bad duration_range {self.duration_range}")
        if not self.inventory:
            object.__setattr__(self, "inventory", tuple(f"ph{p:02d}" for p in range(means.shape[0])))
        elif len(self.inventory) != means.shape[0]:
            raise ValidationError("inventory size does not match emission_means")

    @property
    def num_phones(self) -> int:
        return self.emission_means.shape[0]

    @property
    def dim(self) -> int:
        return self.emission_means.shape[1]


@dataclass(frozen=True)
class SpeakerModel:
    """Per-speaker additive offset and tempo in [0, 1] (0 = shortest phones)."""

    speaker_offsets: np.ndarray
    offset_scale: float = 0.5
    tempos: np.ndarray | None = None

    def __post_init__(self):
        offsets = np.array(self.speaker_offsets, dtype=np.float64)
        offsets.setflags(write=False)
        object.__setattr__(self, "speaker_offsets", offsets)
        if offsets.ndim != 2 or offsets.shape[0] < 2:
            raise ValidationError("SpeakerModel needs at least 2 speakers")
        if self.offset_scale < 0:
            raise ValidationError("offset_scale must be >= 0")
        tempos = np.full(offsets.shape[0], 0.5) if self.tempos is None else np.array(self.tempos, dtype=np.float64)
        if tempos.shape != (offsets.shape[0],) or not np.all((tempos >= 0) & (tempos <= 1)):
            raise ValidationError("tempos must hold one value in [0, 1] per speaker")
        tempos.setflags(write=False)
        object.__setattr__(self, "tempos", tempos)

    @property
    def num_speakers(self) -> int:
        return self.speaker_offsets.shape[0]


@dataclass(frozen=True)
class ToyLexicon:
    """Words and nonwords as phone-id tuples; a class-bigram grammar over words."""

    words: tuple[tuple[int, ...], ...]
    nonwords: tuple[tuple[int, ...], ...]
    word_classes: tuple[int, ...]
    class_bigrams: frozenset[tuple[int, int]]

    def __post_init__(self):
        wordset = set(self.words)
        if len(wordset) != len(self.words):
            raise ValidationError("duplicate words in lexicon")
        if any(nw in wordset for nw in self.nonwords):
            raise ValidationError("a nonword is also a word")
        reachable = {b for _, b in self.class_bigrams}
        if any(c not in reachable for c in set(self.word_classes)):
            raise ValidationError("some word class is unreachable in the grammar")

    def legal_bigram(self, w1: int, w2: int) -> bool:
        return (self.word_classes[w1], self.word_classes[w2]) in self.class_bigrams

    def is_grammatical(self, sentence: Sequence[int]) -> bool:
        return all(self.legal_bigram(a, b) for a, b in zip(sentence, sentence[1:]))

    def is_word(self, phones: Sequence[int]) -> bool:
        return tuple(phones) in set(self.words)

    def to_dict(self) -> dict:
        return {
            "words": [list(w) for w in self.words],
            "nonwords": [list(w) for w in self.nonwords],
            "word_classes": list(self.word_classes),
            "class_bigrams": sorted(list(b) for b in self.class_bigrams),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyLexicon":
        return cls(tuple(tuple(w) for w in d["words"]), tuple(tuple(w) for w in d["nonwords"]),
                   tuple(d["word_classes"]), frozenset(tuple(b) for b in d["class_bigrams"]))


@dataclass
class CorpusConfig:
    num_phones: int = 20
    dim: int = 16
    num_speakers: int = 8
    mean_scale: float = 1.0
    emission_scale: float = 0.5
    offset_scale: float = 0.5
    tempo_spread: float = 0.0
    duration_range: tuple[int, int] = (2, 5)
    frame_rate_hz: float = 100.0
    lexicon_size: int = 80
    word_length_range: tuple[int, int] = (3, 6)
    num_word_classes: int = 4
    sentence_length_range: tuple[int, int] = (3, 6)
    num_utterances: int = 2400
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    abx_groups: int = 200
    abx_speakers_per_contrast: int = 2
    other_noise_factor: float = 2.0
    word_pairs: int = 200
    sentence_pairs: int = 200
    simi_pairs: int = 100

    def __post_init__(self):
        self.duration_range = tuple(self.duration_range)
        self.word_length_range = tuple(self.word_length_range)
        self.sentence_length_range = tuple(self.sentence_length_range)
        self.split_fractions = tuple(self.split_fractions)

    def validate(self):
        def bad(key, msg):
            raise InfeasibleConfigError(key, msg)

        if self.num_phones < 4:
            bad("num_phones", "need at least 4 phones to form ABX contrasts")
        if self.num_speakers < 2:
            bad("num_speakers", "need at least 2 speakers")
        if self.dim < 1:
            bad("dim", "must be >= 1")
        if not 0 <= self.tempo_spread <= 0.5:
            bad("tempo_spread", "must be in [0, 0.5]")
        if self.duration_range[0] < 1 or self.duration_range[1] < self.duration_range[0]:
            bad("duration_range", f"invalid {self.duration_range}")
        if self.word_length_range[0] < 2 or self.word_length_range[1] < self.word_length_range[0]:
            bad("word_length_range", "words need at least 2 phones")
        if self.sentence_length_range[0] < 2 or self.sentence_length_range[1] < self.sentence_length_range[0]:
            bad("sentence_length_range", "sentences need at least 2 words")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            bad("split_fractions", "must be three non-negative fractions summing to 1")
        capacity = sum(self.num_phones ** n for n in range(self.word_length_range[0], self.word_length_range[1] + 1))
        if self.lexicon_size * 2 > capacity:
            bad("lexicon_size", f"{self.lexicon_size} words do not fit in {capacity} phone strings")
        if self.num_word_classes < 2 or self.num_word_classes > self.lexicon_size:
            bad("num_word_classes", "need 2 <= classes <= lexicon_size")
        if self.word_pairs and self.lexicon_size < 1:
            bad("word_pairs", "lexicon is empty")
        if self.simi_pairs and self.lexicon_size < 2:
            bad("simi_pairs", "need at least 2 words")
        if self.abx_speakers_per_contrast < 2:
            bad("abx_speakers_per_contrast", "across-speaker ABX needs at least 2 speakers per contrast")
        for key in ("num_utterances", "abx_groups", "word_pairs", "sentence_pairs", "simi_pairs"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def make_models(cfg: CorpusConfig, seed: int) -> tuple[PhoneModel, SpeakerModel]:
    rng = _rng(seed, _MODEL)
    means = rng.normal(0.0, cfg.mean_scale, size=(cfg.num_phones, cfg.dim))
    offsets = rng.normal(0.0, 1.0, size=(cfg.num_speakers, cfg.dim)) * cfg.offset_scale
    tempos = 0.5 + rng.uniform(-cfg.tempo_spread, cfg.tempo_spread, size=cfg.num_speakers)
    phones = PhoneModel(means, cfg.emission_scale, tuple(cfg.duration_range))
    return phones, SpeakerModel(offsets, cfg.offset_scale, tempos)


def draw_durations(phones: PhoneModel, speakers: SpeakerModel, speaker_id: int, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """d_min + Binomial(d_max - d_min, tempo): always inside the duration
    range, longer on average for slower speakers."""
    lo, hi = phones.duration_range
    return lo + rng.binomial(hi - lo, speakers.tempos[speaker_id], size=n).astype(np.int64)


def generate_utterance(phones: PhoneModel, speakers: SpeakerModel, phone_string: Sequence[int], speaker_id: int,
                       seed, durations: Sequence[int] | None = None, noise_scale: float | None = None,
                       frame_rate_hz: float = 100.0) -> tuple[FeatureSequence, PhoneAlignment]:
    """Render a phone string for one speaker.

    ``seed`` may be an int or a ``numpy.random.Generator``. Durations are
    drawn inside ``phones.duration_range`` according to the speaker's
    tempo unless given.
    """
    phone_string = [int(p) for p in phone_string]
    if not phone_string:
        raise ValidationError("phone_string must not be empty")
    bad = [p for p in phone_string if not 0 <= p < phones.num_phones]
    if bad:
        raise ValidationError(f"unknown phoneme id(s) {bad}")
    if not 0 <= speaker_id < speakers.num_speakers:
        raise ValidationError(f"speaker_id {speaker_id} outside [0, {speakers.num_speakers})")
    if speakers.speaker_offsets.shape[1] != phones.dim:
        raise ValidationError("speaker offsets and phone means differ in dimension")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if durations is None:
        durations = draw_durations(phones, speakers, speaker_id, len(phone_string), rng)
    elif len(durations) != len(phone_string):
        raise ValidationError("durations and phone_string differ in length")
    labels = np.repeat(np.asarray(phone_string), np.asarray(durations, dtype=np.int64))
    scale = phones.emission_scale if noise_scale is None else noise_scale
    frames = phones.emission_means[labels] + speakers.speaker_offsets[speaker_id]
    frames = frames + rng.normal(0.0, 1.0, size=frames.shape) * scale
    return FeatureSequence(frames, frame_rate_hz), PhoneAlignment(labels, phones.inventory)


def _edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def similarity_score(a: Sequence[int], b: Sequence[int]) -> float:
    """Synthetic human judgment: 1 - normalized phone edit distance."""
    return 1.0 - _edit_distance(a, b) / max(len(a), len(b))


def make_lexicon(cfg: CorpusConfig, seed: int) -> ToyLexicon:
    rng = _rng(seed, _LEXICON)
    lo, hi = cfg.word_length_range
    words: list[tuple[int, ...]] = []
    seen = set()
    while len(words) < cfg.lexicon_size:
        w = tuple(int(p) for p in rng.integers(0, cfg.num_phones, size=int(rng.integers(lo, hi + 1))))
        if w not in seen:
            seen.add(w)
            words.append(w)
    nonwords = []
    for w in words:
        for _ in range(1000):
            pos = int(rng.integers(len(w)))
            sub = int(rng.integers(cfg.num_phones - 1))
            sub += sub >= w[pos]
            cand = w[:pos] + (sub,) + w[pos + 1 :]
            if cand not in seen:
                seen.add(cand)
                nonwords.append(cand)
                break
        else:
            raise InfeasibleConfigError("lexicon_size", f"cannot find a nonword for {w}")
    c = cfg.num_word_classes
    classes = tuple(int(i % c) for i in rng.permutation(cfg.lexicon_size))
    # a cycle keeps every class reachable; roughly half the remaining class bigrams are legal
    bigrams = {(i, (i + 1) % c) for i in range(c)}
    for a in range(c):
        for b in range(c):
            if rng.random() < 0.4:
                bigrams.add((a, b))
    return ToyLexicon(tuple(words), tuple(nonwords), classes, frozenset(bigrams))


def sample_sentence(lex: ToyLexicon, length: int, rng: np.random.Generator) -> list[int]:
    by_class: dict[int, list[int]] = {}
    for w, c in enumerate(lex.word_classes):
        by_class.setdefault(c, []).append(w)
    sentence = [int(rng.integers(len(lex.words)))]
    while len(sentence) < length:
        c = lex.word_classes[sentence[-1]]
        nexts = sorted(b for a, b in lex.class_bigrams if a == c)
        cls = nexts[int(rng.integers(len(nexts)))]
        pool = by_class[cls]
        sentence.append(pool[int(rng.integers(len(pool)))])
    return sentence


def _ungrammatical_swap(lex: ToyLexicon, sentence: list[int], rng: np.random.Generator) -> list[int] | None:
    order = rng.permutation(len(sentence) - 1)
    for i in order:
        s = list(sentence)
        s[i], s[i + 1] = s[i + 1], s[i]
        if not lex.is_grammatical(s):
            return s
    return None


def sentence_phones(lex: ToyLexicon, sentence: Sequence[int]) -> list[int]:
    return [p for w in sentence for p in lex.words[w]]


@dataclass
class Utterance:
    item_id: str
    speaker_id: int
    phones: list[int]
    features: FeatureSequence
    alignment: PhoneAlignment
    words: list[int] = field(default_factory=list)


@dataclass
class Corpus:
    """In-memory corpus: training splits plus evaluation manifests."""

    config: CorpusConfig
    seed: int
    phones: PhoneModel
    speakers: SpeakerModel
    lexicon: ToyLexicon
    splits: dict[str, list[Utterance]]
    manifests: dict[str, EvalManifest]
    features: dict[str, FeatureSequence]

    def split_features(self, name: str) -> list[FeatureSequence]:
        return [u.features for u in self.splits[name]]


def _split_utterances(cfg, seed, phones, speakers, lex) -> dict[str, list[Utterance]]:
    n = cfg.num_utterances
    f_train, f_dev, _ = cfg.split_fractions
    n_train = int(round(n * f_train))
    n_dev = int(round(n * f_dev))
    names = ["train"] * n_train + ["dev"] * n_dev + ["test"] * (n - n_train - n_dev)
    lo, hi = cfg.sentence_length_range
    splits: dict[str, list[Utterance]] = {"train": [], "dev": [], "test": []}
    for i, name in enumerate(names):
        rng = _rng(seed, _SPLIT, i)
        spk = i % cfg.num_speakers
        sentence = sample_sentence(lex, int(rng.integers(lo, hi + 1)), rng)
        ph = sentence_phones(lex, sentence)
        feats, ali = generate_utterance(phones, speakers, ph, spk, rng, frame_rate_hz=cfg.frame_rate_hz)
        splits[name].append(Utterance(f"{name}-{i:05d}", spk, ph, feats, ali, sentence))
    return splits


def _abx_items(cfg, seed, phones, speakers, part: str):
    """Each triphone contrast is spoken by ``abx_speakers_per_contrast``
    distinct speakers, one group (A, B, X) per speaker."""
    items, feats = [], {}
    p = cfg.num_phones
    per = min(cfg.abx_speakers_per_contrast, cfg.num_speakers)
    for subset, factor in (("clean", 1.0), ("other", cfg.other_noise_factor)):
        for c in range(cfg.abx_groups // per):
            rng = _rng(seed, _ABX, 0 if part == "dev" else 1, 0 if subset == "clean" else 1, c)
            left, right = (int(v) for v in rng.integers(0, p, size=2))
            # centre phones differ from both neighbours, otherwise runs like 8-8-1 / 8-1-1 collapse
            centres = [q for q in range(p) if q not in (left, right)]
            mid, alt = (centres[int(i)] for i in rng.choice(len(centres), size=2, replace=False))
            cats = [(left, mid, right), (left, alt, right)]
            for spk in sorted(int(s) for s in rng.choice(cfg.num_speakers, size=per, replace=False)):
                doubled = int(rng.integers(2))
                gid = f"abx-{part}-{subset}-{c:04d}-s{spk}"
                for n, tri in enumerate([cats[doubled], cats[doubled], cats[1 - doubled]]):
                    f, _ = generate_utterance(phones, speakers, tri, spk, rng,
                                              noise_scale=phones.emission_scale * factor,
                                              frame_rate_hz=cfg.frame_rate_hz)
                    iid = f"{gid}-{n}"
                    feats[iid] = f
                    items.append(ManifestItem(iid, f"{iid}.zfea", "abx", str(spk), "-".join(map(str, tri)),
                                              gid, subset))
    return items, feats


def _pair(phones, speakers, cfg, rng, gid, subset, good, bad, labels):
    spk = int(rng.integers(cfg.num_speakers))
    dur = draw_durations(phones, speakers, spk, len(good), rng)
    out, feats = [], {}
    slots = ("pair_a", "pair_b") if rng.random() < 0.5 else ("pair_b", "pair_a")
    for string, label, kind in zip((good, bad), labels, slots):
        f, _ = generate_utterance(phones, speakers, string, spk, rng, durations=dur, frame_rate_hz=cfg.frame_rate_hz)
        iid = f"{gid}-{label}"
        feats[iid] = f
        out.append(ManifestItem(iid, f"{iid}.zfea", kind, str(spk), label, gid, subset))
    return out, feats


def _wuggy_items(cfg, seed, phones, speakers, lex, part):
    items, feats = [], {}
    for g in range(cfg.word_pairs):
        rng = _rng(seed, _WUGGY, 0 if part == "dev" else 1, g)
        w = int(rng.integers(len(lex.words)))
        subset = f"len{len(lex.words[w])}"
        it, f = _pair(phones, speakers, cfg, rng, f"wug-{part}-{g:04d}", subset,
                      lex.words[w], lex.nonwords[w], ("word", "nonword"))
        items += it
        feats.update(f)
    return items, feats


def _blimp_items(cfg, seed, phones, speakers, lex, part):
    items, feats = [], {}
    lo, hi = cfg.sentence_length_range
    g = 0
    attempts = 0
    while g < cfg.sentence_pairs:
        attempts += 1
        if attempts > 100 * max(1, cfg.sentence_pairs):
            raise InfeasibleConfigError("sentence_pairs", "grammar too permissive to build ungrammatical swaps")
        rng = _rng(seed, _BLIMP, 0 if part == "dev" else 1, attempts)
        sentence = sample_sentence(lex, int(rng.integers(lo, hi + 1)), rng)
        swapped = _ungrammatical_swap(lex, sentence, rng)
        if swapped is None:
            continue
        good, bad = sentence_phones(lex, sentence), sentence_phones(lex, swapped)
        # swapping words of unequal length moves phones but keeps the total, so one duration draw serves both
        it, f = _pair(phones, speakers, cfg, rng, f"blimp-{part}-{g:04d}", f"len{len(sentence)}",
                      good, bad, ("grammatical", "ungrammatical"))
        items += it
        feats.update(f)
        g += 1
    return items, feats


def _simi_items(cfg, seed, phones, speakers, lex, part):
    items, feats = [], {}
    words = lex.words
    for g in range(cfg.simi_pairs):
        rng = _rng(seed, _SIMI, 0 if part == "dev" else 1, g)
        a = int(rng.integers(len(words)))
        if rng.random() < 0.5:
            dists = np.array([_edit_distance(words[a], w) if i != a else 10**6 for i, w in enumerate(words)])
            nearest = np.flatnonzero(dists == dists.min())
            b = int(nearest[int(rng.integers(len(nearest)))])
        else:
            b = int(rng.integers(len(words) - 1))
            b += b >= a
        score = similarity_score(words[a], words[b])
        domain = "natural" if g % 2 == 0 else "synthetic"
        subset = f"{domain}/{'short' if len(words[a]) <= 4 else 'long'}"
        gid = f"simi-{part}-{g:04d}"
        spk_a = int(rng.integers(cfg.num_speakers))
        spk_b = int(rng.integers(cfg.num_speakers)) if domain == "natural" else spk_a
        for n, (w, spk) in enumerate(((a, spk_a), (b, spk_b))):
            f, _ = generate_utterance(phones, speakers, words[w], spk, rng, frame_rate_hz=cfg.frame_rate_hz)
            iid = f"{gid}-{n}"
            feats[iid] = f
            items.append(ManifestItem(iid, f"{iid}.zfea", "simi", str(spk), f"w{w}", gid, subset, score))
    return items, feats


def generate_corpus(cfg: CorpusConfig, seed: int) -> Corpus:
    cfg.validate()
    phones, speakers = make_models(cfg, seed)
    lex = make_lexicon(cfg, seed)
    splits = _split_utterances(cfg, seed, phones, speakers, lex)
    manifests: dict[str, EvalManifest] = {}
    features: dict[str, FeatureSequence] = {}
    for part in ("dev", "test"):
        for name, builder in (("abx", lambda: _abx_items(cfg, seed, phones, speakers, part)),
                              ("swuggy", lambda: _wuggy_items(cfg, seed, phones, speakers, lex, part)),
                              ("sblimp", lambda: _blimp_items(cfg, seed, phones, speakers, lex, part)),
                              ("simi", lambda: _simi_items(cfg, seed, phones, speakers, lex, part))):
            items, feats = builder()
            manifests[f"{name}_{part}"] = EvalManifest(tuple(items))
            features.update(feats)
    for utts in splits.values():
        for u in utts:
            features[u.item_id] = u.features
    return Corpus(cfg, seed, phones, speakers, lex, splits, manifests, features)


def write_corpus(corpus: Corpus, out_dir: str | Path):
    """Layout: corpus.json, features/, alignments/, splits/, manifests/."""
    out = Path(out_dir)
    for sub in ("features", "alignments", "splits", "manifests"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for iid in sorted(corpus.features):
        write_features(corpus.features[iid], out / "features" / f"{iid}.zfea")
    for name, utts in corpus.splits.items():
        if not utts:
            continue
        ids = [u.item_id for u in utts]
        write_alignment([u.alignment for u in utts], out / "alignments" / f"{name}.ali", ids)
        lines = ["item_id\tfile_ref\tspeaker_id\tn_frames\twords"]
        lines += [f"{u.item_id}\t{u.item_id}.zfea\t{u.speaker_id}\t{len(u.features)}\t{' '.join(map(str, u.words))}"
                  for u in utts]
        (out / "splits" / f"{name}.tsv").write_text("\n".join(lines) + "\n")
    for name, manifest in corpus.manifests.items():
        write_manifest(manifest, out / "manifests" / f"{name}.tsv")
    meta = {
        "seed": corpus.seed,
        "config": corpus.config.to_dict(),
        "phone_inventory": list(corpus.phones.inventory),
        "lexicon": corpus.lexicon.to_dict(),
    }
    (out / "corpus.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    log.info("wrote corpus with %d feature files to %s", len(corpus.features), out)
