"""Experiment configuration and the stages behind each CLI subcommand.

Every stage reads its inputs from disk, writes its outputs next to a
Report, and embeds the resolved configuration in that Report so a run can
be reproduced from the report alone.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import abx, scoring
from .data import (EvalManifest, FeatureSequence, Report, UnitSequence, read_alignment, read_features,
                   read_manifest, write_units)
from .errors import ConfigError, SpokenLMError, ValidationError
from .mlm import (LOSSES, MaskedPredictionModel, MaskingPolicy, ModelConfig, TrainSettings, gradient_check,
                  read_model, train, write_model)
from .probes import ProbeSettings, speaker_probe, unit_phone_alignment
from .quantizer import Codebook, assign, dequantize, kmeans_fit, read_codebook, write_codebook
from .synth import CorpusConfig, generate_corpus, write_corpus

log = logging.getLogger(__name__)

PAPER_SWEEP_K = (20, 50, 100, 200, 500, 1000, 2000)

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "corpus": CorpusConfig().to_dict(),
    "quantizer": {"k": 20, "sample_frames": 20000, "max_iters": 100},
    "model": {
        "input_mode": "discrete",
        "target_mode": "discrete",
        "loss": "NLL-e",
        "model_dim": 32,
        "layers": 2,
        "heads": 2,
        "ffn_dim": 0,
        "max_len": 256,
        "nce_negatives": 100,
        "temperature": 0.1,
        "use_positions": True,
        "tie_unit_embeddings": True,
    },
    "masking": asdict(MaskingPolicy()),
    "train": asdict(TrainSettings(steps=3000)),
    # desk-scale grid: toy words last ~16 frames, so windows stay short
    "windows": {"sizes": [2, 4, 6, 8], "step": 2},
    "poolings": {"layers": [0, 1, 2], "poolings": ["mean", "max", "min"]},
    "probe": {"epochs": 20, "max_per_speaker": 0},
    "abx": {"aggregation": "cells"},
    "sweep": {"k": list(PAPER_SWEEP_K), "probe": True},
}


# --- configuration -------------------------------------------------------------


def _merge(base: dict, override: Mapping, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in out:
            raise ConfigError(path, "unknown config key")
        if isinstance(out[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(path, "expected a mapping")
            out[key] = _merge(out[key], value, path + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> tuple[str, Any]:
    """``a.b=value`` with the value parsed as YAML (numbers, lists, booleans)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(text, "empty key in override")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from None
    return key, value


def _nest(key: str, value) -> dict:
    out: dict = {}
    cur = out
    parts = key.split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config", f"config file not found: {p}")
        data = yaml.safe_load(p.read_text()) or {}
        if not isinstance(data, Mapping):
            raise ConfigError("config", "config file must hold a mapping")
        cfg = _merge(cfg, data)
    for text in overrides:
        key, value = parse_override(text)
        cfg = _merge(cfg, _nest(key, value))
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    """Build every typed config once so errors surface before any compute."""
    corpus_config(cfg).validate()
    masking_policy(cfg)
    train_settings(cfg)
    model_config(cfg, vocab_size=max(1, int(cfg["quantizer"]["k"])), feature_dim=int(cfg["corpus"]["dim"]))
    if int(cfg["quantizer"]["k"]) < 1:
        raise ConfigError("quantizer.k", "must be >= 1")
    if not cfg["windows"]["sizes"]:
        raise ConfigError("windows.sizes", "window grid is empty")
    windows(cfg)
    if not cfg["poolings"]["layers"] or not cfg["poolings"]["poolings"]:
        raise ConfigError("poolings", "pooling grid is empty")
    poolings(cfg)
    if int(cfg["jobs"]) < 1:
        raise ConfigError("jobs", "must be >= 1")
    if not cfg["sweep"]["k"]:
        raise ConfigError("sweep.k", "sweep list is empty")


def corpus_config(cfg: dict) -> CorpusConfig:
    try:
        return CorpusConfig(**cfg["corpus"])
    except TypeError as exc:
        raise ConfigError("corpus", str(exc)) from None


def _typed(section: str, cls, values: dict):
    try:
        return cls(**values)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc.key}", str(exc).split(": ", 1)[-1]) from None


def masking_policy(cfg: dict) -> MaskingPolicy:
    return _typed("masking", MaskingPolicy, cfg["masking"])


def train_settings(cfg: dict) -> TrainSettings:
    return _typed("train", TrainSettings, cfg["train"])


def model_config(cfg: dict, vocab_size: int, feature_dim: int) -> ModelConfig:
    return _typed("model", ModelConfig, dict(cfg["model"], vocab_size=vocab_size, feature_dim=feature_dim))


def windows(cfg: dict) -> list[scoring.WindowSpec]:
    try:
        return [scoring.WindowSpec(int(s), int(cfg["windows"]["step"])) for s in cfg["windows"]["sizes"]]
    except ValidationError as exc:
        raise ConfigError("windows", str(exc)) from None


def poolings(cfg: dict) -> list[scoring.PoolingSpec]:
    try:
        return [scoring.PoolingSpec(int(layer), p) for layer in cfg["poolings"]["layers"]
                for p in cfg["poolings"]["poolings"]]
    except ValidationError as exc:
        raise ConfigError("poolings", str(exc)) from None


def _stamp(report: Report, cfg: dict, **extra) -> Report:
    report.hyperparameters = {**report.hyperparameters, **extra, "config": cfg, "seed": cfg["seed"]}
    return report


# --- corpus on disk ---------------------------------------------------------------


@dataclass
class CorpusFiles:
    root: Path
    meta: dict
    splits: dict[str, list[dict]]
    features: dict[str, FeatureSequence]

    @property
    def config(self) -> CorpusConfig:
        return CorpusConfig(**self.meta["config"])

    def manifest(self, name: str) -> EvalManifest:
        path = self.root / "manifests" / f"{name}.tsv"
        if not path.exists():
            raise ValidationError(f"missing manifest {path}")
        return read_manifest(path)

    def item_features(self, item) -> FeatureSequence:
        key = Path(item.file_ref).stem if item.file_ref else item.item_id
        if key not in self.features:
            raise ValidationError(f"unresolvable item ref {item.file_ref!r} for {item.item_id!r}")
        return self.features[key]

    def split_features(self, name: str) -> list[FeatureSequence]:
        return [self.features[row["item_id"]] for row in self.splits[name]]

    def alignments(self, name: str):
        rows = self.splits[name]
        return read_alignment(self.root / "alignments" / f"{name}.ali", [int(r["n_frames"]) for r in rows])


def read_corpus(root: str | Path) -> CorpusFiles:
    root = Path(root)
    meta_path = root / "corpus.json"
    if not meta_path.exists():
        raise ValidationError(f"no corpus at {root} (corpus.json missing)")
    meta = json.loads(meta_path.read_text())
    splits = {}
    for name in ("train", "dev", "test"):
        path = root / "splits" / f"{name}.tsv"
        if not path.exists():
            splits[name] = []
            continue
        lines = path.read_text().splitlines()
        header = lines[0].split("\t")
        splits[name] = [dict(zip(header, line.split("\t"))) for line in lines[1:] if line]
    features = {p.stem: read_features(p) for p in sorted((root / "features").glob("*.zfea"))}
    return CorpusFiles(root, meta, splits, features)


def _require(path, what: str) -> Path:
    p = Path(path) if path is not None else None
    if p is None or not p.exists():
        raise ValidationError(f"missing input: {what} ({path})")
    return p


def _nonempty(manifest: EvalManifest, name: str) -> EvalManifest:
    if not len(manifest):
        raise ValidationError(f"empty manifest: {name}")
    return manifest


# --- stages ---------------------------------------------------------------------


def run_gen(cfg: dict, out: str | Path) -> Report:
    corpus = generate_corpus(corpus_config(cfg), int(cfg["seed"]))
    write_corpus(corpus, out)
    breakdown = {f"split/{k}": {"value": float(len(v)), "weight": len(v)} for k, v in sorted(corpus.splits.items())}
    breakdown.update({f"manifest/{k}": {"value": float(len(m)), "weight": len(m)}
                      for k, m in sorted(corpus.manifests.items())})
    return _stamp(Report("corpus_items", float(len(corpus.features)), breakdown), cfg)


def _training_frames(corpus: CorpusFiles, cfg: dict) -> np.ndarray:
    frames = np.concatenate([f.frames for f in corpus.split_features("train")]).astype(np.float64)
    n = int(cfg["quantizer"]["sample_frames"])
    if 0 < n < len(frames):
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), 101]))
        frames = frames[np.sort(rng.choice(len(frames), size=n, replace=False))]
    return frames


def fit_codebook(corpus: CorpusFiles, cfg: dict, k: int | None = None) -> Codebook:
    k = int(cfg["quantizer"]["k"] if k is None else k)
    return kmeans_fit(_training_frames(corpus, cfg), k, seed=int(cfg["seed"]),
                      max_iters=int(cfg["quantizer"]["max_iters"]))


def run_quantize(cfg: dict, corpus_dir, out: str | Path) -> Report:
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    cb = fit_codebook(corpus, cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_codebook(cb, out / "codebook.zcbk")
    for name, rows in sorted(corpus.splits.items()):
        if rows:
            units = [UnitSequence(assign(corpus.features[r["item_id"]].frames, cb), cb.k) for r in rows]
            write_units(units, out / f"{name}.units", [r["item_id"] for r in rows])
    breakdown = {"n_iter": {"value": float(cb.n_iter), "weight": cb.k}}
    return _stamp(Report("kmeans_inertia", float(cb.training_inertia), breakdown, {"k": cb.k}), cfg)


def _load_codebook(path, needed: bool) -> Codebook | None:
    if not needed:
        return read_codebook(path) if path is not None and Path(path).exists() else None
    return read_codebook(_require(path, "codebook"))


def train_model(cfg: dict, corpus: CorpusFiles, cb: Codebook | None, model_cfg: ModelConfig, seed: int):
    pairs = [scoring.sequences_for(model_cfg, f, cb) for f in corpus.split_features("train")]
    return train(model_cfg, [p[0] for p in pairs], [p[1] for p in pairs], masking_policy(cfg),
                 train_settings(cfg), seed)


def _model_cfg_for(cfg: dict, corpus: CorpusFiles, cb: Codebook | None) -> ModelConfig:
    discrete = "discrete" in (cfg["model"]["input_mode"], cfg["model"]["target_mode"])
    if discrete and cb is None:
        raise ValidationError("missing input: a codebook is required for discrete inputs or targets")
    return model_config(cfg, vocab_size=cb.k if cb is not None else 0, feature_dim=int(corpus.meta["config"]["dim"]))


def run_train(cfg: dict, corpus_dir, codebook, out: str | Path) -> Report:
    # validate the loss/target pairing before touching any data
    model_config(cfg, vocab_size=max(1, int(cfg["quantizer"]["k"])), feature_dim=int(cfg["corpus"]["dim"]))
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    needs_cb = "discrete" in (cfg["model"]["input_mode"], cfg["model"]["target_mode"])
    cb = _load_codebook(codebook, needs_cb)
    model_cfg = _model_cfg_for(cfg, corpus, cb)
    result = train_model(cfg, corpus, cb, model_cfg, int(cfg["seed"]))
    write_model(result.model, out)
    trace = result.loss_trace
    head = float(np.mean(trace[: min(50, len(trace))])) if trace else 0.0
    tail = float(np.mean(trace[-min(50, len(trace)):])) if trace else 0.0
    breakdown = {"loss/first50": {"value": head, "weight": min(50, len(trace))},
                 "loss/last50": {"value": tail, "weight": min(50, len(trace))}}
    notes = [f"NCE fell back to fewer negatives on {result.nce_fallback_steps} steps"] if result.nce_fallback_steps else []
    report = Report("train_loss", tail, breakdown, {"parameters": result.model.num_parameters}, notes)
    return _stamp(report, cfg)


def _load_model(path) -> MaskedPredictionModel:
    return read_model(_require(path, "model"))


def _representations(corpus: CorpusFiles, manifest: EvalManifest, representation: str, cb: Codebook | None,
                     model: MaskedPredictionModel | None, layer: int | None) -> dict[str, FeatureSequence]:
    feats = {m.item_id: corpus.item_features(m) for m in manifest}
    if representation == "features":
        return feats
    if representation == "units":
        if cb is None:
            raise ValidationError("missing input: ABX on units needs a codebook")
        return {i: dequantize(UnitSequence(assign(f.frames, cb), cb.k), cb, f.frame_rate_hz) for i, f in feats.items()}
    if representation == "hidden":
        if model is None:
            raise ValidationError("missing input: ABX on hidden states needs a model")
        lay = model.config.layers if layer is None else layer
        out = {}
        for i, f in feats.items():
            inp, _ = scoring.sequences_for(model.config, f, cb)
            fwd = model.forward(np.asarray(inp)[None], np.zeros((1, len(f)), dtype=bool))
            h = fwd.hidden[lay][0]
            out[i] = FeatureSequence(h[1:] if model.config.prepend_bos else h, f.frame_rate_hz)
        return out
    raise ValidationError(f"unknown representation {representation!r}")


def run_eval_abx(cfg: dict, corpus_dir, part: str = "test", representation: str = "features", codebook=None,
                 model_path=None, layer: int | None = None, manifest_path=None) -> Report:
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    manifest = read_manifest(_require(manifest_path, "manifest")) if manifest_path else corpus.manifest(f"abx_{part}")
    manifest = _nonempty(manifest, manifest_path or f"abx_{part}")
    cb = _load_codebook(codebook, representation == "units")
    model = _load_model(model_path) if representation == "hidden" else None
    feats = _representations(corpus, manifest, representation, cb, model, layer)
    report = abx.abx_report(manifest, feats, cfg["abx"]["aggregation"], int(cfg["jobs"]))
    return _stamp(report, cfg, representation=representation, part=part)


def _sequences(model: MaskedPredictionModel, corpus: CorpusFiles, manifests, cb) -> dict:
    out = {}
    for man in manifests:
        for m in man:
            out[m.item_id] = scoring.sequences_for(model.config, corpus.item_features(m), cb)
    return out


def evaluate_pairs(model, corpus: CorpusFiles, cb, task: str, grid, dev: EvalManifest | None = None,
                   test: EvalManifest | None = None) -> Report:
    dev = _nonempty(dev if dev is not None else corpus.manifest(f"{task}_dev"), f"{task}_dev")
    test = _nonempty(test if test is not None else corpus.manifest(f"{task}_test"), f"{task}_test")
    seqs = _sequences(model, corpus, (dev, test), cb)
    tuned = scoring.tune_inference(model, {task: dev}, seqs, windows=grid)[task]
    w = tuned["spec"]
    test_ids = {m.item_id for m in test}
    report = scoring.pair_accuracy(test, scoring.mplp_scorer(model, {k: seqs[k] for k in test_ids}, w), task)
    report.hyperparameters.update({"window_size": w.size, "window_step": w.step, "dev_value": tuned["dev_value"],
                                   "dev_grid": tuned["grid"]})
    return report


def evaluate_simi(model, corpus: CorpusFiles, cb, grid, dev: EvalManifest | None = None,
                  test: EvalManifest | None = None) -> Report:
    dev = _nonempty(dev if dev is not None else corpus.manifest("simi_dev"), "simi_dev")
    test = _nonempty(test if test is not None else corpus.manifest("simi_test"), "simi_test")
    grid = [p for p in grid if p.layer <= model.config.layers]
    seqs = _sequences(model, corpus, (dev, test), cb)
    tuned = scoring.tune_inference(model, {"simi": dev}, seqs, poolings=grid)["simi"]
    report = scoring.simi_report(model, test, seqs, tuned["spec"])
    report.hyperparameters.update({"dev_value": tuned["dev_value"], "dev_grid": tuned["grid"]})
    return report


def run_eval_pairs(cfg: dict, corpus_dir, model_path, task: str, codebook=None, dev_manifest=None,
                   test_manifest=None) -> Report:
    if task not in ("swuggy", "sblimp"):
        raise ValidationError(f"unknown pair task {task!r}")
    dev = _nonempty(read_manifest(_require(dev_manifest, "dev manifest")), str(dev_manifest)) if dev_manifest else None
    test = _nonempty(read_manifest(_require(test_manifest, "test manifest")), str(test_manifest)) if test_manifest else None
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    model = _load_model(model_path)
    cb = _load_codebook(codebook, "discrete" in (model.config.input_mode, model.config.target_mode))
    return _stamp(evaluate_pairs(model, corpus, cb, task, windows(cfg), dev, test), cfg)


def run_eval_simi(cfg: dict, corpus_dir, model_path, codebook=None, dev_manifest=None, test_manifest=None) -> Report:
    dev = _nonempty(read_manifest(_require(dev_manifest, "dev manifest")), str(dev_manifest)) if dev_manifest else None
    test = _nonempty(read_manifest(_require(test_manifest, "test manifest")), str(test_manifest)) if test_manifest else None
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    model = _load_model(model_path)
    cb = _load_codebook(codebook, "discrete" in (model.config.input_mode, model.config.target_mode))
    return _stamp(evaluate_simi(model, corpus, cb, poolings(cfg), dev, test), cfg)


def probe_inputs(corpus: CorpusFiles, cfg: dict, cb: Codebook | None):
    per = int(cfg["probe"]["max_per_speaker"])
    rows = corpus.splits["train"]
    seen: dict[str, int] = {}
    seqs, speakers = [], []
    for r in rows:
        spk = r["speaker_id"]
        if per and seen.get(spk, 0) >= per:
            continue
        seen[spk] = seen.get(spk, 0) + 1
        frames = corpus.features[r["item_id"]].frames.astype(np.float64)
        seqs.append(assign(frames, cb) if cb is not None else frames)
        speakers.append(spk)
    return seqs, speakers


def speaker_probe_report(corpus: CorpusFiles, cfg: dict, cb: Codebook | None, seed: int) -> Report:
    seqs, speakers = probe_inputs(corpus, cfg, cb)
    settings = ProbeSettings(epochs=int(cfg["probe"]["epochs"]), train=train_settings(cfg))
    res = speaker_probe(seqs, speakers, seed, "discrete" if cb is not None else "continuous",
                        vocab_size=cb.k if cb is not None else 0, feature_dim=int(corpus.meta["config"]["dim"]),
                        settings=settings)
    return res.to_report(hyperparameters={"input": f"units(k={cb.k})" if cb is not None else "features",
                                          "optimizer": settings.train.optimizer, "lr": settings.train.lr})


def run_probe(cfg: dict, corpus_dir, codebook=None) -> Report:
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    cb = read_codebook(_require(codebook, "codebook")) if codebook is not None else None
    return _stamp(speaker_probe_report(corpus, cfg, cb, int(cfg["seed"])), cfg)


def run_align(cfg: dict, corpus_dir, codebook, out_tsv: str | Path, split: str = "train") -> Report:
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    cb = read_codebook(_require(codebook, "codebook"))
    feats = corpus.split_features(split)
    if not feats:
        raise ValidationError(f"split {split!r} is empty")
    units = [assign(f.frames, cb) for f in feats]
    matrix = unit_phone_alignment(units, corpus.alignments(split), cb.k)
    out_tsv = Path(out_tsv)
    out_tsv.parent.mkdir(parents=True, exist_ok=True)
    out_tsv.write_text(matrix.to_tsv())
    return _stamp(matrix.to_report(), cfg, split=split)


SWEEP_COLUMNS = ("k", "status", "spk_probe", "abx", "swuggy", "sblimp", "simi")


def sweep_row(cfg: dict, corpus: CorpusFiles, k: int, seed: int) -> dict:
    """One row: unit quality (speaker probe, ABX on units) and language
    modelling on units (pair accuracies, similarity)."""
    cb = fit_codebook(corpus, cfg, k)
    row: dict[str, Any] = {"k": k, "status": "ok"}
    row["spk_probe"] = speaker_probe_report(corpus, cfg, cb, seed).value if cfg["sweep"]["probe"] else None
    man = _nonempty(corpus.manifest("abx_test"), "abx_test")
    feats = _representations(corpus, man, "units", cb, None, None)
    row["abx"] = abx.abx_report(man, feats, cfg["abx"]["aggregation"], int(cfg["jobs"])).value
    mcfg = dict(cfg["model"], input_mode="discrete", target_mode="discrete")
    mcfg["loss"] = mcfg["loss"] if mcfg["loss"] in ("NLL-l", "NLL-e") else "NLL-e"
    model_cfg = model_config({**cfg, "model": mcfg}, vocab_size=k, feature_dim=int(corpus.meta["config"]["dim"]))
    model = train_model(cfg, corpus, cb, model_cfg, seed).model
    row["swuggy"] = evaluate_pairs(model, corpus, cb, "swuggy", windows(cfg)).value
    row["sblimp"] = evaluate_pairs(model, corpus, cb, "sblimp", windows(cfg)).value
    row["simi"] = evaluate_simi(model, corpus, cb, poolings(cfg)).value
    return row


def run_sweep(cfg: dict, corpus_dir, out: str | Path) -> Report:
    corpus = read_corpus(_require(corpus_dir, "corpus directory"))
    rows = []
    for k in cfg["sweep"]["k"]:
        try:
            rows.append(sweep_row(cfg, corpus, int(k), int(cfg["seed"])))
        except SpokenLMError as exc:
            log.warning("sweep row k=%s failed: %s", k, exc)
            rows.append({"k": int(k), "status": f"failed: {exc}"} | {c: None for c in SWEEP_COLUMNS[2:]})
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(SWEEP_COLUMNS)]
    for r in rows:
        lines.append("\t".join("" if r[c] is None else (f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]))
                               for c in SWEEP_COLUMNS))
    out.with_name(out.name + ".table.tsv").write_text("\n".join(lines) + "\n")
    ok = [r for r in rows if r["status"] == "ok"]
    breakdown = {f"k={r['k']}/{c}": {"value": r[c], "weight": 1} for r in ok for c in SWEEP_COLUMNS[2:]
                 if r[c] is not None}
    notes = [f"k={r['k']}: {r['status']}" for r in rows if r["status"] != "ok"]
    report = Report("sweep_rows_ok", float(len(ok)), breakdown, {"rows": rows}, notes)
    return _stamp(report, cfg)


def run_grad_check(cfg: dict, losses=LOSSES, input_modes=("discrete", "continuous")) -> Report:
    """Finite-difference check of every loss on a small model (H=8, 2 layers)."""
    rng = np.random.default_rng(int(cfg["seed"]))
    breakdown = {}
    worst = 0.0
    for mode in input_modes:
        for loss in losses:
            target = "discrete" if loss in ("NLL-l", "NLL-e") else "continuous"
            mc = ModelConfig(input_mode=mode, target_mode=target, loss=loss, vocab_size=5, feature_dim=3, model_dim=8,
                             layers=2, heads=2, ffn_dim=16, nce_negatives=4, max_len=16)
            model = MaskedPredictionModel.initialize(mc, int(cfg["seed"]))
            t = 7
            x = rng.integers(0, 5, (2, t)) if mode == "discrete" else rng.normal(size=(2, t, 3))
            y = rng.integers(0, 5, (2, t)) if target == "discrete" else rng.normal(size=(2, t, 3))
            mask = rng.random((2, t)) < 0.5
            mask[:, 0] = True
            res = gradient_check(model, x, y, mask)
            breakdown[f"{mode}/{loss}"] = {"value": res.max_relative_deviation, "weight": res.checked}
            worst = max(worst, res.max_relative_deviation)
    return _stamp(Report("grad_check_max_rel_dev", worst, breakdown), cfg)
