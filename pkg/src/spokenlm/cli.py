"""Command-line entry point.

Usage:
    spokenlm gen --out runs/corpus --set seed=3
    spokenlm quantize --corpus runs/corpus --out runs/units --set quantizer.k=20
    spokenlm train --corpus runs/corpus --codebook runs/units/codebook.zcbk --out runs/model.zmlm
    spokenlm eval-pairs --corpus runs/corpus --model runs/model.zmlm --codebook runs/units/codebook.zcbk --task swuggy
    spokenlm sweep --corpus runs/corpus --out runs/sweep --set "sweep.k=[20,50]"

Every command writes <report>.json/.tsv/.txt; the JSON embeds the resolved
config. Errors exit with status 2 and a one-line message.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import SpokenLMError

log = logging.getLogger("spokenlm")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config; missing keys fall back to defaults")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. --set train.steps=500 (repeatable)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for ABX scoring")
    p.add_argument("--report", help="report stem (default depends on the command)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spokenlm", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    _common(p)
    p.add_argument("--out", required=True, help="corpus directory")

    p = sub.add_parser("quantize", help="fit a k-means codebook and write unit files")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory for codebook.zcbk and *.units")

    p = sub.add_parser("train", help="train a masked-prediction model")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--codebook", help="needed for discrete inputs or targets")
    p.add_argument("--out", required=True, help="model file (.zmlm)")

    p = sub.add_parser("eval-abx", help="ABX error on features, dequantized units or hidden states")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--part", default="test", choices=("dev", "test"))
    p.add_argument("--representation", default="features", choices=("features", "units", "hidden"))
    p.add_argument("--codebook")
    p.add_argument("--model")
    p.add_argument("--layer", type=int, help="hidden layer for --representation hidden (default: last)")
    p.add_argument("--manifest", help="ABX manifest (default: the corpus one for --part)")

    p = sub.add_parser("eval-pairs", help="spot-the-word or acceptability accuracy via m-PLP")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--codebook")
    p.add_argument("--task", default="swuggy", choices=("swuggy", "sblimp"))
    p.add_argument("--dev-manifest")
    p.add_argument("--test-manifest")

    p = sub.add_parser("eval-simi", help="weighted similarity correlation")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--codebook")
    p.add_argument("--dev-manifest")
    p.add_argument("--test-manifest")

    p = sub.add_parser("probe-speaker", help="speaker-identity probe on features or units")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--codebook", help="probe quantized units instead of continuous features")

    p = sub.add_parser("align-units", help="unit/phone co-occurrence matrix")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--split", default="train", choices=("train", "dev", "test"))
    p.add_argument("--out", required=True, help="TSV of P(phone | unit) in dendrogram order")

    p = sub.add_parser("sweep", help="one row of metrics per codebook size")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="stem for the sweep table and report")

    p = sub.add_parser("grad-check", help="finite-difference check of every loss")
    _common(p)
    return parser


def _config(args) -> dict:
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    return pipeline.load_config(args.config, overrides)


def run(args) -> Path:
    cfg = _config(args)
    cmd = args.command
    if cmd == "gen":
        report, stem = pipeline.run_gen(cfg, args.out), Path(args.out) / "report"
    elif cmd == "quantize":
        report, stem = pipeline.run_quantize(cfg, args.corpus, args.out), Path(args.out) / "report"
    elif cmd == "train":
        report, stem = pipeline.run_train(cfg, args.corpus, args.codebook, args.out), Path(args.out).with_suffix("")
    elif cmd == "eval-abx":
        report = pipeline.run_eval_abx(cfg, args.corpus, args.part, args.representation, args.codebook, args.model,
                                       args.layer, args.manifest)
        stem = Path(f"abx_{args.representation}_{args.part}")
    elif cmd == "eval-pairs":
        report = pipeline.run_eval_pairs(cfg, args.corpus, args.model, args.task, args.codebook, args.dev_manifest,
                                         args.test_manifest)
        stem = Path(args.task)
    elif cmd == "eval-simi":
        report = pipeline.run_eval_simi(cfg, args.corpus, args.model, args.codebook, args.dev_manifest,
                                        args.test_manifest)
        stem = Path("simi")
    elif cmd == "probe-speaker":
        report, stem = pipeline.run_probe(cfg, args.corpus, args.codebook), Path("speaker_probe")
    elif cmd == "align-units":
        report = pipeline.run_align(cfg, args.corpus, args.codebook, args.out, args.split)
        stem = Path(args.out).with_suffix(".report")
    elif cmd == "sweep":
        report, stem = pipeline.run_sweep(cfg, args.corpus, args.out), Path(args.out)
    elif cmd == "grad-check":
        report, stem = pipeline.run_grad_check(cfg), Path("grad_check")
    else:  # pragma: no cover - argparse rejects unknown commands
        raise SystemExit(f"unknown command {cmd}")
    if args.report:
        stem = Path(args.report)
    report.write(stem)
    sys.stdout.write(report.to_text())
    return stem


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except SpokenLMError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
