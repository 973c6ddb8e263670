"""Discrete versus continuous inputs and targets for masked spoken language
models, studied on synthetic corpora with known phone structure."""

from .data import (EvalManifest, FeatureSequence, ManifestItem, PhoneAlignment, Report, UnitSequence, read_alignment,
                   read_features, read_manifest, read_units, write_alignment, write_features, write_manifest,
                   write_units)
from .errors import *  # noqa: F401,F403
from .quantizer import Codebook, assign, dequantize, kmeans_fit, quantize, read_codebook, write_codebook
from .synth import Corpus, CorpusConfig, generate_corpus, write_corpus

__version__ = "0.1.0"
