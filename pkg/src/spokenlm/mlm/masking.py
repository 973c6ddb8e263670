from __future__ import annotations

import math

import numpy as np

from .config import MaskingPolicy


def sample_masks(policy: MaskingPolicy, length: int, seed) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Span masking until ``policy.coverage`` of the positions are masked.

    Span starts are uniform over the sequence and span lengths are
    ``max(1, round(Normal(span_mean, span_std)))``, clipped at the end.
    Spans may overlap. The span that crosses the target is trimmed so the
    realized coverage stays at or below ``max_coverage`` (never below the
    target). Returns the boolean mask and the ``(start, stop)`` spans.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    need = max(1, math.ceil(policy.coverage * length))
    cap = max(need, math.floor(policy.max_coverage * length))
    mask = np.zeros(length, dtype=bool)
    spans = []
    covered = 0
    while covered < need:
        start = int(rng.integers(length))
        span = max(1, int(round(rng.normal(policy.span_mean, policy.span_std))))
        stop = min(length, start + span)
        fresh = np.flatnonzero(~mask[start:stop])
        if covered + len(fresh) > cap:
            stop = start + int(fresh[cap - covered - 1]) + 1
        newly = int((~mask[start:stop]).sum())
        mask[start:stop] = True
        covered += newly
        spans.append((start, stop))
    return mask, spans
