from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MaskedPredictionModel


@dataclass
class GradCheckResult:
    max_relative_deviation: float
    worst_parameter: str
    checked: int


def relative_deviation(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients
    from dividing finite-difference noise by nothing."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(model: MaskedPredictionModel, inputs, targets, mask, valid=None, step: float = 1e-4,
                   frozen: tuple[str, ...] = (), negatives_seed: int = 0) -> GradCheckResult:
    """Compare analytic gradients with central differences for every
    trainable parameter element; returns the worst relative deviation.

    Runs on a float64 copy of the model so the differences are meaningful.
    """
    model = model.astype(np.float64)

    def loss_value():
        res, _ = model.loss(inputs, targets, mask, valid, negatives_seed=negatives_seed, need_grad=False)
        return res.loss

    _, grads = model.loss(inputs, targets, mask, valid, negatives_seed=negatives_seed)
    worst, worst_name, checked = 0.0, "", 0
    for name, param in model.params.items():
        if name in frozen:
            continue
        flat = param.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            dev = relative_deviation(g[i], (up - down) / (2 * step))
            checked += 1
            if dev > worst:
                worst, worst_name = dev, f"{name}[{i}]"
    return GradCheckResult(worst, worst_name, checked)
