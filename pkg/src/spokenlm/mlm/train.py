from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import TrainingDiverged, ValidationError
from .config import MaskingPolicy, ModelConfig, TrainSettings
from .core import MaskedPredictionModel, pad_batch
from .masking import sample_masks

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: MaskedPredictionModel
    loss_trace: list[float] = field(default_factory=list)
    nce_fallback_steps: int = 0


def learning_rate(settings: TrainSettings, step: int) -> float:
    """Linear warmup to the peak rate, then constant."""
    if settings.warmup_steps <= 0:
        return settings.lr
    return settings.lr * min(1.0, (step + 1) / settings.warmup_steps)


class Optimizer:
    """SGD with momentum (default) or Adam, with optional global-norm clipping."""

    def __init__(self, params: dict, settings: TrainSettings):
        self.settings = settings
        self.state = {k: np.zeros_like(v) for k, v in params.items()}
        self.second = {k: np.zeros_like(v) for k, v in params.items()} if settings.optimizer == "adam" else None
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float):
        s = self.settings
        if s.clip_norm:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > s.clip_norm:
                grads = {k: g * (s.clip_norm / norm) for k, g in grads.items()}
        self.t += 1
        for name in params:
            g = grads[name]
            if self.second is None:
                m = self.state[name]
                m *= s.momentum
                m += g
                params[name] = params[name] - lr * m
            else:
                m, v = self.state[name], self.second[name]
                m *= 0.9
                m += 0.1 * g
                v *= 0.999
                v += 0.001 * g * g
                mhat = m / (1 - 0.9 ** self.t)
                vhat = v / (1 - 0.999 ** self.t)
                params[name] = params[name] - lr * mhat / (np.sqrt(vhat) + 1e-8)


def _crop(seq, max_len, rng):
    if len(seq) <= max_len:
        return 0
    return int(rng.integers(len(seq) - max_len + 1))


def train(config: ModelConfig, inputs: Sequence, targets: Sequence, policy: MaskingPolicy,
          settings: TrainSettings, seed: int, model: MaskedPredictionModel | None = None) -> TrainResult:
    """Masked-prediction training on paired (input, target) sequences.

    Loss is computed on masked positions only. Each step sees a random crop
    of at most ``settings.crop_len`` frames per sequence. Deterministic
    given ``seed``.
    """
    if len(inputs) != len(targets) or not inputs:
        raise ValidationError("inputs and targets must be non-empty and equally long")
    for x, y in zip(inputs, targets):
        if len(x) != len(y):
            raise ValidationError("input and target sequences differ in length")
    ss = np.random.SeedSequence(seed)
    init_rng, batch_rng, mask_rng, neg_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    if model is None:
        model = MaskedPredictionModel.initialize(config, init_rng)
    model = model.astype(settings.dtype)
    crop = min(config.max_len, settings.crop_len or config.max_len)
    opt = Optimizer(model.params, settings)
    trace = []
    fallback_steps = 0
    order = np.array([], dtype=np.int64)
    d_in = config.feature_dim
    for step in range(settings.steps):
        if len(order) < settings.batch_size:
            order = np.concatenate([order, batch_rng.permutation(len(inputs))])
        picks, order = order[: settings.batch_size], order[settings.batch_size :]
        xs, ys, masks = [], [], []
        for i in picks:
            off = _crop(inputs[i], crop, batch_rng)
            x = inputs[i][off : off + crop]
            xs.append(x)
            ys.append(targets[i][off : off + crop])
            masks.append(sample_masks(policy, len(x), mask_rng)[0])
        xb, valid = pad_batch(xs, config.input_mode, d_in)
        yb, _ = pad_batch(ys, config.target_mode, config.feature_dim)
        mb, _ = pad_batch(masks, "discrete")
        res, grads = model.loss(xb, yb, mb.astype(bool) & valid, valid, negatives_seed=neg_rng)
        if not math.isfinite(res.loss):
            raise TrainingDiverged(step, res.loss)
        fallback_steps += res.nce_fallback
        trace.append(res.loss)
        opt.step(model.params, grads, learning_rate(settings, step))
        if step % 200 == 0:
            log.debug("step %d loss %.4f", step, res.loss)
    return TrainResult(model, trace, fallback_steps)
