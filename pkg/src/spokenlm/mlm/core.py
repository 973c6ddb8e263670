from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .config import ModelConfig
from .losses import LossResult, compute_loss, head_outputs, init_head
from .model import EncoderOutput, encode, encode_backward, init_params


def pad_batch(seqs, mode: str, feature_dim: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad a list of sequences. Returns (batch, valid)."""
    lengths = [len(s) for s in seqs]
    t = max(lengths)
    valid = np.zeros((len(seqs), t), dtype=bool)
    if mode == "discrete":
        batch = np.zeros((len(seqs), t), dtype=np.int64)
    else:
        batch = np.zeros((len(seqs), t, feature_dim))
    for i, s in enumerate(seqs):
        batch[i, : len(s)] = s
        valid[i, : len(s)] = True
    return batch, valid


@dataclass
class ForwardResult:
    outputs: np.ndarray
    hidden: list[np.ndarray]
    encoder: EncoderOutput


class MaskedPredictionModel:
    """Encoder plus output head for one input/target regime and loss."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, seed) -> "MaskedPredictionModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        params = init_params(config, rng)
        params.update(init_head(config, rng))
        return cls(config, params)

    def astype(self, dtype) -> "MaskedPredictionModel":
        return MaskedPredictionModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def _body(self, z):
        return z[:, 1:] if self.config.prepend_bos else z

    def forward(self, inputs, mask, valid=None) -> ForwardResult:
        enc = encode(self.params, self.config, inputs, mask, valid)
        return ForwardResult(head_outputs(self.params, self.config, self._body(enc.final)), enc.hidden, enc)

    def loss(self, inputs, targets, mask, valid=None, positions=None, negatives_seed=0,
             need_grad: bool = True) -> tuple[LossResult, dict]:
        """Loss on ``positions`` (default: the masked valid positions).

        Returns the loss result and, if ``need_grad``, gradients for every
        parameter.
        """
        mask = np.asarray(mask, dtype=bool)
        if valid is None:
            valid = np.ones(mask.shape, dtype=bool)
        if positions is None:
            positions = mask & valid
        enc = encode(self.params, self.config, inputs, mask, valid)
        body_valid = valid
        res = compute_loss(self.params, self.config, self._body(enc.final), targets, positions, body_valid,
                           negatives_seed, need_grad)
        if not need_grad:
            return res, {}
        grads = dict(res.grads)
        dfinal = res.dz
        if self.config.prepend_bos:
            dfinal = np.concatenate([np.zeros_like(dfinal[:, :1]), dfinal], axis=1)
        encode_backward(self.params, self.config, enc, dfinal, grads)
        for name, value in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(value)
        return res, grads

    def bos_loss(self, inputs, labels, valid=None, need_grad: bool = True) -> tuple[LossResult, dict, np.ndarray]:
        """Cross-entropy of a classifier on the BOS position (speaker probe)."""
        if not self.config.prepend_bos or self.config.loss != "NLL-l":
            raise ValidationError("bos_loss needs prepend_bos and an NLL-l head")
        inputs = np.asarray(inputs)
        b, t = inputs.shape[:2]
        mask = np.zeros((b, t), dtype=bool)
        if valid is None:
            valid = np.ones((b, t), dtype=bool)
        enc = encode(self.params, self.config, inputs, mask, valid)
        z0 = enc.final[:, :1]
        positions = np.ones((b, 1), dtype=bool)
        res = compute_loss(self.params, self.config, z0, np.asarray(labels)[:, None], positions, None, 0, need_grad)
        logits = z0[:, 0] @ self.params["head.w"] + self.params["head.b"]
        if not need_grad:
            return res, {}, logits
        grads = dict(res.grads)
        dfinal = np.zeros_like(enc.final)
        dfinal[:, :1] = res.dz
        encode_backward(self.params, self.config, enc, dfinal, grads)
        for name, value in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(value)
        return res, grads, logits
