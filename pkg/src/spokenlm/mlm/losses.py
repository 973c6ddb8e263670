"""Output heads, the five training objectives and per-position PLP.

Every objective is the mean over the selected positions of a per-position
loss; the pseudo log-probability of a position is the negative of that
per-position loss (log softmax probability for NLL-l, NLL-e and NCE,
negative reconstruction error for L1 and L2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .config import ModelConfig
from .model import log_softmax, softmax

NORM_EPS = 1e-12


def init_head(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    h = cfg.model_dim
    p = {}
    if cfg.loss == "NLL-l":
        p["head.w"] = rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, cfg.target_vocab_size))
        p["head.b"] = np.zeros(cfg.target_vocab_size)
    elif cfg.loss == "NLL-e":
        p["head.proj.w"] = rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, h))
        p["head.proj.b"] = np.zeros(h)
        if not cfg.tied:
            p["head.unit_embed"] = rng.normal(0.0, 1.0, size=(cfg.target_vocab_size, h))
    else:
        p["head.w"] = rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, cfg.feature_dim))
        p["head.b"] = np.zeros(cfg.feature_dim)
    return p


def unit_table_name(cfg: ModelConfig) -> str:
    return "in.embed" if cfg.tied else "head.unit_embed"


def _normalize(x):
    n = np.sqrt((x * x).sum(-1, keepdims=True) + NORM_EPS)
    return x / n, n


def _normalize_back(dxn, xn, n):
    return (dxn - xn * (dxn * xn).sum(-1, keepdims=True)) / n


def head_outputs(params: dict, cfg: ModelConfig, z: np.ndarray) -> np.ndarray:
    """Logits over units (NLL-*) or predicted feature vectors (L1, L2, NCE)."""
    if cfg.loss == "NLL-l":
        return z @ params["head.w"] + params["head.b"]
    if cfg.loss == "NLL-e":
        un, _ = _normalize(z @ params["head.proj.w"] + params["head.proj.b"])
        en, _ = _normalize(params[unit_table_name(cfg)])
        return un @ en.T / cfg.temperature
    return z @ params["head.w"] + params["head.b"]


@dataclass
class LossResult:
    loss: float
    plp: np.ndarray  # per selected position, in np.nonzero(positions) order
    dz: np.ndarray | None = None
    grads: dict = field(default_factory=dict)
    nce_fallback: bool = False
    nce_candidates: list = field(default_factory=list)


def sample_negatives(cfg: ModelConfig, positions: np.ndarray, valid: np.ndarray, seed) -> tuple[list, bool]:
    """Negative frame indices for each selected position, drawn without
    replacement from the other valid positions of the same sequence.

    Returns one (b, selected_times, negatives[len(selected), n]) block per
    sequence, plus whether any sequence had fewer than ``nce_negatives``
    candidates.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out, fallback = [], False
    for b in range(positions.shape[0]):
        sel = np.flatnonzero(positions[b])
        n_valid = int(valid[b].sum())
        if not len(sel):
            continue
        n = min(cfg.nce_negatives, n_valid - 1)
        fallback |= n < cfg.nce_negatives
        keys = rng.random((len(sel), n_valid))
        keys[np.arange(len(sel)), sel] = 2.0
        negs = np.argsort(keys, axis=1, kind="stable")[:, :n]
        out.append((b, sel, negs))
    return out, fallback


def compute_loss(params: dict, cfg: ModelConfig, z: np.ndarray, targets, positions: np.ndarray,
                 valid: np.ndarray | None = None, negatives_seed=0, need_grad: bool = True) -> LossResult:
    """Loss over the ``positions`` (B x T bool) of ``z`` (B x T x H)."""
    positions = np.asarray(positions, dtype=bool)
    if valid is None:
        valid = np.ones(positions.shape, dtype=bool)
    if np.any(positions & ~valid):
        raise ValidationError("loss positions include padding")
    idx = np.nonzero(positions)
    n = len(idx[0])
    if n == 0:
        raise ValidationError("no positions selected for the loss")
    zs = z[idx]
    targets = np.asarray(targets)
    grads: dict[str, np.ndarray] = {}
    fallback = False
    candidates = []

    if cfg.loss in ("NLL-l", "NLL-e"):
        tgt = targets[idx].astype(np.int64)
        if tgt.min() < 0 or tgt.max() >= cfg.target_vocab_size:
            raise ValidationError("target unit index out of range")
        if cfg.loss == "NLL-l":
            logits = zs @ params["head.w"] + params["head.b"]
        else:
            u = zs @ params["head.proj.w"] + params["head.proj.b"]
            un, unorm = _normalize(u)
            table = params[unit_table_name(cfg)]
            en, enorm = _normalize(table)
            logits = un @ en.T / cfg.temperature
        logp = log_softmax(logits)
        plp = logp[np.arange(n), tgt]
        loss = -plp.mean()
        dz = None
        if need_grad:
            dlogits = softmax(logits)
            dlogits[np.arange(n), tgt] -= 1.0
            dlogits /= n
            if cfg.loss == "NLL-l":
                grads["head.w"] = zs.T @ dlogits
                grads["head.b"] = dlogits.sum(0)
                dzs = dlogits @ params["head.w"].T
            else:
                dun = dlogits @ en / cfg.temperature
                den = dlogits.T @ un / cfg.temperature
                du = _normalize_back(dun, un, unorm)
                grads["head.proj.w"] = zs.T @ du
                grads["head.proj.b"] = du.sum(0)
                grads[unit_table_name(cfg)] = _normalize_back(den, en, enorm)
                dzs = du @ params["head.proj.w"].T
    else:
        tgt_all = np.asarray(targets, dtype=z.dtype)
        if tgt_all.ndim != 3 or tgt_all.shape[2] != cfg.feature_dim:
            raise ValidationError(f"continuous targets must be B x T x {cfg.feature_dim}")
        pred = zs @ params["head.w"] + params["head.b"]
        tgt = tgt_all[idx]
        diff = pred - tgt
        if cfg.loss == "L1":
            per = np.abs(diff).mean(1)
            dpred = np.sign(diff) / cfg.feature_dim
        elif cfg.loss == "L2":
            per = (diff * diff).mean(1)
            dpred = 2.0 * diff / cfg.feature_dim
        else:
            blocks, fallback = sample_negatives(cfg, positions, valid, negatives_seed)
            pn, pnorm = _normalize(pred)
            per = np.empty(n, dtype=pred.dtype)
            dpn = np.empty_like(pred)
            row = 0
            for b, sel, neg in blocks:
                cand = np.concatenate([tgt_all[b, sel][:, None], tgt_all[b][neg]], axis=1)
                cn, _ = _normalize(cand)
                rows = slice(row, row + len(sel))
                logits = np.einsum("skd,sd->sk", cn, pn[rows]) / cfg.temperature
                per[rows] = -log_softmax(logits)[:, 0]
                dl = softmax(logits)
                dl[:, 0] -= 1.0
                dpn[rows] = np.einsum("sk,skd->sd", dl, cn) / cfg.temperature
                candidates.extend([cand.shape[1]] * len(sel))
                row += len(sel)
            dpred = _normalize_back(dpn, pn, pnorm)
        plp = -per
        loss = per.mean()
        dz = None
        if need_grad:
            dpred = dpred / n
            grads["head.w"] = zs.T @ dpred
            grads["head.b"] = dpred.sum(0)
            dzs = dpred @ params["head.w"].T
    if need_grad:
        dz = np.zeros_like(z)
        dz[idx] = dzs
    return LossResult(float(loss), plp, dz, grads, fallback, candidates)
