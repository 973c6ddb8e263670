"""Pre-LN transformer encoder in numpy with hand-written backward passes.

Arithmetic follows the parameter dtype: float64 for finite-difference
gradient checks, float32 for training and scoring. Batches are right-padded; ``valid`` marks real positions and
padded keys receive zero attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError, ValidationError
from .config import ModelConfig

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_NEG = -1e30  # finite so fully padded rows never produce NaN


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    h, f = cfg.model_dim, cfg.ffn_dim
    p: dict[str, np.ndarray] = {}

    def dense(name, n_in, n_out):
        p[f"{name}.w"] = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
        p[f"{name}.b"] = np.zeros(n_out)

    if cfg.input_mode == "discrete":
        p["in.embed"] = rng.normal(0.0, 1.0, size=(cfg.vocab_size, h))
    else:
        dense("in.proj", cfg.feature_dim, h)
    p["mask_emb"] = rng.normal(0.0, 1.0, size=h)
    if cfg.prepend_bos:
        p["bos"] = rng.normal(0.0, 1.0, size=h)
    if cfg.use_positions:
        p["pos"] = sinusoid_table(cfg.max_len + int(cfg.prepend_bos), h)
    for layer in range(cfg.layers):
        pre = f"l{layer}"
        p[f"{pre}.ln1.g"] = np.ones(h)
        p[f"{pre}.ln1.b"] = np.zeros(h)
        for name in ("q", "k", "v", "o"):
            dense(f"{pre}.attn.{name}", h, h)
        p[f"{pre}.ln2.g"] = np.ones(h)
        p[f"{pre}.ln2.b"] = np.zeros(h)
        dense(f"{pre}.ff1", h, f)
        dense(f"{pre}.ff2", f, h)
    p["lnf.g"] = np.ones(h)
    p["lnf.b"] = np.zeros(h)
    return p


def sinusoid_table(n: int, h: int, base: float = 300.0) -> np.ndarray:
    """Starting point for the learned position table. Random starts leave
    masked queries without a usable notion of locality and training sits on
    a long plateau."""
    pos = np.arange(n)[:, None]
    freq = base ** (-2.0 * np.arange((h + 1) // 2) / h)
    table = np.zeros((n, h))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)[:, : h // 2]
    return 1.5 * table


# --- primitives ------------------------------------------------------------------


def layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layer_norm_back(dy, cache):
    xhat, rstd, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def gelu(u):
    t = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u * u))
    return 0.5 * u * (1.0 + t), t


def gelu_back(dy, u, t):
    inner = _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return dy * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * inner)


def _outer(x, dy):
    """sum over batch and time of x^T dy"""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def softmax(x, axis=-1):
    e = np.exp(x - x.max(axis, keepdims=True))
    return e / e.sum(axis, keepdims=True)


def log_softmax(x, axis=-1):
    s = x - x.max(axis, keepdims=True)
    return s - np.log(np.exp(s).sum(axis, keepdims=True))


# --- encoder ---------------------------------------------------------------------


@dataclass
class EncoderOutput:
    hidden: list[np.ndarray]  # layer 0 (embeddings) .. layer L (last block), un-normalized
    final: np.ndarray  # final layer norm of hidden[-1]; what heads consume
    valid: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def _embed(params, cfg, inputs, mask):
    if cfg.input_mode == "discrete":
        x = np.asarray(inputs)
        if x.ndim != 2:
            raise ValidationError(f"discrete inputs must be B x T, got {x.shape}")
        if x.size and (x.min() < 0 or x.max() >= cfg.vocab_size):
            raise ValidationError("input unit index out of range")
        e = params["in.embed"][x]
    else:
        x = np.asarray(inputs, dtype=params["in.proj.w"].dtype)
        if x.ndim != 3 or x.shape[2] != cfg.feature_dim:
            raise ValidationError(f"continuous inputs must be B x T x {cfg.feature_dim}, got {x.shape}")
        e = x @ params["in.proj.w"] + params["in.proj.b"]
    return np.where(mask[..., None], params["mask_emb"], e), x


def encode(params: dict, cfg: ModelConfig, inputs, mask, valid=None) -> EncoderOutput:
    mask = np.asarray(mask, dtype=bool)
    b, t = mask.shape
    if valid is None:
        valid = np.ones((b, t), dtype=bool)
    if t > cfg.max_len:
        raise ValidationError(f"sequence length {t} exceeds max_len {cfg.max_len}")
    e, x = _embed(params, cfg, inputs, mask)
    if e.shape[:2] != (b, t):
        raise ValidationError(f"inputs shape {e.shape[:2]} does not match mask shape {(b, t)}")
    if cfg.prepend_bos:
        e = np.concatenate([np.broadcast_to(params["bos"], (b, 1, cfg.model_dim)), e], axis=1)
        valid = np.concatenate([np.ones((b, 1), dtype=bool), valid], axis=1)
        t += 1
    if cfg.use_positions:
        e = e + params["pos"][:t]
    cache = {"x": x, "mask": mask, "t": t, "blocks": []}
    keybias = np.where(valid, 0.0, _NEG).astype(e.dtype)[:, None, None, :]
    hidden = [e]
    h = e
    nh, dh = cfg.heads, cfg.model_dim // cfg.heads
    scale = 1.0 / math.sqrt(dh)
    for layer in range(cfg.layers):
        pre = f"l{layer}"
        a, ln1 = layer_norm(h, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])

        def split(z):
            return z.reshape(b, t, nh, dh).transpose(0, 2, 1, 3)

        q = split(a @ params[f"{pre}.attn.q.w"] + params[f"{pre}.attn.q.b"])
        k = split(a @ params[f"{pre}.attn.k.w"] + params[f"{pre}.attn.k.b"])
        v = split(a @ params[f"{pre}.attn.v.w"] + params[f"{pre}.attn.v.b"])
        probs = softmax(q @ k.transpose(0, 1, 3, 2) * scale + keybias)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(b, t, cfg.model_dim)
        h1 = h + ctx @ params[f"{pre}.attn.o.w"] + params[f"{pre}.attn.o.b"]
        c, ln2 = layer_norm(h1, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        u = c @ params[f"{pre}.ff1.w"] + params[f"{pre}.ff1.b"]
        g, tg = gelu(u)
        h2 = h1 + g @ params[f"{pre}.ff2.w"] + params[f"{pre}.ff2.b"]
        if not np.all(np.isfinite(h2[valid])):
            raise NonFiniteError(layer + 1)
        cache["blocks"].append((a, ln1, q, k, v, probs, ctx, c, ln2, u, g, tg))
        hidden.append(h2)
        h = h2
    final, lnf = layer_norm(h, params["lnf.g"], params["lnf.b"])
    cache["lnf"] = lnf
    return EncoderOutput(hidden, final, valid, cache)


def encode_backward(params: dict, cfg: ModelConfig, out: EncoderOutput, dfinal: np.ndarray,
                    grads: dict[str, np.ndarray]):
    """Accumulate parameter gradients into ``grads`` given d loss / d final."""
    cache = out.cache
    t = cache["t"]
    b = dfinal.shape[0]
    nh, dh = cfg.heads, cfg.model_dim // cfg.heads
    scale = 1.0 / math.sqrt(dh)

    def acc(name, g):
        grads[name] = grads[name] + g if name in grads else g

    dh_, dg, db = layer_norm_back(dfinal, cache["lnf"])
    acc("lnf.g", dg)
    acc("lnf.b", db)
    for layer in reversed(range(cfg.layers)):
        pre = f"l{layer}"
        a, ln1, q, k, v, probs, ctx, c, ln2, u, g, tg = cache["blocks"][layer]
        # feed-forward
        acc(f"{pre}.ff2.w", _outer(g, dh_))
        acc(f"{pre}.ff2.b", dh_.sum((0, 1)))
        du = gelu_back(dh_ @ params[f"{pre}.ff2.w"].T, u, tg)
        acc(f"{pre}.ff1.w", _outer(c, du))
        acc(f"{pre}.ff1.b", du.sum((0, 1)))
        dc = du @ params[f"{pre}.ff1.w"].T
        dx, dgn, dbn = layer_norm_back(dc, ln2)
        acc(f"{pre}.ln2.g", dgn)
        acc(f"{pre}.ln2.b", dbn)
        dh1 = dh_ + dx
        # attention
        acc(f"{pre}.attn.o.w", _outer(ctx, dh1))
        acc(f"{pre}.attn.o.b", dh1.sum((0, 1)))
        dctx = (dh1 @ params[f"{pre}.attn.o.w"].T).reshape(b, t, nh, dh).transpose(0, 2, 1, 3)
        dprobs = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ dctx
        ds = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q

        def merge(z):
            return z.transpose(0, 2, 1, 3).reshape(b, t, cfg.model_dim)

        da = np.zeros_like(a)
        for name, dz in (("q", dq), ("k", dk), ("v", dv)):
            dz = merge(dz)
            acc(f"{pre}.attn.{name}.w", _outer(a, dz))
            acc(f"{pre}.attn.{name}.b", dz.sum((0, 1)))
            da += dz @ params[f"{pre}.attn.{name}.w"].T
        dx, dgn, dbn = layer_norm_back(da, ln1)
        acc(f"{pre}.ln1.g", dgn)
        acc(f"{pre}.ln1.b", dbn)
        dh_ = dh1 + dx
    de = dh_
    if cfg.use_positions:
        dpos = np.zeros_like(params["pos"])
        dpos[:t] = de.sum(0)
        acc("pos", dpos)
    if cfg.prepend_bos:
        acc("bos", de[:, 0].sum(0))
        de = de[:, 1:]
    mask = cache["mask"]
    acc("mask_emb", de[mask].sum(0))
    de = np.where(mask[..., None], 0.0, de)
    if cfg.input_mode == "discrete":
        demb = np.zeros_like(params["in.embed"])
        np.add.at(demb, cache["x"], de)
        acc("in.embed", demb)
    else:
        acc("in.proj.w", _outer(cache["x"], de))
        acc("in.proj.b", de.sum((0, 1)))
