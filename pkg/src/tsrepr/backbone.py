"""Channel-independent patch-Transformer encoder shared by all objectives.

Weights live in flat ``dict[str, Tensor]`` maps so the optimizer, the EMA
teacher update and the checkpoint format can treat every parameter
uniformly.  The encoder is pre-LN with a learned positional table and a
4x GELU feed-forward.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from . import tsb
from .tensor import Tensor, ShapeError, NumericError

Weights = dict[str, Tensor]


@dataclass
class BackboneConfig:
    patch_len: int = 16
    d_model: int = 256
    n_heads: int | None = None  # 16 if d_model=128, 8 if d_model=256
    n_layers: int = 8
    n_predictor_layers: int = 4
    causal: bool = False
    dropout: float = 0.0
    max_patches: int = 128
    ffn_ratio: int = 4

    def __post_init__(self):
        if self.n_heads is None:
            self.n_heads = 16 if self.d_model == 128 else 8
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.patch_len < 1 or self.n_layers < 1:
            raise ValueError("patch_len and n_layers must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


@dataclass
class PatchBatch:
    """Non-overlapping patches: values (B, N, patch_len), pad_mask (B, N)."""

    values: np.ndarray
    pad_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ShapeError("PatchBatch values must be (batch, n_patches, patch_len)")
        if self.pad_mask is None:
            self.pad_mask = np.zeros(self.values.shape[:2], dtype=bool)
        else:
            self.pad_mask = np.asarray(self.pad_mask, dtype=bool)
            if self.pad_mask.shape != self.values.shape[:2]:
                raise ShapeError("pad_mask shape mismatch")

    @property
    def n_patches(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# input plumbing


def flatten_channels(series: np.ndarray) -> list[np.ndarray]:
    """Split a (T, C) multivariate series into C univariate series."""
    series = np.asarray(series, dtype=np.float32)
    if series.ndim == 1:
        series = series[:, None]
    if series.ndim != 2 or series.shape[0] == 0:
        raise ShapeError("series must be a non-empty (T, C) array")
    return [np.ascontiguousarray(series[:, c]) for c in range(series.shape[1])]


def patchify(series: np.ndarray, patch_len: int) -> np.ndarray:
    """Cut one univariate series into floor(T / patch_len) patches.

    The trailing remainder shorter than one patch is dropped.
    """
    series = np.asarray(series, dtype=np.float32)
    if series.ndim != 1:
        raise ShapeError("patchify expects a 1-D series")
    t = series.shape[0]
    if t < patch_len:
        raise ShapeError(f"series length {t} < patch_len {patch_len}")
    n = t // patch_len
    return series[: n * patch_len].reshape(n, patch_len)


def instance_norm(window: np.ndarray, eps: float = 1e-5):
    """Standardize each row of a (B, T) batch; returns (normed, mu, sigma)."""
    window = np.asarray(window, dtype=np.float32)
    mu = window.mean(axis=-1, keepdims=True, dtype=np.float64)
    sigma = np.sqrt(window.astype(np.float64).var(axis=-1, keepdims=True) + eps)
    normed = ((window - mu) / sigma).astype(np.float32)
    return normed, mu.astype(np.float32), sigma.astype(np.float32)


# ---------------------------------------------------------------------------
# parameter initialization


def _param(rng: np.random.Generator, shape, scale: float) -> Tensor:
    return Tensor(
        rng.normal(0.0, scale, size=shape).astype(np.float32), requires_grad=True
    )


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)


def init_layer(rng, prefix: str, d_model: int, ffn_ratio: int) -> Weights:
    s = 1.0 / math.sqrt(d_model)
    d_ff = ffn_ratio * d_model
    w: Weights = {}
    w[f"{prefix}.ln1.g"] = _ones((d_model,))
    w[f"{prefix}.ln1.b"] = _zeros((d_model,))
    for name in ("wq", "wk", "wv", "wo"):
        w[f"{prefix}.attn.{name}"] = _param(rng, (d_model, d_model), s)
    w[f"{prefix}.attn.bo"] = _zeros((d_model,))
    w[f"{prefix}.ln2.g"] = _ones((d_model,))
    w[f"{prefix}.ln2.b"] = _zeros((d_model,))
    w[f"{prefix}.ffn.w1"] = _param(rng, (d_model, d_ff), s)
    w[f"{prefix}.ffn.b1"] = _zeros((d_ff,))
    w[f"{prefix}.ffn.w2"] = _param(rng, (d_ff, d_model), 1.0 / math.sqrt(d_ff))
    w[f"{prefix}.ffn.b2"] = _zeros((d_model,))
    return w


def init_encoder(cfg: BackboneConfig, rng: np.random.Generator) -> Weights:
    w: Weights = {}
    s = 1.0 / math.sqrt(cfg.patch_len)
    w["embed.w"] = _param(rng, (cfg.patch_len, cfg.d_model), s)
    w["embed.b"] = _zeros((cfg.d_model,))
    w["pos"] = _param(rng, (cfg.max_patches, cfg.d_model), 0.02)
    w["mask_token"] = _param(rng, (cfg.d_model,), 0.02)
    for i in range(cfg.n_layers):
        w.update(init_layer(rng, f"layer{i}", cfg.d_model, cfg.ffn_ratio))
    w["final.g"] = _ones((cfg.d_model,))
    w["final.b"] = _zeros((cfg.d_model,))
    return w


def init_predictor(cfg: BackboneConfig, rng: np.random.Generator) -> Weights:
    w: Weights = {}
    w["pred.pos"] = _param(rng, (cfg.max_patches, cfg.d_model), 0.02)
    for i in range(cfg.n_predictor_layers):
        w.update(init_layer(rng, f"pred{i}", cfg.d_model, cfg.ffn_ratio))
    w["pred.final.g"] = _ones((cfg.d_model,))
    w["pred.final.b"] = _zeros((cfg.d_model,))
    return w


def clone_weights(w: Weights, requires_grad: bool = False) -> Weights:
    return {
        k: Tensor(v.data.copy(), requires_grad=requires_grad, _check=False)
        for k, v in w.items()
    }


# ---------------------------------------------------------------------------
# forward pass


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(np.float32) / (1.0 - rate)
    return T.mul(x, keep)


def _attention(x: Tensor, w: Weights, prefix: str, cfg: BackboneConfig,
               attn_bias: np.ndarray | None) -> Tensor:
    b, n, d = x.shape
    h, dh = cfg.n_heads, cfg.head_dim

    def heads(t):
        t = T.reshape(t, (b, n, h, dh))
        return T.transpose(t, (0, 2, 1, 3))  # (B, H, N, dh)

    flat = T.reshape(x, (b * n, d))
    q = heads(T.reshape(T.matmul(flat, w[f"{prefix}.attn.wq"]), (b, n, d)))
    k = heads(T.reshape(T.matmul(flat, w[f"{prefix}.attn.wk"]), (b, n, d)))
    v = heads(T.reshape(T.matmul(flat, w[f"{prefix}.attn.wv"]), (b, n, d)))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if attn_bias is not None:
        scores = T.add(scores, attn_bias)
    probs = T.softmax(scores)
    ctx = T.matmul(probs, v)  # (B, H, N, dh)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b * n, d))
    out = T.add(T.matmul(ctx, w[f"{prefix}.attn.wo"]), w[f"{prefix}.attn.bo"])
    return T.reshape(out, (b, n, d))


def _ffn(x: Tensor, w: Weights, prefix: str) -> Tensor:
    b, n, d = x.shape
    flat = T.reshape(x, (b * n, d))
    h = T.gelu(T.add(T.matmul(flat, w[f"{prefix}.ffn.w1"]), w[f"{prefix}.ffn.b1"]))
    out = T.add(T.matmul(h, w[f"{prefix}.ffn.w2"]), w[f"{prefix}.ffn.b2"])
    return T.reshape(out, (b, n, d))


def _attn_bias(n: int, pad_mask: np.ndarray | None, causal: bool) -> np.ndarray | None:
    """Additive (B or 1, 1, N, N) bias: large negative at disallowed keys."""
    neg = np.float32(-1e9)
    bias = None
    if causal:
        tri = np.triu(np.ones((n, n), dtype=bool), k=1)
        bias = np.where(tri, neg, np.float32(0.0))[None, None]
    if pad_mask is not None and pad_mask.any():
        pm = pad_mask[:, None, None, :]  # mask keys
        pb = np.where(pm, neg, np.float32(0.0)).astype(np.float32)
        bias = pb if bias is None else bias + pb
    return bias


def run_stack(x: Tensor, w: Weights, cfg: BackboneConfig, layer_prefixes,
              final_prefix: str, attn_bias=None, rng=None) -> Tensor:
    for prefix in layer_prefixes:
        normed = T.layer_norm(x, w[f"{prefix}.ln1.g"], w[f"{prefix}.ln1.b"])
        x = T.add(x, _dropout(_attention(normed, w, prefix, cfg, attn_bias),
                              cfg.dropout, rng))
        normed = T.layer_norm(x, w[f"{prefix}.ln2.g"], w[f"{prefix}.ln2.b"])
        x = T.add(x, _dropout(_ffn(normed, w, prefix), cfg.dropout, rng))
    out = T.layer_norm(x, w[f"{final_prefix}.g"], w[f"{final_prefix}.b"])
    if not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite activation after final norm")
    return out


def encode(patches: PatchBatch, weights: Weights, cfg: BackboneConfig,
           patch_mask: np.ndarray | None = None,
           rng: np.random.Generator | None = None) -> Tensor:
    """Encode a PatchBatch to per-patch latents (B, N, d_model).

    ``patch_mask`` (B, N) replaces masked patch embeddings by the learned
    mask token before positional encoding (MAE/JEPA style).  ``rng``
    enables dropout; omit it for deterministic evaluation.
    """
    b, n, p = patches.values.shape
    if p != cfg.patch_len:
        raise ShapeError(f"patch_len {p} != config {cfg.patch_len}")
    if n > cfg.max_patches:
        raise ShapeError(f"{n} patches exceed positional table {cfg.max_patches}")
    flat = T.reshape(Tensor(patches.values, _check=True), (b * n, p))
    x = T.reshape(T.add(T.matmul(flat, weights["embed.w"]), weights["embed.b"]),
                  (b, n, cfg.d_model))
    if patch_mask is not None:
        mask3 = np.asarray(patch_mask, dtype=bool)[:, :, None]
        tok = T.reshape(weights["mask_token"], (1, 1, cfg.d_model))
        x = T.add(T.mul(x, (~mask3).astype(np.float32)),
                  T.mul(T.expand(tok, (b, n, cfg.d_model)), mask3.astype(np.float32)))
    x = T.add(x, weights["pos"][:n])
    bias = _attn_bias(n, patches.pad_mask if patches.pad_mask.any() else None,
                      cfg.causal)
    out = run_stack(x, weights, cfg, [f"layer{i}" for i in range(cfg.n_layers)],
                    "final", attn_bias=bias, rng=rng)
    if patches.pad_mask.any():
        out = T.mul(out, (~patches.pad_mask[:, :, None]).astype(np.float32))
    return out


def run_predictor(latents: Tensor, weights: Weights, cfg: BackboneConfig,
                  rng=None) -> Tensor:
    n = latents.shape[1]
    x = T.add(latents, weights["pred.pos"][:n])
    return run_stack(x, weights, cfg,
                     [f"pred{i}" for i in range(cfg.n_predictor_layers)],
                     "pred.final", rng=rng)


# ---------------------------------------------------------------------------
# EMA teacher


def ema_update(teacher: Weights, student: Weights, momentum: float) -> None:
    """teacher <- momentum * teacher + (1 - momentum) * student, in place."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must be in [0, 1]")
    if set(teacher) != set(student):
        raise ShapeError("teacher/student parameter sets differ")
    m = np.float32(momentum)
    for k in teacher:
        t, s = teacher[k], student[k]
        if t.data.shape != s.data.shape:
            raise ShapeError(f"shape mismatch for {k}")
        t.data *= m
        t.data += (np.float32(1.0) - m) * s.data


# ---------------------------------------------------------------------------
# checkpoints


def weights_hash(w: Weights) -> str:
    h = hashlib.sha256()
    for k in sorted(w):
        h.update(k.encode())
        h.update(np.ascontiguousarray(w[k].data).tobytes())
    return h.hexdigest()


def save_backbone(path, weights: Weights, cfg: BackboneConfig, *,
                  objective: str = "none", data_source: str = "none",
                  seed: int = 0, epoch: int = 0, extra: dict | None = None) -> None:
    header = {
        "config": cfg.to_dict(),
        "objective": objective,
        "data_source": data_source,
        "seed": seed,
        "epoch": epoch,
    }
    if extra:
        header.update(extra)
    tsb.save_checkpoint(path, header, {k: v.data for k, v in weights.items()})


def load_backbone(path) -> tuple[Weights, BackboneConfig, dict]:
    header, tensors = tsb.load_checkpoint(path)
    cfg = BackboneConfig.from_dict(header["config"])
    weights = {k: Tensor(v, requires_grad=True, _check=False)
               for k, v in tensors.items()}
    return weights, cfg, header
