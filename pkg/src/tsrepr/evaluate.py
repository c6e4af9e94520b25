"""Downstream evaluation: probing, fine-tuning and task metrics.

The probe paths are shared by pretrained and randomly initialized
backbones alike, so measured deltas isolate the pretraining objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import optim, tsb
from . import tensor as T
from .backbone import (
    BackboneConfig,
    PatchBatch,
    Weights,
    encode,
    instance_norm,
    weights_hash,
)
from .tensor import ShapeError, Tape, Tensor, backward


@dataclass
class ProbeSpec:
    mode: str = "linear"        # linear | mlp | finetune
    task: str = "classify"      # forecast | classify | anomaly
    epochs: int = 20
    batch_size: int = 64
    lr: float | None = None
    hidden: int = 512
    dropout: float = 0.2
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("linear", "mlp", "finetune"):
            raise ValueError(f"unknown probe mode {self.mode!r}")
        if self.task not in ("forecast", "classify", "anomaly"):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def freeze_backbone(self) -> bool:
        return self.mode != "finetune"

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return {"forecast": 2e-4, "classify": 1e-3, "anomaly": 1e-4}[self.task]


@dataclass
class ForecastTask:
    context_len: int = 336
    horizons: tuple[int, ...] = (96, 192, 336, 720)
    stride: int = 1


@dataclass
class AnomalyEvalSpec:
    threshold_percentile: float = 1.0  # 0.5 for SMD-class datasets
    point_adjust: bool = True

    def __post_init__(self):
        if not 0.0 < self.threshold_percentile < 100.0:
            raise ValueError("percentile must be in (0, 100)")


# ---------------------------------------------------------------------------
# feature extraction


def _encode_batched(x: np.ndarray, weights: Weights, cfg: BackboneConfig,
                    batch: int = 256) -> np.ndarray:
    """Frozen-backbone latents (n, N, d) for (n, T) inputs; no tape."""
    outs = []
    n_patches = x.shape[1] // cfg.patch_len
    for start in range(0, x.shape[0], batch):
        chunk = x[start : start + batch]
        b = chunk.shape[0]
        patches = PatchBatch(
            chunk[:, : n_patches * cfg.patch_len].reshape(
                b, n_patches, cfg.patch_len))
        outs.append(encode(patches, weights, cfg).data)
    return np.concatenate(outs, axis=0)


def _encode_taped(x: np.ndarray, weights: Weights,
                  cfg: BackboneConfig) -> Tensor:
    n_patches = x.shape[1] // cfg.patch_len
    b = x.shape[0]
    patches = PatchBatch(x[:, : n_patches * cfg.patch_len].reshape(
        b, n_patches, cfg.patch_len))
    return encode(patches, weights, cfg)


# ---------------------------------------------------------------------------
# probe heads


def _init_head(spec: ProbeSpec, d_in: int, d_out: int,
               rng: np.random.Generator) -> dict[str, Tensor]:
    def lin(fan_in, fan_out):
        s = 1.0 / np.sqrt(fan_in)
        return (Tensor(rng.normal(0, s, (fan_in, fan_out)).astype(np.float32),
                       requires_grad=True),
                Tensor(np.zeros(fan_out, np.float32), requires_grad=True))

    head: dict[str, Tensor] = {}
    if spec.mode == "mlp":
        head["w1"], head["b1"] = lin(d_in, spec.hidden)
        head["w2"], head["b2"] = lin(spec.hidden, d_out)
    else:
        head["w"], head["b"] = lin(d_in, d_out)
    return head


def _head_forward(head: dict[str, Tensor], x: Tensor, spec: ProbeSpec,
                  rng: np.random.Generator | None = None) -> Tensor:
    if "w1" in head:
        h = T.gelu(T.add(T.matmul(x, head["w1"]), head["b1"]))
        if rng is not None and spec.dropout > 0:
            keep = (rng.random(h.shape) >= spec.dropout).astype(np.float32)
            h = T.mul(h, keep / (1.0 - spec.dropout))
        return T.add(T.matmul(h, head["w2"]), head["b2"])
    return T.add(T.matmul(x, head["w"]), head["b"])


def _task_features(task: str, latents: np.ndarray) -> np.ndarray:
    if task == "forecast":
        n, np_, d = latents.shape
        return latents.reshape(n, np_ * d)
    if task == "classify":
        return latents.mean(axis=1)
    return latents  # anomaly: per-patch latents


def _cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = T.log_softmax(logits)
    picked = logp[np.arange(labels.shape[0]), labels]
    return T.mul(T.mean(picked), -1.0)


@dataclass
class ProbeResult:
    head: dict[str, Tensor]
    backbone: Weights
    history: list[dict] = field(default_factory=list)
    best_val: float = np.inf


def probe_train(weights: Weights, cfg: BackboneConfig, spec: ProbeSpec,
                x: np.ndarray, y: np.ndarray) -> ProbeResult:
    """Train a head on top of the backbone.

    ``x`` is (n, T) raw windows (instance-normalized internally for the
    backbone); ``y`` is (n,) int labels for classify, (n, horizon) floats
    for forecast, (n, N, patch_len) normalized patch targets for anomaly.
    With a frozen backbone its parameter bytes are asserted unchanged.
    """
    if x.shape[0] != y.shape[0] or x.shape[0] < 2:
        raise ShapeError("x/y length mismatch or too few samples")
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 31)))
    xn, _, _ = instance_norm(np.asarray(x, dtype=np.float32))
    frozen_hash = weights_hash(weights) if spec.freeze_backbone else None

    n = xn.shape[0]
    n_val = max(1, int(round(spec.val_fraction * n)))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    if spec.task == "classify":
        d_out = int(np.max(y)) + 1
        if np.min(y) < 0:
            raise ShapeError("negative class index")
    elif spec.task == "forecast":
        d_out = y.shape[1]
    else:
        d_out = cfg.patch_len

    n_patches = xn.shape[1] // cfg.patch_len
    d_feat = {"forecast": n_patches * cfg.d_model,
              "classify": cfg.d_model,
              "anomaly": cfg.d_model}[spec.task]
    head = _init_head(spec, d_feat, d_out, rng)

    params = dict(head)
    if not spec.freeze_backbone:
        for k, v in weights.items():
            v.requires_grad = True
            params[f"backbone.{k}"] = v
    opt = optim.Adam(params, lr=spec.resolved_lr())

    feats_all = None
    if spec.freeze_backbone:
        feats_all = _task_features(spec.task, _encode_batched(xn, weights, cfg))

    def batch_loss(idx, train: bool) -> Tensor:
        if feats_all is not None:
            feats = Tensor(feats_all[idx], _check=False)
        else:
            latents = _encode_taped(xn[idx], weights, cfg)
            if spec.task == "forecast":
                feats = T.reshape(latents, (len(idx), d_feat))
            elif spec.task == "classify":
                feats = T.mean(latents, axis=1)
            else:
                feats = latents
        drop_rng = rng if train else None
        out = _head_forward(head, feats, spec, rng=drop_rng)
        if spec.task == "classify":
            return _cross_entropy(out, y[idx])
        diff = T.sub(out, y[idx])
        return T.mean(T.mul(diff, diff))

    best_val = np.inf
    best_head = {k: Tensor(v.data.copy(), _check=False) for k, v in head.items()}
    history = []
    for epoch in range(spec.epochs):
        order = rng.permutation(train_idx)
        ep_loss, n_batches = 0.0, 0
        for start in range(0, len(order), spec.batch_size):
            idx = order[start : start + spec.batch_size]
            if len(idx) < 2:
                continue
            optim.zero_grads(params)
            with Tape():
                loss = batch_loss(idx, train=True)
                backward(loss)
            opt.step()
            ep_loss += float(loss.data)
            n_batches += 1
        with Tape():
            val = float(batch_loss(val_idx, train=False).data)
        history.append({"epoch": epoch, "train_loss": ep_loss / max(1, n_batches),
                        "val_loss": val})
        if val < best_val:
            best_val = val
            best_head = {k: Tensor(v.data.copy(), _check=False)
                         for k, v in head.items()}

    if frozen_hash is not None and weights_hash(weights) != frozen_hash:
        raise AssertionError("frozen backbone was modified during probing")
    return ProbeResult(best_head, weights, history, best_val)


# ---------------------------------------------------------------------------
# task metrics


def forecast_metrics(preds: np.ndarray, targets: np.ndarray
                     ) -> tuple[float, float]:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ShapeError("prediction/target shape mismatch")
    if preds.size == 0:
        raise ShapeError("empty input")
    err = preds - targets
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def predict_head(weights: Weights, cfg: BackboneConfig,
                 head: dict[str, Tensor], spec: ProbeSpec,
                 x: np.ndarray) -> np.ndarray:
    xn, _, _ = instance_norm(np.asarray(x, dtype=np.float32))
    feats = _task_features(spec.task, _encode_batched(xn, weights, cfg))
    out = _head_forward(head, Tensor(feats, _check=False), spec)
    return out.data


def anomaly_scores(weights: Weights, cfg: BackboneConfig,
                   head: dict[str, Tensor], spec: ProbeSpec,
                   series: np.ndarray) -> np.ndarray:
    """Per-time-point squared reconstruction error over a long series.

    The series is cut into non-overlapping windows of max_patches patches;
    a trailing partial window is evaluated right-aligned.
    """
    series = np.asarray(series, dtype=np.float32)
    win = cfg.patch_len * min(cfg.max_patches, 32)
    t = series.shape[0]
    scores = np.zeros(t, dtype=np.float64)
    starts = list(range(0, max(t - win + 1, 1), win))
    if t > win and starts[-1] + win < t:
        starts.append(t - win)
    covered = np.zeros(t, dtype=bool)
    for s in starts:
        chunk = series[s : s + win]
        usable = (chunk.shape[0] // cfg.patch_len) * cfg.patch_len
        if usable == 0:
            continue
        chunk = chunk[:usable]
        xn, _, _ = instance_norm(chunk[None, :])
        lat = _encode_batched(xn, weights, cfg)[0]  # (N, d)
        recon = _head_forward(head, Tensor(lat, _check=False), spec).data
        err = (recon.reshape(-1) - xn[0]) ** 2
        sl = slice(s, s + usable)
        new = ~covered[sl]
        scores[sl][new] = err[new]
        covered[sl] = True
    return scores


def threshold_by_percentile(train_scores: np.ndarray, test_scores: np.ndarray,
                            percentile: float) -> np.ndarray:
    """Flag the top ``percentile`` percent of the concatenated scores.

    Threshold is the (100 - percentile) quantile of train+test scores;
    ties at the threshold are inclusive (>=).
    """
    if not 0.0 < percentile < 100.0:
        raise ValueError("percentile must be in (0, 100)")
    train_scores = np.asarray(train_scores, dtype=np.float64)
    test_scores = np.asarray(test_scores, dtype=np.float64)
    if train_scores.size == 0 or test_scores.size == 0:
        raise ShapeError("empty score arrays")
    pool = np.concatenate([train_scores, test_scores])
    threshold = np.quantile(pool, 1.0 - percentile / 100.0)
    return test_scores >= threshold


def point_adjust(preds: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mark a whole labeled anomalous run detected if any point in it is."""
    preds = np.asarray(preds, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if preds.shape != labels.shape:
        raise ShapeError("prediction/label length mismatch")
    adjusted = preds.copy()
    t = labels.shape[0]
    i = 0
    while i < t:
        if labels[i]:
            j = i
            while j < t and labels[j]:
                j += 1
            if preds[i:j].any():
                adjusted[i:j] = True
            i = j
        else:
            i += 1
    return adjusted


def f1_score(preds: np.ndarray, labels: np.ndarray
             ) -> tuple[float, float, float]:
    preds = np.asarray(preds, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if preds.shape != labels.shape:
        raise ShapeError("prediction/label length mismatch")
    tp = int(np.sum(preds & labels))
    fp = int(np.sum(preds & ~labels))
    fn = int(np.sum(~preds & labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


def classify_head_eval(weights: Weights, cfg: BackboneConfig,
                       head: dict[str, Tensor], spec: ProbeSpec,
                       x: np.ndarray, labels: np.ndarray) -> float:
    logits = predict_head(weights, cfg, head, spec, x)
    if np.max(labels) >= logits.shape[1] or np.min(labels) < 0:
        raise ShapeError("unseen class index")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def export_embeddings(weights: Weights, cfg: BackboneConfig, x: np.ndarray,
                      labels: np.ndarray | None, out_path) -> np.ndarray:
    """Mean-pooled per-sample embeddings written as TSB1 plus CSV."""
    xn, _, _ = instance_norm(np.asarray(x, dtype=np.float32))
    pooled = _encode_batched(xn, weights, cfg).mean(axis=1)
    out_path = Path(out_path)
    tsb.write_tensor(out_path.with_suffix(".tsb"), pooled)
    with open(out_path.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"]
                        + [f"dim{i}" for i in range(pooled.shape[1])])
        for i, row in enumerate(pooled):
            label = labels[i] if labels is not None else ""
            writer.writerow([i, label] + [f"{v:.7g}" for v in row])
    return pooled
