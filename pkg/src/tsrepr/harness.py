"""Experiment orchestration: run configs, ingestion, metrics, sweeps.

A run pretrains a backbone per seed (or skips pretraining for the
baseline), evaluates a fixed task battery through one shared probe code
path, and appends per-seed plus mean/std metric rows.  Reruns skip
completed (seed, task) pairs, so interrupted runs resume cleanly.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import evaluate, objectives, synthgen, tsb
from .backbone import BackboneConfig, init_encoder, instance_norm
from .objectives import ArrayCorpus, PretrainConfig
from .tensor import NumericError


class ConfigError(ValueError):
    """Invalid or unknown run configuration (exit code 2)."""


class DataError(ValueError):
    """Missing or malformed input data (exit code 3)."""


DEFAULT_SEEDS = (2003, 123, 456, 789, 1337)
DATA_SOURCES = ("real", "synthetic", "hybrid")
TASKS = ("classify", "anomaly", "forecast")


def data_root() -> Path:
    return Path(os.environ.get("TSB_DATA_ROOT", "."))


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    run_id: str = "run"
    objective: str = "mae"          # one of objectives.OBJECTIVES or "none"
    data_source: str = "synthetic"  # real | synthetic | hybrid
    synthetic_family: str = "sines"  # sines | gp
    dataset_path: str = ""          # ingested manifest dir for data_source=real
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    output_root: str = "runs"
    tasks: tuple[str, ...] = TASKS
    # backbone
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    patch_len: int = 16
    max_patches: int = 64
    dropout: float = 0.0
    # pretraining
    epochs: int = 20
    batch_size: int = 32
    steps_per_epoch: int = 10
    window_len: int = 128
    lr: float = 0.0                 # 0 means objective default
    corpus_series: int = 200
    corpus_length: int = 512
    # probing
    probe_mode: str = "linear"
    probe_epochs: int = 20
    context_len: int = 96
    horizon: int = 24
    anomaly_percentile: float = 1.0

    def __post_init__(self):
        if self.objective != "none" and self.objective not in objectives.OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.data_source not in DATA_SOURCES:
            raise ConfigError(f"data_source must be one of {DATA_SOURCES}")
        if self.synthetic_family not in ("sines", "gp"):
            raise ConfigError("synthetic_family must be sines|gp")
        if self.probe_mode not in ("linear", "mlp", "finetune"):
            raise ConfigError(f"unknown probe_mode {self.probe_mode!r}")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad or not self.tasks:
            raise ConfigError(f"tasks must be a non-empty subset of {TASKS}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        for name in ("d_model", "n_layers", "n_heads", "patch_len", "epochs",
                     "batch_size", "probe_epochs", "context_len", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 < self.anomaly_percentile < 100.0:
            raise ConfigError("anomaly_percentile must be in (0, 100)")

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(d_model=self.d_model, n_layers=self.n_layers,
                              n_heads=self.n_heads, patch_len=self.patch_len,
                              max_patches=self.max_patches,
                              dropout=self.dropout)

    def run_dir(self) -> Path:
        return Path(self.output_root) / self.run_id


# one section per concern; every known key listed here, anything else rejected
_CONFIG_SECTIONS = {
    "run": ("run_id", "objective", "data_source", "synthetic_family",
            "dataset_path", "seeds", "output_root", "tasks"),
    "backbone": ("d_model", "n_layers", "n_heads", "patch_len", "max_patches",
                 "dropout"),
    "pretrain": ("epochs", "batch_size", "steps_per_epoch", "window_len", "lr",
                 "corpus_series", "corpus_length"),
    "probe": ("probe_mode", "probe_epochs", "context_len", "horizon",
              "anomaly_percentile"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def save_run_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, keys in _CONFIG_SECTIONS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(cfg, key)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parser[section][key] = str(value)
    buf = io.StringIO()
    parser.write(buf)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    kwargs = {}
    for section in parser.sections():
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in _CONFIG_SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kwargs[key] = _parse_value(key, raw)
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_value(key: str, raw: str):
    hint = str(_FIELD_TYPES[key])
    try:
        if key == "seeds":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if key == "tasks":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if "int" in hint:
            return int(raw)
        if "float" in hint:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


# ---------------------------------------------------------------------------
# dataset ingestion


@dataclass
class DatasetManifest:
    shards: list[str]
    sample_counts: list[int]
    n_channels: int
    train_end: int
    val_end: int
    total: int
    checksum: str
    has_labels: bool = False

    def __post_init__(self):
        if not 0 < self.train_end <= self.val_end <= self.total:
            raise DataError("splits must be ordered: train <= val <= total")

    def write(self, path) -> None:
        lines = [f"n_channels={self.n_channels}",
                 f"train_end={self.train_end}",
                 f"val_end={self.val_end}",
                 f"total={self.total}",
                 f"checksum={self.checksum}",
                 f"has_labels={int(self.has_labels)}"]
        lines += [f"shard={s}:{c}"
                  for s, c in zip(self.shards, self.sample_counts)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"dataset manifest not found: {path}")
        kv, shards, counts = {}, [], []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key == "shard":
                name, _, count = value.rpartition(":")
                shards.append(name)
                counts.append(int(count))
            else:
                kv[key] = value
        return cls(shards, counts, int(kv["n_channels"]), int(kv["train_end"]),
                   int(kv["val_end"]), int(kv["total"]), kv["checksum"],
                   bool(int(kv.get("has_labels", "0"))))


def ingest_csv(path, out_dir, timestamp_col: int | None = None,
               label_col: int | None = None,
               splits: tuple[float, float] = (0.6, 0.8),
               delimiter: str = ",", has_header: bool = True,
               shard_size: int = 100_000) -> DatasetManifest:
    """Parse a numeric CSV into standardized TSB1 shards plus a manifest.

    Channels are standardized with train-split statistics only.  Splits
    are contiguous in time (train | val | test).  Non-numeric cells and
    ragged rows raise DataError with the 1-based line number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    rows, labels = [], []
    skip = {c for c in (timestamp_col, label_col) if c is not None}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and has_header:
                width = len(row)
                continue
            if not row:
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise DataError(f"line {lineno}: ragged row "
                                f"({len(row)} cells, expected {width})")
            try:
                values = [float(cell) for i, cell in enumerate(row)
                          if i not in skip]
                if label_col is not None:
                    labels.append(float(row[label_col]))
            except ValueError as exc:
                raise DataError(f"line {lineno}: non-numeric cell") from exc
            rows.append(values)
    if not rows:
        raise DataError("no data rows")
    data = np.asarray(rows, dtype=np.float64)  # (T, C)
    t = data.shape[0]
    train_end = max(1, int(splits[0] * t))
    val_end = max(train_end, int(splits[1] * t))
    mu = data[:train_end].mean(axis=0)
    sd = np.maximum(data[:train_end].std(axis=0), 1e-8)
    data = ((data - mu) / sd).astype(np.float32)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shards, counts = [], []
    digest = hashlib.sha256()
    for start in range(0, t, shard_size):
        chunk = data[start : start + shard_size]
        name = f"data_{start // shard_size:05d}.tsb"
        tsb.write_tensor(out_dir / name, chunk)
        digest.update(tsb.tensor_bytes(chunk))
        shards.append(name)
        counts.append(chunk.shape[0])
    if label_col is not None:
        tsb.write_tensor(out_dir / "labels.tsb",
                         np.asarray(labels, dtype=np.float32))
    manifest = DatasetManifest(shards, counts, data.shape[1], train_end,
                               val_end, t, digest.hexdigest()[:16],
                               has_labels=label_col is not None)
    manifest.write(out_dir / "manifest.txt")
    return manifest


def load_ingested(out_dir) -> tuple[DatasetManifest, np.ndarray, np.ndarray | None]:
    out_dir = Path(out_dir)
    manifest = DatasetManifest.read(out_dir / "manifest.txt")
    data = np.concatenate([tsb.read_tensor(out_dir / s)
                           for s in manifest.shards], axis=0)
    labels = None
    if manifest.has_labels:
        labels = tsb.read_tensor(out_dir / "labels.tsb")
    return manifest, data, labels


# ---------------------------------------------------------------------------
# metric records


METRIC_COLUMNS = ("run_id", "objective", "data_source", "layers", "task",
                  "dataset", "protocol", "metric", "value", "seed")


@dataclass
class MetricRecord:
    run_id: str
    objective: str
    data_source: str
    layers: int
    task: str
    dataset: str
    protocol: str
    metric: str
    value: float
    seed: str  # per-seed rows hold the integer; aggregates hold mean|std

    def key(self):
        return (self.run_id, self.task, self.dataset, self.protocol,
                self.metric, self.seed)

    def to_row(self) -> list[str]:
        return [self.run_id, self.objective, self.data_source,
                str(self.layers), self.task, self.dataset, self.protocol,
                self.metric, f"{self.value:.8g}", str(self.seed)]

    @classmethod
    def from_row(cls, row: list[str]) -> "MetricRecord":
        return cls(row[0], row[1], row[2], int(row[3]), row[4], row[5],
                   row[6], row[7], float(row[8]), row[9])


def write_metrics(path, records: list[MetricRecord]) -> None:
    seen = set()
    for rec in records:
        if rec.key() in seen:
            raise ValueError(f"duplicate metric row {rec.key()}")
        seen.add(rec.key())
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for rec in records:
            writer.writerow(rec.to_row())
    os.replace(tmp, path)


def read_metrics(path) -> list[MetricRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise DataError(f"unexpected metric header {header}")
        return [MetricRecord.from_row(row) for row in reader if row]


def aggregate_records(records: list[MetricRecord]) -> list[MetricRecord]:
    """Mean and std rows over seeds per (task, dataset, protocol, metric)."""
    groups: dict[tuple, list[MetricRecord]] = {}
    for rec in records:
        if rec.seed in ("mean", "std"):
            continue
        groups.setdefault((rec.run_id, rec.task, rec.dataset, rec.protocol,
                           rec.metric), []).append(rec)
    out = []
    for group in groups.values():
        values = np.array([r.value for r in group], dtype=np.float64)
        proto = group[0]
        for stat, val in (("mean", values.mean()), ("std", values.std())):
            out.append(replace(proto, value=float(val), seed=stat))
    return out


# ---------------------------------------------------------------------------
# toy task suite (desk-scale stand-ins for the benchmark datasets)


def toy_pretrain_corpus(rng: np.random.Generator, n_series: int = 100,
                        length: int = 256) -> np.ndarray:
    """Two-tone sine family plus noise, the family the toy tasks live in.

    Each series carries a dominant slow tone (2-8 cycles per 128 samples),
    a weaker fast tone (10-26 cycles), and white observation noise.
    """
    t = np.arange(length) / 128.0
    out = np.empty((n_series, length), dtype=np.float32)
    for i in range(n_series):
        f0 = rng.uniform(2, 8)
        fc = rng.uniform(10, 26)
        x = 2.0 * np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
        x += 1.0 * np.sin(2 * np.pi * fc * t + rng.uniform(0, 2 * np.pi))
        x += 0.5 * rng.standard_normal(length)
        out[i] = x
    return out


def toy_classification(rng: np.random.Generator, n_per_class: int = 100,
                       length: int = 128, n_classes: int = 4
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Sine mixtures whose class is the frequency of the weaker fast tone.

    The dominant slow tone is a per-sample nuisance, so a probe has to read
    the class out of the secondary frequency content rather than raw shape.
    """
    t = np.arange(length) / 128.0
    class_freqs = (12, 16, 20, 24)[:n_classes]
    xs, ys = [], []
    for cls, fc in enumerate(class_freqs):
        for _ in range(n_per_class):
            f0 = rng.uniform(2, 8)
            x = 2.0 * np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
            x += 1.0 * np.sin(2 * np.pi * fc * t + rng.uniform(0, 2 * np.pi))
            x += 0.5 * rng.standard_normal(length)
            xs.append(x)
            ys.append(cls)
    order = rng.permutation(len(xs))
    return (np.asarray(xs, dtype=np.float32)[order],
            np.asarray(ys, dtype=np.int64)[order])


def toy_anomaly(rng: np.random.Generator, train_len: int = 6144,
                test_len: int = 4096, n_segments: int = 12
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noisy two-tone series; the test series carries labeled noise bursts.

    Bursts are injected high-variance segments (width 8-24) on top of the
    base process, subtle enough that detection quality tracks how well the
    reconstruction head captures the normal structure.
    """
    f0 = rng.uniform(2, 8) / 128.0
    fc = rng.uniform(10, 26) / 128.0
    ph0, phc = rng.uniform(0, 2 * np.pi, size=2)

    def clean(n):
        t = np.arange(n)
        return (2.0 * np.sin(ph0 + 2 * np.pi * f0 * t)
                + 1.0 * np.sin(2 * np.pi * fc * t + phc))

    train = (clean(train_len)
             + 0.7 * rng.standard_normal(train_len)).astype(np.float32)
    test = clean(test_len) + 0.7 * rng.standard_normal(test_len)
    labels = np.zeros(test_len, dtype=bool)
    segments = []
    pos = 200
    while len(segments) < n_segments and pos < test_len - 200:
        width = int(rng.integers(8, 25))
        segments.append((pos, width))
        labels[pos : pos + width] = True
        pos += width + int(rng.integers(200, 360))
    for start, width in segments:
        test[start : start + width] += 0.9 * rng.standard_normal(width)
    return train, test.astype(np.float32), labels


def toy_forecast(rng: np.random.Generator, n_windows: int = 200,
                 context_len: int = 96, horizon: int = 24
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Windows of a stable AR(2) process split into context and target."""
    total = n_windows * 8 + context_len + horizon
    x = np.zeros(total)
    a1, a2 = 1.5, -0.75
    eps = rng.standard_normal(total)
    for i in range(2, total):
        x[i] = a1 * x[i - 1] + a2 * x[i - 2] + eps[i]
    x = (x / x.std()).astype(np.float32)
    starts = rng.integers(0, total - context_len - horizon, size=n_windows)
    ctx = np.stack([x[s : s + context_len] for s in starts])
    tgt = np.stack([x[s + context_len : s + context_len + horizon]
                    for s in starts])
    return ctx, tgt


# ---------------------------------------------------------------------------
# experiment runner


def _pretrain_corpus(cfg: RunConfig, seed: int) -> ArrayCorpus:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))
    if cfg.data_source == "real":
        if not cfg.dataset_path:
            raise ConfigError("data_source=real requires dataset_path")
        manifest, data, _ = load_ingested(data_root() / cfg.dataset_path)
        train = data[: manifest.train_end]  # (T, C) -> channel-independent rows
        length = min(cfg.corpus_length, train.shape[0])
        series = train[:length].T.astype(np.float32)
        return ArrayCorpus(series)
    if cfg.synthetic_family == "gp":
        synth = np.stack([
            synthgen._standardize(synthgen.sample_univariate(
                np.random.default_rng(np.random.SeedSequence((seed, 13, i))),
                cfg.corpus_length))
            for i in range(cfg.corpus_series)])
    else:
        synth = toy_pretrain_corpus(rng, cfg.corpus_series, cfg.corpus_length)
    if cfg.data_source == "hybrid" and cfg.dataset_path:
        real = _pretrain_corpus(replace(cfg, data_source="real"), seed).series
        width = min(real.shape[1], synth.shape[1])
        return ArrayCorpus(np.concatenate([synth[:, :width], real[:, :width]]))
    return ArrayCorpus(synth)


def _backbone_for_seed(cfg: RunConfig, seed: int, ckpt_dir: Path):
    """Pretrained (or random baseline) weights plus the effective config."""
    bb = cfg.backbone()
    if cfg.objective == "none":
        rng = np.random.default_rng(np.random.SeedSequence((seed, 17)))
        return init_encoder(bb, rng), bb
    corpus = _pretrain_corpus(cfg, seed)
    pcfg = PretrainConfig(
        objective=cfg.objective, epochs=cfg.epochs, batch_size=cfg.batch_size,
        steps_per_epoch=cfg.steps_per_epoch or None,
        window_len=cfg.window_len, lr=cfg.lr or None, seed=seed, backbone=bb)
    result = objectives.pretrain(
        corpus, pcfg, out_path=ckpt_dir / f"backbone_seed{seed}.tsbc")
    return result.best_weights, result.state.cfg


# probe learning rates tried per task; the head's own validation split picks
PROBE_LR_GRID = (3e-3, 1e-2, 3e-2)


def _probe_best(weights, bb: BackboneConfig, cfg: RunConfig, seed: int,
                task: str, x: np.ndarray, y: np.ndarray):
    """Train the probe once per grid lr, keep the best-validation head."""
    best = None
    for lr in PROBE_LR_GRID:
        sp = evaluate.ProbeSpec(mode=cfg.probe_mode, task=task,
                                epochs=cfg.probe_epochs, seed=seed,
                                lr=lr, batch_size=16)
        res = evaluate.probe_train(weights, bb, sp, x, y)
        if best is None or res.best_val < best[0].best_val:
            best = (res, sp)
    return best


def _evaluate_tasks(weights, bb: BackboneConfig, cfg: RunConfig, seed: int
                    ) -> list[tuple[str, str, str, float]]:
    """(task, dataset, metric, value) rows; shared by all objectives
    including the no-pretraining baseline, so deltas isolate pretraining.

    Each task draws from its own seed stream, so results do not depend on
    which other tasks ran in the same process (needed for resume)."""
    rows = []

    if "classify" in cfg.tasks:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 23)))
        x, y = toy_classification(rng)
        n = x.shape[0]
        n_test = max(n // 4, n - 150)  # small labeled pool, large test set
        res, sp = _probe_best(weights, bb, cfg, seed, "classify",
                              x[n_test:], y[n_test:])
        acc = evaluate.classify_head_eval(weights, bb, res.head, sp,
                                          x[:n_test], y[:n_test])
        rows.append(("classify", "sine_mixture", "accuracy", acc))

    if "anomaly" in cfg.tasks:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 29)))
        train, test, labels = toy_anomaly(rng)
        win = bb.patch_len * min(bb.max_patches, 8)
        starts = np.arange(0, train.shape[0] - win + 1, win // 2)
        xw = np.stack([train[s : s + win] for s in starts])
        xn, _, _ = instance_norm(xw)
        targets = xn.reshape(len(starts), win // bb.patch_len, bb.patch_len)
        res, sp = _probe_best(weights, bb, cfg, seed, "anomaly", xw, targets)
        s_train = evaluate.anomaly_scores(weights, bb, res.head, sp, train)
        s_test = evaluate.anomaly_scores(weights, bb, res.head, sp, test)
        preds = evaluate.threshold_by_percentile(s_train, s_test,
                                                 cfg.anomaly_percentile)
        preds = evaluate.point_adjust(preds, labels)
        precision, recall, f1 = evaluate.f1_score(preds, labels)
        rows += [("anomaly", "spike_burst", "precision", precision),
                 ("anomaly", "spike_burst", "recall", recall),
                 ("anomaly", "spike_burst", "f1", f1)]

    if "forecast" in cfg.tasks:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 37)))
        ctx, tgt = toy_forecast(rng, context_len=cfg.context_len,
                                horizon=cfg.horizon)
        n = ctx.shape[0]
        n_test = n // 4
        sp = evaluate.ProbeSpec(mode=cfg.probe_mode, task="forecast",
                                epochs=cfg.probe_epochs, seed=seed)
        res = evaluate.probe_train(weights, bb, sp, ctx[n_test:], tgt[n_test:])
        preds = evaluate.predict_head(weights, bb, res.head, sp, ctx[:n_test])
        mse, mae = evaluate.forecast_metrics(preds, tgt[:n_test])
        rows += [("forecast", f"ar2_h{cfg.horizon}", "mse", mse),
                 ("forecast", f"ar2_h{cfg.horizon}", "mae", mae)]
    return rows


def run_experiment(cfg: RunConfig, log=None) -> list[MetricRecord]:
    """Pretrain + probe per seed, with crash-safe resume.

    Each completed (seed, task) pair persists its rows under records/;
    reruns load them instead of recomputing, so no duplicates and no
    checkpoint clobbering.
    """
    run_dir = cfg.run_dir()
    records_dir = run_dir / "records"
    ckpt_dir = run_dir / "checkpoints"
    records_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, run_dir / "config.ini")

    records: list[MetricRecord] = []
    for seed in cfg.seeds:
        pending = [t for t in cfg.tasks
                   if not (records_dir / f"seed{seed}_{t}.csv").exists()]
        if pending:
            weights, bb = _backbone_for_seed(cfg, seed, ckpt_dir)
            task_cfg = replace(cfg, tasks=tuple(pending))
            rows = _evaluate_tasks(weights, bb, task_cfg, seed)
            by_task: dict[str, list] = {t: [] for t in pending}
            for task, dataset, metric, value in rows:
                by_task[task].append(
                    MetricRecord(cfg.run_id, cfg.objective, cfg.data_source,
                                 cfg.n_layers, task, dataset, cfg.probe_mode,
                                 metric, value, str(seed)))
            for task, recs in by_task.items():
                _write_record_file(records_dir / f"seed{seed}_{task}.csv", recs)
        for task in cfg.tasks:
            records += _read_record_file(records_dir / f"seed{seed}_{task}.csv")
        if log is not None:
            log({"seed": seed, "done": list(cfg.tasks)})

    records += aggregate_records(records)
    write_metrics(run_dir / "metrics.csv", records)
    return records


def _write_record_file(path: Path, records: list[MetricRecord]) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for rec in records:
            writer.writerow(rec.to_row())
    os.replace(tmp, path)


def _read_record_file(path: Path) -> list[MetricRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [MetricRecord.from_row(row) for row in csv.reader(fh) if row]


SWEEP_DIMENSIONS = ("layers", "data_source", "objective")


def sweep(dimension: str, values, base: RunConfig, n_workers: int = 1
          ) -> tuple[list[MetricRecord], list[tuple[str, str]]]:
    """Run one child experiment per value; failures are recorded and the
    sweep continues.  Returns (combined records, [(value, error), ...])."""
    if dimension not in SWEEP_DIMENSIONS:
        raise ConfigError(f"sweep dimension must be one of {SWEEP_DIMENSIONS}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    def run_child(value):
        try:
            child = {"layers": lambda v: replace(base, n_layers=int(v)),
                     "data_source": lambda v: replace(base, data_source=str(v)),
                     "objective": lambda v: replace(base, objective=str(v)),
                     }[dimension](value)
            child = replace(child, run_id=f"{base.run_id}_{dimension}_{value}")
            return run_experiment(child), None
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            return [], f"{type(exc).__name__}: {exc}"

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run_child, values))
    else:
        results = [run_child(v) for v in values]

    combined: list[MetricRecord] = []
    failures: list[tuple[str, str]] = []
    for value, (recs, err) in zip(values, results):
        if err is not None:
            failures.append((str(value), err))
        combined += recs
    out_dir = Path(base.output_root)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(out_dir / f"{base.run_id}_{dimension}_sweep.csv", combined)
    if failures:
        (out_dir / f"{base.run_id}_{dimension}_failures.txt").write_text(
            "\n".join(f"{v}\t{e}" for v, e in failures) + "\n",
            encoding="utf-8")
    return combined, failures
