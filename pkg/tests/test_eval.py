"""Probing, forecasting metrics, anomaly pipeline, and exports."""

import itertools

import numpy as np
import pytest

from tsrepr import evaluate as E
from tsrepr.backbone import BackboneConfig, init_encoder, weights_hash
from tsrepr.tensor import ShapeError

CFG = BackboneConfig(d_model=16, n_layers=1, n_heads=2, patch_len=8,
                     max_patches=8)


def make_backbone(seed=0):
    return init_encoder(CFG, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# forecast metrics


def test_forecast_metric_trivials():
    a = np.random.default_rng(0).standard_normal((5, 7))
    assert E.forecast_metrics(a, a) == (0.0, 0.0)
    mse, mae = E.forecast_metrics(a + 1.0, a)
    assert abs(mse - 1.0) < 1e-12 and abs(mae - 1.0) < 1e-12
    mse2, mae2 = E.forecast_metrics(np.array([[2.0, -2.0]]),
                                    np.array([[0.0, 0.0]]))
    assert mse2 == 4.0 and mae2 == 2.0


def test_forecast_metric_two_pass_reference():
    rng = np.random.default_rng(1)
    p, t = rng.standard_normal((64, 12)), rng.standard_normal((64, 12))
    mse, mae = E.forecast_metrics(p, t)
    acc_sq = acc_abs = 0.0
    for i, j in itertools.product(range(64), range(12)):
        acc_sq += (p[i, j] - t[i, j]) ** 2
        acc_abs += abs(p[i, j] - t[i, j])
    assert abs(mse - acc_sq / 768) < 1e-7
    assert abs(mae - acc_abs / 768) < 1e-7


def test_forecast_metric_errors():
    with pytest.raises(ShapeError):
        E.forecast_metrics(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        E.forecast_metrics(np.zeros((0, 3)), np.zeros((0, 3)))


# ---------------------------------------------------------------------------
# thresholding


def test_percentile_threshold_flags_top_score():
    train = np.arange(1.0, 51.0)
    test = np.arange(51.0, 101.0)
    flags = E.threshold_by_percentile(train, test, 1.0)
    # 1..100 pooled: 99th-percentile cut keeps only the maximum
    assert flags.sum() == 1 and flags[-1]


def test_percentile_threshold_tie_inclusive():
    train = np.zeros(90)
    test = np.full(10, 5.0)
    flags = E.threshold_by_percentile(train, test, 5.0)
    assert flags.all()  # every tied score at the threshold is flagged


def test_percentile_threshold_fraction():
    rng = np.random.default_rng(2)
    pool = rng.standard_normal(10_000)
    train, test = pool[:5000], pool[5000:]
    for p in (0.5, 1.0, 5.0):
        n_total = (np.concatenate([train, test]) >=
                   np.quantile(pool, 1 - p / 100)).sum()
        want = int(round(p / 100 * 10_000))
        assert abs(n_total - want) <= 1
        flags = E.threshold_by_percentile(train, test, p)
        assert 0 < flags.sum() <= n_total


def test_percentile_threshold_errors():
    with pytest.raises(ValueError):
        E.threshold_by_percentile(np.ones(5), np.ones(5), 0.0)
    with pytest.raises(ShapeError):
        E.threshold_by_percentile(np.ones(0), np.ones(5), 1.0)


# ---------------------------------------------------------------------------
# point adjustment


def point_adjust_oracle(preds, labels):
    out = list(preds)
    for start in range(len(labels)):
        if labels[start] and (start == 0 or not labels[start - 1]):
            end = start
            while end < len(labels) and labels[end]:
                end += 1
            if any(preds[start:end]):
                for k in range(start, end):
                    out[k] = True
    return np.array(out, dtype=bool)


def test_point_adjust_hand_cases():
    np.testing.assert_array_equal(
        E.point_adjust(np.array([0, 1, 0], bool), np.array([1, 1, 1], bool)),
        [True, True, True])
    np.testing.assert_array_equal(
        E.point_adjust(np.array([0, 0, 0], bool), np.array([1, 1, 0], bool)),
        [False, False, False])
    # labels all zero: predictions unchanged
    preds = np.array([1, 0, 1], bool)
    np.testing.assert_array_equal(
        E.point_adjust(preds, np.zeros(3, bool)), preds)
    # two segments, only the hit one fills
    np.testing.assert_array_equal(
        E.point_adjust(np.array([0, 1, 0, 0, 0, 0], bool),
                       np.array([1, 1, 0, 0, 1, 1], bool)),
        [True, True, False, False, False, False])


def test_point_adjust_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        preds = rng.random(n) < 0.3
        labels = rng.random(n) < 0.4
        np.testing.assert_array_equal(E.point_adjust(preds, labels),
                                      point_adjust_oracle(preds, labels))


def test_point_adjust_never_decreases_f1():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(5, 60))
        preds = rng.random(n) < 0.25
        labels = rng.random(n) < 0.35
        _, _, before = E.f1_score(preds, labels)
        _, _, after = E.f1_score(E.point_adjust(preds, labels), labels)
        assert after >= before - 1e-12


def test_point_adjust_shape_error():
    with pytest.raises(ShapeError):
        E.point_adjust(np.zeros(3, bool), np.zeros(4, bool))


# ---------------------------------------------------------------------------
# F1


def test_f1_hand_case():
    preds = np.array([1, 1, 1, 0, 0], bool)
    labels = np.array([1, 1, 0, 1, 0], bool)
    precision, recall, f1 = E.f1_score(preds, labels)
    assert abs(precision - 2 / 3) < 1e-12
    assert abs(recall - 2 / 3) < 1e-12
    assert abs(f1 - 2 / 3) < 1e-12


def test_f1_degenerate_conventions():
    zeros = np.zeros(4, bool)
    assert E.f1_score(zeros, zeros) == (0.0, 0.0, 0.0)
    assert E.f1_score(np.ones(4, bool), zeros)[2] == 0.0
    assert E.f1_score(zeros, np.ones(4, bool))[2] == 0.0


# ---------------------------------------------------------------------------
# probes


def toy_classification(n=160, t=64, seed=5):
    """Two classes separated by a large constant offset."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    x = rng.standard_normal((n, t)).astype(np.float32)
    ramp = np.linspace(-1, 1, t, dtype=np.float32)
    x += np.where(y[:, None] == 1, ramp, -ramp) * 8.0
    return x, y


def test_linear_probe_separable_through_random_backbone():
    w = make_backbone()
    x, y = toy_classification()
    spec = E.ProbeSpec(mode="linear", task="classify", epochs=80, lr=1e-2,
                       seed=1)
    res = E.probe_train(w, CFG, spec, x, y)
    acc = E.classify_head_eval(w, CFG, res.head, spec, x, y)
    assert acc > 0.95


def test_frozen_probe_leaves_backbone_untouched():
    w = make_backbone()
    before = weights_hash(w)
    x, y = toy_classification(n=40)
    E.probe_train(w, CFG, E.ProbeSpec(task="classify", epochs=2), x, y)
    assert weights_hash(w) == before


def test_finetune_updates_backbone():
    w = make_backbone()
    before = weights_hash(w)
    x, y = toy_classification(n=40)
    E.probe_train(w, CFG, E.ProbeSpec(mode="finetune", task="classify",
                                      epochs=2, batch_size=16), x, y)
    assert weights_hash(w) != before


def test_uniform_random_classifier_accuracy():
    # argmax of seeded random logits over 4 balanced classes: 0.25 +- 0.02
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((10_000, 4))
    labels = rng.integers(0, 4, size=10_000)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    assert abs(acc - 0.25) < 0.02


def test_accuracy_scale_invariance():
    w = make_backbone()
    x, y = toy_classification(n=40)
    spec = E.ProbeSpec(task="classify", epochs=2)
    res = E.probe_train(w, CFG, spec, x, y)
    acc1 = E.classify_head_eval(w, CFG, res.head, spec, x, y)
    for t in res.head.values():
        t.data *= 7.0  # positive rescale of logits cannot change argmax
    acc2 = E.classify_head_eval(w, CFG, res.head, spec, x, y)
    assert acc1 == acc2


def test_single_sample_accuracy_binary():
    w = make_backbone()
    x, y = toy_classification(n=40)
    spec = E.ProbeSpec(task="classify", epochs=1)
    res = E.probe_train(w, CFG, spec, x, y)
    acc = E.classify_head_eval(w, CFG, res.head, spec, x[:1], y[:1])
    assert acc in (0.0, 1.0)


def test_unseen_class_rejected():
    w = make_backbone()
    x, y = toy_classification(n=40)
    spec = E.ProbeSpec(task="classify", epochs=1)
    res = E.probe_train(w, CFG, spec, x, y)
    with pytest.raises(ShapeError):
        E.classify_head_eval(w, CFG, res.head, spec, x[:4],
                             np.array([0, 1, 2, 0]))


def test_probe_input_validation():
    w = make_backbone()
    with pytest.raises(ShapeError):
        E.probe_train(w, CFG, E.ProbeSpec(task="classify"),
                      np.zeros((3, 64), np.float32), np.zeros(4, int))
    with pytest.raises(ValueError):
        E.ProbeSpec(mode="zero-shot")
    with pytest.raises(ValueError):
        E.ProbeSpec(task="imputation")


def test_forecast_probe_learns_constant_map():
    # predicting the window mean of a smooth series should beat the zero head
    rng = np.random.default_rng(7)
    n, t, h = 120, 64, 8
    phase = rng.uniform(0, 2 * np.pi, n)
    grid = np.arange(t + h)
    series = np.sin(0.3 * grid[None, :] + phase[:, None]).astype(np.float32)
    x, y = series[:, :t], series[:, t:]
    # targets in the same normalized frame the head predicts in
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True) + 1e-8
    yn = ((y - mu) / sd).astype(np.float32)
    w = make_backbone()
    spec = E.ProbeSpec(mode="linear", task="forecast", epochs=60, lr=1e-2,
                       seed=2)
    res = E.probe_train(w, CFG, spec, x, yn)
    preds = E.predict_head(w, CFG, res.head, spec, x)
    mse, _ = E.forecast_metrics(preds, yn)
    zero_mse, _ = E.forecast_metrics(np.zeros_like(yn), yn)
    assert mse < 0.5 * zero_mse


# ---------------------------------------------------------------------------
# anomaly pipeline


def test_anomaly_scores_cover_series_and_localize():
    rng = np.random.default_rng(8)
    w = make_backbone()
    t = CFG.patch_len * CFG.max_patches * 3 + 11  # partial tail window
    base = np.sin(np.arange(t) * 0.2).astype(np.float32)
    x_train = np.stack([base[: CFG.patch_len * CFG.max_patches]
                        for _ in range(8)])
    n_p = x_train.shape[1] // CFG.patch_len
    targets = E.instance_norm(x_train)[0].reshape(8, n_p, CFG.patch_len)
    spec = E.ProbeSpec(mode="linear", task="anomaly", epochs=30, seed=3)
    res = E.probe_train(w, CFG, spec, x_train, targets)
    clean = E.anomaly_scores(w, CFG, res.head, spec, base)
    assert clean.shape == (t,)
    assert np.isfinite(clean).all() and (clean >= 0).all()
    corrupted = base.copy()
    corrupted[200] += 30.0
    scores = E.anomaly_scores(w, CFG, res.head, spec, corrupted)
    assert abs(int(np.argmax(scores)) - 200) <= CFG.patch_len


def test_export_embeddings_round_trip(tmp_path):
    from tsrepr import tsb
    w = make_backbone()
    x, y = toy_classification(n=12)
    out = tmp_path / "emb"
    pooled = E.export_embeddings(w, CFG, x, y, out)
    assert pooled.shape == (12, CFG.d_model)
    back = tsb.read_tensor(out.with_suffix(".tsb"))
    assert back.tobytes() == pooled.astype(np.float32).tobytes()
    lines = out.with_suffix(".csv").read_text().strip().splitlines()
    assert len(lines) == 13
    assert lines[0].startswith("index,label,dim0")
    pooled2 = E.export_embeddings(w, CFG, x, y, tmp_path / "emb2")
    assert pooled2.tobytes() == pooled.tobytes()
