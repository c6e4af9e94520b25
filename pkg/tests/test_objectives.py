"""Masking, diffusion schedule, the six losses, and the pretraining loop."""

import numpy as np
import pytest

from tsrepr import augment, objectives as O, sigreg
from tsrepr import tensor as T
from tsrepr.backbone import BackboneConfig, weights_hash
from tsrepr.tensor import ShapeError, Tape, backward

TINY = BackboneConfig(d_model=16, n_layers=1, n_heads=2, patch_len=8,
                      max_patches=8, n_predictor_layers=1)


def make_state(objective, seed=0, cfg=TINY, **kw):
    ocfg = O.ObjectiveConfig(
        objective=objective,
        epps_pulley=sigreg.EppsPulleyConfig(n_projections=8),
        dino_prototypes=32, **kw)
    return O.ObjectiveState(cfg, ocfg, np.random.default_rng(seed))


def make_batch(b=4, t=64, seed=1):
    return np.random.default_rng(seed).standard_normal((b, t)).astype(
        np.float32)


# ---------------------------------------------------------------------------
# masking


def test_random_mask_ratio_and_coverage():
    rng = np.random.default_rng(0)
    mask = O.sample_mask(O.MaskSpec("random", 0.4), rng, b=16, n=20)
    assert mask.shape == (16, 20)
    # exactly round(0.4 * 20) = 8 per row
    np.testing.assert_array_equal(mask.sum(axis=1), 8)
    assert (~mask).sum(axis=1).min() >= 1


def test_multi_block_mask_structure():
    rng = np.random.default_rng(1)
    spec = O.MaskSpec("multi_block", n_blocks=2, per_block_ratio=0.25)
    for _ in range(20):
        mask = O.sample_mask(spec, rng, b=4, n=16)
        for row in mask:
            assert row.sum() == 8  # 2 blocks x 4 patches
            # runs of True form at most 2 contiguous segments
            edges = np.diff(row.astype(int))
            assert (edges == 1).sum() + int(row[0]) <= 2


def test_mask_validation():
    with pytest.raises(ValueError):
        O.MaskSpec("random", ratio=0.0)
    with pytest.raises(ValueError):
        O.MaskSpec("multi_block", n_blocks=4, per_block_ratio=0.3)
    with pytest.raises(ValueError):
        O.sample_mask(O.MaskSpec("diagonal", 0.4), np.random.default_rng(0),
                      2, 8)


def test_mask_block_overflow_raises():
    spec = O.MaskSpec("multi_block", n_blocks=2, per_block_ratio=0.25)
    with pytest.raises(ShapeError):
        O.sample_mask(spec, np.random.default_rng(0), b=1, n=2)


# ---------------------------------------------------------------------------
# diffusion schedule


def test_schedule_monotonicity():
    sched = O.DiffusionSchedule()
    assert sched.betas[0] > 0 and sched.betas[-1] < 1
    assert np.all(np.diff(sched.betas) >= 0)
    assert np.all(np.diff(sched.alpha_bar) < 0)
    snr = sched.alpha_bar / (1.0 - sched.alpha_bar)
    assert np.all(np.diff(snr) < 0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        O.DiffusionSchedule(beta_start=-1e-4)
    with pytest.raises(ValueError):
        O.DiffusionSchedule(beta_end=1.5)


def test_corruption_variance_monte_carlo():
    # Var[x_t] = abar * Var[x] + (1 - abar) for standardized inputs
    sched = O.DiffusionSchedule(n_steps=10)
    rng = np.random.default_rng(2)
    vals = rng.standard_normal((8000, 4, 8)).astype(np.float32)
    vals /= vals.std()
    noised, t_idx, eps = O.corrupt_patches(vals, sched, rng)
    assert noised.shape == vals.shape and eps.shape == vals.shape
    for step in range(10):
        sel = noised[t_idx == step]
        want = sched.alpha_bar[step] * 1.0 + (1.0 - sched.alpha_bar[step])
        assert abs(sel.var() - want) / want < 0.05


# ---------------------------------------------------------------------------
# loss breakdowns


@pytest.mark.parametrize("objective", O.OBJECTIVES)
def test_breakdown_recombines(objective):
    state = make_state(objective)
    batch = make_batch()
    with Tape():
        lb = O.compute_loss(state, batch, np.random.default_rng(3), step=0)
    assert np.isfinite(lb.value())
    assert abs(lb.value() - lb.recombined()) < 1e-5 * max(1.0, abs(lb.value()))


def test_mae_offset_oracle():
    # decoder forced to output zeros: loss is the mean masked square,
    # which for an all-ones batch is exactly 1
    state = make_state("mae")
    state.heads["decoder"]["w"].data[:] = 0.0
    state.heads["decoder"]["b"].data[:] = 0.0
    batch = np.ones((4, 64), dtype=np.float32)
    lb = O.mae_loss(state, batch, state.ocfg.mae_mask,
                    np.random.default_rng(4))
    assert abs(lb.value() - 1.0) < 1e-6


def test_ntp_perfect_prediction_zero_loss():
    state = make_state("ntp")
    batch = np.zeros((2, 64), dtype=np.float32)
    state.heads["horizon"]["w"].data[:] = 0.0
    state.heads["horizon"]["b"].data[:] = 0.0
    lb = O.ntp_loss(state, batch)
    assert lb.value() < 1e-10


def test_ntp_too_short_raises():
    state = make_state("ntp")
    with pytest.raises(ShapeError):
        O.ntp_loss(state, make_batch(t=32), horizon_h=4)


def test_lejepa_lambda_endpoints():
    state = make_state("lejepa")
    x = make_batch(b=8)
    pair_same = augment.ViewPair(x, x.copy(), {})
    lb0 = O.lejepa_loss(state, pair_same, lam=0.0)
    assert lb0.value() < 1e-10  # identical views, invariance only
    pair = augment.make_view_pair(x, state.ocfg.dwt, np.random.default_rng(5))
    lb1 = O.lejepa_loss(state, pair, lam=1.0)
    z_g = lb1.components["sigreg"]
    assert abs(lb1.value() - z_g) < 1e-6  # pure statistic at lambda 1
    with pytest.raises(ValueError):
        O.lejepa_loss(state, pair, lam=1.5)


def test_dino_uniform_teacher_floor():
    # teacher distribution uniform over K: CE >= entropy = log K
    state = make_state("dino")
    for head in state.teacher_heads.values():
        for t in head.values():
            t.data[:] = 0.0
    pair = augment.make_view_pair(make_batch(b=4), state.ocfg.dwt,
                                  np.random.default_rng(6))
    lb = O.dino_loss(state, pair)
    assert lb.value() >= np.log(32) - 1e-4


def test_jepa_variance_hinge_detects_collapse():
    state = make_state("jepa")
    # zeroing the embedding projection collapses all latents
    state.encoder["embed.w"].data[:] = 0.0
    state.encoder["embed.b"].data[:] = 0.0
    lb = O.jepa_loss(state, make_batch(), state.ocfg.jepa_mask,
                     np.random.default_rng(7))
    assert lb.components["variance"] > 0.5  # hinge near margin 1


@pytest.mark.parametrize("objective", ("jepa", "dino"))
def test_teacher_receives_no_gradient(objective):
    state = make_state(objective)
    batch = make_batch()
    with Tape():
        lb = O.compute_loss(state, batch, np.random.default_rng(8), step=0)
        backward(lb.total)
    for t in state.teacher.values():
        assert t.grad is None
    if state.teacher_heads is not None:
        for head in state.teacher_heads.values():
            for t in head.values():
                assert t.grad is None
    # the student side does get gradients
    grads = [v.grad for v in state.trainable().values() if v.grad is not None]
    assert any(np.abs(g).max() > 0 for g in grads)


@pytest.mark.parametrize("objective", O.OBJECTIVES)
def test_every_loss_backpropagates(objective):
    state = make_state(objective)
    with Tape():
        lb = O.compute_loss(state, make_batch(), np.random.default_rng(9), 0)
        backward(lb.total)
    g = state.encoder["embed.w"].grad
    assert g is not None and np.isfinite(g).all()


def test_causality_forced_for_autoregressive_objectives():
    assert make_state("ntp").cfg.causal
    assert make_state("diffusion").cfg.causal
    assert not make_state("mae").cfg.causal


def test_ema_step_moves_teacher_toward_student():
    state = make_state("jepa")
    before = {k: v.data.copy() for k, v in state.teacher.items()}
    for v in state.encoder.values():
        v.data += 1.0
    state.ema_step(momentum=0.9)
    for k, v in state.teacher.items():
        np.testing.assert_allclose(
            v.data, 0.9 * before[k] + 0.1 * state.encoder[k].data,
            atol=1e-5)


# ---------------------------------------------------------------------------
# corpus and pretraining


def test_corpus_window_sampling():
    series = np.arange(40, dtype=np.float32).reshape(4, 10)
    corpus = O.ArrayCorpus(series)
    wins = corpus.sample_windows(np.random.default_rng(10), 8, 5)
    assert wins.shape == (8, 5)
    for w in wins:  # each window is a contiguous slice of one series
        np.testing.assert_allclose(np.diff(w), 1.0)
    with pytest.raises(ShapeError):
        corpus.sample_windows(np.random.default_rng(0), 2, 11)
    with pytest.raises(ShapeError):
        O.ArrayCorpus(np.zeros(5, np.float32))


def _tiny_pretrain(objective, seed=2003):
    corpus = O.ArrayCorpus(np.random.default_rng(11).standard_normal(
        (16, 96)).astype(np.float32))
    cfg = O.PretrainConfig(
        objective=objective, epochs=2, batch_size=4, steps_per_epoch=2,
        window_len=64, seed=seed, backbone=TINY,
        objective_cfg=O.ObjectiveConfig(
            objective=objective,
            epps_pulley=sigreg.EppsPulleyConfig(n_projections=8),
            dino_prototypes=32))
    return O.pretrain(corpus, cfg)


@pytest.mark.parametrize("objective", O.OBJECTIVES)
def test_pretrain_runs_and_records(objective):
    res = _tiny_pretrain(objective)
    assert len(res.history) == 2
    assert np.isfinite(res.final_loss) and np.isfinite(res.best_val)
    assert set(res.best_weights) == set(res.state.encoder)


def test_pretrain_deterministic():
    h1 = weights_hash(_tiny_pretrain("mae").best_weights)
    h2 = weights_hash(_tiny_pretrain("mae").best_weights)
    h3 = weights_hash(_tiny_pretrain("mae", seed=5).best_weights)
    assert h1 == h2
    assert h1 != h3


def test_pretrain_rejects_unknown_objective():
    corpus = O.ArrayCorpus(np.zeros((4, 32), np.float32))
    with pytest.raises(ValueError):
        O.pretrain(corpus, O.PretrainConfig(objective="cpc"))
