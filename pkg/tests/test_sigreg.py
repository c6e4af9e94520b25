"""Gaussianity statistic: oracles, seeding, sensitivity, gradients."""

import numpy as np
import pytest

from tsrepr import sigreg as S
from tsrepr import tensor as T
from tsrepr.tensor import Tape, Tensor, backward

CFG = S.EppsPulleyConfig(n_projections=64)


# ---------------------------------------------------------------------------
# component oracles


def test_empirical_cf_at_zero():
    vals = np.random.default_rng(0).standard_normal(100)
    assert S.empirical_cf(vals, 0.0) == (1.0, 0.0)


def test_empirical_cf_matches_gaussian_cf():
    # E[cos(t Z)] = e^(-t^2/2) for Z ~ N(0,1); Monte Carlo within 0.01
    vals = np.random.default_rng(1).standard_normal(200_000)
    re, im = S.empirical_cf(vals, 1.0)
    assert abs(re - np.exp(-0.5)) < 0.01
    assert abs(im) < 0.01


def test_empirical_cf_hand_values():
    re, im = S.empirical_cf(np.array([np.pi / 2.0]), 1.0)
    assert abs(re) < 1e-12 and abs(im - 1.0) < 1e-12


def test_trapezoid_weights_sum_to_span():
    grid = CFG.grid()
    assert abs(S._trapezoid_weights(grid).sum() - 10.0) < 1e-10


def test_zero_sample_closed_form():
    # all-zero embeddings hit the closed form exactly
    z = np.zeros((32, 8), dtype=np.float32)
    got = float(S.epps_pulley_statistic(z, CFG).data)
    want = S.zero_sample_statistic(32, CFG)
    assert abs(got - want) / want < 1e-5


def test_projections_unit_norm_and_seeded():
    a = S.sample_projections(16, CFG, step=3)
    b = S.sample_projections(16, CFG, step=3)
    c = S.sample_projections(16, CFG, step=4)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-5)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_statistic_nonnegative_and_deterministic():
    rng = np.random.default_rng(2)
    for _ in range(5):
        z = rng.standard_normal((64, 8)).astype(np.float32)
        s1 = float(S.epps_pulley_statistic(z, CFG, step=1).data)
        s2 = float(S.epps_pulley_statistic(z, CFG, step=1).data)
        assert s1 >= 0.0
        assert s1 == s2


def test_small_sample_rejected():
    with pytest.raises(ValueError):
        S.epps_pulley_statistic(np.zeros((1, 4), np.float32), CFG)
    with pytest.raises(ValueError):
        S.epps_pulley_statistic(np.zeros(4, np.float32), CFG)


# ---------------------------------------------------------------------------
# distributional behavior


def test_rotation_invariance_in_expectation():
    # the statistic averages over random directions, so a fixed rotation of
    # the cloud should not move its across-seed mean by much
    rng = np.random.default_rng(3)
    z = rng.standard_normal((256, 8)).astype(np.float32)
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    zr = (z @ q.astype(np.float32)).astype(np.float32)
    vals, vals_r = [], []
    for step in range(60):
        vals.append(float(S.epps_pulley_statistic(z, CFG, step=step).data))
        vals_r.append(float(S.epps_pulley_statistic(zr, CFG, step=step).data))
    m, mr = np.mean(vals), np.mean(vals_r)
    assert abs(m - mr) / m < 0.10


def test_monotone_sensitivity_to_variance_inflation():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        z = rng.standard_normal((512, 8)).astype(np.float32)
        base = float(S.epps_pulley_statistic(z, CFG, step=seed).data)
        wide = float(S.epps_pulley_statistic(z * 3.0, CFG, step=seed).data)
        if wide > base:
            hits += 1
    assert hits == 10


def test_shift_increases_statistic():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((512, 8)).astype(np.float32)
    base = float(S.epps_pulley_statistic(z, CFG).data)
    shifted = float(S.epps_pulley_statistic(z + 3.0, CFG).data)
    assert shifted > base


def test_standardize_embeddings_moments():
    rng = np.random.default_rng(5)
    z = Tensor(rng.standard_normal((128, 6)).astype(np.float32) * 4 + 2)
    out = S.standardize_embeddings(z).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-4)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-2)


# ---------------------------------------------------------------------------
# gradients


def test_gradient_matches_finite_differences():
    cfg = S.EppsPulleyConfig(n_projections=4)
    rng = np.random.default_rng(6)
    z0 = rng.standard_normal((8, 4)).astype(np.float32)

    def loss(z):
        return S.epps_pulley_statistic(z, cfg, step=0)

    z = Tensor(z0.copy(), requires_grad=True)
    with Tape():
        out = loss(z)
        backward(out)
    err = T.grad_check(loss, Tensor(z0.copy(), requires_grad=True),
                       epsilon=1e-2)
    assert err < 1e-2
    assert np.isfinite(z.grad).all()
    assert np.abs(z.grad).max() > 0.0


def test_gradient_pushes_collapsed_cloud_apart():
    # near-zero embeddings: descending the statistic should spread them out
    cfg = S.EppsPulleyConfig(n_projections=16)
    z0 = (np.random.default_rng(7).standard_normal((64, 8)) * 1e-2)
    z = Tensor(z0.astype(np.float32), requires_grad=True)
    for _ in range(50):
        z.grad = None
        with Tape():
            backward(S.epps_pulley_statistic(z, cfg, step=0))
        z.data -= 0.5 * z.grad
    assert z.data.std() > 5 * z0.std()


# ---------------------------------------------------------------------------
# diagnostics


def test_diagnostics_shapes_and_consistency():
    rng = np.random.default_rng(8)
    z = rng.standard_normal((256, 8)).astype(np.float32)
    d = S.sigreg_diagnostics(z, CFG, step=0)
    assert d["per_projection_residuals"].shape == (CFG.n_projections,)
    assert abs(d["statistic"] - d["per_projection_residuals"].mean()) < 1e-12
    assert len(d["covariance_eigenvalues"]) == 8
    assert d["covariance_eigenvalues"][0] >= d["covariance_eigenvalues"][-1]
    assert 1.0 <= d["effective_rank"] <= 8.0 + 1e-9
    # isotropic cloud: effective rank close to full
    assert d["effective_rank"] > 7.0
    # autodiff statistic agrees with the numpy path
    auto = float(S.epps_pulley_statistic(z, CFG, step=0).data)
    assert abs(auto - d["statistic"]) / d["statistic"] < 1e-3


def test_diagnostics_detect_collapse():
    rng = np.random.default_rng(9)
    flat = np.outer(rng.standard_normal(256),
                    rng.standard_normal(8)).astype(np.float32)
    d = S.sigreg_diagnostics(flat, CFG)
    assert d["effective_rank"] < 1.5
