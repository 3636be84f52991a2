"""Tests for the divergence objective, its penalty and gradients"""

import numpy as np
import pytest

from density import BandwidthConfig, log_cross_ip
from errors import DegenerateProjectionError
from objective import (
    ObjectiveWorkspace,
    ProjectionMatrix,
    dcs,
    dcs_gradient,
    decompose,
    finite_difference_gradient,
    grid_overlap_bound,
    gradient_check,
    melm_gradient,
    melm_value,
    penalty,
    penalty_gradient,
    relative_error,
)
from synthetic import grid_mixture_density


def _instance(seed, d=None, k=None):
    """Random two-class problem with d <= 10, k <= 3 and at most 30 points per class"""
    rng = np.random.default_rng(seed)
    d = d or int(rng.integers(3, 11))
    k = k or int(rng.integers(1, 4))
    xp = rng.normal(size=(d, int(rng.integers(5, 31)))) + rng.normal(size=(d, 1))
    xm = rng.normal(scale=1.5, size=(d, int(rng.integers(5, 31))))
    v = rng.normal(size=(d, k))
    return xp, xm, v, rng


def test_projection_matrix_validation():
    assert ProjectionMatrix(v=np.eye(3)[:, :2]).k == 2
    with pytest.raises(DegenerateProjectionError):
        ProjectionMatrix(v=np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]))
    with pytest.raises(DegenerateProjectionError):
        ProjectionMatrix(v=np.ones((2, 3)))
    with pytest.raises(DegenerateProjectionError):
        ProjectionMatrix(v=np.array([[np.nan], [1.0]]))


def test_gram_accessor():
    v = ProjectionMatrix(v=np.array([[2.0], [0.0]]))
    assert np.allclose(v.gram(), [[4.0]])


def test_dcs_zero_for_identical_classes():
    xp, _, v, _ = _instance(0)
    assert dcs(v, xp, xp.copy()) == 0.0
    value = melm_value(np.linalg.qr(v)[0], xp, xp.copy())
    assert value.melm == pytest.approx(0.0, abs=1e-12)


def test_dcs_matches_three_information_potentials():
    """1-D classes {-1, 1} and {9, 11}"""
    xp = np.array([[-1.0, 1.0]])
    xm = xp + 10.0
    cfg = BandwidthConfig()
    v = np.array([[1.0]])
    expected = log_cross_ip(xp, xp, v, cfg) + log_cross_ip(xm, xm, v, cfg) - 2 * log_cross_ip(xp, xm, v, cfg)
    assert dcs(v, xp, xm, cfg) == pytest.approx(expected, abs=1e-12)
    # Pooled variance 4 h^2 with h = (2/3)^(1/5); the four differences a - b are -10, -12, -8, -10
    pooled = 4 * (2 / 3) ** 0.4
    diffs = np.array([-10.0, -12.0, -8.0, -10.0])
    density = np.exp(-0.5 * diffs**2 / pooled) / np.sqrt(2 * np.pi * pooled)
    assert log_cross_ip(xp, xm, v, cfg) == pytest.approx(np.log(np.mean(density)), abs=1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_melm_gradient_matches_finite_differences(seed):
    xp, xm, v, rng = _instance(seed)
    gamma = [0.5, 1.0, 2.0][seed % 3]
    ws = ObjectiveWorkspace(xp, xm, v.shape[1], BandwidthConfig(gamma=gamma))
    assert gradient_check(ws, v) <= 1e-5


@pytest.mark.parametrize("seed", range(50))
def test_affine_invariance_pointwise(seed):
    xp, xm, v, rng = _instance(100 + seed)
    d = xp.shape[0]
    m = rng.normal(size=(d, d)) + 3 * np.eye(d)
    t = rng.normal(size=(d, 1))
    moved = dcs(v, m @ xp + t, m @ xm + t)
    original = dcs(m.T @ v, xp, xm)
    assert abs(moved - original) / (1 + abs(original)) <= 1e-8


@pytest.mark.parametrize("seed", range(50))
def test_shear_invariance_and_tangency(seed):
    xp, xm, v, rng = _instance(200 + seed)
    r = rng.normal(size=(v.shape[1], v.shape[1])) + 2 * np.eye(v.shape[1])
    assert dcs(v @ r, xp, xm) == pytest.approx(dcs(v, xp, xm), abs=1e-10)
    grad = dcs_gradient(v, xp, xm)
    assert np.max(np.abs(v.T @ grad)) <= 1e-8


def test_dcs_nonnegative():
    for seed in range(10):
        xp, xm, v, _ = _instance(300 + seed)
        assert dcs(v, xp, xm) >= -1e-12


def test_penalty_examples():
    v = np.array([[2.0], [0.0]])
    assert penalty(v) == pytest.approx(9.0)
    assert np.allclose(penalty_gradient(v), [[24.0], [0.0]])
    q = np.linalg.qr(np.random.default_rng(1).normal(size=(4, 2)))[0]
    assert penalty(q) == pytest.approx(0.0, abs=1e-14)
    assert penalty(q[:, ::-1]) == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(penalty_gradient(q), 0.0, atol=1e-14)


def test_penalty_gradient_matches_finite_differences():
    v = np.random.default_rng(2).normal(size=(5, 3))
    numeric = finite_difference_gradient(penalty, v)
    assert relative_error(penalty_gradient(v), numeric) <= 1e-7


def test_melm_is_dcs_minus_penalty():
    xp, xm, v, _ = _instance(4)
    value = melm_value(v, xp, xm)
    assert value.melm == value.dcs - value.penalty
    assert value.dcs == pytest.approx(value.log_ip_pp + value.log_ip_mm - 2 * value.log_ip_pm)
    assert value.melm <= value.dcs
    q = np.linalg.qr(v)[0]
    assert melm_value(q, xp, xm).melm == pytest.approx(dcs(q, xp, xm), abs=1e-12)


def test_melm_gradient_parts():
    xp, xm, v, _ = _instance(5)
    q = np.linalg.qr(v)[0]
    assert np.allclose(melm_gradient(q, xp, xm), dcs_gradient(q, xp, xm), atol=1e-12)
    assert np.allclose(melm_gradient(v, xp, xm), dcs_gradient(v, xp, xm) - penalty_gradient(v))


def test_workspace_rejects_wrong_shape():
    xp, xm, v, _ = _instance(6, d=4, k=2)
    ws = ObjectiveWorkspace(xp, xm, 2)
    with pytest.raises(DegenerateProjectionError):
        ws.value(np.ones((4, 1)))


def test_workspace_with_gamma_rebuilds_covariances():
    xp, xm, v, _ = _instance(7, d=4, k=2)
    ws = ObjectiveWorkspace(xp, xm, 2)
    wider = ws.with_gamma(2.0)
    assert np.allclose(wider.sigma_pm.sigma_ab, 4.0 * ws.sigma_pm.sigma_ab)
    assert wider.value(v).dcs == pytest.approx(dcs(v, xp, xm, BandwidthConfig(gamma=2.0)))


def test_decompose_terms():
    xp, xm, v, _ = _instance(8)
    fitting, regularizing = decompose(v, xp, xm)
    assert fitting - regularizing == pytest.approx(dcs(v, xp, xm), abs=1e-12)
    same_fit, same_reg = decompose(v, xp, xp.copy())
    assert same_fit == pytest.approx(same_reg, abs=1e-12)


def test_scaled_data_stays_finite():
    xp, xm, v, _ = _instance(9, d=4, k=2)
    for scale in (1e6, 1e-6):
        ws = ObjectiveWorkspace(xp * scale, xm * scale, 2)
        value, grad, _ = ws.evaluate(v / scale)
        assert np.isfinite(value.dcs)
        assert np.all(np.isfinite(grad))
    far = ObjectiveWorkspace(xp, xm + 1e3, 2)
    value, grad, _ = far.evaluate(v)
    assert np.isfinite(value.dcs) and np.all(np.isfinite(grad))


@pytest.mark.parametrize("seed", range(100))
def test_overlap_bounded_by_half_cross_entropy(seed):
    f, g, cell = grid_mixture_density(k=1 + seed % 2, grid=60 if seed % 2 else 400, seed=seed)
    neg_log_overlap, half_cross_entropy = grid_overlap_bound(f, g, cell)
    assert neg_log_overlap >= half_cross_entropy - 1e-6
