"""Tests for the PCA-family reductions and the Gaussian entropy they maximize"""

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from baselines import class_pca, eigen_decomposition, gaussian_mle_entropy, pca, per_class_pca
from density import covariance
from errors import DegenerateProjectionError
from optimizer import random_orthonormal


@pytest.fixture
def anisotropic():
    """5-D data with distinct variances 9, 4, 1, 0.25, 0.04 along rotated axes"""
    rng = np.random.default_rng(0)
    rotation = np.linalg.qr(rng.normal(size=(5, 5)))[0]
    scales = np.array([3.0, 2.0, 1.0, 0.5, 0.2])
    return rotation @ (scales[:, None] * rng.normal(size=(5, 400)))


def test_eigen_decomposition_reconstructs():
    sigma = covariance(np.random.default_rng(1).normal(size=(4, 30)))
    decomposition = eigen_decomposition(sigma)
    q, values = decomposition.eigenvectors, decomposition.eigenvalues
    assert np.all(np.diff(values) <= 0)
    assert np.linalg.norm(sigma - q @ np.diag(values) @ q.T) / np.linalg.norm(sigma) <= 1e-10


def test_pca_on_diagonal_line():
    t = np.linspace(-2.0, 2.0, 9)
    v = pca(np.vstack([t, t]), 1)
    assert np.allclose(v.v[:, 0], [1 / np.sqrt(2), 1 / np.sqrt(2)])
    assert v.flags == ()


def test_pca_flags_isotropic_data():
    x = np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
    v = pca(x, 1)
    assert "tied_eigenvalues" in v.flags
    assert np.allclose(v.v.T @ v.v, np.eye(1))


def test_pca_flags_only_a_tie_across_the_cut():
    x = np.array(
        [
            [1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.5, -0.5],
        ]
    )
    assert "tied_eigenvalues" in pca(x, 1).flags
    assert pca(x, 2).flags == ()
    assert pca(x, 3).flags == ()


def test_pca_projected_variance_is_eigen_sum(anisotropic):
    values = eigen_decomposition(covariance(anisotropic)).eigenvalues
    for k in (1, 2, 3):
        v = pca(anisotropic, k).v
        assert np.trace(v.T @ covariance(anisotropic) @ v) == pytest.approx(values[:k].sum(), abs=1e-10)
        assert np.linalg.norm(v.T @ v - np.eye(k)) <= 1e-10


def test_pca_translation_invariant(anisotropic):
    moved = anisotropic + np.arange(5.0)[:, None] * 100.0
    assert np.max(subspace_angles(pca(moved, 2).v, pca(anisotropic, 2).v)) <= 1e-8


def test_pca_rejects_large_k(anisotropic):
    with pytest.raises(ValueError):
        pca(anisotropic, 6)


def test_class_pca_weighting_equal_sizes(anisotropic):
    xp, xm = anisotropic[:, :200], anisotropic[:, 200:] + 1.0
    weighted = class_pca(xp, xm, 2, weighted=True).v
    unweighted = class_pca(xp, xm, 2, weighted=False).v
    assert np.max(subspace_angles(weighted, unweighted)) <= 1e-10


def test_class_pca_dominated_by_spread_class():
    rng = np.random.default_rng(2)
    xm = np.vstack([rng.normal(0.0, 5.0, 100), rng.normal(0.0, 0.5, 100)])
    xp = 1e-3 * rng.normal(size=(2, 100)) + 3.0
    v = class_pca(xp, xm, 1).v
    assert abs(v[0, 0]) > 0.99


def test_per_class_pca_orthogonal_directions():
    rng = np.random.default_rng(3)
    xm = np.vstack([rng.normal(0.0, 4.0, 50), rng.normal(0.0, 0.3, 50)])
    xp = np.vstack([rng.normal(0.0, 0.3, 50), rng.normal(0.0, 4.0, 50)])
    v = per_class_pca(xp, xm)
    assert v.flags == ()
    assert np.allclose(v.v[:, 0], pca(xm, 1).v[:, 0])
    assert np.allclose(v.v[:, 1], pca(xp, 1).v[:, 0])
    assert abs(v.v[:, 0] @ v.v[:, 1]) < 0.1


def test_per_class_pca_collinear_fallback():
    rng = np.random.default_rng(4)
    shape = np.vstack([rng.normal(0.0, 3.0, 40), rng.normal(0.0, 0.5, 40), rng.normal(0.0, 0.2, 40)])
    v = per_class_pca(shape + 5.0, shape.copy())
    assert v.flags == ("collinear_fallback",)
    assert np.linalg.matrix_rank(v.v) == 2


def test_per_class_pca_needs_two_features():
    with pytest.raises(DegenerateProjectionError):
        per_class_pca(np.array([[1.0, 2.0]]), np.array([[0.0, 3.0]]))


def test_per_class_pca_zero_covariance_class():
    with pytest.raises(DegenerateProjectionError):
        per_class_pca(np.ones((2, 3)), np.random.default_rng(5).normal(size=(2, 10)))


def test_gaussian_entropy_extremes_over_random_projections(anisotropic):
    """Top-k PCA maximizes and bottom-k PCA minimizes the projected Gaussian entropy"""
    k = 2
    vectors = eigen_decomposition(covariance(anisotropic)).eigenvectors
    top = gaussian_mle_entropy(anisotropic, vectors[:, :k])
    bottom = gaussian_mle_entropy(anisotropic, vectors[:, -k:])
    samples = [gaussian_mle_entropy(anisotropic, random_orthonormal(5, k, seed=s)) for s in range(1000)]
    assert top > max(samples)
    assert bottom < min(samples)
    assert gaussian_mle_entropy(anisotropic, pca(anisotropic, k)) == pytest.approx(top, abs=1e-10)


def test_gaussian_entropy_full_rank_rotation_invariant(anisotropic):
    first = gaussian_mle_entropy(anisotropic, random_orthonormal(5, 5, seed=1))
    second = gaussian_mle_entropy(anisotropic, random_orthonormal(5, 5, seed=2))
    assert first == pytest.approx(second, abs=1e-10)


def test_interlacing_bound(anisotropic):
    sigma = covariance(anisotropic)
    values = eigen_decomposition(sigma).eigenvalues
    for k in (1, 2, 3):
        bound = np.prod(values[:k])
        for seed in range(50):
            v = random_orthonormal(5, k, seed=seed).v
            assert np.linalg.det(v.T @ sigma @ v) <= bound + 1e-10
        v = pca(anisotropic, k).v
        assert np.linalg.det(v.T @ sigma @ v) == pytest.approx(bound, rel=1e-10)
