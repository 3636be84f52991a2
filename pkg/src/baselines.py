"""PCA-family linear reductions used as comparison methods and as closed-form oracles."""

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.linalg import eigh

from density import covariance, renyi_entropy_gaussian
from errors import DegenerateProjectionError
from objective import ProjectionLike, ProjectionMatrix, as_array

TIE_TOLERANCE = 1e-10
COLLINEAR_ANGLE = 1e-6


class EigenDecomposition(BaseModel):
    """Eigenpairs of a symmetric matrix, eigenvalues descending; column i of eigenvectors pairs with value i."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def eigen_decomposition(sigma: np.ndarray) -> EigenDecomposition:
    """Symmetric eigendecomposition of (sigma + sigma^T) / 2 with a deterministic sign per eigenvector."""
    sym = 0.5 * (sigma + sigma.T)
    values, vectors = eigh(sym)
    order = np.argsort(values, kind="stable")[::-1]
    vectors = _fix_signs(vectors[:, order])
    return EigenDecomposition(eigenvalues=values[order], eigenvectors=vectors)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry (first one on ties) is positive."""
    vectors = vectors.copy()
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _top_k(sigma: np.ndarray, k: int) -> ProjectionMatrix:
    d = sigma.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    decomposition = eigen_decomposition(sigma)
    values = decomposition.eigenvalues
    scale = max(abs(values[0]), np.finfo(float).tiny)
    # only a tie across the cut between component k and k + 1 leaves the subspace ambiguous
    tied = k < d and abs(values[k - 1] - values[k]) <= TIE_TOLERANCE * scale
    flags = ("tied_eigenvalues",) if tied else ()
    return ProjectionMatrix(v=decomposition.eigenvectors[:, :k], flags=flags)


def pca(x: np.ndarray, k: int) -> ProjectionMatrix:
    """
    Top-k principal directions of the data covariance.

    Args:
        x: d x N data
        k: Number of components

    Returns:
        Orthonormal V, flagged when the chosen subspace is not unique
    """
    return _top_k(covariance(x), k)


def class_pca(xp: np.ndarray, xm: np.ndarray, k: int, weighted: bool = True) -> ProjectionMatrix:
    """
    Top-k eigenvectors of the summed class covariances.

    weighted=True (cPCA) weights each class covariance by N_l / N; weighted=False (2ePCA)
    gives both classes equal weight.
    """
    n_p, n_m = xp.shape[1], xm.shape[1]
    if weighted:
        total = n_p + n_m
        sigma = (n_m / total) * covariance(xm) + (n_p / total) * covariance(xp)
    else:
        sigma = covariance(xm) + covariance(xp)
    return _top_k(sigma, k)


def _first_component(x: np.ndarray) -> np.ndarray:
    sigma = covariance(x)
    if not np.trace(sigma) > 0:
        raise DegenerateProjectionError("class covariance is zero; its principal direction is undefined")
    return eigen_decomposition(sigma).eigenvectors[:, 0]


def per_class_pca(xp: np.ndarray, xm: np.ndarray) -> ProjectionMatrix:
    """
    V = [pc1(X-), pc1(X+)], kept as is (not orthogonalized).

    When the two directions are collinear the second column becomes the leading pooled
    principal direction that is not, and the result carries a "collinear_fallback" flag.
    """
    if xp.shape[0] < 2:
        raise DegenerateProjectionError("per-class PCA needs d >= 2")
    first = _first_component(xm)
    second = _first_component(xp)
    if np.arccos(min(1.0, abs(float(first @ second)))) >= COLLINEAR_ANGLE:
        return ProjectionMatrix(v=np.column_stack([first, second]))

    pooled = eigen_decomposition(covariance(np.concatenate([xm, xp], axis=1))).eigenvectors
    for candidate in pooled[:, 1:].T:
        if np.arccos(min(1.0, abs(float(first @ candidate)))) >= 1e-3:
            return ProjectionMatrix(v=np.column_stack([first, candidate]), flags=("collinear_fallback",))
    raise DegenerateProjectionError("no pooled direction separates from the class principal direction")


def gaussian_mle_entropy(x: np.ndarray, v: ProjectionLike) -> float:
    """
    Renyi quadratic entropy of the Gaussian fitted to V^T X.

    (k/2) log(4 pi) + 1/2 log det(V^T Sigma V), Sigma the covariance of x.
    """
    v = as_array(v)
    projected = v.T @ covariance(x) @ v
    return renyi_entropy_gaussian(0.5 * (projected + projected.T), v.shape[1])
