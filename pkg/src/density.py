"""Gaussian KDE machinery: Silverman bandwidths, pooled covariances, information potentials, Renyi entropies.

Pairwise sums over A - B are evaluated in log space, chunked over the columns of A
with a fixed chunk size and merged with an online log-sum-exp, so a value never
depends on how many threads are running elsewhere.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from errors import DatasetError, DegenerateProjectionError

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_4PI = float(np.log(4.0 * np.pi))


class BandwidthConfig(BaseModel):
    """Kernel bandwidth hyperparameters."""

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(default=1.0, gt=0, description="Scaling of Silverman's rule")
    jitter: float = Field(default=1e-10, ge=0, description="Relative ridge added when a covariance is not PD")
    pair_chunk: int = Field(default=256, ge=1, description="Columns of A per chunk of a pairwise sum")


class PooledBandwidthCov(BaseModel):
    """Sigma_AB = h_A^2 cov_A + h_B^2 cov_B in input space."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sigma_ab: np.ndarray
    n_a: int
    n_b: int
    k: int

    def project(self, v: np.ndarray) -> np.ndarray:
        """Sigma_AB(V) = V^T Sigma_AB V."""
        projected = v.T @ self.sigma_ab @ v
        return 0.5 * (projected + projected.T)


class KdeModel(BaseModel):
    """Gaussian KDE of k-dimensional points with one shared kernel covariance."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    centers: np.ndarray = Field(description="k x n kernel centers")
    covariance: np.ndarray = Field(description="k x k kernel covariance")
    cholesky: Optional[np.ndarray] = Field(default=None, description="Lower Cholesky factor of covariance")
    log_norm: Optional[float] = Field(default=None, description="log of 1 / (n (2 pi)^{k/2} det^{1/2})")

    @model_validator(mode="after")
    def _check(self) -> "KdeModel":
        centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if sigma.shape != (centers.shape[0], centers.shape[0]):
            raise DegenerateProjectionError(f"kernel covariance {sigma.shape} does not match {centers.shape[0]}-D centers")
        if np.max(np.abs(sigma - sigma.T)) > 1e-12 * max(1.0, np.max(np.abs(sigma))):
            raise DegenerateProjectionError("kernel covariance is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        lower, sigma = _cholesky_with_jitter(sigma, 1e-10)
        k, n = centers.shape
        log_norm = -0.5 * k * LOG_2PI - np.sum(np.log(np.diag(lower))) - np.log(n)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "covariance", sigma)
        object.__setattr__(self, "cholesky", lower)
        object.__setattr__(self, "log_norm", float(log_norm))
        return self


def _cholesky_with_jitter(sigma: np.ndarray, jitter: float) -> Tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factor, retrying once with jitter * tr(sigma)/k on the diagonal."""
    if not np.all(np.isfinite(sigma)):
        raise DegenerateProjectionError("covariance has non-finite entries")
    try:
        return cholesky(sigma, lower=True), sigma
    except LinAlgError:
        pass
    k = sigma.shape[0]
    ridge = jitter * np.trace(sigma) / k
    if not ridge > 0:
        raise DegenerateProjectionError("projected covariance is zero; the projection collapses the data")
    jittered = sigma + ridge * np.eye(k)
    try:
        lower = cholesky(jittered, lower=True)
    except LinAlgError as e:
        raise DegenerateProjectionError("projected covariance is singular even after jitter") from e
    logger.debug("covariance needed jitter %.3g", ridge)
    return lower, jittered


def covariance(points: np.ndarray) -> np.ndarray:
    """
    Unbiased sample covariance of a d x n block (columns are samples).

    Args:
        points: d x n matrix with n >= 2

    Returns:
        Symmetric d x d covariance with divisor n - 1
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[1]
    if n < 2:
        raise DatasetError(f"covariance needs at least 2 points, got {n}")
    centered = points - points.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / (n - 1)
    return 0.5 * (cov + cov.T)


def silverman_bandwidth(n: int, k: int, cfg: BandwidthConfig) -> float:
    """h = gamma (4 / (k + 2))^{1/(k+4)} n^{-1/(k+4)}."""
    if n < 1 or k < 1:
        raise ValueError(f"silverman_bandwidth needs n >= 1 and k >= 1, got n={n}, k={k}")
    return cfg.gamma * (4.0 / (k + 2)) ** (1.0 / (k + 4)) * n ** (-1.0 / (k + 4))


def pooled_bandwidth_cov(a: np.ndarray, b: np.ndarray, k: int, cfg: BandwidthConfig) -> PooledBandwidthCov:
    """
    Sum of the Silverman-scaled class covariances of A and B for a k-dimensional target.

    Args:
        a: d x n_a points
        b: d x n_b points (may be the same array as a)
        k: Target dimension used in the bandwidth
        cfg: Bandwidth hyperparameters

    Returns:
        PooledBandwidthCov holding the d x d input-space matrix
    """
    n_a, n_b = a.shape[1], b.shape[1]
    if n_a < 2 or n_b < 2:
        raise DatasetError(f"each class needs at least 2 points, got {n_a} and {n_b}")
    h_a = silverman_bandwidth(n_a, k, cfg)
    h_b = silverman_bandwidth(n_b, k, cfg)
    sigma = h_a**2 * covariance(a) + h_b**2 * covariance(b)
    return PooledBandwidthCov(sigma_ab=0.5 * (sigma + sigma.T), n_a=n_a, n_b=n_b, k=k)


def _pair_sums(
    a: np.ndarray,
    b: np.ndarray,
    v: np.ndarray,
    pooled: PooledBandwidthCov,
    cfg: BandwidthConfig,
    with_gradient: bool,
) -> Tuple[float, Optional[np.ndarray]]:
    """log ip_AB(V) and, optionally, its d x k gradient in one pass over A - B."""
    k = v.shape[1]
    sigma_v = pooled.project(v)
    lower, sigma_v = _cholesky_with_jitter(sigma_v, cfg.jitter)
    half_logdet = float(np.sum(np.log(np.diag(lower))))

    proj_a = v.T @ a
    proj_b = v.T @ b
    white_a = solve_triangular(lower, proj_a, lower=True)
    white_b = solve_triangular(lower, proj_b, lower=True)
    if with_gradient:
        s_a = cho_solve((lower, True), proj_a)
        s_b = cho_solve((lower, True), proj_b)

    n_a, n_b = a.shape[1], b.shape[1]
    run_max = -np.inf
    run_sum = 0.0
    m_acc = np.zeros((a.shape[0], k))
    c_acc = np.zeros((k, k))

    for start in range(0, n_a, cfg.pair_chunk):
        stop = min(start + cfg.pair_chunk, n_a)
        diff = white_a[:, start:stop, None] - white_b[:, None, :]
        log_psi = -0.5 * np.einsum("kij,kij->ij", diff, diff)
        chunk_max = float(np.max(log_psi))
        weights = np.exp(log_psi - chunk_max)
        chunk_sum = float(np.sum(weights))

        new_max = max(run_max, chunk_max)
        old_scale = np.exp(run_max - new_max) if np.isfinite(run_max) else 0.0
        chunk_scale = np.exp(chunk_max - new_max)
        run_sum = old_scale * run_sum + chunk_scale * chunk_sum

        if with_gradient:
            # z_ij = S (a_i - b_j) = s_a[:, i] - s_b[:, j]
            sa_chunk = s_a[:, start:stop]
            row_sums = weights.sum(axis=1)
            col_sums = weights.sum(axis=0)
            za = sa_chunk * row_sums - s_b @ weights.T
            zb = sa_chunk @ weights - s_b * col_sums
            m_chunk = a[:, start:stop] @ za.T - b @ zb.T
            cross = sa_chunk @ weights @ s_b.T
            c_chunk = (sa_chunk * row_sums) @ sa_chunk.T - cross - cross.T + (s_b * col_sums) @ s_b.T
            m_acc = old_scale * m_acc + chunk_scale * m_chunk
            c_acc = old_scale * c_acc + chunk_scale * c_chunk
        run_max = new_max

    log_ip = -0.5 * k * LOG_2PI - half_logdet - np.log(n_a) - np.log(n_b) + run_max + np.log(run_sum)
    if not with_gradient:
        return float(log_ip), None

    sigma_full_v = pooled.sigma_ab @ v
    sigma_v_s = cho_solve((lower, True), sigma_full_v.T).T
    c_mean = c_acc / run_sum
    gradient = -sigma_v_s - m_acc / run_sum + sigma_full_v @ (0.5 * (c_mean + c_mean.T))
    return float(log_ip), gradient


def log_cross_ip(a: np.ndarray, b: np.ndarray, v: np.ndarray, cfg: BandwidthConfig) -> float:
    """
    log of the cross information potential  log integral de{V^T A} de{V^T B}.

    Args:
        a: d x n_a points of the first set
        b: d x n_b points of the second set
        v: d x k projection with linearly independent columns
        cfg: Bandwidth hyperparameters

    Returns:
        Finite log ip_AB(V)
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    pooled = pooled_bandwidth_cov(a, b, v.shape[1], cfg)
    value, _ = _pair_sums(a, b, v, pooled, cfg, with_gradient=False)
    return value


def log_cross_ip_with_gradient(
    a: np.ndarray,
    b: np.ndarray,
    v: np.ndarray,
    cfg: BandwidthConfig,
    pooled: Optional[PooledBandwidthCov] = None,
) -> Tuple[float, np.ndarray]:
    """log ip_AB(V) together with its gradient with respect to V (d x k)."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if pooled is None:
        pooled = pooled_bandwidth_cov(a, b, v.shape[1], cfg)
    value, gradient = _pair_sums(a, b, v, pooled, cfg, with_gradient=True)
    return value, gradient


def renyi_entropy_gaussian(sigma: np.ndarray, k: int) -> float:
    """Renyi quadratic entropy of N(m, sigma): (k/2) log(4 pi) + 1/2 log det sigma."""
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if sigma.shape != (k, k):
        raise ValueError(f"expected a {k}x{k} covariance, got {sigma.shape}")
    try:
        lower = cholesky(0.5 * (sigma + sigma.T), lower=True)
    except LinAlgError as e:
        raise DegenerateProjectionError("covariance is not positive definite") from e
    return 0.5 * k * LOG_4PI + float(np.sum(np.log(np.diag(lower))))


def renyi_cross_entropy(a: np.ndarray, b: np.ndarray, v: np.ndarray, cfg: BandwidthConfig) -> float:
    """H2x(de{V^T A}, de{V^T B}) = -log ip_AB(V)."""
    return -log_cross_ip(a, b, v, cfg)


def renyi_entropy(a: np.ndarray, v: np.ndarray, cfg: BandwidthConfig) -> float:
    """Renyi quadratic entropy of the KDE of V^T A."""
    return -log_cross_ip(a, a, v, cfg)


def fit_kde(points: np.ndarray, cfg: BandwidthConfig) -> KdeModel:
    """KDE of k x n points with kernel covariance h^2 cov (Silverman h, k = rows)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    k, n = points.shape
    h = silverman_bandwidth(n, k, cfg)
    sigma = h**2 * covariance(points)
    return KdeModel(centers=points, covariance=np.atleast_2d(sigma))


def kde_log_density(model: KdeModel, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    """
    Log density of the KDE at the columns of x.

    Args:
        model: Fitted KDE
        x: k x m evaluation points
        chunk: Evaluation points handled per block

    Returns:
        m log densities, finite even far from every center
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(model.centers.shape[0], -1)
    white_c = solve_triangular(model.cholesky, model.centers, lower=True)
    white_x = solve_triangular(model.cholesky, x, lower=True)
    out = np.empty(x.shape[1])
    for start in range(0, x.shape[1], chunk):
        stop = min(start + chunk, x.shape[1])
        diff = white_x[:, start:stop, None] - white_c[:, None, :]
        log_kernel = -0.5 * np.einsum("kij,kij->ij", diff, diff)
        out[start:stop] = logsumexp(log_kernel, axis=1) + model.log_norm
    return out


def kde_log_density_at(model: KdeModel, x: np.ndarray) -> float:
    """Log density of the KDE at a single k-vector."""
    return float(kde_log_density(model, np.asarray(x, dtype=np.float64).reshape(-1, 1))[0])
