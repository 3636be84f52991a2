#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""The MELM objective: Cauchy-Schwarz divergence of projected class KDEs, its orthonormality penalty and gradients."""

import logging
from typing import Callable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from density import BandwidthConfig, PooledBandwidthCov, log_cross_ip_with_gradient, pooled_bandwidth_cov
from errors import DegenerateProjectionError

logger = logging.getLogger(__name__)


class ProjectionMatrix(BaseModel):
    """d x k matrix V with linearly independent columns."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    v: np.ndarray = Field(description="d x k projection, columns V_1..V_k")
    flags: Tuple[str, ...] = Field(default=(), description="Notes on degenerate constructions (ties, fallbacks)")

    @model_validator(mode="after")
    def _check(self) -> "ProjectionMatrix":
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2 or v.shape[1] < 1 or v.shape[1] > v.shape[0]:
            raise DegenerateProjectionError(f"projection must be d x k with 1 <= k <= d, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DegenerateProjectionError("projection has non-finite entries")
        singular = np.linalg.svd(v, compute_uv=False)
        if singular[-1] <= 1e-8 * singular[0]:
            raise DegenerateProjectionError("projection columns are linearly dependent")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        return self

    @property
    def d(self) -> int:
        return self.v.shape[0]

    @property
    def k(self) -> int:
        return self.v.shape[1]

    def gram(self) -> np.ndarray:
        """G(V) = V^T V."""
        return self.v.T @ self.v


ProjectionLike = Union[ProjectionMatrix, np.ndarray]


def as_array(v: ProjectionLike) -> np.ndarray:
    """The d x k array behind a projection."""
    if isinstance(v, ProjectionMatrix):
        return v.v
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(-1, 1) if v.ndim == 1 else v


class ObjectiveValue(BaseModel):
    """MELM value with its terms."""

    dcs: float
    penalty: float = Field(description="Weighted orthonormality penalty")
    melm: float
    log_ip_pp: float
    log_ip_mm: float
    log_ip_pm: float


class ObjectiveWorkspace:
    """
    Precomputed pooled bandwidth covariances for one (X+, X-, k, gamma) binding.

    Evaluation only reads the workspace, so one instance can serve concurrent callers.
    Differences a - b are never materialized: sums run over projected points.
    """

    def __init__(
        self,
        xp: np.ndarray,
        xm: np.ndarray,
        k: int,
        cfg: Optional[BandwidthConfig] = None,
        penalty_weight: float = 1.0,
    ):
        self.cfg = cfg or BandwidthConfig()
        self.xp = np.ascontiguousarray(xp, dtype=np.float64)
        self.xm = np.ascontiguousarray(xm, dtype=np.float64)
        if self.xp.shape[0] != self.xm.shape[0]:
            raise DegenerateProjectionError(f"classes live in {self.xp.shape[0]} and {self.xm.shape[0]} dimensions")
        self.k = k
        self.penalty_weight = penalty_weight
        self.sigma_pp: PooledBandwidthCov = pooled_bandwidth_cov(self.xp, self.xp, k, self.cfg)
        self.sigma_mm: PooledBandwidthCov = pooled_bandwidth_cov(self.xm, self.xm, k, self.cfg)
        self.sigma_pm: PooledBandwidthCov = pooled_bandwidth_cov(self.xp, self.xm, k, self.cfg)

    @property
    def d(self) -> int:
        return self.xp.shape[0]

    def with_gamma(self, gamma: float) -> "ObjectiveWorkspace":
        """A new workspace over the same data for another gamma."""
        return ObjectiveWorkspace(
            self.xp, self.xm, self.k, self.cfg.model_copy(update={"gamma": gamma}), self.penalty_weight
        )

    def _terms(self, v: np.ndarray):
        if v.shape != (self.d, self.k):
            raise DegenerateProjectionError(f"expected a {self.d}x{self.k} projection, got {v.shape}")
        pp = log_cross_ip_with_gradient(self.xp, self.xp, v, self.cfg, self.sigma_pp)
        mm = log_cross_ip_with_gradient(self.xm, self.xm, v, self.cfg, self.sigma_mm)
        pm = log_cross_ip_with_gradient(self.xp, self.xm, v, self.cfg, self.sigma_pm)
        return pp, mm, pm

    def evaluate(self, v: ProjectionLike) -> Tuple[ObjectiveValue, np.ndarray, np.ndarray]:
        """
        Objective terms and gradients in one pass.

        Args:
            v: d x k projection

        Returns:
            (ObjectiveValue, gradient of MELM, gradient of DCS)
        """
        v = as_array(v)
        (lpp, gpp), (lmm, gmm), (lpm, gpm) = self._terms(v)
        value = _assemble(v, lpp, lmm, lpm, self.penalty_weight)
        grad_dcs = gpp + gmm - 2.0 * gpm
        grad_melm = grad_dcs - self.penalty_weight * penalty_gradient(v)
        return value, grad_melm, grad_dcs

    def value(self, v: ProjectionLike) -> ObjectiveValue:
        """Objective terms at v."""
        return self.evaluate(v)[0]


def _assemble(v: np.ndarray, lpp: float, lmm: float, lpm: float, weight: float) -> ObjectiveValue:
    dcs_value = lpp + lmm - 2.0 * lpm
    pen = weight * penalty(v)
    return ObjectiveValue(dcs=dcs_value, penalty=pen, melm=dcs_value - pen, log_ip_pp=lpp, log_ip_mm=lmm, log_ip_pm=lpm)


def dcs(v: ProjectionLike, xp: np.ndarray, xm: np.ndarray, cfg: Optional[BandwidthConfig] = None) -> float:
    """
    Cauchy-Schwarz divergence between the KDEs of V^T X+ and V^T X-.

    Args:
        v: d x k projection with linearly independent columns
        xp: d x n+ positive class
        xm: d x n- negative class
        cfg: Bandwidth hyperparameters

    Returns:
        D_CS(V) >= 0
    """
    v = as_array(v)
    return ObjectiveWorkspace(xp, xm, v.shape[1], cfg).value(v).dcs


def dcs_gradient(v: ProjectionLike, xp: np.ndarray, xm: np.ndarray, cfg: Optional[BandwidthConfig] = None) -> np.ndarray:
    """d x k gradient of D_CS at V."""
    v = as_array(v)
    return ObjectiveWorkspace(xp, xm, v.shape[1], cfg).evaluate(v)[2]


def penalty(v: ProjectionLike) -> float:
    """||V^T V - I||_F^2."""
    v = as_array(v)
    residual = v.T @ v - np.eye(v.shape[1])
    return float(np.sum(residual * residual))


def penalty_gradient(v: ProjectionLike) -> np.ndarray:
    """4 V V^T V - 4 V."""
    v = as_array(v)
    return 4.0 * v @ (v.T @ v) - 4.0 * v


def melm_value(
    v: ProjectionLike,
    xp: np.ndarray,
    xm: np.ndarray,
    cfg: Optional[BandwidthConfig] = None,
    penalty_weight: float = 1.0,
) -> ObjectiveValue:
    """MELM(V) = D_CS(V) - ||V^T V - I||^2, with the term breakdown."""
    v = as_array(v)
    return ObjectiveWorkspace(xp, xm, v.shape[1], cfg, penalty_weight).value(v)


def melm_gradient(
    v: ProjectionLike,
    xp: np.ndarray,
    xm: np.ndarray,
    cfg: Optional[BandwidthConfig] = None,
    penalty_weight: float = 1.0,
) -> np.ndarray:
    """grad D_CS(V) - (4 V V^T V - 4 V)."""
    v = as_array(v)
    return ObjectiveWorkspace(xp, xm, v.shape[1], cfg, penalty_weight).evaluate(v)[1]


def decompose(
    v: ProjectionLike, xp: np.ndarray, xm: np.ndarray, cfg: Optional[BandwidthConfig] = None
) -> Tuple[float, float]:
    """
    Split D_CS into its fitting and regularizing terms.

    Returns:
        (2 H2x(+, -), H2(-) + H2(+)); their difference is D_CS
    """
    value = melm_value(v, xp, xm, cfg)
    fitting = -2.0 * value.log_ip_pm
    regularizing = -value.log_ip_pp - value.log_ip_mm
    return fitting, regularizing


def finite_difference_gradient(
    func: Callable[[np.ndarray], float], v: np.ndarray, rel_step: float = 1e-5
) -> np.ndarray:
    """Central differences with per-entry step rel_step * (1 + |v_ij|)."""
    v = np.array(v, dtype=np.float64)
    grad = np.zeros_like(v)
    for index in np.ndindex(v.shape):
        step = rel_step * (1.0 + abs(v[index]))
        original = v[index]
        v[index] = original + step
        f_plus = func(v)
        v[index] = original - step
        f_minus = func(v)
        v[index] = original
        grad[index] = (f_plus - f_minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| over max(1, max |numeric|)."""
    return float(np.max(np.abs(analytic - numeric)) / max(1.0, float(np.max(np.abs(numeric)))))


def gradient_check(ws: ObjectiveWorkspace, v: ProjectionLike, rel_step: float = 1e-5) -> float:
    """Relative error of the analytic MELM gradient against central differences."""
    v = as_array(v)
    _, analytic, _ = ws.evaluate(v)
    numeric = finite_difference_gradient(lambda x: ws.value(x).melm, v, rel_step)
    error = relative_error(analytic, numeric)
    logger.debug("gradient check at %s: relative error %.3e", v.shape, error)
    return error


def grid_overlap_bound(f: np.ndarray, g: np.ndarray, cell: float) -> Tuple[float, float]:
    """
    Both sides of the balanced-accuracy error bound for densities sampled on a grid.

    Args:
        f: density values on the grid cells
        g: density values on the same cells
        cell: volume of one cell

    Returns:
        (-log integral min{f, g}, 1/2 * H2x(f, g)); the first is never below the second on a unit box
    """
    overlap = float(np.sum(np.minimum(f, g)) * cell)
    cross = float(np.sum(f * g) * cell)
    return -np.log(overlap), -0.5 * np.log(cross)
