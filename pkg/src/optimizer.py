#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""First-order maximization of MELM: random orthonormal starts, L-BFGS ascent, multistart and restart statistics."""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import gammaln

from density import BandwidthConfig
from errors import DegenerateProjectionError, MelmError, OptimizationError
from objective import ObjectiveWorkspace, ProjectionLike, ProjectionMatrix, as_array

logger = logging.getLogger(__name__)

DEFAULT_GAMMA_GRID = (0.25, 0.5, 1.0, 1.5, 2.0)


class OptimConfig(BaseModel):
    """Stopping rules and line-search constants of the ascent."""

    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(default=500, ge=1)
    grad_tol: float = Field(default=1e-6, gt=0, description="Stop when max |grad MELM| falls below this")
    step_tol: float = Field(default=1e-10, gt=0, description="Stop when an accepted step gains less than this")
    memory: int = Field(default=10, ge=1, description="Curvature pairs kept by the two-loop recursion")
    seed: int = 0
    sufficient_increase: float = Field(default=1e-4, gt=0, lt=1)
    backtrack_factor: float = Field(default=0.5, gt=0, lt=1)
    max_backtracks: int = Field(default=40, ge=1)
    penalty_weight: float = Field(default=1.0, ge=0)
    standardize: bool = Field(default=True, description="Optimize on standardized classes and map V back")
    threads: int = Field(default=1, ge=1, description="Restarts evaluated in parallel")


class RestartTrace(BaseModel):
    """Final D_CS of every restart (None where a restart failed)."""

    values: List[Optional[float]]
    best_index: int
    iterations: List[int]

    def finite_values(self) -> np.ndarray:
        return np.asarray([value for value in self.values if value is not None], dtype=np.float64)


class MelmModel(BaseModel):
    """Fitted projection with the settings that produced it."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    v: ProjectionMatrix
    gamma: float
    dcs_achieved: float
    d: int
    k: int
    restarts: int
    seed: int
    fingerprint: str = ""
    optimizer: OptimConfig = Field(default_factory=OptimConfig)


def random_orthonormal(d: int, k: int, seed: int) -> ProjectionMatrix:
    """
    Haar-distributed point of the Stiefel manifold.

    Args:
        d: Input dimension
        k: Number of columns, 1 <= k <= d
        seed: Generator seed

    Returns:
        V with V^T V = I
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, k)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return ProjectionMatrix(v=q * signs)


def orthonormalize(v: ProjectionLike) -> ProjectionMatrix:
    """Orthonormal basis of span(V) from a thin QR; column j mixes only columns 1..j of V."""
    q, r = np.linalg.qr(as_array(v))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return ProjectionMatrix(v=q * signs)


def _two_loop(grad: np.ndarray, s_hist: Deque[np.ndarray], y_hist: Deque[np.ndarray]) -> np.ndarray:
    """Inverse-Hessian product H g from stored curvature pairs."""
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.dot(y, s)
        alpha = rho * np.dot(s, q)
        q -= alpha * y
        alphas.append((rho, alpha))
    s_last, y_last = s_hist[-1], y_hist[-1]
    q *= np.dot(s_last, y_last) / np.dot(y_last, y_last)
    for (s, y), (rho, alpha) in zip(zip(s_hist, y_hist), reversed(alphas)):
        beta = rho * np.dot(y, q)
        q += (alpha - beta) * s
    return q


class LbfgsAscent:
    """Limited-memory BFGS on -MELM with a backtracking (sufficient increase) line search."""

    def __init__(self, ws: ObjectiveWorkspace, opt: OptimConfig):
        self.ws = ws
        self.opt = opt
        self.shape = (ws.d, ws.k)

    def _negated(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad, _ = self.ws.evaluate(x.reshape(self.shape))
        return -value.melm, -grad.ravel()

    def run(self, v0: ProjectionLike) -> Tuple[np.ndarray, int, str]:
        """
        Ascend from v0.

        Returns:
            (final V, iterations used, stop reason)
        """
        opt = self.opt
        x = as_array(v0).astype(np.float64).ravel().copy()
        try:
            f, g = self._negated(x)
        except DegenerateProjectionError as e:
            raise OptimizationError(f"objective undefined at the starting point: {e}") from e
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise OptimizationError("objective is not finite at the starting point")

        s_hist: Deque[np.ndarray] = deque(maxlen=opt.memory)
        y_hist: Deque[np.ndarray] = deque(maxlen=opt.memory)
        reason = "max_iters"
        iteration = 0
        while iteration < opt.max_iters:
            if np.max(np.abs(g)) <= opt.grad_tol:
                reason = "grad_tol"
                break
            iteration += 1

            direction = -_two_loop(g, s_hist, y_hist) if s_hist else -g
            slope = float(np.dot(g, direction))
            if slope >= 0:
                s_hist.clear()
                y_hist.clear()
                direction = -g
                slope = -float(np.dot(g, g))
            step = 1.0 if s_hist else min(1.0, 1.0 / np.linalg.norm(g))

            accepted = False
            for _ in range(opt.max_backtracks):
                x_new = x + step * direction
                try:
                    f_new, g_new = self._negated(x_new)
                except DegenerateProjectionError:
                    f_new, g_new = np.inf, g
                if np.isfinite(f_new) and f_new <= f + opt.sufficient_increase * step * slope:
                    accepted = True
                    break
                step *= opt.backtrack_factor

            if not accepted:
                if s_hist:
                    # quasi-Newton direction failed; retry from plain gradient ascent
                    s_hist.clear()
                    y_hist.clear()
                    continue
                reason = "line_search"
                break

            s = x_new - x
            y = g_new - g
            if np.dot(s, y) > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
                s_hist.append(s)
                y_hist.append(y)
            gain = f - f_new
            x, f, g = x_new, f_new, g_new
            logger.debug("iter %d: MELM %.10g, |grad| %.3e, step %.3e", iteration, -f, np.max(np.abs(g)), step)
            if gain < opt.step_tol:
                reason = "step_tol"
                break

        return x.reshape(self.shape), iteration, reason


def _standardizer(xp: np.ndarray, xm: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and (N-1) scale of the pooled classes; constant features keep scale 1."""
    pooled = np.concatenate([xp, xm], axis=1)
    mean = pooled.mean(axis=1)
    sd = pooled.std(axis=1, ddof=1)
    return mean, np.where(sd > 0, sd, 1.0)


def maximize(
    xp: np.ndarray,
    xm: np.ndarray,
    k: int,
    cfg: BandwidthConfig,
    opt: OptimConfig,
    v0: ProjectionLike,
) -> Tuple[ProjectionMatrix, float, int]:
    """
    Maximize MELM from v0 and return an orthonormal basis of the reached subspace.

    Because D_CS is affine invariant, the ascent can run on standardized classes
    (opt.standardize), starting from an orthonormal basis of the subspace v0 maps to;
    V is mapped back to the input space before re-orthonormalization. With
    opt.standardize off the ascent starts at v0 itself and MELM never decreases from MELM(v0).

    Args:
        xp: d x n+ positive class
        xm: d x n- negative class
        k: Target dimension
        cfg: Bandwidth hyperparameters
        opt: Optimizer settings
        v0: Starting projection (d x k, linearly independent)

    Returns:
        (orthonormal V, D_CS at that V on the input data, iterations)
    """
    v0 = as_array(v0)
    if v0.shape != (xp.shape[0], k):
        raise OptimizationError(f"starting point has shape {v0.shape}, expected {(xp.shape[0], k)}")

    if opt.standardize:
        mean, sd = _standardizer(xp, xm)
        ws = ObjectiveWorkspace(
            (xp - mean[:, None]) / sd[:, None], (xm - mean[:, None]) / sd[:, None], k, cfg, opt.penalty_weight
        )
    else:
        sd = np.ones(xp.shape[0])
        ws = ObjectiveWorkspace(xp, xm, k, cfg, opt.penalty_weight)

    # dcs(V'; L X) = dcs(L V'; X) with L = diag(1/sd): start from an orthonormal basis of span(L^{-1} V0)
    start = orthonormalize(v0 * sd[:, None]).v if opt.standardize else v0
    v_final, iterations, reason = LbfgsAscent(ws, opt).run(start)
    v_input = orthonormalize(v_final / sd[:, None])

    raw_ws = ws if not opt.standardize else ObjectiveWorkspace(xp, xm, k, cfg, opt.penalty_weight)
    achieved = raw_ws.value(v_input).dcs
    logger.info("ascent stopped after %d iterations (%s), D_CS %.6g", iterations, reason, achieved)
    return v_input, achieved, iterations


def multistart(
    xp: np.ndarray,
    xm: np.ndarray,
    k: int,
    cfg: BandwidthConfig,
    opt: OptimConfig,
    restarts: int = 16,
    fingerprint: str = "",
) -> Tuple[MelmModel, RestartTrace]:
    """
    Run `restarts` ascents from random orthonormal starts (restart i seeded with opt.seed + i).

    Returns:
        (best model by D_CS with ties to the lowest index, trace of all restarts)
    """
    if restarts < 1:
        raise OptimizationError(f"need at least one restart, got {restarts}")
    d = xp.shape[0]

    def one(i: int) -> Tuple[Optional[ProjectionMatrix], Optional[float], int]:
        try:
            v, value, iterations = maximize(xp, xm, k, cfg, opt, random_orthonormal(d, k, opt.seed + i))
        except MelmError as e:
            logger.warning("restart %d failed: %s", i, e)
            return None, None, 0
        return v, value, iterations

    if opt.threads > 1 and restarts > 1:
        with ThreadPoolExecutor(max_workers=opt.threads) as pool:
            results = list(pool.map(one, range(restarts)))
    else:
        results = [one(i) for i in range(restarts)]

    best_index = -1
    for i, (_, value, _) in enumerate(results):
        if value is not None and (best_index < 0 or value > results[best_index][1]):
            best_index = i
    if best_index < 0:
        raise OptimizationError(f"all {restarts} restarts failed")

    trace = RestartTrace(
        values=[value for _, value, _ in results],
        best_index=best_index,
        iterations=[iterations for _, _, iterations in results],
    )
    best_v, best_value, _ = results[best_index]
    model = MelmModel(
        v=best_v,
        gamma=cfg.gamma,
        dcs_achieved=best_value,
        d=d,
        k=k,
        restarts=restarts,
        seed=opt.seed,
        fingerprint=fingerprint,
        optimizer=opt,
    )
    logger.info("best of %d restarts: #%d with D_CS %.6g", restarts, best_index, best_value)
    return model, trace


def expected_max_curve(values: Sequence[float], s_max: int) -> np.ndarray:
    """
    Expected best value after s restarts, s = 1..s_max, drawing without replacement from `values`.

    E_s = sum_i v_(i) C(i-1, s-1) / C(n, s) over ascending order statistics v_(1) <= ... <= v_(n).
    """
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    n = ordered.shape[0]
    if not 1 <= s_max <= n:
        raise ValueError(f"need 1 <= s_max <= n, got s_max={s_max}, n={n}")

    def log_comb(top: np.ndarray, bottom: float) -> np.ndarray:
        return gammaln(top + 1) - gammaln(bottom + 1) - gammaln(top - bottom + 1)

    curve = np.empty(s_max)
    ranks = np.arange(1, n + 1, dtype=np.float64)
    for s in range(1, s_max + 1):
        usable = ranks >= s
        log_weights = log_comb(ranks[usable] - 1, s - 1) - log_comb(np.asarray(float(n)), s)
        weights = np.exp(log_weights)
        curve[s - 1] = np.dot(weights / weights.sum(), ordered[usable])
    return curve


def select_gamma(
    xp: np.ndarray,
    xm: np.ndarray,
    k: int,
    opt: OptimConfig,
    scorer: Callable[[ProjectionMatrix], float],
    grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    restarts: int = 16,
    base_cfg: Optional[BandwidthConfig] = None,
) -> Tuple[float, List[float]]:
    """
    Pick gamma by the score of the projection each candidate produces.

    Args:
        scorer: Maps a fitted projection to a score (visual separability in practice)

    Returns:
        (best gamma with ties to the earliest grid entry, score per grid entry)
    """
    base_cfg = base_cfg or BandwidthConfig()
    scores = []
    for gamma in grid:
        model, _ = multistart(xp, xm, k, base_cfg.model_copy(update={"gamma": gamma}), opt, restarts)
        scores.append(float(scorer(model.v)))
        logger.info("gamma %.3g scored %.4f", gamma, scores[-1])
    return float(grid[int(np.argmax(scores))]), scores
