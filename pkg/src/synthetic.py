"""Seeded generators: planted-subspace data with known ground truth, and stand-ins shaped like the benchmark sets."""

import logging
import os
from typing import Tuple

import numpy as np

from dataset import LabeledDataset, load_libsvm

logger = logging.getLogger(__name__)

FOURCLASS_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "fourclass.libsvm")


def _labeled(x_minus: np.ndarray, x_plus: np.ndarray, rng: np.random.Generator, names=None) -> LabeledDataset:
    points = np.concatenate([x_minus, x_plus], axis=1)
    labels = np.concatenate([-np.ones(x_minus.shape[1]), np.ones(x_plus.shape[1])]).astype(np.int8)
    order = rng.permutation(points.shape[1])
    return LabeledDataset(
        points=points[:, order],
        labels=labels[order],
        feature_names=names or [f"x{i + 1}" for i in range(points.shape[0])],
    )


def planted_subspace(
    d: int = 10,
    k: int = 2,
    n: int = 600,
    seed: int = 0,
    offset: float = 1.5,
    signal_sd: float = 0.4,
    noise_sd: float = 4.0,
) -> Tuple[LabeledDataset, np.ndarray]:
    """
    Classes that differ only in the first k coordinates.

    Each point sits at offset * s plus Gaussian noise in coordinates 1..k, for a sign
    vector s whose product is the label (k=1 gives two blobs, k=2 a checkerboard that
    no single direction separates). The remaining d - k coordinates are label-free
    noise with a larger spread, so they dominate the variance.

    Returns:
        (dataset with n // 2 positives, d x k orthonormal basis of the discriminative subspace)
    """
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    rng = np.random.default_rng(seed)
    n_plus = n // 2

    def draw(count: int, label: int) -> np.ndarray:
        signs = rng.choice([-1.0, 1.0], size=(k, count))
        signs[-1] = label * np.prod(signs[:-1], axis=0)
        signal = offset * signs + rng.normal(scale=signal_sd, size=(k, count))
        return np.concatenate([signal, rng.normal(scale=noise_sd, size=(d - k, count))], axis=0)

    ds = _labeled(draw(n - n_plus, -1), draw(n_plus, 1), rng)
    return ds, np.eye(d)[:, :k]


def fourclass_like(seed: int = 0) -> LabeledDataset:
    """
    862 points in the plane, 555 negative and 307 positive, in interleaved clusters.

    Blobs sit on a 3 x 3 lattice in checkerboard colours, so the classes are
    separable but neither is convex.
    """
    rng = np.random.default_rng(seed)
    lattice = np.array([(i, j) for i in range(3) for j in range(3)], dtype=np.float64).T
    positive = (lattice.sum(axis=0) % 2) == 1
    plus_centers, minus_centers = lattice[:, positive], lattice[:, ~positive]

    def draw(centers: np.ndarray, count: int) -> np.ndarray:
        picks = np.arange(count) % centers.shape[1]
        return centers[:, picks] + rng.normal(scale=0.13, size=(2, count))

    return _labeled(draw(minus_centers, 555), draw(plus_centers, 307), rng)


def fourclass(path: str = FOURCLASS_PATH) -> LabeledDataset:
    """The libsvm fourclass set when the file is present, otherwise the seeded stand-in."""
    if os.path.exists(path):
        return load_libsvm(path)
    logger.info("%s not found, using the synthetic fourclass stand-in", path)
    return fourclass_like()


def breast_cancer_like(seed: int = 0) -> LabeledDataset:
    """
    683 x 10 integer-valued features, 444 negative (benign) and 239 positive.

    Nine features are noisy readings of one latent severity score on a 1..10 scale; the
    tenth is label-free.
    """
    rng = np.random.default_rng(seed)
    loadings = rng.uniform(1.5, 3.0, size=9)

    def draw(count: int, centre: float, spread: float) -> np.ndarray:
        severity = rng.normal(centre, spread, size=count)
        readings = 3.0 + loadings[:, None] * severity[None, :] + rng.normal(scale=1.2, size=(9, count))
        readings = np.clip(np.rint(readings), 1, 10)
        return np.concatenate([readings, rng.integers(1, 11, size=(1, count)).astype(np.float64)], axis=0)

    return _labeled(draw(444, 0.0, 0.35), draw(239, 2.2, 0.7), rng)


def grid_mixture_density(k: int = 2, grid: int = 40, seed: int = 0) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Two random Gaussian mixtures sampled at the cell midpoints of the unit box [0, 1]^k.

    Each is rescaled so that its values times the cell volume sum to 1.

    Returns:
        (f, g, cell volume), f and g flattened over grid ** k cells
    """
    rng = np.random.default_rng(seed)
    axis = (np.arange(grid) + 0.5) / grid
    cells = np.stack(np.meshgrid(*([axis] * k), indexing="ij"), axis=-1).reshape(-1, k)
    cell = (1.0 / grid) ** k

    def mixture() -> np.ndarray:
        values = np.zeros(cells.shape[0])
        for _ in range(rng.integers(1, 4)):
            centre = rng.uniform(0.2, 0.8, size=k)
            scale = rng.uniform(0.05, 0.2)
            values += rng.uniform(0.5, 1.5) * np.exp(-0.5 * np.sum((cells - centre) ** 2, axis=1) / scale**2)
        return values / (values.sum() * cell)

    return mixture(), mixture(), cell
