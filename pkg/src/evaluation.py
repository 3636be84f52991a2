#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""Classifiers on projected data, balanced accuracy, and the pipeline / visual-separability benchmarks."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from sklearn.metrics import confusion_matrix
from sklearn.neighbors import NearestNeighbors

from baselines import class_pca, pca, per_class_pca
from dataset import (
    FoldPlan,
    LabeledDataset,
    apply_affine,
    class_partition,
    random_subset,
    split_kfold,
    standardize,
    subset,
    train_test_indices,
)
from density import BandwidthConfig, fit_kde, kde_log_density
from errors import DatasetError, MelmError
from fileio import atomic_write_text
from objective import ProjectionMatrix, as_array
from optimizer import DEFAULT_GAMMA_GRID, OptimConfig, multistart, select_gamma

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
NEIGHBOR_GRID = (1, 3, 5, 9)
CLASSIFIERS = ("knn", "kde")
METHOD_NAMES = ("melm", "pca", "cpca", "2epca", "ppca", "identity")

ProjectionFitter = Callable[[np.ndarray, np.ndarray, int], Union[ProjectionMatrix, np.ndarray]]
MethodSpec = Union[str, Tuple[str, ProjectionFitter]]


class EvalSettings(BaseModel):
    """Hyperparameters shared by both benchmark protocols; echoed into every report."""

    gamma: float = Field(default=1.0, gt=0, description="MELM bandwidth scaling when no grid is searched")
    gamma_grid: Optional[List[float]] = Field(default=None, description="Select MELM gamma from this grid by inner CV")
    restarts: int = Field(default=16, ge=1)
    optimizer: OptimConfig = Field(default_factory=OptimConfig)
    neighbor_grid: List[int] = Field(default_factory=lambda: list(NEIGHBOR_GRID))
    classifier_gamma_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_GAMMA_GRID))
    inner_folds: int = Field(default=3, ge=2)
    standardize: bool = Field(default=False, description="Standardize features (on training data) before projecting")
    threads: int = Field(default=1, ge=1)


class FoldScore(BaseModel):
    """Test BAC of one classifier on one fold of one method."""

    method: str
    classifier: str
    fold: int
    repetition: int = 0
    score: float = Field(ge=0.0, le=1.0)
    params: Dict[str, float] = Field(default_factory=dict)


class FoldError(BaseModel):
    """A fold whose projection or classifier could not be fitted."""

    method: str
    fold: int
    repetition: int = 0
    message: str


class EvalReport(BaseModel):
    """Benchmark output; serializes to the documented JSON schema."""

    schema_version: int = REPORT_SCHEMA_VERSION
    protocol: str = Field(description='"pipeline" or "separability"')
    k: int
    folds: int
    seed: int
    scores: List[FoldScore] = Field(default_factory=list)
    errors: List[FoldError] = Field(default_factory=list)
    means: Dict[str, Optional[float]] = Field(default_factory=dict, description="Mean BAC per method")
    best_classifier: Dict[str, Optional[str]] = Field(default_factory=dict)
    repetition_means: Dict[str, List[float]] = Field(default_factory=dict)
    repetition_variance: Dict[str, float] = Field(default_factory=dict)
    settings: EvalSettings = Field(default_factory=EvalSettings)


def bac(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """
    Balanced accuracy, 1/2 (TP / (TP + FN) + TN / (TN + FP)).

    Args:
        y_true: Labels in {-1, +1}, both classes present
        y_pred: Predictions in {-1, +1}, same length

    Returns:
        BAC in [0, 1]
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise DatasetError(f"label vectors of shapes {y_true.shape} and {y_pred.shape}")
    if not (np.any(y_true == 1) and np.any(y_true == -1)):
        raise DatasetError("balanced accuracy needs both classes in y_true")
    tn, fp, fn, tp = confusion_matrix(y_true, y_pred, labels=[-1, 1]).ravel()
    return float(0.5 * (tp / (tp + fn) + tn / (tn + fp)))


def knn_predict(train: LabeledDataset, test_points: np.ndarray, neighbors: int) -> np.ndarray:
    """
    Exact Euclidean k-nearest-neighbour majority vote; ties go to -1.

    Args:
        train: Projected training set (k x n points)
        test_points: k x m points to classify
        neighbors: Number of neighbours, 1 <= neighbors <= n

    Returns:
        m predictions in {-1, +1}
    """
    if not 1 <= neighbors <= train.n:
        raise DatasetError(f"neighbors must be in [1, {train.n}], got {neighbors}")
    index = NearestNeighbors(n_neighbors=neighbors, algorithm="brute").fit(train.points.T)
    _, nearest = index.kneighbors(np.atleast_2d(test_points).T)
    votes = train.labels[nearest].astype(np.int64).sum(axis=1)
    return np.where(votes > 0, 1, -1).astype(np.int8)


def kde_predict(train: LabeledDataset, test_points: np.ndarray, cfg: BandwidthConfig) -> np.ndarray:
    """
    Pick the class whose KDE is denser at each test point; priors ignored, ties go to -1.

    Args:
        train: Projected training set with at least 2 points per class
        test_points: k x m points to classify
        cfg: Bandwidth scaling of the class KDEs

    Returns:
        m predictions in {-1, +1}
    """
    x_minus, x_plus = class_partition(train)
    test_points = np.atleast_2d(test_points)
    log_minus = kde_log_density(fit_kde(x_minus, cfg), test_points)
    log_plus = kde_log_density(fit_kde(x_plus, cfg), test_points)
    return np.where(log_plus > log_minus, 1, -1).astype(np.int8)


def _classifier_candidates(settings: EvalSettings) -> Dict[str, List[Tuple[Dict[str, float], Callable]]]:
    candidates: Dict[str, List[Tuple[Dict[str, float], Callable]]] = {"knn": [], "kde": []}
    for neighbors in settings.neighbor_grid:
        candidates["knn"].append(
            ({"neighbors": float(neighbors)}, lambda tr, x, n=neighbors: knn_predict(tr, x, min(n, tr.n)))
        )
    for gamma in settings.classifier_gamma_grid:
        candidates["kde"].append(({"gamma": gamma}, lambda tr, x, g=gamma: kde_predict(tr, x, BandwidthConfig(gamma=g))))
    return candidates


def _select_and_score(
    train: LabeledDataset, test: LabeledDataset, classifier: str, settings: EvalSettings, seed: int
) -> Tuple[float, Dict[str, float]]:
    """Choose classifier hyperparameters by inner CV on train, then score on test."""
    options = _classifier_candidates(settings)[classifier]
    plan = split_kfold(train, settings.inner_folds, seed)
    best_score, best = -1.0, options[0]
    for params, predict in options:
        scores = []
        for fold in range(plan.fold_count):
            inner_train, inner_test = train_test_indices(plan, fold)
            tr, te = subset(train, inner_train), subset(train, inner_test)
            scores.append(bac(te.labels, predict(tr, te.points)))
        if np.mean(scores) > best_score:
            best_score, best = float(np.mean(scores)), (params, predict)
    params, predict = best
    return bac(test.labels, predict(train, test.points)), params


def _project(ds: LabeledDataset, v: np.ndarray) -> LabeledDataset:
    return LabeledDataset(points=v.T @ ds.points, labels=ds.labels)


def separability_score(projected: LabeledDataset, folds: int, seed: int, settings: EvalSettings) -> float:
    """Mean over folds of the mean KNN/KDE test BAC on already-projected data."""
    plan = split_kfold(projected, folds, seed)
    fold_means = []
    for fold in range(folds):
        train_idx, test_idx = train_test_indices(plan, fold)
        train, test = subset(projected, train_idx), subset(projected, test_idx)
        fold_means.append(np.mean([_select_and_score(train, test, c, settings, seed)[0] for c in CLASSIFIERS]))
    return float(np.mean(fold_means))


def inner_cv_scorer(train: LabeledDataset, settings: EvalSettings, seed: int) -> Callable[[ProjectionMatrix], float]:
    """Scores a projection by the visual separability of the training set it maps, over settings.inner_folds folds."""

    def scorer(v: ProjectionMatrix) -> float:
        return separability_score(_project(train, v.v), settings.inner_folds, seed, settings)

    return scorer


def fit_projection(method: MethodSpec, train: LabeledDataset, k: int, settings: EvalSettings, seed: int = 0) -> ProjectionMatrix:
    """
    Fit one reduction method on a training set.

    Args:
        method: A name from METHOD_NAMES or a (name, fitter) pair, fitter(X+, X-, k) -> V
        train: Training data
        k: Target dimension (ignored by identity)
        settings: Benchmark settings (MELM gamma, restarts, optimizer)
        seed: Seed for MELM restarts and gamma selection

    Returns:
        The fitted projection
    """
    x_minus, x_plus = class_partition(train)
    if not isinstance(method, str):
        _, fitter = method
        fitted = fitter(x_plus, x_minus, k)
        return fitted if isinstance(fitted, ProjectionMatrix) else ProjectionMatrix(v=as_array(fitted))

    if method == "melm":
        opt = settings.optimizer.model_copy(update={"seed": seed})
        gamma = settings.gamma
        if settings.gamma_grid:
            scorer = inner_cv_scorer(train, settings, seed)
            gamma, _ = select_gamma(x_plus, x_minus, k, opt, scorer, settings.gamma_grid, settings.restarts)
        model, _ = multistart(x_plus, x_minus, k, BandwidthConfig(gamma=gamma), opt, settings.restarts)
        return model.v
    if method == "pca":
        return pca(train.points, k)
    if method == "cpca":
        return class_pca(x_plus, x_minus, k, weighted=True)
    if method == "2epca":
        return class_pca(x_plus, x_minus, k, weighted=False)
    if method == "ppca":
        if k != 2:
            raise DatasetError(f"per-class PCA builds exactly 2 directions, k={k} requested")
        return per_class_pca(x_plus, x_minus)
    if method == "identity":
        return ProjectionMatrix(v=np.eye(train.d))
    raise DatasetError(f"unknown method {method!r}; expected one of {', '.join(METHOD_NAMES)}")


def _method_name(method: MethodSpec) -> str:
    return method if isinstance(method, str) else method[0]


def _fold_split(ds: LabeledDataset, plan: FoldPlan, fold: int, settings: EvalSettings):
    """Training and test split of one fold; the scaler, if any, sees the training split only."""
    train_idx, test_idx = train_test_indices(plan, fold)
    train, test = subset(ds, train_idx), subset(ds, test_idx)
    if not settings.standardize:
        return train, test
    train_std, affine = standardize(train)
    return train_std, apply_affine(test, affine)


def fold_projections(
    ds: LabeledDataset, method: MethodSpec, k: int, folds: int, seed: int, settings: EvalSettings
) -> List[ProjectionMatrix]:
    """Projection fitted on the training split of every fold (test points never reach the fitter)."""
    plan = split_kfold(ds, folds, seed)
    out = []
    for fold in range(folds):
        train, _ = _fold_split(ds, plan, fold, settings)
        out.append(fit_projection(method, train, k, settings, seed + fold))
    return out


def _run_parallel(jobs: List[Callable[[], object]], threads: int) -> List[object]:
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda job: job(), jobs))
    return [job() for job in jobs]


def pipeline_benchmark(
    ds: LabeledDataset,
    methods: Sequence[MethodSpec],
    k: int,
    folds: int = 5,
    seed: int = 0,
    settings: Optional[EvalSettings] = None,
) -> EvalReport:
    """
    Reduce-then-classify benchmark: per fold, fit the projection on the training split only,
    train KNN and KDE classifiers (hyperparameters by inner CV) on the projected training
    points and score BAC on the projected test points. A method's mean is that of its
    best classifier; a failing fold is listed in `errors` and leaves the mean empty.
    """
    settings = settings or EvalSettings()
    plan = split_kfold(ds, folds, seed)

    def job(method: MethodSpec, fold: int) -> Callable[[], object]:
        def run():
            name = _method_name(method)
            train, test = _fold_split(ds, plan, fold, settings)
            try:
                v = fit_projection(method, train, k, settings, seed + fold).v
                train_p, test_p = _project(train, v), _project(test, v)
                scores = []
                for classifier in CLASSIFIERS:
                    score, params = _select_and_score(train_p, test_p, classifier, settings, seed + fold)
                    scores.append(FoldScore(method=name, classifier=classifier, fold=fold, score=score, params=params))
                return scores
            except MelmError as e:
                logger.warning("%s fold %d failed: %s", name, fold, e)
                return FoldError(method=name, fold=fold, message=str(e))

        return run

    jobs = [job(method, fold) for method in methods for fold in range(folds)]
    results = _run_parallel(jobs, settings.threads)

    report = EvalReport(protocol="pipeline", k=k, folds=folds, seed=seed, settings=settings)
    for result in results:
        if isinstance(result, FoldError):
            report.errors.append(result)
        else:
            report.scores.extend(result)

    for method in methods:
        name = _method_name(method)
        if any(error.method == name for error in report.errors):
            report.means[name], report.best_classifier[name] = None, None
            continue
        per_classifier = {
            c: float(np.mean([s.score for s in report.scores if s.method == name and s.classifier == c]))
            for c in CLASSIFIERS
        }
        best = max(CLASSIFIERS, key=lambda c: (per_classifier[c], -CLASSIFIERS.index(c)))
        report.means[name], report.best_classifier[name] = per_classifier[best], best
    return report


def visual_separability(
    ds: LabeledDataset,
    method: Union[MethodSpec, Sequence[MethodSpec]],
    k: int,
    folds: int = 5,
    seed: int = 0,
    settings: Optional[EvalSettings] = None,
    repetition: int = 0,
) -> EvalReport:
    """
    Score how separable the classes are in a projection fitted once on all data.

    Only the classifiers are cross-validated; a fold's score is the mean BAC of KNN and
    KDE, and the method's score is the mean over folds.
    """
    settings = settings or EvalSettings()
    methods = [method] if isinstance(method, (str, tuple)) else list(method)
    data = standardize(ds)[0] if settings.standardize else ds
    plan = split_kfold(data, folds, seed)

    def job(m: MethodSpec) -> Callable[[], object]:
        def run():
            name = _method_name(m)
            try:
                projected = _project(data, fit_projection(m, data, k, settings, seed).v)
                scores = []
                for fold in range(folds):
                    train_idx, test_idx = train_test_indices(plan, fold)
                    train, test = subset(projected, train_idx), subset(projected, test_idx)
                    for classifier in CLASSIFIERS:
                        score, params = _select_and_score(train, test, classifier, settings, seed + fold)
                        scores.append(
                            FoldScore(
                                method=name,
                                classifier=classifier,
                                fold=fold,
                                repetition=repetition,
                                score=score,
                                params=params,
                            )
                        )
                return scores
            except MelmError as e:
                logger.warning("%s failed: %s", name, e)
                return FoldError(method=name, fold=-1, repetition=repetition, message=str(e))

        return run

    results = _run_parallel([job(m) for m in methods], settings.threads)
    report = EvalReport(protocol="separability", k=k, folds=folds, seed=seed, settings=settings)
    for m, result in zip(methods, results):
        name = _method_name(m)
        if isinstance(result, FoldError):
            report.errors.append(result)
            report.means[name] = None
            continue
        report.scores.extend(result)
        fold_means = [np.mean([s.score for s in result if s.fold == fold]) for fold in range(folds)]
        report.means[name] = float(np.mean(fold_means))
    return report


def repeated_separability(
    ds: LabeledDataset,
    method: Union[MethodSpec, Sequence[MethodSpec]],
    k: int,
    folds: int = 5,
    seed: int = 0,
    fraction: float = 1.0,
    repetitions: int = 5,
    settings: Optional[EvalSettings] = None,
) -> EvalReport:
    """
    Visual separability averaged over `repetitions` stratified random subsets (repetition r uses seed + r).

    The report's means are the means of the per-repetition scores; their variance is reported too.
    """
    if repetitions < 1:
        raise DatasetError(f"need at least one repetition, got {repetitions}")
    settings = settings or EvalSettings()
    reports = [
        visual_separability(random_subset(ds, fraction, seed + r), method, k, folds, seed + r, settings, repetition=r)
        for r in range(repetitions)
    ]
    merged = EvalReport(protocol="separability", k=k, folds=folds, seed=seed, settings=settings)
    for report in reports:
        merged.scores.extend(report.scores)
        merged.errors.extend(report.errors)
    for name in reports[0].means:
        values = [report.means[name] for report in reports]
        if any(value is None for value in values):
            merged.means[name] = None
            continue
        merged.repetition_means[name] = [float(value) for value in values]
        merged.means[name] = float(np.mean(values))
        merged.repetition_variance[name] = float(np.var(values))
    return merged


def save_report(report: EvalReport, path: str) -> str:
    """Write the report as indented JSON (atomically)."""
    return atomic_write_text(path, report.model_dump_json(indent=2))


def load_report(path: str) -> EvalReport:
    """Read a report written by save_report."""
    with open(path, "r", encoding="utf-8") as f:
        return EvalReport.model_validate_json(f.read())
