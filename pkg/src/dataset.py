#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""Ingestion, validation, partitioning and standardization of binary-labeled datasets.

Layout convention: points are stored columns-as-samples, a d x N float64 array in
C order, so a projection reads ``V.T @ points``. Slicing a class therefore selects
columns, which numpy returns as a fresh (copied) array.
"""

import hashlib
import os
import re
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.model_selection import StratifiedKFold, train_test_split

from density import covariance
from errors import (
    DatasetError,
    MalformedLineError,
    MissingFileError,
    NonFiniteCellError,
    NonNumericCellError,
    SingleClassError,
)

NAN_TOKENS = {"nan", "+nan", "-nan"}


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


class LabeledDataset(BaseModel):
    """Binary-labeled point cloud, d x N points with labels in {-1, +1}."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    points: np.ndarray = Field(description="d x N real matrix, columns are samples")
    labels: np.ndarray = Field(description="N class tags in {-1, +1}")
    feature_names: Optional[List[str]] = Field(default=None, description="Optional names of the d features")
    label_names: Optional[Tuple[str, str]] = Field(
        default=None, description="Original label values mapped to -1 and +1, in that order"
    )

    @model_validator(mode="after")
    def _check(self) -> "LabeledDataset":
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels).astype(np.int8)
        if points.ndim != 2:
            raise DatasetError(f"points must be a d x N matrix, got shape {points.shape}")
        if labels.ndim != 1 or labels.shape[0] != points.shape[1]:
            raise DatasetError(f"labels of shape {labels.shape} do not match {points.shape[1]} points")
        if points.shape[1] < 2:
            raise DatasetError("a dataset needs at least two points")
        if not np.all(np.isin(labels, (-1, 1))):
            raise DatasetError("labels must be -1 or +1")
        if not (np.any(labels == -1) and np.any(labels == 1)):
            raise SingleClassError("both classes must occur at least once")
        if not np.all(np.isfinite(points)):
            raise NonFiniteCellError("points contain NaN or Inf")
        if self.feature_names is not None and len(self.feature_names) != points.shape[0]:
            raise DatasetError(f"{len(self.feature_names)} feature names for {points.shape[0]} features")
        object.__setattr__(self, "points", _freeze(points))
        object.__setattr__(self, "labels", _freeze(labels))
        return self

    @property
    def d(self) -> int:
        """Number of features."""
        return self.points.shape[0]

    @property
    def n(self) -> int:
        """Number of samples."""
        return self.points.shape[1]


class AffineMap(BaseModel):
    """x -> linear @ x + offset, applied column-wise."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    linear: np.ndarray
    offset: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "AffineMap":
        linear = np.asarray(self.linear, dtype=np.float64)
        offset = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        if linear.ndim != 2 or linear.shape[0] != linear.shape[1] or linear.shape[0] != offset.shape[0]:
            raise DatasetError(f"affine map shapes do not agree: {linear.shape} and {offset.shape}")
        if np.linalg.cond(linear) > 1e12:
            raise DatasetError("affine map is not invertible")
        object.__setattr__(self, "linear", _freeze(linear))
        object.__setattr__(self, "offset", _freeze(offset))
        return self

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map a d x m block of points."""
        return self.linear @ points + self.offset[:, None]

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        """Undo apply()."""
        return np.linalg.solve(self.linear, points - self.offset[:, None])


class FoldPlan(BaseModel):
    """Stratified assignment of every sample to one of fold_count folds."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    fold_count: int = Field(ge=1)
    assignments: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "FoldPlan":
        assignments = np.asarray(self.assignments, dtype=np.int64)
        if assignments.ndim != 1 or np.any(assignments < 0) or np.any(assignments >= self.fold_count):
            raise DatasetError("fold assignments out of range")
        object.__setattr__(self, "assignments", _freeze(assignments))
        return self


class DatasetSummary(BaseModel):
    """Size, class balance, density and PCA retention of a dataset."""

    n: int
    d: int
    n_minus: int
    n_plus: int
    mean_density: float = Field(description="Fraction of nonzero feature entries")
    d95: int = Field(description="Principal components keeping 95% of the variance of all data")
    d95_minus: int
    d95_plus: int


def _map_labels(raw: List[str], where: str) -> Tuple[np.ndarray, Tuple[str, str]]:
    """Map two distinct label values to -1/+1; numeric labels sort numerically, others lexicographically."""
    distinct = sorted(set(raw))
    if len(distinct) != 2:
        raise SingleClassError(f"label column must hold exactly two distinct values, found {len(distinct)} in {where}")
    try:
        distinct = sorted(distinct, key=float)
    except ValueError:
        pass
    labels = np.where(np.asarray(raw) == distinct[0], -1, 1).astype(np.int8)
    return labels, (distinct[0], distinct[1])


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: str, label_column: Union[str, int] = -1) -> LabeledDataset:
    """
    Load a comma separated file with an optional header row.

    The first row is taken as a header when none of its cells parse as numbers.

    Args:
        path: Path to the CSV file
        label_column: Header name or column index (negative counts from the end) of the labels

    Returns:
        The validated dataset; reported row numbers are 1-based file lines
    """
    if not os.path.exists(path):
        raise MissingFileError(f"dataset file not found: {path}")

    try:
        frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise DatasetError(f"dataset file is empty: {path}") from e
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise MalformedLineError(
            f"row has the wrong number of fields in {path}", line=int(match.group(1)) if match else None
        ) from e

    header: Optional[List[str]] = None
    first_line = 1
    if not any(_looks_numeric(cell) for cell in frame.iloc[0]):
        header = [cell.strip() for cell in frame.iloc[0]]
        frame = frame.iloc[1:].reset_index(drop=True)
        first_line = 2
    if frame.empty:
        raise DatasetError(f"dataset file has no data rows: {path}")

    n_columns = frame.shape[1]
    if isinstance(label_column, str) and header is not None and label_column in header:
        label_index = header.index(label_column)
    elif isinstance(label_column, str) and label_column.lstrip("-").isdigit():
        label_index = int(label_column)
    elif isinstance(label_column, int):
        label_index = label_column
    else:
        raise DatasetError(f"label column {label_column!r} not found in {path}")
    if not -n_columns <= label_index < n_columns:
        raise DatasetError(f"label column index {label_index} out of range for {n_columns} columns")
    label_index %= n_columns
    if n_columns < 2:
        raise DatasetError("a dataset needs at least one feature column besides the labels")

    names = header if header is not None else [f"x{j + 1}" for j in range(n_columns)]
    feature_columns = [j for j in range(n_columns) if j != label_index]
    cells = frame.iloc[:, feature_columns].apply(lambda column: column.str.strip())
    values = cells.apply(pd.to_numeric, errors="coerce")

    is_nan_token = cells.apply(lambda column: column.str.lower().isin(NAN_TOKENS))
    non_numeric = values.isna() & ~is_nan_token
    if non_numeric.to_numpy().any():
        row, col = np.argwhere(non_numeric.to_numpy())[0]
        raise NonNumericCellError(
            f"non-numeric feature value {cells.iat[row, col]!r}",
            row=int(row) + first_line,
            column=names[feature_columns[col]],
        )
    array = values.to_numpy(dtype=np.float64)
    bad = ~np.isfinite(array)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFiniteCellError(
            f"non-finite feature value {cells.iat[row, col]!r}",
            row=int(row) + first_line,
            column=names[feature_columns[col]],
        )

    raw_labels = [cell.strip() for cell in frame.iloc[:, label_index]]
    labels, label_names = _map_labels(raw_labels, path)

    return LabeledDataset(
        points=array.T,
        labels=labels,
        feature_names=[names[j] for j in feature_columns],
        label_names=label_names,
    )


def load_libsvm(path: str) -> LabeledDataset:
    """
    Load a libsvm/svmlight file: ``<label> <idx>:<val> ...`` with 1-based ascending indices.

    Missing indices are zero and d is the largest index seen. Text after ``#`` is ignored.

    Args:
        path: Path to the libsvm file

    Returns:
        The validated (dense) dataset
    """
    if not os.path.exists(path):
        raise MissingFileError(f"dataset file not found: {path}")

    raw_labels: List[str] = []
    rows: List[Tuple[List[int], List[float]]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            content = line.split("#", 1)[0].strip()
            if not content:
                continue
            tokens = content.split()
            label = tokens[0]
            if not _looks_numeric(label):
                raise MalformedLineError(f"label {label!r} is not a number", line=line_number)
            indices: List[int] = []
            values: List[float] = []
            for token in tokens[1:]:
                index_text, sep, value_text = token.partition(":")
                if not sep or not index_text.isdigit() or not _looks_numeric(value_text):
                    raise MalformedLineError(f"malformed feature token {token!r}", line=line_number)
                index = int(index_text)
                if index < 1:
                    raise MalformedLineError("feature indices are 1-based", line=line_number)
                if indices and index == indices[-1]:
                    raise MalformedLineError(f"duplicate feature index {index}", line=line_number)
                if indices and index < indices[-1]:
                    raise MalformedLineError(f"feature index {index} is not ascending", line=line_number)
                value = float(value_text)
                if not np.isfinite(value):
                    raise NonFiniteCellError(f"non-finite feature value {value_text!r}", line=line_number, column=str(index))
                indices.append(index)
                values.append(value)
            raw_labels.append(label)
            rows.append((indices, values))

    if not rows:
        raise DatasetError(f"dataset file is empty: {path}")

    d = max((indices[-1] for indices, _ in rows if indices), default=0)
    if d == 0:
        raise DatasetError(f"no features found in {path}")
    points = np.zeros((d, len(rows)))
    for column, (indices, values) in enumerate(rows):
        points[np.asarray(indices, dtype=np.int64) - 1, column] = values

    labels, label_names = _map_labels(raw_labels, path)
    return LabeledDataset(points=points, labels=labels, label_names=label_names)


def class_partition(ds: LabeledDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Split into (X_minus, X_plus), each d x N_l, keeping dataset order within a class."""
    return ds.points[:, ds.labels == -1], ds.points[:, ds.labels == 1]


def standardize(ds: LabeledDataset) -> Tuple[LabeledDataset, AffineMap]:
    """
    Center every feature and scale it to unit (N-1) standard deviation.

    Constant features keep scale 1 so the returned map stays invertible.

    Returns:
        The standardized dataset and the map that produced it
    """
    mean = ds.points.mean(axis=1)
    sd = ds.points.std(axis=1, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    affine = AffineMap(linear=np.diag(1.0 / sd), offset=-mean / sd)
    standardized = ds.model_copy(update={"points": _freeze(affine.apply(ds.points))})
    return standardized, affine


def apply_affine(ds: LabeledDataset, affine: AffineMap) -> LabeledDataset:
    """Return ds with affine applied to its points."""
    if affine.linear.shape[0] != ds.d:
        raise DatasetError(f"affine map of dimension {affine.linear.shape[0]} applied to {ds.d} features")
    return ds.model_copy(update={"points": _freeze(affine.apply(ds.points))})


def split_kfold(ds: LabeledDataset, folds: int, seed: int) -> FoldPlan:
    """
    Build a stratified, seeded fold plan.

    Args:
        ds: Dataset to split
        folds: Number of folds (>= 2)
        seed: Shuffle seed; the same seed gives the same plan

    Returns:
        FoldPlan with one fold index per sample
    """
    if folds < 2:
        raise DatasetError(f"need at least 2 folds, got {folds}")
    smallest = int(min(np.sum(ds.labels == -1), np.sum(ds.labels == 1)))
    if smallest < folds:
        raise DatasetError(f"smallest class has {smallest} samples, fewer than {folds} folds")

    assignments = np.empty(ds.n, dtype=np.int64)
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    for fold, (_, test_idx) in enumerate(splitter.split(np.zeros(ds.n), ds.labels)):
        assignments[test_idx] = fold
    return FoldPlan(fold_count=folds, assignments=assignments)


def train_test_indices(plan: FoldPlan, fold: int) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of the training samples and of the held-out fold."""
    if not 0 <= fold < plan.fold_count:
        raise DatasetError(f"fold {fold} out of range for {plan.fold_count} folds")
    return np.flatnonzero(plan.assignments != fold), np.flatnonzero(plan.assignments == fold)


def subset(ds: LabeledDataset, indices: np.ndarray) -> LabeledDataset:
    """Dataset restricted to the given sample indices (in the given order)."""
    indices = np.asarray(indices, dtype=np.int64)
    return LabeledDataset(
        points=ds.points[:, indices],
        labels=ds.labels[indices],
        feature_names=ds.feature_names,
        label_names=ds.label_names,
    )


def random_subset(ds: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Stratified random subset holding `fraction` of the samples (the dataset itself for 1.0)."""
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"subset fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return ds
    keep, _ = train_test_split(np.arange(ds.n), train_size=fraction, stratify=ds.labels, random_state=seed)
    return subset(ds, np.sort(keep))


def fingerprint(ds: LabeledDataset) -> str:
    """sha256 over shape, float64 points and labels."""
    digest = hashlib.sha256()
    digest.update(np.asarray(ds.points.shape, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(ds.points, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(ds.labels, dtype=np.int8).tobytes())
    return digest.hexdigest()


def _components_for_variance(points: np.ndarray, share: float = 0.95) -> int:
    if points.shape[1] < 2:
        return 0
    eigenvalues = np.clip(np.linalg.eigvalsh(covariance(points))[::-1], 0.0, None)
    total = eigenvalues.sum()
    if total <= 0:
        return 0
    return int(np.searchsorted(np.cumsum(eigenvalues) / total, share - 1e-12) + 1)


def summarize(ds: LabeledDataset) -> DatasetSummary:
    """Dataset summary: sizes, nonzero density and 95%-variance PCA dimension per label."""
    x_minus, x_plus = class_partition(ds)
    return DatasetSummary(
        n=ds.n,
        d=ds.d,
        n_minus=x_minus.shape[1],
        n_plus=x_plus.shape[1],
        mean_density=float(np.count_nonzero(ds.points) / ds.points.size),
        d95=_components_for_variance(ds.points),
        d95_minus=_components_for_variance(x_minus),
        d95_plus=_components_for_variance(x_plus),
    )


def load_dataset(path: str, data_format: Optional[str] = None, label_column: Union[str, int] = -1) -> LabeledDataset:
    """Load by explicit format, or by extension (.csv is CSV, anything else libsvm)."""
    if data_format is None:
        data_format = "csv" if path.lower().endswith(".csv") else "libsvm"
    if data_format == "csv":
        return load_csv(path, label_column)
    if data_format == "libsvm":
        return load_libsvm(path)
    raise DatasetError(f"unknown data format {data_format!r}")
