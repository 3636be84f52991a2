"""scikit-learn compatible wrapper around the MELM fit (rows are samples)."""

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from dataset import LabeledDataset, class_partition
from density import BandwidthConfig
from errors import SingleClassError
from evaluation import EvalSettings, inner_cv_scorer
from optimizer import OptimConfig, multistart, select_gamma


class MelmTransformer(TransformerMixin, BaseEstimator):
    """
    Supervised linear projection to n_components dimensions maximizing the Cauchy-Schwarz
    divergence between the two class densities.

    Attributes after fit:
        components_: n_components x n_features, orthonormal rows
        classes_: the two labels, the first mapped to the negative class
        gamma_: bandwidth scaling used (selected from gamma_grid when given)
        dcs_: divergence reached on the training data
    """

    def __init__(
        self,
        n_components: int = 2,
        gamma: float = 1.0,
        gamma_grid: Optional[Sequence[float]] = None,
        restarts: int = 16,
        max_iter: int = 500,
        tol: float = 1e-6,
        n_jobs: int = 1,
        random_state: int = 0,
    ):
        self.n_components = n_components
        self.gamma = gamma
        self.gamma_grid = gamma_grid
        self.restarts = restarts
        self.max_iter = max_iter
        self.tol = tol
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if self.classes_.shape[0] != 2:
            raise SingleClassError(f"MELM separates exactly two classes, got {self.classes_.shape[0]}")
        labels = np.where(y == self.classes_[1], 1, -1)
        ds = LabeledDataset(points=X.T, labels=labels)
        x_minus, x_plus = class_partition(ds)
        opt = OptimConfig(seed=self.random_state, max_iters=self.max_iter, grad_tol=self.tol, threads=self.n_jobs)

        gamma = self.gamma
        if self.gamma_grid:
            scorer = inner_cv_scorer(ds, EvalSettings(threads=self.n_jobs), self.random_state)
            gamma, _ = select_gamma(x_plus, x_minus, self.n_components, opt, scorer, list(self.gamma_grid), self.restarts)

        model, _ = multistart(x_plus, x_minus, self.n_components, BandwidthConfig(gamma=gamma), opt, self.restarts)
        self.components_ = np.array(model.v.v.T)
        self.gamma_ = model.gamma
        self.dcs_ = model.dcs_achieved
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model was fitted on {self.n_features_in_}")
        return X @ self.components_.T
