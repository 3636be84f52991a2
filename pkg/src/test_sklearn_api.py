"""Tests for the scikit-learn transformer"""

import numpy as np
import pytest
from scipy.linalg import subspace_angles
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.neighbors import KNeighborsClassifier
from sklearn.pipeline import make_pipeline

from errors import SingleClassError
from sklearn_api import MelmTransformer
from synthetic import planted_subspace


@pytest.fixture(scope="module")
def planted():
    ds, basis = planted_subspace(d=4, k=2, n=200, seed=2)
    labels = np.where(ds.labels > 0, "spam", "ham")
    return ds.points.T, labels, basis


def test_fit_transform_recovers_plane(planted):
    x, y, basis = planted
    transformer = MelmTransformer(n_components=2, restarts=4)
    projected = transformer.fit_transform(x, y)
    assert projected.shape == (200, 2)
    assert transformer.components_.shape == (2, 4)
    assert np.allclose(transformer.components_ @ transformer.components_.T, np.eye(2), atol=1e-8)
    assert np.degrees(np.max(subspace_angles(transformer.components_.T, basis))) < 5.0
    assert list(transformer.classes_) == ["ham", "spam"]
    assert transformer.n_features_in_ == 4
    assert transformer.dcs_ > 0


def test_in_pipeline(planted):
    x, y, _ = planted
    pipe = make_pipeline(MelmTransformer(restarts=2), KNeighborsClassifier(n_neighbors=5))
    pipe.fit(x, y)
    assert pipe.score(x, y) > 0.9


def test_clone_keeps_params():
    transformer = MelmTransformer(n_components=1, gamma=0.5, restarts=3, random_state=9)
    params = clone(transformer).get_params()
    assert params["gamma"] == 0.5
    assert params["restarts"] == 3
    assert params["random_state"] == 9


def test_errors(planted):
    x, y, _ = planted
    with pytest.raises(NotFittedError):
        MelmTransformer().transform(x)
    with pytest.raises(SingleClassError):
        MelmTransformer().fit(x, np.zeros(len(y)))
    fitted = MelmTransformer(n_components=1, restarts=1).fit(x, y)
    with pytest.raises(ValueError):
        fitted.transform(x[:, :3])
