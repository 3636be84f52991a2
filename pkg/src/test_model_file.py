"""Tests for the model file format and the model registry"""

# pylint: disable=redefined-outer-name

import json

import numpy as np
import pytest

from db import ModelRegistry
from errors import ModelFileError
from model_file import ModelFile, load_model, save_model
from objective import ProjectionMatrix
from optimizer import MelmModel, OptimConfig, random_orthonormal


@pytest.fixture
def model():
    return MelmModel(
        v=random_orthonormal(4, 2, seed=3),
        gamma=0.5,
        dcs_achieved=1.234567890123,
        d=4,
        k=2,
        restarts=16,
        seed=3,
        fingerprint="ab" * 32,
        optimizer=OptimConfig(seed=3, max_iters=100),
    )


def test_round_trip_is_exact(model, tmp_path):
    path = str(tmp_path / "model.json")
    save_model(model, path)
    loaded = load_model(path)
    assert np.array_equal(loaded.v.v, model.v.v)
    assert loaded.dcs_achieved == model.dcs_achieved
    assert loaded.optimizer == model.optimizer
    assert loaded.fingerprint == model.fingerprint

    with open(path, "rb") as f:
        first = f.read()
    save_model(loaded, path)
    with open(path, "rb") as f:
        assert f.read() == first


def test_v_is_row_major(model):
    stored = ModelFile.from_model(model)
    assert stored.v[:2] == model.v.v[0].tolist()
    assert len(stored.v) == 8


def test_load_missing_file(tmp_path):
    with pytest.raises(ModelFileError):
        load_model(str(tmp_path / "absent.json"))


def test_load_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ModelFileError):
        load_model(str(path))


def _rewrite(path, **changes):
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    data.update(changes)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f)


def test_load_rejects_bad_contents(model, tmp_path):
    path = str(tmp_path / "model.json")
    save_model(model, path)
    _rewrite(path, schema_version=2)
    with pytest.raises(ModelFileError, match="schema"):
        load_model(path)

    save_model(model, path)
    _rewrite(path, v=[1.0, 0.0, 0.0])
    with pytest.raises(ModelFileError, match="entries"):
        load_model(path)

    save_model(model, path)
    _rewrite(path, v=(2 * model.v.v).reshape(-1).tolist())
    with pytest.raises(ModelFileError, match="orthonormal"):
        load_model(path)


def test_non_orthonormal_model_cannot_be_reloaded(model, tmp_path):
    skewed = model.model_copy(update={"v": ProjectionMatrix(v=np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]))})
    path = str(tmp_path / "skewed.json")
    save_model(skewed, path)
    with pytest.raises(ModelFileError):
        load_model(path)


def test_registry_register_and_query(tmp_path):
    registry = ModelRegistry(str(tmp_path / "db" / "models.json"))
    first = registry.register("m1.json", "a.csv", "f1", 3, 2, 1.0, 0.5, 16, 0)
    second = registry.register("m2.json", "b.csv", "f2", 5, 1, 0.5, 2.5, 4, 7)
    assert first != second and len(first) == 12

    records = registry.list_models()
    assert [r["model_id"] for r in records] == [first, second]
    assert [r["model_id"] for r in registry.list_models("f2")] == [second]
    assert registry.get(first)["data_path"].endswith("a.csv")
    assert registry.get("missing") is None
    registry.close()


def test_registry_persists(tmp_path):
    db_path = str(tmp_path / "models.json")
    registry = ModelRegistry(db_path)
    model_id = registry.register("m.json", "d.csv", "f", 2, 1, 1.0, 0.1, 1, 0)
    registry.close()

    reopened = ModelRegistry(db_path)
    assert reopened.get(model_id)["dcs"] == 0.1
    reopened.close()
