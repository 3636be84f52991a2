"""Versioned JSON model files for fitted MELM projections."""

import os
from typing import List

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from errors import ModelFileError
from fileio import atomic_write_text
from objective import ProjectionMatrix, penalty
from optimizer import MelmModel, OptimConfig

MODEL_SCHEMA_VERSION = 1
ORTHONORMALITY_TOLERANCE = 1e-8


class ModelFile(BaseModel):
    """On-disk form of a MelmModel; v is stored row-major (d * k entries)."""

    schema_version: int = MODEL_SCHEMA_VERSION
    d: int = Field(ge=1)
    k: int = Field(ge=1)
    gamma: float = Field(gt=0)
    v: List[float]
    dcs: float
    restarts: int = Field(ge=1)
    seed: int
    optimizer: OptimConfig
    fingerprint: str = Field(default="", description="sha256 of the dataset the model was fitted on")

    @classmethod
    def from_model(cls, model: MelmModel) -> "ModelFile":
        return cls(
            d=model.d,
            k=model.k,
            gamma=model.gamma,
            v=[float(x) for x in model.v.v.reshape(-1)],
            dcs=model.dcs_achieved,
            restarts=model.restarts,
            seed=model.seed,
            optimizer=model.optimizer,
            fingerprint=model.fingerprint,
        )

    def to_model(self) -> MelmModel:
        """Rebuild the MelmModel, checking shape and orthonormality of V."""
        if self.schema_version != MODEL_SCHEMA_VERSION:
            raise ModelFileError(f"unsupported model schema version {self.schema_version}")
        if len(self.v) != self.d * self.k:
            raise ModelFileError(f"v holds {len(self.v)} entries, expected d*k = {self.d * self.k}")
        v = np.asarray(self.v, dtype=np.float64).reshape(self.d, self.k)
        if not penalty(v) <= ORTHONORMALITY_TOLERANCE:
            raise ModelFileError(f"stored projection is not orthonormal (||V^T V - I||^2 = {penalty(v):.3g})")
        return MelmModel(
            v=ProjectionMatrix(v=v),
            gamma=self.gamma,
            dcs_achieved=self.dcs,
            d=self.d,
            k=self.k,
            restarts=self.restarts,
            seed=self.seed,
            fingerprint=self.fingerprint,
            optimizer=self.optimizer,
        )


def save_model(model: MelmModel, path: str) -> str:
    """Write the model as indented JSON (atomically); returns the path."""
    return atomic_write_text(path, ModelFile.from_model(model).model_dump_json(indent=2))


def load_model(path: str) -> MelmModel:
    """
    Read a model written by save_model.

    Raises:
        ModelFileError: missing file, malformed JSON, wrong schema or a non-orthonormal V
    """
    if not os.path.exists(path):
        raise ModelFileError(f"model file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        return ModelFile.model_validate_json(text).to_model()
    except ValidationError as e:
        raise ModelFileError(f"{path} is not a valid model file: {e}") from e
