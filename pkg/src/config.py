#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""Runtime settings read from the environment (and an optional .env file)."""

import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class Settings(BaseModel):
    """Paths and parallelism knobs shared by the CLI and the library."""

    log_dir: str = Field(default=os.path.join(REPO_ROOT, "logs"), description="Directory for JSON run logs")
    registry_path: str = Field(
        default=os.path.join(REPO_ROOT, "db", "models.json"), description="TinyDB file holding fitted model records"
    )
    threads: int = Field(default=1, description="Worker threads for restarts and folds")
    pair_chunk: int = Field(default=256, description="Rows of A handled per chunk of a pairwise sum")

    @field_validator("threads", "pair_chunk")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value


def load_settings(env_file: Optional[str] = None) -> Settings:
    """
    Build settings from MELM_* environment variables.

    Args:
        env_file: Optional path to a .env file; the default lookup is used when None

    Returns:
        The populated Settings object
    """
    load_dotenv(env_file)

    overrides = {}
    if os.environ.get("MELM_LOG_DIR"):
        overrides["log_dir"] = os.environ["MELM_LOG_DIR"]
    if os.environ.get("MELM_REGISTRY_PATH"):
        overrides["registry_path"] = os.environ["MELM_REGISTRY_PATH"]
    if os.environ.get("MELM_THREADS"):
        overrides["threads"] = int(os.environ["MELM_THREADS"])
    if os.environ.get("MELM_PAIR_CHUNK"):
        overrides["pair_chunk"] = int(os.environ["MELM_PAIR_CHUNK"])

    return Settings(**overrides)
