from collections.abc import Mapping
import os
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=50, ge=0)
    batch_size: int = Field(default=32, gt=0)
    lr: float = Field(default=0.05, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
    lr_halving_period: int = Field(default=30, gt=0)
    """
    Learning rate is divided by 2 every `lr_halving_period` epochs
    """
    seed: int = Field(default=0, ge=0)


class ALSConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(default=1e-10, gt=0.0)
    """
    Stop once one sweep improves the relative error by less than this
    """
    max_iter: int = Field(default=2000, gt=0)
    n_init: int = Field(default=1, gt=0)
    seed: int = Field(default=0, ge=0)
    budget: float = Field(default=1e-3, gt=0.0)
    """
    Relative reconstruction error tolerated when decomposing dense layers
    """


class Config(BaseModel):
    model_config = ConfigDict(extra="ignore")

    cp_certify_threads: Optional[int] = Field(default=None, gt=0)
    cp_certify_log_level: str = "INFO"

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None) -> "Config":
        environ = os.environ if environ is None else environ
        return cls(**{k.lower(): v for k, v in environ.items() if v != ""})

    @property
    def threads(self) -> int:
        return self.cp_certify_threads or 1
