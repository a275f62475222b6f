from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import (BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat,
                      PositiveInt, field_validator, model_validator)

# Define schemas for problem and experiment configuration
class ProblemDims(BaseModel):
    """Experts N, arms K, advice budget M and horizon T."""
    model_config = ConfigDict(frozen=True)

    N: PositiveInt
    K: PositiveInt
    M: PositiveInt
    T: PositiveInt

    @model_validator(mode="after")
    def _budget_within_experts(self):
        if self.M > self.N:
            raise ValueError(f"advice budget M={self.M} exceeds expert count N={self.N}")
        return self


class LowerBoundConfig(BaseModel):
    """Hidden best expert (0-based index) and gap of the lower-bound adversary."""
    model_config = ConfigDict(frozen=True)

    hstar: NonNegativeInt
    epsilon: float = Field(ge=0.0, lt=0.5)
    dims: ProblemDims

    @model_validator(mode="after")
    def _hstar_is_an_expert(self):
        if self.hstar >= self.dims.N:
            raise ValueError(f"hstar={self.hstar} is not an expert index below N={self.dims.N}")
        return self


class Diagnostics(BaseModel):
    """Rounds where h* was queried (L_count) and where it was also followed (N_count)."""
    model_config = ConfigDict(frozen=True)

    L_count: NonNegativeInt = 0
    N_count: NonNegativeInt = 0

    @model_validator(mode="after")
    def _followed_only_when_queried(self):
        if self.N_count > self.L_count:
            raise ValueError("N_count cannot exceed L_count")
        return self


class ExperimentConfig(BaseModel):
    dims: ProblemDims
    algo: Literal["mw", "polyinf"]
    env: str
    runs: PositiveInt = 1
    seed: int = Field(default=0, ge=0, lt=2**64)
    eta_override: Optional[PositiveFloat] = None
    epsilon_override: Optional[float] = Field(default=None, ge=0.0, lt=0.5)
    hstar: Optional[NonNegativeInt] = None
    workers: PositiveInt = 1
    f_trials: PositiveInt = 100000
    shuffle_partition: bool = False
    stride: Optional[PositiveInt] = None
    out: Path = Path("results")

    @field_validator("env")
    @classmethod
    def _known_environment(cls, value):
        if value in ("lower_bound", "null", "dirichlet"):
            return value
        if value.startswith("script:") and len(value) > len("script:"):
            path = Path(value[len("script:"):])
            if not path.is_file():
                raise ValueError(f"script file not found: {path}")
            return value
        raise ValueError(f"unknown environment '{value}' "
                         "(expected lower_bound, null, dirichlet or script:<path>)")

    @model_validator(mode="after")
    def _hstar_is_an_expert(self):
        if self.hstar is not None and self.hstar >= self.dims.N:
            raise ValueError(f"hstar={self.hstar} is not an expert index below N={self.dims.N}")
        return self

    @property
    def env_kind(self):
        return "script" if self.env.startswith("script:") else self.env

    @property
    def script_path(self):
        return Path(self.env[len("script:"):]) if self.env_kind == "script" else None


class RunRecord(BaseModel):
    """Logged cumulative series of one replication, plus its final per-expert losses."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    run: NonNegativeInt
    t: np.ndarray
    alg_cum_loss: np.ndarray
    best_expert_cum_loss: np.ndarray
    regret: np.ndarray
    L_count: np.ndarray
    N_count: np.ndarray
    expert_cum_loss: np.ndarray
    hidden_best: Optional[int] = None
    hidden_best_cum_loss: Optional[float] = None

    @property
    def final_regret(self):
        return float(self.regret[-1])

    @property
    def final_regret_vs_hidden_best(self):
        if self.hidden_best_cum_loss is None:
            return None
        return float(self.alg_cum_loss[-1]) - self.hidden_best_cum_loss


class TheoreticalBounds(BaseModel):
    mw_bound: float
    polyinf_bound: float
    lower_bound: float
    f_estimate: float
    f_stderr: float
    f_asymptotic: float


class ExperimentSummary(BaseModel):
    algo: str
    N: int
    K: int
    M: int
    T: int
    runs: int
    mean_regret: float
    stderr: float
    mw_bound: float
    polyinf_bound: float
    lower_bound_estimate: float
    final_regrets: List[float] = []


class ScalingPoint(BaseModel):
    T: int
    mean_regret: float
    stderr: float
    mw_bound: float
    polyinf_bound: float
    lower_bound_estimate: float
