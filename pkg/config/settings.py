# Accounting Configuration
import os
from enum import Enum
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

load_dotenv()

THREADS_ENV_VAR = "MMACC_THREADS"


class Adjacency(str, Enum):
    """Orientation of the zero-out neighboring relation"""

    REMOVE = "remove"
    ADD = "add"
    BOTH = "both"

    def orientations(self) -> tuple:
        """Single orientations to evaluate; BOTH expands to remove then add"""
        if self is Adjacency.BOTH:
            return (Adjacency.REMOVE, Adjacency.ADD)
        return (self,)


class DiscretizationConfig(BaseModel):
    """Grid sizes trading accuracy for speed in every discretization step"""

    model_config = ConfigDict(frozen=True)

    pld_grid: float = Field(1e-4, gt=0, description="Loss bucket width")
    sensitivity_grid: float = Field(1e-3, gt=0, description="Sensitivity rounding grid")
    inverse_tolerance: float = Field(1e-6, gt=0, description="Grid of the loss inversion search")
    tail_truncation_mass: float = Field(1e-12, gt=0, le=1e-6, description="Mass folded per side on truncation")
    sensitivity_tail_mass: float = Field(1e-15, ge=0, le=1e-9, description="Sensitivity PMF tail folded upward")


class AccountingParams(BaseModel):
    """Inputs of one MMCC accounting run"""

    model_config = ConfigDict(frozen=True)

    p: float = Field(gt=0, le=1)
    sigma: float = Field(gt=0)
    delta1: float = Field(ge=0, lt=1)
    delta2: float = Field(gt=0, lt=1)
    b: int = Field(1, ge=1)
    adjacency: Adjacency = Adjacency.BOTH
    discretization: DiscretizationConfig = Field(default_factory=DiscretizationConfig)

    @model_validator(mode="after")
    def _check_budget(self) -> "AccountingParams":
        if self.delta1 + self.delta2 >= 1:
            raise ValueError("delta1 + delta2 must be below 1")
        return self

    @classmethod
    def from_total_delta(cls, p: float, sigma: float, delta: float, **kwargs) -> "AccountingParams":
        """
        Build parameters splitting a total delta evenly between the tail bounds and the PLD query

        Args:
            p (float): Sampling probability
            sigma (float): Noise standard deviation
            delta (float): Total delta budget

        Returns:
            AccountingParams: Parameters with delta1 = delta2 = delta / 2
        """
        return cls(p=p, sigma=sigma, delta1=delta / 2, delta2=delta / 2, **kwargs)


def resolve_thread_count(threads: Optional[int] = None) -> int:
    """
    Pick the worker count for row-parallel work

    Args:
        threads (Optional[int]): Explicit request, wins when given

    Returns:
        int: Explicit value, else MMACC_THREADS, else the logical core count
    """
    if threads is not None:
        if threads < 1:
            raise ValueError(f"threads must be positive, got {threads}")
        return threads

    raw = os.getenv(THREADS_ENV_VAR)
    if raw:
        try:
            value = int(raw)
        except ValueError as e:
            raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from e
        if value < 1:
            raise ValueError(f"{THREADS_ENV_VAR} must be positive, got {value}")
        return value

    return os.cpu_count() or 1


class ExperimentDefaults:
    """Default grids of the experiment harness"""

    DELTA = 1e-6

    TREE = {
        'c_list': [10.0, 20.0],
        'log_n_max': 8,
    }

    PREFIX_OPT = {
        'c_list': [10.0, 20.0, 40.0],
        'log_n_max': 7,
    }

    TREE_RESTART = {
        'n': 512,
        'height': 4,
        'p': 1 / 16,
        'sigma_list': [5.0, 10.0, 20.0, 40.0],
    }


DEFAULT_EXPERIMENTS = ExperimentDefaults()
