from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from models.structure_models import Side


class CurveMethod(str, Enum):
    EXACT_KERNEL = "exact-kernel"
    EXACT_CHAIN = "exact-chain"
    MC_SIDES = "mc-sides"
    MC_COUPLING = "mc-coupling"


@dataclass(frozen=True, eq=False)
class TVCurve:
    """phi_t (or a survival curve) on a time grid; se is zero for exact methods"""
    t: np.ndarray
    values: np.ndarray
    method: CurveMethod
    se: Optional[np.ndarray] = None
    n: int = 0

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.se is None:
            object.__setattr__(self, "se", np.zeros_like(self.values))
        if self.t.shape != self.values.shape:
            raise ValueError("t grid and values differ in shape")

    @property
    def exact(self) -> bool:
        return self.method in (CurveMethod.EXACT_KERNEL, CurveMethod.EXACT_CHAIN)


@dataclass(frozen=True, eq=False)
class DiscreteMeasurePair:
    """mu1, mu2 over chain states with side labels and the permutation sigma of R"""
    mu1: np.ndarray
    mu2: np.ndarray
    sides: Tuple[Side, ...]
    sym: np.ndarray
    mu0: np.ndarray = field(init=False)

    def __post_init__(self):
        x1 = np.array([s == Side.X1 for s in self.sides])
        object.__setattr__(self, "mu0", np.where(x1, self.mu2, self.mu1))


class ResidualRow(BaseModel):
    t: float
    lhs: float
    rhs: float
    residual: float
    flagged: bool = False


class CheckReport(BaseModel):
    """JSON verdict of a verification check"""
    check: str
    params: Dict[str, object] = Field(default_factory=dict)
    residuals: List[ResidualRow] = Field(default_factory=list)
    details: Dict[str, object] = Field(default_factory=dict)
    passed: bool = Field(True, alias="pass")

    model_config = {"populate_by_name": True}

    def dump(self) -> Dict[str, object]:
        return self.model_dump(by_alias=True, mode="json")
