from dataclasses import dataclass, field
from typing import Annotated, Any, Dict, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from models.point_models import Point
from models.structure_models import ReflectionStructure, Side


# -------------------
# Discretization requests
# -------------------

class CycleRequest(BaseModel):
    kind: Literal["cycle"] = "cycle"
    m: int = Field(4, ge=4)
    laziness: float = Field(0.5, ge=0.0, lt=1.0)


class EightRequest(BaseModel):
    kind: Literal["eight"] = "eight"
    m: int = Field(4, ge=2, description="states per circle, even so that the glue point is a state")
    laziness: float = Field(0.0, ge=0.0, lt=1.0)


class TreeRequest(BaseModel):
    kind: Literal["tree"] = "tree"
    m: int = Field(2, ge=1, description="pieces per edge")
    laziness: float = Field(0.0, ge=0.0, lt=1.0)


class GasketRequest(BaseModel):
    kind: Literal["gasket"] = "gasket"
    n: int = Field(2, ge=1)
    axis_subdivision: bool = True
    laziness: float = Field(0.0, ge=0.0, lt=1.0)


ChainRequest = Annotated[Union[CycleRequest, EightRequest, TreeRequest, GasketRequest], Field(discriminator="kind")]


# -------------------
# Finite chain
# -------------------

@dataclass(frozen=True, eq=False)
class FiniteChain:
    """
    Discrete-time nearest-neighbour chain on finitely many points of a space.

    `sym` is the state permutation induced by R, `h_mask` marks states in H and
    `sides` holds the side label of every state. `x1` and `x2` are the state indices
    of the designated mirror pair, with sym[x1] == x2.
    """
    name: str
    states: Tuple[Point, ...]
    P: np.ndarray
    sym: np.ndarray
    h_mask: np.ndarray
    sides: Tuple[Side, ...]
    x1: int
    x2: int
    structure: ReflectionStructure = field(repr=False)
    laziness: float = 0.0
    crossing_edges: Tuple[Tuple[int, int], ...] = ()
    dt: float = 1.0
    index: Dict[Point, int] = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.states)

    def state_of(self, p: Point) -> int:
        return self.index[p]

    def neighbours(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.P[i] > 0)

    def side_mask(self, side: Side) -> np.ndarray:
        return np.array([s == side for s in self.sides], dtype=bool)

    def describe(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "states": self.size,
            "h_states": int(self.h_mask.sum()),
            "laziness": self.laziness,
            "crossing_edges": len(self.crossing_edges),
            "x1": self.states[self.x1].label(),
            "x2": self.states[self.x2].label(),
        }


PairState = Tuple[int, int, int]


@dataclass(frozen=True, eq=False)
class PairKernel:
    """
    Exact Markov kernel of a coupled pair on states (i, j, stage). `Q` is row-stochastic
    over the reachable pair states; `merged[k]` marks states where both components agree
    from then on.
    """
    name: str
    chain: FiniteChain = field(repr=False)
    pairs: Tuple[PairState, ...]
    index: Dict[PairState, int] = field(repr=False)
    Q: Any = field(repr=False)
    start: int = 0
    merged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool), repr=False)

    @property
    def size(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True, eq=False)
class MirrorSurvival:
    """Sub-stochastic block of P on the non-H states and the survival P[tau > t], t = 0..t_max"""
    states: np.ndarray
    sub_matrix: np.ndarray
    survival: np.ndarray
