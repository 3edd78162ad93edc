from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Protocol, Sequence, Tuple

from pydantic import BaseModel, Field

from models.point_models import Point


class Side(str, Enum):
    X1 = "X1"
    H = "H"
    X2 = "X2"

    def swapped(self) -> "Side":
        if self == Side.X1:
            return Side.X2
        if self == Side.X2:
            return Side.X1
        return Side.H


class Mirror(Protocol):
    """Involution R together with the classifier of X into X1 / H / X2"""
    exact: bool
    # (width, period) when H bounds each side in a flat strip, else None
    strip: Optional[Tuple[float, float]]

    def apply(self, p: Point) -> Point:
        ...

    def side(self, p: Point) -> Side:
        ...

    def barrier_distances(self, p: Point) -> Optional[List[float]]:
        """Distances from p to each connected piece of H (continuous spaces), else None"""
        ...

    def describe(self) -> Dict[str, Any]:
        ...


@dataclass(frozen=True)
class ReflectionStructure:
    """Reflection structure (R, H, X1, X2) for a space and a starting pair with R x1 = x2"""
    space: Any
    mirror: Mirror
    x1: Point
    x2: Point

    def reflect(self, p: Point) -> Point:
        return self.mirror.apply(p)

    def side(self, p: Point) -> Side:
        return self.mirror.side(p)

    def describe(self) -> Dict[str, Any]:
        return {"space": self.space.name, "x1": self.x1.label(), "x2": self.x2.label(), **self.mirror.describe()}


class BisectorGeometry(BaseModel):
    """Equidistant set K of two torus points, as closed-form pieces"""
    case: Literal["singular_no_reflection", "two_circles"]
    a: float
    b: float
    points: List[List[float]] = Field(default_factory=list)
    segments: List[List[int]] = Field(default_factory=list)
    circles: List[float] = Field(default_factory=list)
    singular: bool = False
    singular_vertices: List[str] = Field(default_factory=list)

    def segment_endpoints(self) -> List[Sequence[Sequence[float]]]:
        return [(self.points[i - 1], self.points[j - 1]) for i, j in self.segments]
