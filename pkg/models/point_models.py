from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Optional, Sequence, Tuple

import numpy as np

NORM_TOL = 1e-12


class SpaceKind(str, Enum):
    EUCLIDEAN = "euclidean"
    CIRCLE = "circle"
    FLAT_TORUS = "flat_torus"
    SPHERE2 = "sphere2"
    HYPERBOLIC2 = "hyperbolic2"
    METRIC_GRAPH = "metric_graph"
    GASKET = "gasket"


def minkowski(a: np.ndarray, b: np.ndarray) -> float:
    """Lorentzian form -a0 b0 + a1 b1 + a2 b2"""
    return float(-a[0] * b[0] + np.dot(a[1:], b[1:]))


@dataclass(frozen=True)
class Point:
    """
    Tagged location in one of the model spaces.

    Continuous spaces keep their coordinates in `coords` (floats). Metric graph points
    are either a named `vertex` or an interior `(edge, offset)` pair. Gasket points
    carry exact lattice coordinates (u, v) as Fractions, so that
    x = p1 + u (p2 - p1) + v (p3 - p1); `address` records how the point was produced
    and does not take part in equality.
    """
    kind: SpaceKind
    coords: Tuple[Any, ...] = ()
    edge: Optional[int] = None
    offset: Optional[Any] = None
    vertex: Optional[str] = None
    address: Tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.kind == SpaceKind.SPHERE2:
            if len(self.coords) != 3 or abs(np.linalg.norm(self.coords) - 1.0) > NORM_TOL:
                raise ValueError(f"sphere point off the unit sphere: {self.coords}")
        elif self.kind == SpaceKind.HYPERBOLIC2:
            z = np.asarray(self.coords, dtype=float)
            if len(z) != 3 or z[0] <= 0 or abs(minkowski(z, z) + 1.0) > NORM_TOL * max(1.0, z[0] ** 2):
                raise ValueError(f"point off the upper hyperboloid sheet: {self.coords}")
        elif self.kind == SpaceKind.CIRCLE:
            if len(self.coords) != 1 or not 0.0 <= self.coords[0] < 1.0:
                raise ValueError(f"circle angle outside [0, 1): {self.coords}")
        elif self.kind == SpaceKind.FLAT_TORUS:
            if len(self.coords) != 2 or not all(0.0 <= c < 1.0 for c in self.coords):
                raise ValueError(f"torus coordinates outside [0, 1)^2: {self.coords}")
        elif self.kind == SpaceKind.METRIC_GRAPH:
            if (self.vertex is None) == (self.edge is None):
                raise ValueError("graph point needs exactly one of vertex / edge")
            if self.edge is not None and not 0 <= self.offset <= 1:
                raise ValueError(f"edge offset outside [0, 1]: {self.offset}")
        elif self.kind == SpaceKind.GASKET:
            u, v = self.coords
            if u < 0 or v < 0 or u + v > 1:
                raise ValueError(f"gasket coordinate outside the unit triangle: {self.coords}")

    # factories

    @classmethod
    def euclidean(cls, *xs: float) -> "Point":
        return cls(SpaceKind.EUCLIDEAN, tuple(float(x) for x in xs))

    @classmethod
    def circle(cls, theta: float) -> "Point":
        return cls(SpaceKind.CIRCLE, (_wrap(theta),))

    @classmethod
    def torus(cls, p: float, q: float) -> "Point":
        return cls(SpaceKind.FLAT_TORUS, (_wrap(p), _wrap(q)))

    @classmethod
    def sphere(cls, v: Sequence[float], normalize: bool = False) -> "Point":
        arr = np.asarray(v, dtype=float)
        if normalize:
            arr = arr / np.linalg.norm(arr)
        return cls(SpaceKind.SPHERE2, tuple(float(c) for c in arr))

    @classmethod
    def hyperbolic(cls, z: Sequence[float], normalize: bool = False) -> "Point":
        arr = np.asarray(z, dtype=float)
        if normalize:
            # lift the spatial part back onto the sheet
            arr = np.concatenate([[np.sqrt(1.0 + np.dot(arr[1:], arr[1:]))], arr[1:]])
        return cls(SpaceKind.HYPERBOLIC2, tuple(float(c) for c in arr))

    @classmethod
    def graph_vertex(cls, name: str) -> "Point":
        return cls(SpaceKind.METRIC_GRAPH, vertex=name)

    @classmethod
    def graph_edge(cls, edge: int, offset: Any) -> "Point":
        return cls(SpaceKind.METRIC_GRAPH, edge=edge, offset=offset)

    @classmethod
    def gasket(cls, u: Any, v: Any, address: Tuple[int, ...] = ()) -> "Point":
        return cls(SpaceKind.GASKET, (Fraction(u), Fraction(v)), address=address)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    def label(self) -> str:
        if self.kind == SpaceKind.METRIC_GRAPH:
            return self.vertex if self.vertex is not None else f"e{self.edge}@{self.offset}"
        if self.kind == SpaceKind.GASKET:
            return f"({self.coords[0]},{self.coords[1]})"
        return "(" + ",".join(f"{c:.12g}" for c in self.coords) + ")"


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent vector at `base`, components in the embedding coordinates of the base point"""
    base: Point
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float))

    def scaled(self, s: float) -> "TangentVector":
        return TangentVector(self.base, s * self.components)


def _wrap(x: float) -> float:
    y = float(x) % 1.0
    # float modulo can round up to exactly 1.0 for tiny negative inputs
    return 0.0 if y >= 1.0 else y
