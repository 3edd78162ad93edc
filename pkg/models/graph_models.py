from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Tuple

from models.point_models import Point


class TopologyTag(str, Enum):
    EIGHT = "eight"
    STAR_TREE = "star_tree"


@dataclass(frozen=True)
class GraphTopology:
    """Metric graph: named vertices, oriented edges (tail, head, length)"""
    tag: TopologyTag
    vertices: Tuple[str, ...]
    edges: Tuple[Tuple[str, str, Fraction], ...]

    def incident(self, vertex: str) -> Tuple[int, ...]:
        return tuple(i for i, (a, b, _) in enumerate(self.edges) if vertex in (a, b))


def eight_topology() -> GraphTopology:
    """
    Two circles of circumference 1 glued at their points 1/2.

    Vertex o_i is the point 0 of circle Y_i and g is the glue point. Each circle is
    split into an upper arc o_i -> g and a lower arc g -> o_i, so the circle coordinate
    c in [0, 1/2] sits on the upper arc at offset 2c and c in [1/2, 1] on the lower arc
    at offset 2c - 1.
    """
    half = Fraction(1, 2)
    return GraphTopology(
        tag=TopologyTag.EIGHT,
        vertices=("o1", "o2", "g"),
        edges=(("o1", "g", half), ("g", "o1", half), ("o2", "g", half), ("g", "o2", half)),
    )


def star_tree_topology() -> GraphTopology:
    """Center p0, branch vertices p1..p3, two leaves per branch; nine unit edges"""
    one = Fraction(1)
    edges = [("p0", "p1", one), ("p0", "p2", one), ("p0", "p3", one)]
    for branch in ("1", "2", "3"):
        for leaf in ("1", "2"):
            edges.append((f"p{branch}", f"p{branch}{leaf}", one))
    return GraphTopology(
        tag=TopologyTag.STAR_TREE,
        vertices=("p0", "p1", "p2", "p3", "p11", "p12", "p21", "p22", "p31", "p32"),
        edges=tuple(edges),
    )


@dataclass(frozen=True)
class GasketLevelGraph:
    """Level-n approximation V_n of the gasket with nearest-neighbour edges"""
    level: int
    vertices: Tuple[Point, ...]
    edges: Tuple[Tuple[int, int], ...]
    index: Dict[Point, int] = field(compare=False, repr=False)

    @property
    def edge_length(self) -> Fraction:
        return Fraction(1, 2 ** self.level)
