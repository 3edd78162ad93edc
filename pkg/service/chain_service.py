import logging
from fractions import Fraction
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from config import CHAIN_MAX_STATES
from errors import ConsistencyError, DomainError, LimitError, ParityError
from models.chain_models import CycleRequest, EightRequest, FiniteChain, GasketRequest, TreeRequest
from models.graph_models import eight_topology, star_tree_topology
from models.point_models import Point
from models.structure_models import Side
from service.reflection_service import build_structure
from service.spaces_service import (
    CircleSpace,
    GasketSpace,
    MetricGraphSpace,
    Space,
    eight_point,
    gasket_corner,
    gasket_vertices,
)

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-14
LOCATE_TOL = 1e-9


def _locate(space: Space, points: Sequence[Point], index: Dict[Point, int], p: Point) -> int:
    if p in index:
        return index[p]
    # float reflections on the circle may miss the grid by a few ulps
    best = min(range(len(points)), key=lambda i: float(space.distance(points[i], p)))
    if float(space.distance(points[best], p)) > LOCATE_TOL:
        raise ConsistencyError(f"reflection of {p.label()} is not a chain state")
    return best


def _assemble(name: str, space: Space, points: List[Point], adjacency: Dict[int, Set[int]], x1: int, x2: int,
              laziness: float, allow_crossings: bool = False) -> FiniteChain:
    size = len(points)
    if size > CHAIN_MAX_STATES:
        raise LimitError(f"chain {name} would have {size} states, above the limit of {CHAIN_MAX_STATES}")

    structure = build_structure(space, points[x1], points[x2])
    index = {p: i for i, p in enumerate(points)}
    sym = np.array([_locate(space, points, index, structure.reflect(p)) for p in points], dtype=np.int64)
    sides = tuple(structure.side(p) for p in points)
    h_mask = np.array([s == Side.H for s in sides], dtype=bool)

    lazy = Fraction(laziness).limit_denominator(10 ** 6)
    P = np.zeros((size, size))
    for i in range(size):
        nbrs = sorted(adjacency[i])
        if not nbrs:
            raise ConsistencyError(f"state {points[i].label()} has no neighbours")
        share = float((1 - lazy) / len(nbrs))
        P[i, nbrs] = share
        P[i, i] += float(lazy)

    if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise ConsistencyError(f"rows of {name} do not sum to 1")
    if not np.array_equal(sym[sym], np.arange(size)) or sym[x1] != x2:
        raise ConsistencyError(f"state permutation of {name} is not an involution mapping x1 to x2")
    if not np.array_equal(P[np.ix_(sym, sym)], P):
        raise ConsistencyError(f"transition matrix of {name} is not equivariant under R")
    if np.any(sym[h_mask] != np.flatnonzero(h_mask)):
        raise ConsistencyError(f"R moves states of H in {name}")

    crossing = tuple(
        (int(i), int(j)) for i, j in zip(*np.nonzero(P))
        if sides[i] == Side.X1 and sides[j] == Side.X2
    )
    if crossing and not allow_crossings:
        raise ConsistencyError(f"{name} has {len(crossing)} edges jumping from X1 to X2 over H")

    chain = FiniteChain(
        name=name,
        states=tuple(points),
        P=P,
        sym=sym,
        h_mask=h_mask,
        sides=sides,
        x1=x1,
        x2=x2,
        structure=structure,
        laziness=float(lazy),
        crossing_edges=crossing,
        index=index,
    )
    logger.debug(f"Built chain {chain.describe()}")
    return chain


class _Builder:
    """Collects states and undirected edges in insertion order"""

    def __init__(self):
        self.points: List[Point] = []
        self.index: Dict[Point, int] = {}
        self.adjacency: Dict[int, Set[int]] = {}

    def add(self, p: Point) -> int:
        if p not in self.index:
            self.index[p] = len(self.points)
            self.points.append(p)
            self.adjacency[self.index[p]] = set()
        return self.index[p]

    def link(self, a: Point, b: Point):
        i, j = self.add(a), self.add(b)
        self.adjacency[i].add(j)
        self.adjacency[j].add(i)


def _cycle(request: CycleRequest) -> FiniteChain:
    m = request.m
    if m % 4:
        raise ParityError(f"Cycle needs m divisible by 4 so that H falls on states, got m={m}")
    space = CircleSpace()
    builder = _Builder()
    for k in range(m):
        builder.link(Point.circle(k / m), Point.circle(((k + 1) % m) / m))
    return _assemble(f"Cycle({m}, {request.laziness})", space, builder.points, builder.adjacency,
                     builder.index[Point.circle(0.0)], builder.index[Point.circle(0.5)], request.laziness)


def _eight(request: EightRequest) -> FiniteChain:
    m = request.m
    if m % 2:
        raise ParityError(f"EightChain needs an even number of states per circle, got m={m}")
    space = MetricGraphSpace(eight_topology())
    builder = _Builder()
    builder.add(space.vertex("o1"))
    builder.add(space.vertex("o2"))
    for circle in (1, 2):
        for k in range(m):
            builder.link(eight_point(space, circle, Fraction(k, m)), eight_point(space, circle, Fraction(k + 1, m)))
    return _assemble(f"EightChain({m})", space, builder.points, builder.adjacency,
                     builder.index[space.vertex("o1")], builder.index[space.vertex("o2")], request.laziness)


def _tree(request: TreeRequest) -> FiniteChain:
    m = request.m
    space = MetricGraphSpace(star_tree_topology())
    builder = _Builder()
    for v in space.topology.vertices:
        builder.add(space.vertex(v))
    for edge in range(len(space.topology.edges)):
        for j in range(m):
            builder.link(space.point(edge, Fraction(j, m)), space.point(edge, Fraction(j + 1, m)))
    return _assemble(f"TreeChain({m})", space, builder.points, builder.adjacency,
                     builder.index[space.vertex("p11")], builder.index[space.vertex("p22")], request.laziness)


def _gasket(request: GasketRequest) -> FiniteChain:
    level = gasket_vertices(request.n)
    space = GasketSpace()
    p1, p2 = gasket_corner(1), gasket_corner(2)
    structure = build_structure(space, p1, p2)
    builder = _Builder()
    for p in level.vertices:
        builder.add(p)
    added = 0
    for a, b in level.edges:
        pa, pb = level.vertices[a], level.vertices[b]
        crosses = {structure.side(pa), structure.side(pb)} == {Side.X1, Side.X2}
        if request.axis_subdivision and crosses:
            mid = Point.gasket((pa.coords[0] + pb.coords[0]) / 2, (pa.coords[1] + pb.coords[1]) / 2)
            if structure.side(mid) != Side.H:
                raise ConsistencyError(f"midpoint {mid.label()} of an axis-crossing edge is off the axis")
            builder.link(pa, mid)
            builder.link(mid, pb)
            added += 1
        else:
            builder.link(pa, pb)
    if added:
        logger.debug(f"Subdivided {added} axis-crossing edges at gasket level {request.n}")
    name = f"GasketChain({request.n}, {str(request.axis_subdivision).lower()})"
    return _assemble(name, space, builder.points, builder.adjacency, builder.index[p1], builder.index[p2],
                     request.laziness, allow_crossings=not request.axis_subdivision)


_BUILDERS = {"cycle": _cycle, "eight": _eight, "tree": _tree, "gasket": _gasket}


def build_chain(request) -> FiniteChain:
    """Finite chain for a discretization request; invariants are asserted on construction"""
    builder = _BUILDERS.get(getattr(request, "kind", None))
    if builder is None:
        raise DomainError(f"unknown chain request {request!r}")
    return builder(request)


def chain_distribution(chain: FiniteChain, init: int, t: int) -> np.ndarray:
    """Row `init` of P^t"""
    return chain_distributions(chain, init, t)[-1]


def chain_distributions(chain: FiniteChain, init: int, t_max: int) -> np.ndarray:
    """Rows init of P^0 .. P^t_max, stacked"""
    if t_max < 0 or int(t_max) != t_max:
        raise DomainError(f"step count must be a non-negative integer, got {t_max}")
    if not 0 <= init < chain.size:
        raise DomainError(f"state index {init} outside 0..{chain.size - 1}")
    out = np.zeros((int(t_max) + 1, chain.size))
    out[0, init] = 1.0
    for k in range(1, int(t_max) + 1):
        out[k] = out[k - 1] @ chain.P
    return out
