import logging
from abc import ABC, abstractmethod
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from config import GASKET_MAX_LEVEL
from errors import DomainError, LimitError, NonUniqueGeodesicError, UnsupportedError, UnsupportedPointError
from models.graph_models import GasketLevelGraph, GraphTopology, TopologyTag, eight_topology, star_tree_topology
from models.point_models import Point, SpaceKind, TangentVector, minkowski

logger = logging.getLogger(__name__)

Length = Union[float, Fraction]

CUT_LOCUS_TOL = 1e-12


class Space(ABC):
    """Metric space handle. Immutable after construction; methods are pure."""
    kind: SpaceKind

    def check(self, *points: Point):
        for p in points:
            if p.kind != self.kind:
                raise DomainError(f"point of kind {p.kind.value} does not belong to {self.kind.value}")

    @abstractmethod
    def distance(self, x: Point, y: Point) -> Length:
        ...

    @property
    def name(self) -> str:
        return self.kind.value


# -------------------
# Flat spaces
# -------------------

class CircleSpace(Space):
    """Circle of circumference 1, angles in [0, 1)"""
    kind = SpaceKind.CIRCLE
    dim = 1

    def distance(self, x: Point, y: Point) -> float:
        self.check(x, y)
        delta = abs(x.coords[0] - y.coords[0]) % 1.0
        return min(delta, 1.0 - delta)


class FlatTorusSpace(Space):
    """Flat torus R^2 / Z^2 with coordinates in [0, 1)^2"""
    kind = SpaceKind.FLAT_TORUS
    dim = 2
    _TRANSLATES = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)

    def distance(self, x: Point, y: Point) -> float:
        self.check(x, y)
        return self.lift_distance(x.as_array(), y.as_array())

    @classmethod
    def lift_distance(cls, a: np.ndarray, b: np.ndarray) -> float:
        """Minimum over the 3x3 block of lattice translates of b"""
        diffs = (b + cls._TRANSLATES) - a
        return float(np.min(np.linalg.norm(diffs, axis=1)))


# -------------------
# Manifolds
# -------------------

class Manifold(Space):
    """Riemannian manifold embedded in coordinates; tangent vectors live in the same coordinates"""
    dim: int

    def inner(self, v: np.ndarray, w: np.ndarray) -> float:
        return float(np.dot(v, w))

    def norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    @abstractmethod
    def exp_array(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def log_array(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def transport_array(self, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def project(self, x: np.ndarray, e: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def make_point(self, arr: np.ndarray) -> Point:
        ...

    def frame_array(self, x: np.ndarray) -> np.ndarray:
        """
        Orthonormal frame of T_x as columns: Gram-Schmidt on the projected chart basis.
        Axes are taken in decreasing order of projected length, so the axis most aligned
        with the normal direction is the one dropped; each column is orthogonalised twice.
        """
        projected = [self.project(x, e) for e in np.eye(len(x))]
        lengths = [self.norm(w) for w in projected]
        columns: List[np.ndarray] = []
        for i in sorted(range(len(projected)), key=lambda k: -lengths[k]):
            w = projected[i]
            for _ in range(2):
                for c in columns:
                    w = w - self.inner(w, c) * c
            n = self.norm(w)
            if n > 1e-3 * max(lengths[i], 1.0):
                columns.append(w / n)
            if len(columns) == self.dim:
                break
        return np.column_stack(columns)

    def exp(self, x: Point, v: TangentVector) -> Point:
        self.check(x)
        return self.make_point(self.exp_array(x.as_array(), v.components))

    def log(self, x: Point, y: Point) -> TangentVector:
        self.check(x, y)
        return TangentVector(x, self.log_array(x.as_array(), y.as_array()))

    def transport(self, x: Point, y: Point, v: TangentVector) -> TangentVector:
        self.check(x, y)
        return TangentVector(y, self.transport_array(x.as_array(), y.as_array(), v.components))


class EuclideanSpace(Manifold):
    kind = SpaceKind.EUCLIDEAN

    def __init__(self, dim: int = 1):
        if dim < 1:
            raise DomainError("Euclidean dimension must be positive")
        self.dim = dim

    def check(self, *points: Point):
        super().check(*points)
        for p in points:
            if len(p.coords) != self.dim:
                raise DomainError(f"expected {self.dim} coordinates, got {len(p.coords)}")

    def distance(self, x: Point, y: Point) -> float:
        self.check(x, y)
        return float(np.linalg.norm(x.as_array() - y.as_array()))

    def exp_array(self, x, v):
        return x + v

    def log_array(self, x, y):
        return y - x

    def transport_array(self, x, y, v):
        return np.array(v, dtype=float)

    def project(self, x, e):
        return e

    def frame_array(self, x):
        return np.eye(self.dim)

    def make_point(self, arr):
        return Point.euclidean(*arr)


class Sphere2Space(Manifold):
    """Unit sphere in R^3"""
    kind = SpaceKind.SPHERE2
    dim = 2

    def distance(self, x: Point, y: Point) -> float:
        self.check(x, y)
        a, b = x.as_array(), y.as_array()
        return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))

    def exp_array(self, x, v):
        n = np.linalg.norm(v)
        if n == 0.0:
            return np.array(x, dtype=float)
        z = np.cos(n) * x + np.sin(n) * (v / n)
        return z / np.linalg.norm(z)

    def log_array(self, x, y):
        c = float(np.dot(x, y))
        u = y - c * x
        s = float(np.linalg.norm(u))
        if s < CUT_LOCUS_TOL:
            if c < 0:
                raise NonUniqueGeodesicError("antipodal points have no unique minimal geodesic")
            return np.zeros(3)
        theta = np.arctan2(s, c)
        return theta * u / s

    def transport_array(self, x, y, v):
        c = 1.0 + float(np.dot(x, y))
        if c < CUT_LOCUS_TOL:
            raise NonUniqueGeodesicError("cannot transport between antipodal points")
        return v - (float(np.dot(y, v)) / c) * (x + y)

    def project(self, x, e):
        return e - np.dot(x, e) * x

    def make_point(self, arr):
        return Point.sphere(arr, normalize=True)


class Hyperbolic2Space(Manifold):
    """Upper sheet of the hyperboloid -z0^2 + z1^2 + z2^2 = -1"""
    kind = SpaceKind.HYPERBOLIC2
    dim = 2

    def inner(self, v, w):
        return minkowski(v, w)

    def distance(self, x: Point, y: Point) -> float:
        self.check(x, y)
        return float(np.arccosh(max(1.0, -minkowski(x.as_array(), y.as_array()))))

    def exp_array(self, x, v):
        n = self.norm(v)
        if n == 0.0:
            return np.array(x, dtype=float)
        z = np.cosh(n) * x + np.sinh(n) * (v / n)
        return _lift_hyperboloid(z)

    def log_array(self, x, y):
        c = max(1.0, -minkowski(x, y))
        u = y - c * x
        s = self.norm(u)
        if s < CUT_LOCUS_TOL:
            return np.zeros(3)
        return np.arccosh(c) * u / s

    def transport_array(self, x, y, v):
        c = -minkowski(x, y)
        return v + (minkowski(y, v) / (1.0 + c)) * (x + y)

    def project(self, x, e):
        return e + minkowski(x, e) * x

    def make_point(self, arr):
        return Point.hyperbolic(arr, normalize=True)


def _lift_hyperboloid(z: np.ndarray) -> np.ndarray:
    return np.concatenate([[np.sqrt(1.0 + np.dot(z[1:], z[1:]))], z[1:]])


# -------------------
# Metric graphs
# -------------------

class MetricGraphSpace(Space):
    """Metric graph built from a GraphTopology; points are vertices or interior edge points"""
    kind = SpaceKind.METRIC_GRAPH

    def __init__(self, topology: GraphTopology):
        self.topology = topology
        graph = nx.MultiGraph()
        graph.add_nodes_from(topology.vertices)
        for i, (a, b, length) in enumerate(topology.edges):
            graph.add_edge(a, b, key=i, length=length)
        self.graph = graph
        self._vertex_distances: Dict[str, Dict[str, Fraction]] = dict(
            nx.all_pairs_dijkstra_path_length(graph, weight="length")
        )

    @property
    def name(self) -> str:
        return self.topology.tag.value

    def vertex(self, name: str) -> Point:
        if name not in self.topology.vertices:
            raise DomainError(f"unknown vertex {name}")
        return Point.graph_vertex(name)

    def point(self, edge: int, offset) -> Point:
        """Canonical point on an edge; endpoint offsets collapse to the incident vertex"""
        if not 0 <= edge < len(self.topology.edges):
            raise DomainError(f"unknown edge {edge}")
        if not 0 <= offset <= 1:
            raise DomainError(f"edge offset outside [0, 1]: {offset}")
        tail, head, _ = self.topology.edges[edge]
        if offset == 0:
            return Point.graph_vertex(tail)
        if offset == 1:
            return Point.graph_vertex(head)
        return Point.graph_edge(edge, offset)

    def canonical(self, p: Point) -> Point:
        self.check(p)
        return p if p.vertex is not None else self.point(p.edge, p.offset)

    def edge_length(self, edge: int) -> Fraction:
        return self.topology.edges[edge][2]

    def _anchors(self, p: Point) -> List[Tuple[str, Length]]:
        if p.vertex is not None:
            return [(p.vertex, 0)]
        tail, head, length = self.topology.edges[p.edge]
        return [(tail, p.offset * length), (head, (1 - p.offset) * length)]

    def distance(self, x: Point, y: Point) -> Length:
        self.check(x, y)
        best: Optional[Length] = None
        if x.edge is not None and x.edge == y.edge:
            best = abs(x.offset - y.offset) * self.edge_length(x.edge)
        for a, da in self._anchors(x):
            for b, db in self._anchors(y):
                cand = da + self._vertex_distances[a][b] + db
                if best is None or cand < best:
                    best = cand
        return best


def graph_space(topology: GraphTopology) -> MetricGraphSpace:
    return MetricGraphSpace(topology)


# Eight helpers: circle coordinate c in [0, 1) on circle Y_i  <->  graph point

def eight_point(space: MetricGraphSpace, circle: int, c) -> Point:
    if space.topology.tag != TopologyTag.EIGHT:
        raise DomainError("eight_point needs the Eight topology")
    if circle not in (1, 2):
        raise DomainError("circle index must be 1 or 2")
    c = c % 1
    upper, lower = 2 * (circle - 1), 2 * (circle - 1) + 1
    if c == 0:
        return space.vertex(f"o{circle}")
    if 2 * c <= 1:
        return space.point(upper, 2 * c)
    return space.point(lower, 2 * c - 1)


def eight_coordinate(space: MetricGraphSpace, p: Point) -> Tuple[int, object]:
    """Inverse of eight_point; the glue point reports circle 1, c = 1/2"""
    if p.vertex == "g":
        return 1, Fraction(1, 2)
    if p.vertex is not None:
        return int(p.vertex[1]), 0
    circle = p.edge // 2 + 1
    if p.edge % 2 == 0:
        return circle, p.offset / 2
    return circle, (1 + p.offset) / 2


# -------------------
# Sierpinski gasket (vertices only, exact dyadic coordinates)
# -------------------

CORNERS: Dict[int, Tuple[Fraction, Fraction]] = {
    1: (Fraction(0), Fraction(0)),
    2: (Fraction(1), Fraction(0)),
    3: (Fraction(0), Fraction(1)),
}

Coords = Tuple[Fraction, Fraction]


def _in_triangle(c: Coords) -> bool:
    return c[0] >= 0 and c[1] >= 0 and c[0] + c[1] <= 1


def _psi(i: int, c: Coords) -> Coords:
    p = CORNERS[i]
    return ((c[0] + p[0]) / 2, (c[1] + p[1]) / 2)


def _psi_inv(i: int, c: Coords) -> Coords:
    p = CORNERS[i]
    return (2 * c[0] - p[0], 2 * c[1] - p[1])


def _cells(c: Coords) -> List[int]:
    return [i for i in (1, 2, 3) if _in_triangle(_psi_inv(i, c))]


@lru_cache(maxsize=None)
def _is_vertex(c: Coords) -> bool:
    if c in CORNERS.values():
        return True
    if not _in_triangle(c) or c[0].denominator == 1 and c[1].denominator == 1:
        return False
    # dyadic denominators only
    for q in c:
        d = q.denominator
        if d & (d - 1):
            return False
    return any(_is_vertex(_psi_inv(i, c)) for i in _cells(c))


def gasket_corner(i: int) -> Point:
    u, v = CORNERS[i]
    return Point.gasket(u, v, address=(i,))


def psi(i: int, p: Point) -> Point:
    """Contraction Psi_i(x) = (x - p_i)/2 + p_i"""
    if i not in CORNERS:
        raise DomainError(f"contraction index must be 1, 2 or 3, got {i}")
    u, v = _psi(i, p.coords)
    return Point.gasket(u, v, address=(i,) + p.address)


def gasket_planar(p: Point) -> Tuple[float, float]:
    """Planar position with p1=(0,0), p2=(1,0), p3=(1/2, sqrt(3)/2)"""
    u, v = float(p.coords[0]), float(p.coords[1])
    return u + v / 2, v * np.sqrt(3) / 2


class GasketSpace(Space):
    kind = SpaceKind.GASKET

    def distance(self, x: Point, y: Point) -> Fraction:
        return gasket_distance(x, y)

    def is_vertex(self, p: Point) -> bool:
        self.check(p)
        return _is_vertex(p.coords)


@lru_cache(maxsize=None)
def _gasket_distance(a: Coords, b: Coords) -> Fraction:
    if a == b:
        return Fraction(0)
    corners = CORNERS.values()
    if a in corners and b in corners:
        return Fraction(1)
    cells_a, cells_b = _cells(a), _cells(b)
    common = [i for i in cells_a if i in cells_b]
    if common:
        # geodesics between points of one cell stay in that cell (scaling condition)
        i = common[0]
        return _gasket_distance(_psi_inv(i, a), _psi_inv(i, b)) / 2
    best: Optional[Fraction] = None
    for i in cells_a:
        for j in cells_b:
            k = 6 - i - j
            q_ij = _psi(i, CORNERS[j])
            q_ik = _psi(i, CORNERS[k])
            q_jk = _psi(j, CORNERS[k])
            direct = _gasket_distance(a, q_ij) + _gasket_distance(q_ij, b)
            around = _gasket_distance(a, q_ik) + Fraction(1, 2) + _gasket_distance(q_jk, b)
            cand = min(direct, around)
            if best is None or cand < best:
                best = cand
    return best


def gasket_distance(x: Point, y: Point) -> Fraction:
    """Shortest-path metric between gasket vertices, exact in dyadic rationals"""
    for p in (x, y):
        if p.kind != SpaceKind.GASKET:
            raise DomainError(f"point of kind {p.kind.value} is not a gasket point")
        if not _is_vertex(p.coords):
            raise UnsupportedPointError(f"{p.label()} is not a vertex of any V_n")
    return _gasket_distance(x.coords, y.coords)


@lru_cache(maxsize=GASKET_MAX_LEVEL + 1)
def gasket_vertices(n: int) -> GasketLevelGraph:
    """V_n with nearest-neighbour edges of length 2^-n, built by applying Psi_i to V_{n-1}"""
    if not 0 <= n <= GASKET_MAX_LEVEL:
        raise LimitError(f"gasket level must lie in [0, {GASKET_MAX_LEVEL}], got {n}")
    # integer coordinates at scale 2^level; addresses kept for provenance
    verts: Dict[Tuple[int, int], Tuple[int, ...]] = {(0, 0): (1,), (1, 0): (2,), (0, 1): (3,)}
    edges = {((0, 0), (1, 0)), ((0, 0), (0, 1)), ((1, 0), (0, 1))}
    for level in range(1, n + 1):
        shift = 2 ** (level - 1)
        new_verts: Dict[Tuple[int, int], Tuple[int, ...]] = {}
        new_edges = set()
        for i in (1, 2, 3):
            pu, pv = CORNERS[i]
            du, dv = int(pu) * shift, int(pv) * shift
            for (a, b), address in verts.items():
                new_verts.setdefault((a + du, b + dv), (i,) + address)
            for (a, b), (c, d) in edges:
                e = tuple(sorted(((a + du, b + dv), (c + du, d + dv))))
                new_edges.add(e)
        verts, edges = new_verts, new_edges
    scale = 2 ** n
    keys = sorted(verts)
    points = tuple(Point.gasket(Fraction(a, scale), Fraction(b, scale), address=verts[(a, b)]) for a, b in keys)
    position = {k: idx for idx, k in enumerate(keys)}
    edge_list = tuple(sorted((position[s], position[t]) for s, t in edges))
    logger.debug(f"Built gasket level {n}: {len(points)} vertices, {len(edge_list)} edges")
    return GasketLevelGraph(level=n, vertices=points, edges=edge_list, index={p: i for i, p in enumerate(points)})


def gasket_graph_distances(n: int) -> np.ndarray:
    """All-pairs shortest-path oracle on V_n, in units of the edge length 2^-n"""
    level_graph = gasket_vertices(n)
    graph = nx.Graph()
    graph.add_nodes_from(range(len(level_graph.vertices)))
    graph.add_edges_from(level_graph.edges)
    size = len(level_graph.vertices)
    hops = np.zeros((size, size), dtype=np.int64)
    for src, lengths in nx.all_pairs_shortest_path_length(graph):
        for dst, h in lengths.items():
            hops[src, dst] = h
    return hops


def gasket_cell_by_distances(w: Point) -> Dict[int, bool]:
    """
    Predicts membership of w in Psi_2(X) and Psi_3(X) from its distances to p3 and
    Psi_2(p1) alone. Valid on the p2 side of the p1-p2 symmetry axis only.
    """
    u, v = w.coords
    if not u > 1 - u - v:
        raise DomainError(f"{w.label()} is not on the p2 side of the p1-p2 axis")
    h_top = gasket_distance(w, gasket_corner(3))
    h_mid = gasket_distance(w, psi(2, gasket_corner(1)))
    half = Fraction(1, 2)
    return {
        2: h_top >= half and h_mid <= half,
        3: h_top <= half and h_mid >= half,
    }


def gasket_cells(w: Point) -> List[int]:
    return _cells(w.coords)


# -------------------
# Dispatch helpers
# -------------------

def distance(space: Space, x: Point, y: Point) -> Length:
    return space.distance(x, y)


def _manifold(space: Space) -> Manifold:
    if not isinstance(space, Manifold):
        raise UnsupportedError(f"{space.name} carries no exponential map")
    return space


def exp_map(manifold: Space, x: Point, v: TangentVector) -> Point:
    return _manifold(manifold).exp(x, v)


def log_map(manifold: Space, x: Point, y: Point) -> TangentVector:
    return _manifold(manifold).log(x, y)


def parallel_transport(manifold: Space, x: Point, y: Point, v: TangentVector) -> TangentVector:
    return _manifold(manifold).transport(x, y, v)


def inner(manifold: Space, v: TangentVector, w: TangentVector) -> float:
    return _manifold(manifold).inner(v.components, w.components)


def orthonormal_frame(manifold: Space, x: Point) -> np.ndarray:
    m = _manifold(manifold)
    m.check(x)
    return m.frame_array(x.as_array())


def geodesic_point(manifold: Space, x: Point, y: Point, s: float) -> Point:
    m = _manifold(manifold)
    return m.exp(x, m.log(x, y).scaled(s))


SPACE_NAMES = ("euclidean", "circle", "flat_torus", "sphere2", "hyperbolic2", "eight", "star_tree", "gasket")


def space_by_name(name: str, dim: int = 1) -> Space:
    builders = {
        "euclidean": lambda: EuclideanSpace(dim),
        "circle": CircleSpace,
        "flat_torus": FlatTorusSpace,
        "sphere2": Sphere2Space,
        "hyperbolic2": Hyperbolic2Space,
        "eight": lambda: MetricGraphSpace(eight_topology()),
        "star_tree": lambda: MetricGraphSpace(star_tree_topology()),
        "gasket": GasketSpace,
    }
    if name not in builders:
        raise DomainError(f"unknown space '{name}', expected one of {', '.join(SPACE_NAMES)}")
    return builders[name]()


def to_points(space: Space, rows: Sequence[Sequence[float]]) -> List[Point]:
    """Coordinate rows to points of a continuous space"""
    if isinstance(space, Manifold):
        return [space.make_point(np.asarray(r, dtype=float)) for r in rows]
    if isinstance(space, CircleSpace):
        return [Point.circle(r[0]) for r in rows]
    if isinstance(space, FlatTorusSpace):
        return [Point.torus(r[0], r[1]) for r in rows]
    raise UnsupportedError(f"{space.name} has no coordinate chart")
