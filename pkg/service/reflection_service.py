import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import H_BAND
from errors import ConsistencyError, DomainError, NoReflectionError, UnsupportedError
from models.graph_models import TopologyTag
from models.point_models import Point, SpaceKind, minkowski
from models.structure_models import BisectorGeometry, ReflectionStructure, Side
from service.spaces_service import (
    CircleSpace,
    EuclideanSpace,
    FlatTorusSpace,
    GasketSpace,
    Hyperbolic2Space,
    MetricGraphSpace,
    Space,
    Sphere2Space,
    gasket_corner,
    gasket_vertices,
)

logger = logging.getLogger(__name__)


def _side_from_signed(s: float) -> Side:
    if s > H_BAND:
        return Side.X1
    if s < -H_BAND:
        return Side.X2
    return Side.H


# -------------------
# Mirrors
# -------------------

@dataclass(frozen=True)
class HyperplaneMirror:
    """Euclidean reflection across {z : n.z = c}; positive signed distance on the x1 side"""
    normal: Tuple[float, ...]
    offset: float
    exact = False
    strip = None

    def signed_distance(self, p: Point) -> float:
        return self.offset - float(np.dot(self.normal, p.as_array()))

    def apply(self, p: Point) -> Point:
        n = np.asarray(self.normal)
        return Point.euclidean(*(p.as_array() + 2.0 * self.signed_distance(p) * n))

    def side(self, p: Point) -> Side:
        return _side_from_signed(self.signed_distance(p))

    def barrier_distances(self, p: Point) -> List[float]:
        return [abs(self.signed_distance(p))]

    def describe(self):
        return {"mirror": "hyperplane", "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class CircleMirror:
    """
    theta -> (2m - theta) mod 1 on one circle coordinate (axis 0 for the circle, axis 0
    or 1 on the torus). H is {m, m + 1/2} on that coordinate; X1 is the open half
    containing x1.
    """
    center: float
    x1_half: int
    axis: int = 0
    exact = False
    # H pieces at u = 0 and u = 1/2 bound a strip of width 1/2; u itself is periodic
    strip = (0.5, 1.0)

    def _u(self, p: Point) -> float:
        return (p.coords[self.axis] - self.center) % 1.0

    def barrier_distances(self, p: Point) -> List[float]:
        u = self._u(p)
        return [min(u, 1.0 - u), abs(u - 0.5)]

    def side(self, p: Point) -> Side:
        d = self.barrier_distances(p)
        if min(d) <= H_BAND:
            return Side.H
        return Side.X1 if int(self._u(p) >= 0.5) == self.x1_half else Side.X2

    def signed_distance(self, p: Point) -> float:
        d = min(self.barrier_distances(p))
        return d if self.side(p) != Side.X2 else -d

    def apply(self, p: Point) -> Point:
        coords = list(p.coords)
        coords[self.axis] = 2.0 * self.center - coords[self.axis]
        if p.kind == SpaceKind.CIRCLE:
            return Point.circle(coords[0])
        return Point.torus(coords[0], coords[1])

    def h_coordinates(self) -> List[float]:
        return [self.center % 1.0, (self.center + 0.5) % 1.0]

    def describe(self):
        return {"mirror": "circle", "axis": self.axis, "h": self.h_coordinates()}


@dataclass(frozen=True)
class LinearMirror:
    """
    Restriction of a linear reflection of R^3 to the sphere (Euclidean form) or to the
    hyperboloid (Lorentzian form); n is a unit vector with <x1, n> > 0.
    """
    normal: Tuple[float, float, float]
    lorentzian: bool
    exact = False
    strip = None

    def _form(self, p: Point) -> float:
        z, n = p.as_array(), np.asarray(self.normal)
        return minkowski(z, n) if self.lorentzian else float(np.dot(z, n))

    def signed_distance(self, p: Point) -> float:
        s = self._form(p)
        return float(np.arcsinh(s)) if self.lorentzian else float(np.arcsin(np.clip(s, -1.0, 1.0)))

    def apply(self, p: Point) -> Point:
        z = p.as_array() - 2.0 * self._form(p) * np.asarray(self.normal)
        return Point.hyperbolic(z, normalize=True) if self.lorentzian else Point.sphere(z, normalize=True)

    def side(self, p: Point) -> Side:
        return _side_from_signed(self.signed_distance(p))

    def barrier_distances(self, p: Point) -> List[float]:
        return [abs(self.signed_distance(p))]

    def describe(self):
        return {"mirror": "lorentzian" if self.lorentzian else "linear", "normal": list(self.normal)}


@dataclass(frozen=True)
class GraphMirror:
    """Graph isometry given by a vertex permutation and an edge map (edge, reversed)"""
    vertex_map: Dict[str, str]
    edge_map: Dict[int, Tuple[int, bool]]
    vertex_sides: Dict[str, Side]
    edge_sides: Dict[int, Side]
    space: MetricGraphSpace = field(compare=False)
    label: str = "R"
    exact = True
    strip = None

    def apply(self, p: Point) -> Point:
        if p.vertex is not None:
            return Point.graph_vertex(self.vertex_map[p.vertex])
        edge, flipped = self.edge_map[p.edge]
        return self.space.point(edge, 1 - p.offset if flipped else p.offset)

    def side(self, p: Point) -> Side:
        if p.vertex is not None:
            return self.vertex_sides[p.vertex]
        return self.edge_sides[p.edge]

    def barrier_distances(self, p: Point) -> Optional[List[float]]:
        return None

    def describe(self):
        return {
            "mirror": f"graph:{self.label}",
            "h_vertices": sorted(v for v, s in self.vertex_sides.items() if s == Side.H),
            "h_edges": sorted(e for e, s in self.edge_sides.items() if s == Side.H),
        }


@dataclass(frozen=True)
class GasketMirror:
    """Swap of the barycentric weights of corners i and j; H is the axis through the third corner"""
    i: int
    j: int
    exact = True
    strip = None

    @staticmethod
    def _weights(p: Point) -> Dict[int, Fraction]:
        u, v = p.coords
        return {1: 1 - u - v, 2: u, 3: v}

    def apply(self, p: Point) -> Point:
        w = self._weights(p)
        w[self.i], w[self.j] = w[self.j], w[self.i]
        return Point.gasket(w[2], w[3], address=p.address)

    def side(self, p: Point) -> Side:
        w = self._weights(p)
        if w[self.i] > w[self.j]:
            return Side.X1
        if w[self.i] < w[self.j]:
            return Side.X2
        return Side.H

    def barrier_distances(self, p: Point) -> Optional[List[float]]:
        return None

    def describe(self):
        return {"mirror": "gasket", "swap": [self.i, self.j], "axis_corner": 6 - self.i - self.j}


# -------------------
# Torus bisector
# -------------------

def torus_bisector(a: float, b: float) -> BisectorGeometry:
    """Equidistant set of x1 = [(a, 0)] and x2 = [(0, b)], 0 <= b <= a <= 1/2"""
    if not (0.0 < a <= 0.5 and 0.0 <= b <= a):
        raise DomainError(f"torus bisector needs 0 < a <= 1/2 and 0 <= b <= a, got a={a}, b={b}")
    if b == 0:
        return BisectorGeometry(case="two_circles", a=a, b=b, circles=[a / 2, (1 + a) / 2])
    left = 1.0 / (2.0 * a)
    right = 1.0 / (2.0 * (1.0 - a))
    points = [
        [left * (a * a + b * b - b), b - 0.5],
        [left * (a * a - b * b + b), 0.5],
        [left * (a * a + b * b - b), b + 0.5],
        [right * (-a * a - b * b + b + 1.0), b - 0.5],
        [right * (-a * a + b * b - b + 1.0), 0.5],
        [right * (-a * a - b * b + b + 1.0), b + 0.5],
    ]
    return BisectorGeometry(
        case="singular_no_reflection",
        a=a,
        b=b,
        points=points,
        segments=[[1, 2], [2, 3], [4, 5], [5, 6]],
        singular=True,
        singular_vertices=_bisector_kinks(points),
    )


def _bisector_kinks(points: List[List[float]]) -> List[str]:
    """Middle vertices where the two adjacent segments turn; a shared torus point is named once"""
    kinks = []
    for before, mid, after in ((0, 1, 2), (3, 4, 5)):
        u = np.subtract(points[mid], points[before])
        v = np.subtract(points[after], points[mid])
        if abs(u[0] * v[1] - u[1] * v[0]) > 1e-12 * np.linalg.norm(u) * np.linalg.norm(v):
            kinks.append(f"z{mid + 1}")
    gap = np.subtract(points[1], points[4]) % 1.0
    if kinks == ["z2", "z5"] and np.allclose(np.minimum(gap, 1.0 - gap), 0.0, atol=1e-12):
        return ["z2=z5"]
    return kinks


def torus_canonical_offsets(x1: Point, x2: Point) -> Tuple[float, float, int]:
    """(a, b, axis): the pair's offset reduced by torus isometries to 0 <= b <= a <= 1/2"""
    diffs = []
    for k in (0, 1):
        c = (x1.coords[k] - x2.coords[k]) % 1.0
        diffs.append(min(c, 1.0 - c))
    axis = 0 if diffs[0] >= diffs[1] else 1
    return diffs[axis], diffs[1 - axis], axis


def bisector_residuals(geometry: BisectorGeometry, samples_per_segment: int = 1000) -> List[float]:
    """|d(z, x1) - d(z, x2)| at evenly spaced points of every listed piece of K"""
    x1 = np.array([geometry.a, 0.0])
    x2 = np.array([0.0, geometry.b])
    ts = np.linspace(0.0, 1.0, samples_per_segment)
    residuals = []
    if geometry.case == "two_circles":
        pieces = [((p, 0.0), (p, 1.0)) for p in geometry.circles]
    else:
        pieces = geometry.segment_endpoints()
    for start, end in pieces:
        start, end = np.asarray(start), np.asarray(end)
        for t in ts:
            z = (1.0 - t) * start + t * end
            residuals.append(abs(FlatTorusSpace.lift_distance(z, x1) - FlatTorusSpace.lift_distance(z, x2)))
    return residuals


# -------------------
# Graph mirrors
# -------------------

def _eight_mirror(space: MetricGraphSpace) -> GraphMirror:
    sides_v = {"o1": Side.X1, "o2": Side.X2, "g": Side.H}
    sides_e = {0: Side.X1, 1: Side.X1, 2: Side.X2, 3: Side.X2}
    return GraphMirror(
        vertex_map={"o1": "o2", "o2": "o1", "g": "g"},
        edge_map={0: (2, False), 1: (3, False), 2: (0, False), 3: (1, False)},
        vertex_sides=sides_v,
        edge_sides=sides_e,
        space=space,
    )


def eight_alternate_structure(space: MetricGraphSpace) -> ReflectionStructure:
    """The second reflection of the eight: circle coordinate c on one circle -> 1 - c on the other"""
    if space.topology.tag != TopologyTag.EIGHT:
        raise UnsupportedError("the alternate reflection exists on the eight only")
    mirror = GraphMirror(
        vertex_map={"o1": "o2", "o2": "o1", "g": "g"},
        edge_map={0: (3, True), 1: (2, True), 2: (1, True), 3: (0, True)},
        vertex_sides={"o1": Side.X1, "o2": Side.X2, "g": Side.H},
        edge_sides={0: Side.X1, 1: Side.X1, 2: Side.X2, 3: Side.X2},
        space=space,
        label="eta.R",
    )
    return _validated(ReflectionStructure(space, mirror, space.vertex("o1"), space.vertex("o2")))


def _star_tree_mirror(space: MetricGraphSpace) -> GraphMirror:
    # edges: 0 p0-p1, 1 p0-p2, 2 p0-p3, 3 p1-p11, 4 p1-p12, 5 p2-p21, 6 p2-p22, 7 p3-p31, 8 p3-p32
    vertex_map = {v: v for v in space.topology.vertices}
    vertex_map.update({"p1": "p2", "p2": "p1", "p11": "p22", "p22": "p11", "p12": "p21", "p21": "p12"})
    edge_map = {0: (1, False), 1: (0, False), 2: (2, False), 3: (6, False), 6: (3, False),
                4: (5, False), 5: (4, False), 7: (7, False), 8: (8, False)}
    vertex_sides = {v: Side.H for v in space.topology.vertices}
    vertex_sides.update({"p1": Side.X1, "p11": Side.X1, "p12": Side.X1,
                         "p2": Side.X2, "p21": Side.X2, "p22": Side.X2})
    edge_sides = {0: Side.X1, 3: Side.X1, 4: Side.X1, 1: Side.X2, 5: Side.X2, 6: Side.X2,
                  2: Side.H, 7: Side.H, 8: Side.H}
    return GraphMirror(vertex_map, edge_map, vertex_sides, edge_sides, space=space)


# -------------------
# Structure construction
# -------------------

def build_structure(space: Space, x1: Point, x2: Point) -> ReflectionStructure:
    """Reflection structure with R x1 = x2 for the supported spaces and pairs"""
    space.check(x1, x2)
    if x1 == x2:
        raise DomainError("starting points must differ")

    if isinstance(space, EuclideanSpace):
        a, b = x1.as_array(), x2.as_array()
        n = (b - a) / np.linalg.norm(b - a)
        mirror = HyperplaneMirror(tuple(float(c) for c in n), float(np.dot(n, (a + b) / 2.0)))
    elif isinstance(space, CircleSpace):
        a, b = x1.coords[0], x2.coords[0]
        center = ((a + b) / 2.0) % 1.0
        mirror = CircleMirror(center=center, x1_half=int((a - center) % 1.0 >= 0.5))
    elif isinstance(space, FlatTorusSpace):
        a, b, axis = torus_canonical_offsets(x1, x2)
        if b > H_BAND:
            witness = torus_bisector(a, b)
            logger.info(f"No reflection for torus pair with a={a:.6g}, b={b:.6g}")
            raise NoReflectionError(f"torus pair with offsets a={a}, b={b} admits no reflection structure", witness)
        p, q = x1.coords[axis], x2.coords[axis]
        center = (p + q) / 2.0
        # both midpoints of the pair on this axis are valid centres; keep one in [0, 1)
        center = center % 1.0
        mirror = CircleMirror(center=center, x1_half=int((p - center) % 1.0 >= 0.5), axis=axis)
    elif isinstance(space, (Sphere2Space, Hyperbolic2Space)):
        lorentzian = isinstance(space, Hyperbolic2Space)
        a, b = x1.as_array(), x2.as_array()
        d = a - b
        length = np.sqrt(minkowski(d, d)) if lorentzian else np.linalg.norm(d)
        mirror = LinearMirror(tuple(float(c) for c in d / length), lorentzian)
    elif isinstance(space, MetricGraphSpace):
        tag = space.topology.tag
        if tag == TopologyTag.EIGHT and (x1.vertex, x2.vertex) == ("o1", "o2"):
            mirror = _eight_mirror(space)
        elif tag == TopologyTag.STAR_TREE and (x1.vertex, x2.vertex) == ("p11", "p22"):
            mirror = _star_tree_mirror(space)
        else:
            raise UnsupportedError(f"no reflection structure offered for {x1.label()} / {x2.label()} on {tag.value}")
    elif isinstance(space, GasketSpace):
        corners = {gasket_corner(i): i for i in (1, 2, 3)}
        if x1 not in corners or x2 not in corners:
            raise UnsupportedError("gasket structures are offered for pairs of corner points")
        mirror = GasketMirror(corners[x1], corners[x2])
    else:
        raise UnsupportedError(f"no reflection structure for space {space.name}")

    return _validated(ReflectionStructure(space, mirror, x1, x2))


def _validated(structure: ReflectionStructure) -> ReflectionStructure:
    x1, x2 = structure.x1, structure.x2
    image = structure.reflect(x1)
    if structure.space.distance(image, x2) > H_BAND:
        raise ConsistencyError(f"R(x1) = {image.label()} differs from x2 = {x2.label()}")
    if structure.side(x1) != Side.X1 or structure.side(x2) != Side.X2:
        raise ConsistencyError("starting points must lie on opposite sides of H")
    logger.debug(f"Built reflection structure {structure.describe()}")
    return structure


def reflect(structure: ReflectionStructure, x: Point) -> Point:
    structure.space.check(x)
    return structure.reflect(x)


def side(structure: ReflectionStructure, x: Point) -> Side:
    structure.space.check(x)
    return structure.side(x)


# -------------------
# H sampling and equidistance
# -------------------

def sample_h_points(structure: ReflectionStructure, n: int, rng: np.random.Generator) -> List[Point]:
    """Points of the fixed set H (random for continuous spaces, exhaustive for combinatorial ones)"""
    space, mirror = structure.space, structure.mirror
    if isinstance(mirror, HyperplaneMirror):
        normal = np.asarray(mirror.normal)
        z = rng.normal(scale=3.0, size=(n, len(normal)))
        z = z + np.outer(mirror.offset - z @ normal, normal)
        return [Point.euclidean(*row) for row in z]
    if isinstance(mirror, CircleMirror):
        hs = mirror.h_coordinates()
        if isinstance(space, CircleSpace):
            return [Point.circle(h) for h in hs]
        free = rng.uniform(0.0, 1.0, size=n)
        out = []
        for k, s in enumerate(free):
            coords = [0.0, 0.0]
            coords[mirror.axis] = hs[k % 2]
            coords[1 - mirror.axis] = s
            out.append(Point.torus(*coords))
        return out
    if isinstance(mirror, LinearMirror):
        normal = np.asarray(mirror.normal)
        if mirror.lorentzian:
            # geodesic {<z, n> = 0}: spanned by a timelike unit t and spacelike unit s orthogonal to n
            t = np.array([1.0, 0.0, 0.0])
            t = t + minkowski(t, normal) * normal
            t = t / np.sqrt(-minkowski(t, t))
            s = np.cross(np.array([-t[0], t[1], t[2]]), np.array([-normal[0], normal[1], normal[2]]))
            s = s - minkowski(s, t) * -t
            s = s / np.sqrt(minkowski(s, s))
            r = rng.uniform(-2.0, 2.0, size=n)
            return [Point.hyperbolic(np.cosh(v) * t + np.sinh(v) * s, normalize=True) for v in r]
        basis = np.linalg.svd(normal.reshape(1, 3))[2][1:]
        angles = rng.uniform(0.0, 2 * np.pi, size=n)
        return [Point.sphere(np.cos(a) * basis[0] + np.sin(a) * basis[1], normalize=True) for a in angles]
    if isinstance(mirror, GraphMirror):
        out = [Point.graph_vertex(v) for v, s in mirror.vertex_sides.items() if s == Side.H]
        for e, s in mirror.edge_sides.items():
            if s == Side.H:
                out.extend(space.point(e, f) for f in rng.uniform(0.0, 1.0, size=max(1, n // 8)))
        return out
    if isinstance(mirror, GasketMirror):
        level = gasket_vertices(max(1, min(int(np.log2(max(n, 2))), 5)))
        return [p for p in level.vertices if mirror.side(p) == Side.H]
    raise UnsupportedError(f"cannot sample H for {space.name}")


def h_equidistance_residual(structure: ReflectionStructure, x: Point, h_points: Sequence[Point]) -> float:
    """max over h in H of |d(x, h) - d(R x, h)|"""
    rx = structure.reflect(x)
    return max(abs(float(structure.space.distance(x, h) - structure.space.distance(rx, h))) for h in h_points)


def gasket_mirror_rigidity(n: int, i: int = 1, j: int = 2) -> List[Tuple[Point, Point]]:
    """
    On V_n: pairs (x, y), x in X1, y in X2, with d(x, z) = d(y, z) for every z in H n V_n
    but y != R x. An empty list means distances to H pin down the mirror image.
    """
    level = gasket_vertices(n)
    mirror = GasketMirror(i, j)
    space = GasketSpace()
    h = [p for p in level.vertices if mirror.side(p) == Side.H]
    by_profile: Dict[Tuple[Fraction, ...], List[Point]] = defaultdict(list)
    for y in level.vertices:
        if mirror.side(y) == Side.X2:
            by_profile[tuple(space.distance(y, z) for z in h)].append(y)
    violations = []
    for x in level.vertices:
        if mirror.side(x) != Side.X1:
            continue
        rx = mirror.apply(x)
        for y in by_profile.get(tuple(space.distance(x, z) for z in h), []):
            if y != rx:
                violations.append((x, y))
    return violations


def star_tree_eta(space: MetricGraphSpace) -> GraphMirror:
    """Leaf swap at p2: p21 <-> p22 together with their edges; every other point is fixed"""
    if space.topology.tag != TopologyTag.STAR_TREE:
        raise UnsupportedError("the leaf swap is defined on the star tree only")
    vertex_map = {v: v for v in space.topology.vertices}
    vertex_map.update({"p21": "p22", "p22": "p21"})
    edge_map = {e: (e, False) for e in range(len(space.topology.edges))}
    edge_map.update({5: (6, False), 6: (5, False)})
    return GraphMirror(
        vertex_map=vertex_map,
        edge_map=edge_map,
        vertex_sides={v: Side.H for v in space.topology.vertices},
        edge_sides={e: Side.H for e in edge_map},
        space=space,
        label="eta",
    )
