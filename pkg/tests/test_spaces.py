import math
from fractions import Fraction

import numpy as np
import pytest

from errors import DomainError, LimitError, NonUniqueGeodesicError, UnsupportedPointError
from models.graph_models import eight_topology, star_tree_topology
from models.point_models import Point, TangentVector
from service.spaces_service import (
    EuclideanSpace,
    FlatTorusSpace,
    Hyperbolic2Space,
    Sphere2Space,
    exp_map,
    gasket_cell_by_distances,
    gasket_cells,
    gasket_corner,
    gasket_distance,
    gasket_graph_distances,
    gasket_planar,
    gasket_vertices,
    geodesic_point,
    graph_space,
    inner,
    log_map,
    orthonormal_frame,
    parallel_transport,
    psi,
)


def _random_sphere(rng, n):
    v = rng.standard_normal((n, 3))
    return [Point.sphere(row, normalize=True) for row in v]


def _random_hyperbolic(rng, n):
    xy = rng.uniform(-1.5, 1.5, size=(n, 2))
    return [Point.hyperbolic([0.0, a, b], normalize=True) for a, b in xy]


# -------------------
# Metrics
# -------------------

def test_gasket_anchor_distances():
    p1, p2, p3 = (gasket_corner(i) for i in (1, 2, 3))
    assert gasket_distance(p1, p2) == 1
    assert gasket_distance(psi(2, p1), psi(2, p2)) == Fraction(1, 2)
    assert gasket_distance(p3, psi(2, p1)) == 1


def test_torus_distance_uses_lattice_translates():
    torus = FlatTorusSpace()
    assert torus.distance(Point.torus(0, 0), Point.torus(2 / 3, 0)) == pytest.approx(1 / 3, abs=1e-12)
    assert torus.distance(Point.torus(0.9, 0.9), Point.torus(0.1, 0.1)) == pytest.approx(math.hypot(0.2, 0.2))


def test_sphere_distance_to_itself_is_zero():
    x = Point.sphere([0.0, 0.6, 0.8])
    assert Sphere2Space().distance(x, x) == 0.0


def test_mismatched_space_tags_rejected():
    with pytest.raises(DomainError):
        Sphere2Space().distance(Point.sphere([1, 0, 0]), Point.euclidean(1.0, 0.0, 0.0))


@pytest.mark.parametrize("space_name", ["sphere", "hyperbolic"])
def test_metric_axioms(rng, space_name):
    space = Sphere2Space() if space_name == "sphere" else Hyperbolic2Space()
    sample = _random_sphere if space_name == "sphere" else _random_hyperbolic
    pts = sample(rng, 300)
    for x, y, z in zip(pts[::3], pts[1::3], pts[2::3]):
        assert space.distance(x, y) == pytest.approx(space.distance(y, x), abs=1e-12)
        assert space.distance(x, z) <= space.distance(x, y) + space.distance(y, z) + 1e-12


# -------------------
# exp / log / transport
# -------------------

def test_euclidean_exp_log_are_flat():
    space = EuclideanSpace(2)
    x, y = Point.euclidean(1.0, 2.0), Point.euclidean(-1.0, 0.5)
    np.testing.assert_allclose(log_map(space, x, y).components, [-2.0, -1.5])
    assert exp_map(space, x, TangentVector(x, [0.5, 0.5])) == Point.euclidean(1.5, 2.5)


def test_sphere_exp_quarter_turn():
    space = Sphere2Space()
    x = Point.sphere([1, 0, 0])
    y = exp_map(space, x, TangentVector(x, [0.0, math.pi / 2, 0.0]))
    np.testing.assert_allclose(y.as_array(), [0, 1, 0], atol=1e-12)
    assert exp_map(space, x, TangentVector(x, np.zeros(3))) == x


def test_sphere_log_quarter_turn():
    space = Sphere2Space()
    v = log_map(space, Point.sphere([1, 0, 0]), Point.sphere([0, 1, 0]))
    np.testing.assert_allclose(v.components, [0, math.pi / 2, 0], atol=1e-12)


def test_sphere_log_antipodal_raises():
    with pytest.raises(NonUniqueGeodesicError):
        log_map(Sphere2Space(), Point.sphere([0, 0, 1]), Point.sphere([0, 0, -1]))


@pytest.mark.parametrize("space_name", ["sphere", "hyperbolic"])
def test_exp_log_inversion(rng, space_name):
    space = Sphere2Space() if space_name == "sphere" else Hyperbolic2Space()
    sample = _random_sphere if space_name == "sphere" else _random_hyperbolic
    pts = sample(rng, 400)
    for x, y in zip(pts[::2], pts[1::2]):
        v = log_map(space, x, y)
        assert space.distance(exp_map(space, x, v), y) <= 1e-10
        assert space.norm(v.components) == pytest.approx(space.distance(x, y), abs=1e-10)


def test_sphere_transport_keeps_geodesic_normal():
    space = Sphere2Space()
    x, y = Point.sphere([1, 0, 0]), Point.sphere([0, 1, 0])
    moved = parallel_transport(space, x, y, TangentVector(x, [0, 0, 1]))
    np.testing.assert_allclose(moved.components, [0, 0, 1], atol=1e-12)


@pytest.mark.parametrize("space_name", ["sphere", "hyperbolic"])
def test_transport_is_linear_isometry(rng, space_name):
    space = Sphere2Space() if space_name == "sphere" else Hyperbolic2Space()
    sample = _random_sphere if space_name == "sphere" else _random_hyperbolic
    pts = sample(rng, 100)
    for x, y in zip(pts[::2], pts[1::2]):
        frame = orthonormal_frame(space, x)
        v = TangentVector(x, frame @ rng.standard_normal(2))
        w = TangentVector(x, frame @ rng.standard_normal(2))
        pv, pw = parallel_transport(space, x, y, v), parallel_transport(space, x, y, w)
        assert inner(space, pv, pw) == pytest.approx(inner(space, v, w), abs=1e-10)


def test_geodesic_point_symmetric_selection():
    space = Sphere2Space()
    x, y = Point.sphere([1, 0, 0]), Point.sphere([0, 0.6, 0.8])
    a = geodesic_point(space, x, y, 0.3)
    b = geodesic_point(space, y, x, 0.7)
    assert space.distance(a, b) <= 1e-10


# -------------------
# Gasket
# -------------------

@pytest.mark.parametrize("n, vertices", [(0, 3), (1, 6), (2, 15), (3, 42)])
def test_gasket_vertex_counts(n, vertices):
    level = gasket_vertices(n)
    assert len(level.vertices) == vertices == 3 * (3 ** n + 1) // 2
    assert level.edge_length == Fraction(1, 2 ** n)


def test_gasket_level_one_edges():
    assert len(gasket_vertices(0).edges) == 3
    assert len(gasket_vertices(1).edges) == 9


def test_gasket_level_guard():
    with pytest.raises(LimitError):
        gasket_vertices(13)


def test_gasket_non_vertex_rejected():
    with pytest.raises(UnsupportedPointError):
        gasket_distance(gasket_corner(1), Point.gasket(Fraction(1, 3), 0))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_gasket_recursive_metric_matches_graph(n):
    level = gasket_vertices(n)
    hops = gasket_graph_distances(n)
    for i, a in enumerate(level.vertices):
        for j, b in enumerate(level.vertices):
            assert gasket_distance(a, b) == hops[i, j] * level.edge_length


@pytest.mark.parametrize("i", [1, 2, 3])
def test_gasket_scaling_identity(i):
    vertices = gasket_vertices(3).vertices
    for a in vertices[::3]:
        for b in vertices:
            assert gasket_distance(a, b) == 2 * gasket_distance(psi(i, a), psi(i, b))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_gasket_cell_membership_from_distances(n):
    p2_side = [w for w in gasket_vertices(n).vertices if w.coords[0] > 1 - w.coords[0] - w.coords[1]]
    assert p2_side
    for w in p2_side:
        predicted = gasket_cell_by_distances(w)
        cells = gasket_cells(w)
        assert predicted[2] == (2 in cells)
        assert predicted[3] == (3 in cells)


def test_gasket_planar_corners():
    assert gasket_planar(gasket_corner(2)) == pytest.approx((1.0, 0.0))
    assert gasket_planar(gasket_corner(3)) == pytest.approx((0.5, math.sqrt(3) / 2))


# -------------------
# Metric graphs
# -------------------

def test_eight_distance_through_glue(eight_space):
    assert eight_space.distance(eight_space.vertex("o1"), eight_space.vertex("o2")) == 1


def test_star_tree_distances(tree_space):
    assert tree_space.distance(tree_space.vertex("p11"), tree_space.vertex("p22")) == 4
    assert tree_space.distance(tree_space.vertex("p0"), tree_space.vertex("p0")) == 0


def test_graph_point_endpoints_collapse(tree_space):
    assert tree_space.point(3, 0) == tree_space.vertex("p1")
    assert tree_space.point(3, 1) == tree_space.vertex("p11")
    with pytest.raises(DomainError):
        tree_space.point(3, Fraction(3, 2))


def test_gasket_cell_membership_needs_p2_side():
    with pytest.raises(DomainError):
        gasket_cell_by_distances(gasket_corner(1))


def test_graph_space_distances_are_exact():
    eight = graph_space(eight_topology())
    a, b = eight.point(0, Fraction(1, 4)), eight.point(0, Fraction(3, 4))
    assert eight.distance(a, b) == Fraction(1, 4)
    assert eight.distance(a, eight.vertex("o2")) == Fraction(7, 8)

    tree = graph_space(star_tree_topology())
    assert tree.name == "star_tree"
    assert tree.distance(tree.vertex("p11"), tree.vertex("p12")) == 2
    with pytest.raises(DomainError):
        tree.vertex("p4")
