import math
from fractions import Fraction

import numpy as np
import pytest

from errors import DomainError, NoReflectionError, UnsupportedError
from models.point_models import Point
from models.structure_models import Side
from service.reflection_service import (
    bisector_residuals,
    build_structure,
    eight_alternate_structure,
    gasket_mirror_rigidity,
    h_equidistance_residual,
    reflect,
    sample_h_points,
    side,
    torus_bisector,
)
from service.spaces_service import (
    CircleSpace,
    EuclideanSpace,
    FlatTorusSpace,
    GasketSpace,
    Hyperbolic2Space,
    Sphere2Space,
    eight_coordinate,
    eight_point,
    gasket_corner,
    gasket_vertices,
    psi,
)


def _continuous_structures():
    s = math.sinh(0.5)
    return [
        build_structure(EuclideanSpace(2), Point.euclidean(-0.5, 0.2), Point.euclidean(0.5, 0.2)),
        build_structure(CircleSpace(), Point.circle(0.1), Point.circle(0.4)),
        build_structure(FlatTorusSpace(), Point.torus(1 / 3, 0.2), Point.torus(0.0, 0.2)),
        build_structure(Sphere2Space(), Point.sphere([0.8, 0.6, 0.0]), Point.sphere([0.8, -0.6, 0.0])),
        build_structure(Hyperbolic2Space(), Point.hyperbolic([math.cosh(0.5), s, 0.0]),
                        Point.hyperbolic([math.cosh(0.5), -s, 0.0])),
    ]


def _random_points(space, rng, n):
    if isinstance(space, EuclideanSpace):
        return [Point.euclidean(*row) for row in rng.normal(size=(n, space.dim))]
    if isinstance(space, CircleSpace):
        return [Point.circle(u) for u in rng.random(n)]
    if isinstance(space, FlatTorusSpace):
        return [Point.torus(*row) for row in rng.random((n, 2))]
    if isinstance(space, Sphere2Space):
        return [Point.sphere(row, normalize=True) for row in rng.normal(size=(n, 3))]
    return [Point.hyperbolic([0.0, *row], normalize=True) for row in rng.uniform(-1, 1, size=(n, 2))]


@pytest.mark.parametrize("structure", _continuous_structures(), ids=lambda s: s.space.name)
def test_continuous_reflection_is_isometric_involution(structure, rng):
    space = structure.space
    pts = _random_points(space, rng, 200)
    for x, y in zip(pts[::2], pts[1::2]):
        assert space.distance(reflect(structure, reflect(structure, x)), x) <= 1e-12
        rx, ry = reflect(structure, x), reflect(structure, y)
        assert space.distance(rx, ry) == pytest.approx(space.distance(x, y), abs=1e-12)


@pytest.mark.parametrize("structure", _continuous_structures(), ids=lambda s: s.space.name)
def test_side_swaps_under_reflection(structure, rng):
    assert side(structure, structure.x1) == Side.X1
    assert side(structure, structure.x2) == Side.X2
    for x in _random_points(structure.space, rng, 100):
        s = side(structure, x)
        assert side(structure, reflect(structure, x)) == s.swapped()


@pytest.mark.parametrize("structure", _continuous_structures(), ids=lambda s: s.space.name)
def test_points_equidistant_from_h(structure, rng):
    h_points = sample_h_points(structure, 200, rng)
    assert all(side(structure, h) == Side.H for h in h_points)
    for x in _random_points(structure.space, rng, 20):
        assert h_equidistance_residual(structure, x, h_points) <= 1e-12


def test_euclidean_line_reflects_across_origin():
    structure = build_structure(EuclideanSpace(1), Point.euclidean(-0.5), Point.euclidean(0.5))
    assert reflect(structure, Point.euclidean(0.3)) == Point.euclidean(-0.3)
    assert side(structure, Point.euclidean(0.0)) == Side.H


def test_hyperbolic_reflection_flips_first_spatial_coordinate():
    s = math.sinh(0.5)
    structure = build_structure(Hyperbolic2Space(), Point.hyperbolic([math.cosh(0.5), s, 0.0]),
                                Point.hyperbolic([math.cosh(0.5), -s, 0.0]))
    z = Point.hyperbolic([0.0, 0.4, -0.7], normalize=True)
    np.testing.assert_allclose(reflect(structure, z).as_array(), z.as_array() * [1, -1, 1], atol=1e-12)


def test_equal_points_rejected():
    with pytest.raises(DomainError):
        build_structure(CircleSpace(), Point.circle(0.2), Point.circle(0.2))


# -------------------
# Torus
# -------------------

def test_torus_offset_pair_has_no_reflection():
    with pytest.raises(NoReflectionError) as info:
        build_structure(FlatTorusSpace(), Point.torus(1 / 3, 0.0), Point.torus(0.0, 1 / 5))
    assert info.value.witness.case == "singular_no_reflection"
    assert info.value.witness.singular


def test_torus_aligned_pair_reflects_across_two_circles():
    structure = build_structure(FlatTorusSpace(), Point.torus(1 / 3, 0.0), Point.torus(0.0, 0.0))
    assert structure.mirror.h_coordinates() == pytest.approx([1 / 6, 2 / 3])
    assert torus_bisector(1 / 3, 0.0).circles == pytest.approx([1 / 6, 2 / 3])


def test_torus_bisector_closed_form_point():
    geometry = torus_bisector(1 / 3, 1 / 5)
    assert geometry.points[0] == pytest.approx([-11 / 150, -3 / 10], abs=1e-12)
    assert geometry.segments == [[1, 2], [2, 3], [4, 5], [5, 6]]
    assert geometry.singular_vertices == ["z2", "z5"]


def test_torus_bisector_square_case_merges_kinks():
    geometry = torus_bisector(1 / 5, 1 / 5)
    # z2 and z5 name the same torus point
    diff = np.subtract(geometry.points[1], geometry.points[4]) % 1.0
    assert np.allclose(np.minimum(diff, 1.0 - diff), 0.0, atol=1e-12)
    assert geometry.singular_vertices == ["z2=z5"]


@pytest.mark.parametrize("a, b", [(1 / 3, 1 / 5), (0.4, 0.1), (0.45, 0.3), (0.5, 0.5), (0.5, 0.01)])
def test_torus_bisector_kinks_follow_the_pair(a, b):
    geometry = torus_bisector(a, b)
    expected = ["z2=z5"] if a == b else ["z2", "z5"]
    assert geometry.singular_vertices == expected


@pytest.mark.parametrize("a, b", [(1 / 3, 1 / 5), (1 / 5, 1 / 5), (0.4, 0.1), (1 / 3, 0.0), (0.45, 0.3)])
def test_torus_bisector_is_equidistant(a, b):
    assert max(bisector_residuals(torus_bisector(a, b), 1000)) <= 1e-12


@pytest.mark.parametrize("a, b", [(0.0, 0.0), (0.6, 0.1), (0.2, 0.3)])
def test_torus_bisector_domain(a, b):
    with pytest.raises(DomainError):
        torus_bisector(a, b)


# -------------------
# Graphs and gasket
# -------------------

def test_eight_reflection_moves_between_circles(eight_space):
    structure = build_structure(eight_space, eight_space.vertex("o1"), eight_space.vertex("o2"))
    x = eight_point(eight_space, 1, Fraction(3, 10))
    assert reflect(structure, x) == eight_point(eight_space, 2, Fraction(3, 10))
    assert side(structure, eight_space.vertex("g")) == Side.H


def test_eight_alternate_reflection(eight_space):
    structure = eight_alternate_structure(eight_space)
    x = eight_point(eight_space, 1, Fraction(3, 10))
    assert eight_coordinate(eight_space, reflect(structure, x)) == (2, Fraction(7, 10))
    assert reflect(structure, eight_space.vertex("g")) == eight_space.vertex("g")


def test_star_tree_fixed_branch_is_h(tree_space):
    structure = build_structure(tree_space, tree_space.vertex("p11"), tree_space.vertex("p22"))
    assert reflect(structure, tree_space.vertex("p12")) == tree_space.vertex("p21")
    for name in ("p0", "p3", "p31", "p32"):
        assert side(structure, tree_space.vertex(name)) == Side.H
    assert side(structure, tree_space.point(2, Fraction(1, 2))) == Side.H
    assert side(structure, tree_space.point(3, Fraction(1, 2))) == Side.X1


def test_star_tree_reflection_is_isometry(tree_space):
    structure = build_structure(tree_space, tree_space.vertex("p11"), tree_space.vertex("p22"))
    pts = [tree_space.point(e, Fraction(k, 4)) for e in range(9) for k in range(1, 4)]
    for x in pts[::3]:
        for y in pts:
            assert tree_space.distance(reflect(structure, x), reflect(structure, y)) == tree_space.distance(x, y)


def test_graph_pair_outside_offered_structures(tree_space):
    with pytest.raises(UnsupportedError):
        build_structure(tree_space, tree_space.vertex("p11"), tree_space.vertex("p12"))


def test_gasket_axis_through_third_corner():
    structure = build_structure(GasketSpace(), gasket_corner(1), gasket_corner(2))
    assert side(structure, gasket_corner(3)) == Side.H
    assert side(structure, psi(1, gasket_corner(2))) == Side.H
    for p in gasket_vertices(3).vertices:
        assert reflect(structure, reflect(structure, p)) == p
        assert side(structure, reflect(structure, p)) == side(structure, p).swapped()


@pytest.mark.parametrize("n", [1, 2, 3])
def test_gasket_mirror_rigidity(n):
    assert gasket_mirror_rigidity(n) == []
