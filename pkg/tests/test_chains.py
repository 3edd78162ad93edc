from fractions import Fraction

import numpy as np
import pytest
from pydantic import TypeAdapter, ValidationError

from errors import DomainError, ParityError
from models.chain_models import ChainRequest, CycleRequest, EightRequest, GasketRequest, TreeRequest
from models.point_models import Point
from models.structure_models import Side
from service.chain_service import build_chain, chain_distribution, chain_distributions


def test_cycle_laws(cycle_chain):
    assert [p.coords[0] for p in cycle_chain.states] == [0.0, 0.25, 0.5, 0.75]
    assert chain_distribution(cycle_chain, cycle_chain.x1, 1) == pytest.approx([0.5, 0.25, 0.0, 0.25])
    assert chain_distribution(cycle_chain, cycle_chain.x1, 2) == pytest.approx([0.375, 0.25, 0.125, 0.25])


def test_cycle_mirror_pair(cycle_chain):
    assert cycle_chain.states[cycle_chain.x2] == Point.circle(0.5)
    assert cycle_chain.sym[cycle_chain.x1] == cycle_chain.x2
    assert int(cycle_chain.h_mask.sum()) == 2


def test_cycle_needs_multiple_of_four():
    with pytest.raises(ParityError):
        build_chain(CycleRequest(m=6))


def test_eight_rejects_odd_m():
    with pytest.raises(ParityError):
        build_chain(EightRequest(m=3))


def test_eight_layout(eight_chain, eight_space):
    assert eight_chain.states[0] == eight_space.vertex("o1")
    assert eight_chain.states[1] == eight_space.vertex("o2")
    assert eight_chain.size == 7
    glue = eight_chain.state_of(eight_space.vertex("g"))
    assert len(eight_chain.neighbours(glue)) == 4
    assert eight_chain.h_mask[glue]


def test_tree_size_and_pair(tree_chain, tree_space):
    assert tree_chain.size == 19
    assert tree_chain.states[tree_chain.x1] == tree_space.vertex("p11")
    assert tree_chain.states[tree_chain.x2] == tree_space.vertex("p22")


def test_gasket_level_one_without_subdivision():
    chain = build_chain(GasketRequest(n=1, axis_subdivision=False))
    assert chain.size == 6
    p3 = chain.state_of(Point.gasket(0, 1))
    assert len(chain.neighbours(p3)) == 2
    assert len(chain.crossing_edges) == 1


def test_gasket_level_one_subdivides_axis_edge():
    chain = build_chain(GasketRequest(n=1))
    assert chain.size == 7
    mid = chain.state_of(Point.gasket(Fraction(1, 4), Fraction(1, 2)))
    assert chain.sides[mid] == Side.H
    assert chain.crossing_edges == ()


@pytest.mark.parametrize("fixture", ["cycle_chain", "eight_chain", "tree_chain", "gasket_chain"])
def test_chain_invariants(fixture, request):
    chain = request.getfixturevalue(fixture)
    sym = chain.sym
    assert np.allclose(chain.P.sum(axis=1), 1.0)
    assert np.all(sym[sym] == np.arange(chain.size))
    assert np.allclose(chain.P[np.ix_(sym, sym)], chain.P)
    assert np.all(sym[chain.h_mask] == np.flatnonzero(chain.h_mask))
    assert sym[chain.x1] == chain.x2
    for i in range(chain.size):
        side = chain.sides[i]
        if side == Side.X1:
            assert chain.sides[sym[i]] == Side.X2


@pytest.mark.parametrize("fixture", ["cycle_chain", "eight_chain", "tree_chain", "gasket_chain"])
def test_laws_are_mirror_images(fixture, request):
    chain = request.getfixturevalue(fixture)
    laws1 = chain_distributions(chain, chain.x1, 6)
    laws2 = chain_distributions(chain, chain.x2, 6)
    assert np.allclose(laws1[:, chain.sym], laws2)
    assert np.allclose(laws1.sum(axis=1), 1.0)


def test_laziness_on_diagonal():
    chain = build_chain(TreeRequest(m=1, laziness=0.25))
    assert np.allclose(np.diag(chain.P), 0.25)


def test_distribution_arguments_checked(cycle_chain):
    with pytest.raises(DomainError):
        chain_distribution(cycle_chain, cycle_chain.x1, -1)
    with pytest.raises(DomainError):
        chain_distribution(cycle_chain, 9, 1)


def test_chain_request_discriminator():
    adapter = TypeAdapter(ChainRequest)
    assert isinstance(adapter.validate_python({"kind": "tree", "m": 3}), TreeRequest)
    with pytest.raises(ValidationError):
        adapter.validate_python({"kind": "square"})
    with pytest.raises(ValidationError):
        adapter.validate_python({"kind": "cycle", "laziness": 1.0})


def test_describe(gasket_chain):
    info = gasket_chain.describe()
    assert info["name"] == "GasketChain(2, true)"
    assert info["states"] == gasket_chain.size
    assert info["x1"] == "(0,0)"
    assert info["x2"] == "(1,0)"
