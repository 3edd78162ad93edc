import numpy as np
import pytest

from models.chain_models import CycleRequest, EightRequest, GasketRequest, TreeRequest
from repos.result_storage_repo import ResultStorage
from service.chain_service import build_chain
from service.spaces_service import MetricGraphSpace, space_by_name


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cycle_chain():
    return build_chain(CycleRequest(m=4, laziness=0.5))


@pytest.fixture(scope="session")
def eight_chain():
    return build_chain(EightRequest(m=4))


@pytest.fixture(scope="session")
def tree_chain():
    return build_chain(TreeRequest(m=2))


@pytest.fixture(scope="session")
def gasket_chain():
    return build_chain(GasketRequest(n=2, axis_subdivision=True))


@pytest.fixture(scope="session")
def eight_space() -> MetricGraphSpace:
    return space_by_name("eight")


@pytest.fixture(scope="session")
def tree_space() -> MetricGraphSpace:
    return space_by_name("star_tree")


@pytest.fixture
def storage(tmp_path):
    return ResultStorage(str(tmp_path / "results"))
