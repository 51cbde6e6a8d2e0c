"""Test fixtures for birthdeath tests."""

import pytest
import pytest_asyncio
from httpx import ASGITransport, AsyncClient

from birthdeath.app.models.rates import RateSpec, TailPolicy
from birthdeath.app.services import gallery_service


@pytest.fixture(scope="session")
def policy() -> TailPolicy:
    return TailPolicy.from_settings()


@pytest.fixture(scope="session")
def unit() -> RateSpec:
    """a_i = b_i = 1, natural boundary."""
    return gallery_service.load_chain("unit")


@pytest.fixture(scope="session")
def exit_chain() -> RateSpec:
    """a_i = 1, b_i = 2^i."""
    return gallery_service.load_chain("exit-geometric")


@pytest.fixture(scope="session")
def entrance_chain() -> RateSpec:
    """a_i = 2^i, b_i = 1."""
    return gallery_service.load_chain("entrance-geometric")


@pytest.fixture(scope="session")
def regular_chain() -> RateSpec:
    return gallery_service.load_chain("regular")


@pytest.fixture(scope="session")
def table_chain() -> RateSpec:
    return gallery_service.load_chain("table-ergodic-a")


@pytest.fixture(scope="session")
def entrance_dual(entrance_chain, policy):
    from birthdeath.app.services import duality_service

    return duality_service.build_dual(entrance_chain, policy)


@pytest_asyncio.fixture
async def client():
    from birthdeath.app.main import app

    async with AsyncClient(
        transport=ASGITransport(app=app), base_url="http://test"
    ) as c:
        yield c
