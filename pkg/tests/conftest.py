import os

import numpy as np
import pytest
from fastapi.testclient import TestClient
from sqlalchemy.pool import StaticPool
from sqlmodel import Session, SQLModel, create_engine

from app.core.dataset import validate_dataset
from app.core.database import get_session

RUN_SLOW = os.getenv("TSCI_RUN_SLOW") == "1"


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="Monte Carlo check; set TSCI_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def make_iv_data(rng, n=300, beta=1.0, violation=0.0, rho=0.5, p_x=2):
    z = rng.standard_normal((n, 1))
    x = rng.standard_normal((n, p_x))
    errors = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=n)
    d = z[:, 0] + z[:, 0] ** 2 + 0.3 * x.sum(axis=1) + errors[:, 0]
    y = beta * d + violation * z[:, 0] + 0.2 * x.sum(axis=1) + errors[:, 1]
    return validate_dataset(y, d, z, x)


@pytest.fixture
def iv_data(rng):
    return make_iv_data(rng)


@pytest.fixture(name="session")
def session_fixture():
    engine = create_engine(
        "sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool
    )
    from app.core import models  # noqa: F401

    SQLModel.metadata.create_all(engine)
    with Session(engine) as session:
        yield session


@pytest.fixture(name="client")
def client_fixture(session, tmp_path, monkeypatch):
    from app.core import config as settings
    from app.main import app

    monkeypatch.setattr(settings, "UPLOAD_DIR", str(tmp_path / "uploads"))

    def get_session_override():
        return session

    app.dependency_overrides[get_session] = get_session_override
    # No lifespan: TestClient is not used as a context manager, so no scheduler starts
    client = TestClient(app)
    yield client
    app.dependency_overrides.clear()
