import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from foliab import fixtures

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def oracles():
    return json.loads((DATA / "oracles.json").read_text())


@pytest.fixture(scope="session")
def product():
    return fixtures.get("FIX-PRODUCT")


@pytest.fixture(scope="session")
def warp():
    return fixtures.get("FIX-WARP")


@pytest.fixture(scope="session")
def hopf():
    return fixtures.get("FIX-HOPF")


@pytest.fixture(scope="session")
def slope():
    return fixtures.get("FIX-SLOPE")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def box_points(fx, k, rng, shrink=1.0):
    box = np.asarray(fx.sample_box, dtype=float)
    mid, half = box.mean(axis=1), 0.5 * (box[:, 1] - box[:, 0]) * shrink
    return mid + half * rng.uniform(-1, 1, size=(k, box.shape[0]))


def pytest_terminal_summary(terminalreporter):
    import sys

    mods = [m for k, m in sys.modules.items() if k.endswith("test_acceptance")]
    results = getattr(mods[0], "RESULTS", {}) if mods else {}
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
