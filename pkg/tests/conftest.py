import numpy as np
import pytest

from neumat import synthetic
from neumat.merl import SHAPE, MerlBrdf

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def phong50():
    return synthetic.tabulate(synthetic.phong([0.1, 0.12, 0.14], [0.3, 0.3, 0.3], 50.0), "phong50")


@pytest.fixture(scope="session")
def lambert():
    return synthetic.tabulate(synthetic.lambertian([0.5, 0.4, 0.3]), "lambert")


@pytest.fixture(scope="session")
def small_family():
    return [m for m, _ in synthetic.material_family(4, 11, prefix="fam")]


@pytest.fixture
def random_table():
    rng = np.random.default_rng(5)
    raw = rng.uniform(0.0, 3000.0, size=SHAPE + (3,))
    raw[rng.random(SHAPE) < 0.1] = -1.0
    return MerlBrdf(raw, "random")
