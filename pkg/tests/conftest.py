import numpy as np
import pytest

from blendrig.prior import default_prior
from blendrig.synth import IdentityCache, TemplateConfig, default_camera, make_template

# acceptance lines collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def template():
    return make_template(TemplateConfig())


@pytest.fixture(scope="session")
def small_template():
    # 260 vertices: small enough for the dense transfer oracle
    return make_template(TemplateConfig(resolution=300))


@pytest.fixture(scope="session")
def prior():
    return default_prior()


@pytest.fixture(scope="session")
def camera():
    return default_camera()


@pytest.fixture(scope="session")
def identity_cache(template):
    return IdentityCache(template)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
