import numpy as np
import pytest

from diffuserptycho.fields import ComplexField, Geometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def geom():
    return Geometry()


def random_field(rng, shape, pitch=0.5, wavelength=0.532):
    data = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return ComplexField(data, pitch, wavelength)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
