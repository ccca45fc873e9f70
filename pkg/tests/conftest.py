import numpy as np
import pytest

from cyclefusion.ingest import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_synthetic():
    """Full 17-sensor manifest, 12 cycles, one informative channel."""
    return generate_synthetic(SyntheticSpec(cycles=12, sensors=17, informative_sensors=1,
                                            amplitude=2.0, noise_sigma=0.5, seed=3))


@pytest.fixture(scope="session")
def separable():
    """Two channels, the first strongly class-dependent."""
    return generate_synthetic(SyntheticSpec(cycles=100, sensors=2, informative_sensors=1,
                                            amplitude=5.0, noise_sigma=0.2, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, collected by tests/test_acceptance.py and
# shown at the end of the run whether or not output capture is on.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
