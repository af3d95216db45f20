import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pdmix import deduplicate, sample_covariance, support_from_data
from pdmix.datasets import load_iris, load_mortality
from pdmix.synthetic import generate_synthetic

settings.register_profile(
    "pdmix", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("pdmix")

# criterion number -> list of (description, passed)
ACCEPTANCE = {}


def record(criterion, passed, detail=""):
    ACCEPTANCE.setdefault(criterion, []).append((detail, bool(passed)))
    return passed


@pytest.fixture(scope="session")
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[k]
        ok = all(p for _, p in checks)
        failed = [d for d, p in checks if not p]
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} ({len(checks)} checks)"
        if failed:
            line += " failing: " + "; ".join(failed)
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def iris():
    raw = load_iris()
    data = deduplicate(raw)
    return raw, data, sample_covariance(raw), support_from_data(data)


@pytest.fixture(scope="session")
def simulated():
    raw, truth = generate_synthetic(seed=0)
    data = deduplicate(raw)
    return raw, data, sample_covariance(raw), support_from_data(data), truth


@pytest.fixture(scope="session")
def mortality():
    return deduplicate(load_mortality())


def random_instance(rng, m, d, max_count=5):
    """Strictly positive likelihood matrix and counts."""
    F = rng.uniform(0.05, 1.0, size=(m, d))
    counts = rng.integers(1, max_count + 1, size=d).astype(float)
    return F, counts


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
