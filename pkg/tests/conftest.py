import warnings
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quiet():
    """Silence package warnings inside a test body."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


_ACCEPTANCE: dict[int, tuple[str, bool]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion.

    Usage: ``with criterion(3, "ETDRS pipeline"): ...``. A criterion split
    across several tests passes only if all of them pass.
    """
    @contextmanager
    def record(number: int, title: str):
        ok = False
        try:
            yield
            ok = True
        finally:
            prev = _ACCEPTANCE.get(number, (title, True))[1]
            _ACCEPTANCE[number] = (title, prev and ok)
            print(f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} ({title}): {'PASS' if ok else 'FAIL'}")
