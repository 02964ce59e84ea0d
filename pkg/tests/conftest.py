import numpy as np
import pytest

from seqbilliards.config import load_table


@pytest.fixture(scope="session")
def finite3():
    return load_table("finite3")


@pytest.fixture(scope="session")
def packed3():
    return load_table("packed3")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance criterion: ``verdict(k, ok, **details)``."""
    results = request.config.stash[ACCEPTANCE]
    seen = []

    def record(k, ok, **details):
        results[k] = (bool(ok), details)
        seen.append(k)
        print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  " + ", ".join(f"{a}={b}" for a, b in details.items()))
        return ok

    yield record
    if not seen:
        results[request.node.name] = (False, {"error": "raised before reporting"})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[ACCEPTANCE]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results, key=lambda x: (isinstance(x, str), str(x).zfill(3))):
        ok, details = results[k]
        body = ", ".join(f"{a}={b}" for a, b in details.items())
        label = f"criterion {k:2d}" if isinstance(k, int) else k
        terminalreporter.write_line(f"{label}: {'PASS' if ok else 'FAIL'}  {body}")
