import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ismd import gen_global_plus_local, gen_localized_field

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_psd(n, r, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, r))
    return X @ X.T


@pytest.fixture(scope="session")
def desk():
    """48x48 localized fixture, K = 18, certified on 12x12 and 6x6 patches."""
    return gen_localized_field((48, 48), seed=0)


@pytest.fixture(scope="session")
def small_field():
    """Cheap 24x24 fixture for unit tests."""
    cfg = {"n_channels": 3, "n_inclusions": 3, "face": False,
           "certify": [(6, 6), (3, 3)], "identifiable": [(3, 3)]}
    return gen_localized_field((24, 24), cfg, seed=1)


@pytest.fixture(scope="session")
def global_field():
    return gen_global_plus_local((48, 48), seed=0)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion.

    Returns ``report(number, passed, detail)``; the lines are printed right
    away and repeated in the terminal summary.
    """
    store = request.config.stash.setdefault(ACCEPTANCE, {})

    def report(number, passed, detail=""):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        store[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(store):
        terminalreporter.write_line(store[k])
