import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from da_forge import config  # noqa: E402
from da_forge.construct import (  # noqa: E402
    inverse_system,
    make_mixed_params,
    make_pve_params,
    mixed_system,
    pve_system,
)


@pytest.fixture(scope="session")
def pinned():
    return config.pinned_defaults()


@pytest.fixture(scope="session")
def pve_params(pinned):
    c = pinned
    return make_pve_params(c.pve_n, c.pve_k, c.pve_delta, c.pve_kappa, c.pve_epsilon, c.pve_shape)


@pytest.fixture(scope="session")
def mixed_params(pinned):
    c = pinned
    return make_mixed_params(c.mixed_n, c.mixed_k, c.mixed_delta, c.mixed_kappa2, c.mixed_epsilon, c.mixed_shape)


@pytest.fixture(scope="session")
def f_sys(pve_params):
    return pve_system(pve_params)


@pytest.fixture(scope="session")
def g_sys(f_sys):
    return inverse_system(f_sys)


@pytest.fixture(scope="session")
def G_sys(mixed_params):
    return mixed_system(mixed_params)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
