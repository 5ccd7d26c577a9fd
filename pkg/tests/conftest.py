import warnings

import numpy as np
import pytest

from hypns import solver as sv
from hypns.spectral import ModelParams, resample

_ACCEPTANCE_LINES = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_quadrature():
    from scipy.integrate import IntegrationWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        yield


@pytest.fixture(scope="session")
def tg32():
    """Taylor-Green at alpha = 5/4 on 32^3, t in [0, 0.1], saved every 5 steps."""
    P = ModelParams(1.25, grid_n=32)
    return sv.run(sv.SolverConfig(P, 1e-3, 0.1, save_every=5), sv.taylor_green(P))


@pytest.fixture(scope="session")
def tg16():
    P = ModelParams(1.25, grid_n=16)
    return sv.run(sv.SolverConfig(P, 2e-3, 0.1, save_every=5), sv.taylor_green(P))


@pytest.fixture(scope="session")
def random16():
    """Band-limited random data at alpha = 1.15 on 16^3 up to t = 0.15."""
    P = ModelParams(1.15, grid_n=16)
    u0 = sv.random_band_limited(P, kmax=2, seed=1)
    return sv.run(sv.SolverConfig(P, 5e-3, 0.15, save_every=1), u0)


@pytest.fixture(scope="session")
def convergence_pair():
    """Same band-limited data integrated on 32^3 and 64^3 to t = 0.05."""
    P32 = ModelParams(1.25, grid_n=32)
    P64 = P32.with_(grid_n=64)
    u32 = sv.random_band_limited(P32, kmax=3, seed=1)
    t32 = sv.run(sv.SolverConfig(P32, 1e-3, 0.05, save_every=10), u32)
    t64 = sv.run(sv.SolverConfig(P64, 1e-3, 0.05, save_every=10), resample(u32, P64))
    return t32, t64


@pytest.fixture(scope="session")
def linear16():
    """Stokes-type run (advection switched off) from random data."""
    P = ModelParams(1.2, grid_n=16)
    u0 = sv.random_band_limited(P, kmax=4, seed=3)
    return sv.run(sv.SolverConfig(P, 1e-2, 0.2, save_every=2, nonlinear=False), u0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
