"""Shared fixtures. The demo step and its bifurcated twin are computed once per session."""
from __future__ import annotations

import pytest

from eulerci.geometry import default_table
from eulerci.iteration import StepOptions, bifurcated_step, seed_zero
from eulerci.models import RunConfig
from eulerci.params import level_params

# 16^3 with tau_0/16 keeps one full step under a minute
DEMO_N = 16
DEMO_DIVISOR = 16
BIFURCATION = (0.5, 3.5)       # in units of tau_0

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def demo_cfg():
    return RunConfig().scheduler()


@pytest.fixture(scope="session")
def table():
    return default_table()


@pytest.fixture(scope="session")
def zero_seed(demo_cfg):
    return seed_zero(demo_cfg, n=DEMO_N, divisor=DEMO_DIVISOR)


@pytest.fixture(scope="session")
def bifurcation(demo_cfg, zero_seed, table):
    """(seed, a, b, report); the unflipped branch a is the plain demo step."""
    tau = level_params(demo_cfg, 0).tau_q
    iv = (BIFURCATION[0] * tau, BIFURCATION[1] * tau)
    a, b, rep = bifurcated_step(zero_seed, demo_cfg, iv, StepOptions(), table)
    return zero_seed, a, b, rep


@pytest.fixture(scope="session")
def demo_step(bifurcation):
    _, a, _, rep = bifurcation
    return a, dict(rep["prepare"], **rep["step_a"])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
