import math

import numpy as np
import pytest

from eulerci import errors
from eulerci.fields import Grid, TimeSeries, lp_symbol


def test_ddt4_constant_in_time_is_exactly_zero():
    rng = np.random.default_rng(1)
    data = np.broadcast_to(rng.normal(size=(3, 8, 8, 8)), (7, 3, 8, 8, 8))
    assert not errors.ddt4(data, 1e-7, 3).any()


def test_ddt4_is_fourth_order():
    errs = []
    for dt in (0.1, 0.05):
        t = dt * np.arange(9)
        data = np.sin(t)[:, None]
        errs.append(abs(errors.ddt4(data, dt, 4)[0] - math.cos(t[4])))
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.1)


def test_ddt4_needs_neighbours():
    with pytest.raises(IndexError):
        errors.ddt4(np.zeros((5, 1)), 1.0, 1)


def test_inverse_divergence_rejects_mean():
    f = np.ones((3, 8, 8, 8))
    with pytest.raises(errors.AssemblyError):
        errors.R_vec(f, "const")
    with pytest.raises(errors.AssemblyError):
        errors.R_scal(np.ones((1, 8, 8, 8)), "const")


def test_q_commutator_vanishes_below_cutoff():
    # v has frequency 1 only, products frequency <= 2: both sit inside S = 1/ell = 4
    X = Grid(16).mesh()
    v = np.stack([np.sin(X[2]), np.cos(X[2]), 0 * X[0]])[None]
    Q = errors.q_commutator(TimeSeries(0.0, 1.0, v), 0.25)
    assert np.abs(Q.data).max() < 1e-13


def test_q_commutator_closed_form():
    # v = (sin 3y, sin 3y, 0): Q_1 = Q_2 = 3 sin 6y (1 - psi(6/4)) with frequency 3 passed whole
    X = Grid(32).mesh()
    v = np.stack([np.sin(3 * X[1]), np.sin(3 * X[1]), 0 * X[0]])[None]
    Q = errors.q_commutator(TimeSeries(0.0, 1.0, v), 0.25).data[0]
    want = 3 * np.sin(6 * X[1]) * (1 - lp_symbol(1.5))
    assert np.abs(Q[0] - want).max() < 1e-13 and np.abs(Q[1] - want).max() < 1e-13
    assert not np.abs(Q[2]).max() > 1e-14


def test_energy_loss_check_balance():
    n, nt, dt = 16, 9, 0.1
    t0 = -4 * dt
    t = t0 + dt * np.arange(nt)
    a = np.sqrt(1 - 0.1 * t)   # mean |v|^2/2 = a^2/4 with v = a (sin x3, 0, 0)
    X = Grid(n).mesh()
    v = np.zeros((nt, 3, n, n, n))
    v[:, 0] = a[:, None, None, None] * np.sin(X[2])
    E = 2 * (a ** 2 / 4 - 0.25)
    rep = errors.energy_loss_check(TimeSeries(t0, dt, v), E, dE=np.full(nt, -0.05))
    assert rep["max_balance_error"] < 1e-14
    assert rep["E_nonincreasing"] and rep["dE_nonpositive"]
    assert rep["E_at_0"] == pytest.approx(0.0, abs=1e-15)
