import math

import numpy as np
import pytest

from eulerci import jet as J
from eulerci.partition import active_slabs, candidate_cells, chi, chi_1d, partition_residual, theta, theta_prime


def test_sixth_powers_sum_to_one():
    r = partition_residual()
    assert r["theta"] < 1e-14 and r["chi"] < 1e-14


def test_theta_plateau_and_support():
    s = np.linspace(-0.5, 1.5, 2001)
    th = theta(s, 0)
    assert np.all(th[(s >= 1 / 8) & (s <= 7 / 8)] == 1)
    assert np.all(th[(s <= -1 / 8) | (s >= 9 / 8)] == 0)
    assert np.all((th >= 0) & (th <= 1))


def test_theta_prime_matches_difference_quotient():
    s = np.linspace(-0.1, 0.2, 31)
    h = 1e-6
    fd = (theta(s + h, 0, 2.0) - theta(s - h, 0, 2.0)) / (2 * h)
    assert np.abs(theta_prime(s, 0, 2.0) - fd).max() < 1e-5


def test_active_slabs():
    for s in np.linspace(-2, 3, 41):
        got = active_slabs(float(s))
        want = [m for m in range(-4, 6) if theta(float(s), m) > 0]
        assert got == want


def test_chi_cells():
    y = np.random.default_rng(0).uniform(-10, 10, (500, 3))
    cells = candidate_cells(y)
    tot = sum(chi(y, cells[c], 6.0) for c in range(8))
    assert np.abs(tot - 1).max() < 1e-13
    assert chi_1d(np.array([0.0]), 0)[0] == 1.0
    assert chi_1d(np.array([9 * math.pi / 8 + 1e-9]), 0)[0] == 0.0


def test_jet_derivative_through_chi():
    y = np.random.default_rng(1).uniform(-3, 3, (20, 3))
    n = np.zeros(3, int)
    g = np.zeros((20, 3, 3))
    g[:, 0, 0] = g[:, 1, 1] = g[:, 2, 2] = 1
    Y = J.Jet(y, g)
    val = chi(Y, n, 3.0)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (chi(y + e, n, 3.0) - chi(y - e, n, 3.0)) / (2 * h)
        assert np.abs(val.g[:, i] - fd).max() < 1e-5
