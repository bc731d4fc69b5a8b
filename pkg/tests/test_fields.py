import math

import numpy as np
import pytest

from eulerci.fields import (Grid, PeriodicField, TimeSeries, advective_derivative, c_norm, derivative, fd_time,
                            lp_band, lp_project_gt, lp_project_leq, lp_symbol, outer_product, pointwise_product,
                            refine, coarsen, spatial_average, tail_fraction, time_derivative, trace)


@pytest.fixture
def g32():
    return Grid(32)


def test_grid_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        Grid(48)
    with pytest.raises(ValueError):
        Grid(8)


def test_averages(g32):
    X = g32.mesh()
    assert spatial_average(PeriodicField(np.sin(X[0]))) == pytest.approx(0, abs=1e-16)
    assert spatial_average(PeriodicField(np.ones((32,) * 3))) == 1.0
    assert spatial_average(PeriodicField(np.stack([np.ones_like(X[0]), X[0] * 0, np.cos(X[1])]))).tolist() == \
        pytest.approx([1, 0, 0], abs=1e-16)


def test_derivative_of_trig(g32):
    X = g32.mesh()
    f = PeriodicField(np.sin(3 * X[0]) * np.cos(2 * X[2]))
    d = derivative(f, 1).values[0]
    assert np.abs(d - 3 * np.cos(3 * X[0]) * np.cos(2 * X[2])).max() < 1e-12


def test_c_norm_of_mode(g32):
    X = g32.mesh()
    f = PeriodicField(np.sin(4 * X[1]))
    assert c_norm(f, 0) == pytest.approx(1.0, abs=1e-12)
    assert c_norm(f, 1) == pytest.approx(4.0, rel=1e-12)
    assert c_norm(f, 2) == pytest.approx(16.0, rel=1e-12)


def test_lp_symbol_shape():
    s = np.linspace(0, 3, 301)
    m = lp_symbol(s)
    assert np.all(m[s <= 1] == 1) and np.all(m[s >= 2] == 0)
    assert np.all(np.diff(m) <= 0)


def test_lp_split_is_exact(g32):
    rng = np.random.default_rng(0)
    f = PeriodicField(rng.normal(size=(32, 32, 32)))
    lo, hi = lp_project_leq(f, 4), lp_project_gt(f, 4)
    assert np.abs((lo + hi).values - f.values).max() < 1e-12


def test_lp_bands_telescope(g32):
    rng = np.random.default_rng(1)
    f = PeriodicField(rng.normal(size=(32, 32, 32)))
    total = lp_project_leq(f, 1)
    for j in range(1, 5):
        total = total + lp_band(f, j)
    assert np.abs(total.values - lp_project_leq(f, 16).values).max() < 1e-12


def test_low_mode_passes_through_projection(g32):
    X = g32.mesh()
    f = PeriodicField(np.cos(X[0]))
    assert np.abs(lp_project_leq(f, 2).values - f.values).max() < 1e-14


def test_product_is_dealiased(g32):
    X = g32.mesh()
    a = PeriodicField(np.sin(10 * X[0]))
    b = PeriodicField(np.sin(12 * X[0]))
    p = pointwise_product(a, b).values[0]
    # the 22-mode is beyond 32 points; it must not alias onto the 10-mode or the 2-mode
    assert np.abs(p - 0.5 * np.cos(2 * X[0])).max() < 1e-12


def test_outer_product_and_trace(g32):
    X = g32.mesh()
    u = PeriodicField(np.stack([np.sin(X[1]), np.cos(X[2]), np.ones_like(X[0])]))
    s = outer_product(u, u)
    assert s.rank == "symtensor3"
    tr = trace(s).values[0]
    assert np.abs(tr - (np.sin(X[1]) ** 2 + np.cos(X[2]) ** 2 + 1)).max() < 1e-12


def test_refine_coarsen_roundtrip(g32):
    X = g32.mesh()
    a = np.sin(3 * X[0]) * np.cos(X[1])
    assert np.abs(coarsen(refine(a, 64), 32) - a).max() < 1e-13


def test_tail_fraction():
    X = Grid(32).mesh()
    assert tail_fraction(np.sin(X[0])) < 1e-30
    assert tail_fraction(np.sin(15 * X[0])) == pytest.approx(1.0)


def test_time_derivative_second_order():
    X = Grid(16).mesh()
    errs = []
    for dt in (0.02, 0.01):
        t = np.arange(11) * dt
        data = np.sin(3 * t)[:, None, None, None, None] * np.sin(X[0])[None, None]
        ts = TimeSeries(0.0, dt, data)
        d = time_derivative(ts, 0).values[0]
        errs.append(np.abs(d - 3 * np.sin(X[0])).max())
    assert errs[0] / errs[1] > 3.5


def test_fd_constant_data_is_exactly_zero():
    data = np.full((6, 1, 16, 16, 16), 0.1 + 0.2)
    for i in range(6):
        assert not np.any(fd_time(data, 1e-12, i))


def test_advective_derivative_of_translating_wave():
    n = 32
    X = Grid(n).mesh()
    c, dt = 0.5, 1e-3
    t = np.arange(9) * dt
    F = np.sin(X[0][None] - c * t[:, None, None, None])[:, None]
    v = np.zeros((9, 3, n, n, n))
    v[:, 0] = c
    D = advective_derivative(TimeSeries(0, dt, F), TimeSeries(0, dt, v))
    assert np.abs(D.data[4]).max() < 1e-6


def test_timeseries_index_and_rank():
    ts = TimeSeries(-1.0, 0.5, np.zeros((5, 3, 16, 16, 16)))
    assert ts.index_of(0.0) == 2
    assert ts.times[-1] == 1.0
    with pytest.raises(KeyError):
        ts.index_of(0.25)
    with pytest.raises(ValueError):
        TimeSeries(0, 1, np.zeros((2, 3, 16, 16, 16)), "scalar")
    assert TimeSeries(0, 1, np.zeros((2, 14, 16, 16, 16)), "raw").data.shape[1] == 14
