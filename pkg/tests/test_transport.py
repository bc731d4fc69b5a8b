import math

import numpy as np
import pytest

from eulerci.fields import Grid, TimeSeries
from eulerci.transport import (SpectralSampler, StepInstability, WindowError, backward_flow_slab, forward_flow,
                               moll_along_flow, mollifier_weights, rho)

N = 16


def _const(vals, nt=17, dt=0.01, t0=0.0):
    data = np.broadcast_to(np.asarray(vals, float)[None, :, None, None, None], (nt, 3, N, N, N)).copy()
    return TimeSeries(t0, dt, data)


def _shear(nt=33, dt=0.005, lam=2):
    x3 = Grid(N).mesh()[2]
    v = np.zeros((nt, 3, N, N, N))
    v[:, 0] = np.cos(lam * x3)
    v[:, 1] = np.sin(lam * x3)
    return TimeSeries(0.0, dt, v)


PTS = np.random.default_rng(0).uniform(-math.pi, math.pi, (40, 3))


def test_sampler_reproduces_trig_polynomial():
    X = Grid(N).mesh()
    f = np.sin(2 * X[0]) * np.cos(3 * X[1]) + np.cos(X[2])
    s = SpectralSampler(f)
    val, grad = s.evaluate(PTS, 1)
    x, y, z = PTS.T
    assert np.abs(val[:, 0] - (np.sin(2 * x) * np.cos(3 * y) + np.cos(z))).max() < 1e-13
    assert np.abs(grad[:, 0, 2] + np.sin(z)).max() < 1e-13


def test_zero_drift_identity():
    fm = forward_flow(_const([0, 0, 0]), 0.0, 0.1, PTS, with_gradient=True)
    assert np.array_equal(fm.positions[-1], PTS)
    assert fm.det_error() == 0.0


def test_constant_drift_translation():
    c = np.array([0.3, -0.2, 0.1])
    fm = forward_flow(_const(c), 0.0, 0.16, PTS, with_gradient=True)
    assert np.abs(fm.positions[-1] - (PTS + 0.16 * c)).max() < 1e-13
    assert fm.det_error() < 1e-13


def test_shear_closed_form():
    v = _shear()
    t1 = 32 * v.dt
    fm = forward_flow(v, 0.0, t1, PTS, with_gradient=True)
    x3 = PTS[:, 2]
    exact = PTS + t1 * np.stack([np.cos(2 * x3), np.sin(2 * x3), 0 * x3], -1)
    assert np.abs(fm.positions[-1] - exact).max() <= 1e-8
    assert fm.det_error() <= 1e-6


def test_semigroup():
    v = _shear()
    a = forward_flow(v, 0.0, 0.08, PTS)
    b = forward_flow(v, 0.08, 0.16, a.positions[-1])
    c = forward_flow(v, 0.0, 0.16, PTS)
    assert np.abs(b.positions[-1] - c.positions[-1]).max() < 1e-10


def test_window_and_instability():
    with pytest.raises(WindowError):
        forward_flow(_const([1, 0, 0]), 0.0, 1.0, PTS)
    X = Grid(N).mesh()
    v = np.zeros((5, 3, N, N, N))
    v[:, 0] = 400 * np.sin(X[1])
    with pytest.raises(StepInstability):
        forward_flow(TimeSeries(0.0, 0.01, v), 0.0, 0.04, PTS)


def test_backward_flow_constant_drift():
    c = np.array([0.2, 0.0, -0.1])
    v = _const(c, nt=41, dt=0.01, t0=-0.1)
    fl = backward_flow_slab(v, 0, 0.2)
    z, G = fl.grid_xi(0.0)
    assert np.abs(z).max() < 1e-15
    z, G = fl.grid_xi(0.2)
    assert np.abs(z + 0.2 * c[:, None, None, None]).max() < 1e-13
    assert fl.flow_bound()["max_id_minus_grad"] < 1e-12


def test_backward_inverts_forward():
    v = _shear(nt=41, dt=0.005)
    fl = backward_flow_slab(v, 0, 0.1, lo=0.0)
    t = 0.1
    fm = forward_flow(v, 0.0, t, PTS)
    xi, _ = fl.xi_jets(t, fm.positions[-1], 0)
    assert np.abs(xi - PTS).max() < 1e-6


def test_zero_drift_flow_is_flagged():
    fl = backward_flow_slab(_const([0, 0, 0], nt=41, t0=-0.1), 0, 0.2)
    assert fl.zero and fl.flow_bound()["max_id_minus_grad"] == 0.0


def test_mollifier_weights():
    offs, w = mollifier_weights(0.05, 0.01)
    assert w.sum() == pytest.approx(1.0)
    assert np.allclose(w, w[::-1])
    assert rho(np.array([1.0, -1.0, 2.0])).tolist() == [0, 0, 0]


def test_moll_static_field_unchanged():
    X = Grid(N).mesh()
    F = np.broadcast_to(np.sin(X[0])[None, None], (21, 1, N, N, N)).copy()
    out, rep = moll_along_flow(TimeSeries(0, 0.01, F), _const([0, 0, 0], nt=21), 0.05, 0.05, 0.15)
    assert np.abs(out.data - F[5:16]).max() < 1e-15
    assert not rep.clamped


def test_moll_linear_in_time_kept():
    t = 0.01 * np.arange(21)
    F = np.broadcast_to(t[:, None, None, None, None], (21, 1, N, N, N)).copy()
    out, _ = moll_along_flow(TimeSeries(0, 0.01, F), _shear(nt=21, dt=0.01), 0.05, 0.05, 0.15)
    assert np.abs(out.data[:, 0, 0, 0, 0] - t[5:16]).max() < 1e-13


def test_moll_window():
    F = TimeSeries(0, 0.01, np.zeros((11, 1, N, N, N)))
    v = _const([0, 0, 0], nt=11)
    with pytest.raises(WindowError):
        moll_along_flow(F, v, 0.05, 0.02, 0.08)
    _, rep = moll_along_flow(F, v, 0.05, 0.02, 0.08, clamp=True)
    assert rep.clamped and rep.delta_used == pytest.approx(0.02)


def test_moll_commutes_with_transport():
    # F transported by a constant drift plus a slow source: D_t(moll F) = moll(D_t F)
    c = np.array([0.5, 0.0, 0.0])
    X = Grid(N).mesh()
    dt, nt = 0.01, 41
    t = dt * np.arange(nt)
    F = np.sin(X[0][None] - c[0] * t[:, None, None, None]) * (1 + t[:, None, None, None] ** 2)
    DF = np.sin(X[0][None] - c[0] * t[:, None, None, None]) * 2 * t[:, None, None, None]
    v = _const(c, nt=nt, dt=dt)
    mF, _ = moll_along_flow(TimeSeries(0, dt, F[:, None]), v, 0.05, 0.1, 0.3)
    mDF, _ = moll_along_flow(TimeSeries(0, dt, DF[:, None]), v, 0.05, 0.1, 0.3)
    from eulerci.fields import advective_derivative
    D = advective_derivative(mF, TimeSeries(0.1, dt, v.data[10:31]))
    err = np.abs(D.data[4:-4] - mDF.data[4:-4]).max() / np.abs(mDF.data[4:-4]).max()
    assert err <= 1e-3
