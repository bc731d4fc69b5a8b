"""Weights, cancellation and tube geometry on a zero-drift context with constant stress and current."""
import math

import numpy as np
import pytest

from eulerci import perturbation as PT
from eulerci.fields import Grid, TimeSeries
from eulerci.iteration import _profiles
from eulerci.params import SchedulerConfig, level_params
from eulerci.transport import backward_flow_slab

N = 16


@pytest.fixture(scope="module")
def ctx(table):
    lp = level_params(SchedulerConfig(), 0)
    tau, dt = lp.tau_q, lp.tau_q / 16
    t0 = -3 * tau
    nt = int(round(10 * tau / dt)) + 1
    d = lp.delta_q1
    R = np.zeros((nt, 6, N, N, N))
    R[:, 0], R[:, 3], R[:, 5] = 0.05 * d, -0.02 * d, 0.03 * d
    phi = np.zeros((nt, 3, N, N, N))
    phi[:, 1] = 0.1 * d ** 1.5
    v = TimeSeries(t0, dt, np.zeros((nt, 3, N, N, N)))
    flows = {m: backward_flow_slab(v, m, tau) for m in range(-2, 6)}
    return PT.make_context(lp, table, flows, TimeSeries(t0, dt, R), TimeSeries(t0, dt, phi),
                           profiles=_profiles(table))


def test_context_geometry(ctx):
    assert ctx.r0 == min(ctx.table.d0 / 4, ctx.table.eta / 10)
    assert [m for m, _ in ctx.active(0.5 * ctx.tau)] == [0]
    assert len(ctx.active(0.0)) == 2
    sh = ctx.shifts
    assert not sh.get(-2, (0, 0, 0)).any()
    assert all(np.linalg.norm(z) <= sh.d0 / 4 + 1e-15 for z in sh.z.values())
    assert sh.min_separation() >= sh.eta


def test_cancellation_on_grid(ctx):
    times = [k * ctx.tau / 16 for k in (-3, 0, 2, 8, 17, 30)]
    r = PT.cancellation_sweep(ctx, Grid(N), times)
    assert r["pass"], r
    assert r["distinct_evaluations"] <= r["times"]


def test_cancellation_off_grid(ctx):
    pts = np.random.default_rng(0).uniform(-math.pi, math.pi, (3000, 3))
    for t in (2 * ctx.tau / 16, 8 * ctx.tau / 16, 17 * ctx.tau / 16):
        r = PT.cancellation_residual(ctx, t, pts)
        assert r["R"] <= 1e-8 * ctx.delta and r["phi"] <= 1e-8 * ctx.delta ** 1.5


@pytest.fixture(scope="module")
def probes(ctx):
    t = 0.5 * ctx.tau
    pts = PT.tube_probes(ctx, t, 0, [(0, 0, 0), (1, 2, 0), (5, 3, 7)])
    return t, pts


def test_probes_land_in_tubes(ctx, probes):
    t, pts = probes
    pcs = PT.pieces_at(ctx, t, pts, 0)
    covered = np.unique(np.concatenate([p.idx for p in pcs]))
    assert len(covered) == len(pts)


def test_divergence_and_potential(ctx, probes):
    t, pts = probes
    r = PT.probe_checks(ctx, t, pts)
    assert r["covered"] == r["points"]
    assert r["div_ratio"] <= 1e-8
    assert r["rel_curl_mismatch"] <= 1e-8
    assert r["max_owners"] == 1 and r["max_pair_product"] == 0.0


def test_flip_changes_only_stress_weights(ctx, probes):
    import dataclasses
    t, pts = probes
    flipped = dataclasses.replace(ctx, flip=frozenset({0}))
    a = {(p.kind, p.cls, p.k, tuple(p.idx)): p.w_o for p in PT.pieces_at(ctx, t, pts, 0)}
    b = {(p.kind, p.cls, p.k, tuple(p.idx)): p.w_o for p in PT.pieces_at(flipped, t, pts, 0)}
    assert a.keys() == b.keys()
    for key in a:
        if key[0] == "R":
            assert np.array_equal(a[key], -b[key])
        else:
            assert np.array_equal(a[key], b[key])


def test_coefficient_tables_keep_vanishing(ctx, probes):
    t, pts = probes
    tabs = PT.coeff_tables(ctx, K_max=2, tail_tol=1.0)
    out = tabs.evaluate(t, pts[:8])
    assert out["vanishing_ok"]
    for key, mc in tabs.coeffs.items():
        assert not np.any(mc.k @ np.array(ctx.profiles[key].fp))


@pytest.mark.slow
def test_tube_quadrature_matches_mean_field(ctx):
    t = 0.5 * ctx.tau
    tl = PT.tube_l2(ctx, t, 0, nodes=12)
    mf = PT.mean_field_l2(ctx, t, 0, n=32)
    assert tl["integral"] == pytest.approx(mf, rel=0.02)
