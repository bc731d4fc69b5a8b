import math

import numpy as np
import pytest

from eulerci.fields import Grid, ResolutionError, div_vec, c_norm_arr
from eulerci.mikado import (CoefficientTailError, ProfileError, build_profile, fourier_coeffs, hankel_b,
                            max_radius, synth_U, unit_moment, unit_moment_cartesian)
from eulerci.shifts import PeriodizedLine, line_distance, transverse_frame


@pytest.mark.parametrize("kind", ["Reynolds", "Current"])
@pytest.mark.parametrize("f", [(1, 1, 0), (1, 2, 0), (2, -1, 3)])
def test_moment_targets(kind, f):
    p = build_profile(kind, f, 0.04)
    assert abs(p.moments[0]) <= 1e-10
    if kind == "Reynolds":
        assert p.moments[1] == pytest.approx(1.0, abs=1e-8)
        assert abs(p.moments[2]) <= 1e-8
    else:
        assert p.moments[2] == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("kind,p", [("Reynolds", 2), ("Current", 2), ("Current", 3)])
def test_unit_moments_against_cartesian_rule(kind, p):
    assert unit_moment(kind, p) == pytest.approx(unit_moment_cartesian(kind, p), rel=1e-9)


def test_support_radius_limits():
    with pytest.raises(ProfileError):
        build_profile("Reynolds", (1, 0, 0), 0.5, d0=0.4, eta=0.2)
    with pytest.raises(ProfileError):
        build_profile("Reynolds", (1, 1, 0), max_radius((1, 1, 0)) * 1.01)
    with pytest.raises(ValueError):
        build_profile("Other", (1, 0, 0), 0.1)


def test_support_is_exact():
    p = build_profile("Reynolds", (1, 2, 0), 0.3)
    rng = np.random.default_rng(0)
    Y = rng.uniform(-math.pi, math.pi, (20000, 3))
    psi = p.psi(Y)
    inside = p.support_mask(Y)
    assert np.all(psi[~inside] == 0)
    assert np.any(psi[inside] != 0)
    # independent: distance from the periodized axis through the origin
    axis = PeriodizedLine(p.f)
    for y in Y[psi != 0][:200]:
        assert line_distance(axis, PeriodizedLine(p.f, tuple(y))) < p.r0


def test_synth_is_divergence_free_and_periodic_in_shift():
    p = build_profile("Reynolds", (1, 0, 0), 2.5)
    g = Grid(64)
    U = synth_U(p, 1, (0.1, 0.2, 0.3), g, tail_tol=1e-2)
    assert np.abs(div_vec(U)).max() <= 1e-9 * c_norm_arr(U, 1)
    lam = 2
    p2 = build_profile("Reynolds", (1, 0, 0), 1.2)
    a = synth_U(p2, lam, (0.1, 0.2, 0.3), g, tail_tol=1.0)
    b = synth_U(p2, lam, (0.1 + math.pi, 0.2, 0.3 - math.pi), g, tail_tol=1.0)
    assert np.abs(a - b).max() < 1e-12


def test_synth_resolution_error():
    p = build_profile("Reynolds", (1, 0, 0), 2.5)
    with pytest.raises(ResolutionError):
        synth_U(p, 1, (0, 0, 0), Grid(16))


@pytest.fixture(scope="module")
def coeffs():
    p = build_profile("Reynolds", (1, 2, 0), 0.6)
    return p, fourier_coeffs(p, K_max=10, tail_tol=1.0)


def test_vanishing_pattern(coeffs):
    p, c = coeffs
    assert not np.any(c.k @ np.array(p.fp))
    assert len(c.k) < 21 ** 3


def test_zero_modes_and_parseval(coeffs):
    p, c = coeffs
    i0 = int(np.nonzero(~c.k.any(axis=1))[0][0])
    assert abs(c.b[i0]) < 1e-12
    assert c.c[i0].real == pytest.approx(p.moment(2), abs=1e-12)


def test_parseval():
    p = build_profile("Reynolds", (1, 0, 0), 2.5)
    c = fourier_coeffs(p, K_max=32, tail_tol=1e-3)
    assert (np.abs(c.b) ** 2).sum() == pytest.approx(p.moment(2), rel=1e-3)


def test_current_d0():
    p = build_profile("Current", (1, 0, 0), 1.0)
    c = fourier_coeffs(p, K_max=4, tail_tol=1.0)
    i0 = int(np.nonzero(~c.k.any(axis=1))[0][0])
    assert c.d[i0].real == pytest.approx(1.0, abs=1e-10)


def test_against_hankel_oracle(coeffs):
    p, c = coeffs
    e1, e2, _ = transverse_frame(p.fp)
    sel = np.linalg.norm(c.k, axis=1) <= 4
    kp = np.stack([c.k[sel] @ e1, c.k[sel] @ e2], -1)
    assert np.abs(hankel_b(p, kp) - c.b[sel]).max() < 1e-9


def test_tail_error():
    p = build_profile("Reynolds", (1, 1, 0), 0.05)
    with pytest.raises(CoefficientTailError):
        fourier_coeffs(p, K_max=2, tail_tol=1e-8)
