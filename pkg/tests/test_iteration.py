import math

import numpy as np
import pytest

from eulerci.iteration import (BifurcationUnavailable, StepOptions, pick_slab, prepare,
                               seed_shear, seed_zero)
from eulerci.params import ConfigError, SchedulerConfig, level_params
from eulerci.transport import WindowError

SHEAR = SchedulerConfig(alpha=0.14, b=1.1, lambda0=1e5, M=2.0, T=1.0, eta=1e-3, demo_mode=True)


def test_zero_seed_layout(zero_seed, demo_cfg):
    tau = level_params(demo_cfg, 0).tau_q
    assert zero_seed.q == 0 and zero_seed.n == 16
    assert zero_seed.dt == pytest.approx(tau / 16)
    lo, hi = zero_seed.window
    assert lo == pytest.approx(-3 * tau) and hi == pytest.approx(demo_cfg.T + 3 * tau)
    assert not zero_seed.E.any() and not zero_seed.dE.any()


def test_slice_keeps_everything_aligned(zero_seed):
    t = zero_seed.times
    s = zero_seed.slice(t[3], t[10])
    assert len(s.times) == 8 == len(s.E)
    assert all(len(ts) == 8 for ts in s.fields().values())


def test_seed_clock_must_divide_T(demo_cfg):
    with pytest.raises(ConfigError):
        seed_zero(demo_cfg.replace(T=demo_cfg.T * 1.01), divisor=16)


def test_shear_seed_energy_profile():
    cfg = SHEAR.replace(T=4 * level_params(SHEAR, 0).tau_q)
    sh = seed_shear(cfg, 4, divisor=16)
    lp = level_params(cfg, 0)
    i0 = int(np.argmin(np.abs(sh.times)))
    assert sh.E[i0] == 0.0 and np.all(np.diff(sh.E) < 0)
    # a(t)^2 / 2 = (1 - 2 delta_0^{1/2} + E) / 2 is the mean kinetic energy
    ke = 0.5 * (sh.v.data ** 2).sum(axis=1).mean(axis=(-3, -2, -1))
    assert np.allclose(ke, 0.5 * (1 - 2 * math.sqrt(lp.delta_q) + sh.E), rtol=1e-14)
    with pytest.raises(ConfigError):
        seed_shear(cfg, 6, n=16, divisor=16)


def test_pick_slab():
    assert pick_slab((0.5, 3.5), 1.0, 4.0) == 1
    assert pick_slab((1.0, 5.5), 1.0, 6.0) == 2
    for iv in ((0.5, 3.0), (-0.1, 3.5), (0.5, 4.5)):
        with pytest.raises(BifurcationUnavailable):
            pick_slab(iv, 1.0, 4.0)


def test_prepare_rejects_short_window(zero_seed, demo_cfg):
    cut = zero_seed.slice(zero_seed.times[40], zero_seed.times[-41])
    with pytest.raises(WindowError):
        prepare(cut, demo_cfg)


def test_demo_step_report(demo_step):
    new, rep = demo_step
    assert new.q == 1
    for key in ("level", "admissibility", "mollification", "flows", "shifts", "stress_norms",
                "current_norms", "cauchy", "probes", "cancellation", "inductive", "certification"):
        assert key in rep
    assert rep["certification"]["pass"] and rep["cancellation"]["pass"]
    assert max(rep["flows"].values()) <= 0.2
    # the bound uses the configured M; the measured constant is reported beside it
    dl = math.sqrt(rep["level"]["delta_q1"])
    assert rep["cauchy"]["bound"] == pytest.approx(rep["level"]["M"] * dl)
    assert rep["cauchy"]["M0_measured"] * dl == pytest.approx(rep["probes"]["w_C0"])
    assert rep["cauchy"]["on_tubes"] >= rep["probes"]["w_C0"] > 0


def test_demo_step_window(demo_step, demo_cfg):
    new, _ = demo_step
    tau = level_params(demo_cfg, 0).tau_q
    lo, hi = new.window
    assert lo == pytest.approx(-tau) and hi == pytest.approx(demo_cfg.T + tau)
    assert np.allclose(0.5 * (new.R.data[:, 0] + new.R.data[:, 1] + new.R.data[:, 2]), new.kappa.data[:, 0],
                       atol=1e-14)


def test_step_options_default():
    o = StepOptions()
    assert o.certify and o.sweep and o.probes and o.demo_mode
