import math

import pytest

from eulerci.params import (ConfigError, LevelUnreachable, SchedulerConfig, check_admissibility, lambda_at,
                            level_params, shear_window_ok)


def test_lambda_ceiling_example():
    cfg = SchedulerConfig(lambda0=10, b=1.5)
    assert level_params(cfg, 1).lambda_q == 32


def test_tau_minus_one_is_infinite():
    assert math.isinf(level_params(SchedulerConfig(), 0).tau_qm1)


def test_delta_zero():
    lp = level_params(SchedulerConfig(alpha=0.1, lambda0=10), 0)
    assert lp.delta_q == pytest.approx(10 ** -0.2, rel=1e-15)


@pytest.mark.parametrize("b", [1.1, 1.25, 1.5])
def test_schedule_invariants(b):
    cfg = SchedulerConfig(b=b, lambda0=8)
    prev = None
    for q in range(4):
        lp = level_params(cfg, q)
        assert lp.mu_inv % 3 == 0
        assert lp.lambda_q1 == lambda_at(cfg, q + 1) == math.ceil(cfg.lambda0 ** (b ** (q + 1)))
        if prev:
            assert lp.lambda_q > prev.lambda_q
            assert math.sqrt(lp.delta_q) * lp.lambda_q > math.sqrt(prev.delta_q) * prev.lambda_q
            assert lp.tau_q < prev.tau_q
            assert lp.tau_qm1 == pytest.approx(prev.tau_q, rel=1e-12)
        prev = lp


def test_demo_level_zero_values():
    lp = level_params(SchedulerConfig(), 0)
    assert lp.lambda_q == 8 and lp.lambda_q1 == 14
    assert lp.mu_inv == 12
    assert lp.tau_q == pytest.approx(4.76e-7, rel=2e-3)
    assert lp.gamma == pytest.approx(0.0625)


def test_n0_formula():
    lp = level_params(SchedulerConfig(alpha=0.1, b=1.25), 0)
    assert lp.n0 == math.ceil(2 * 1.25 * 2.1 / (0.25 * 0.9))


@pytest.mark.parametrize("kw", [dict(alpha=0.5), dict(alpha=0), dict(b=1.0), dict(lambda0=1.0),
                                dict(T=0), dict(eta=-1), dict(M=0.5)])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        SchedulerConfig(**kw)


def test_unreachable_level():
    with pytest.raises(LevelUnreachable):
        level_params(SchedulerConfig(lambda0=1e6, b=1.5), 12)


def test_admissibility_zero_velocity_passes():
    rep = check_admissibility(level_params(SchedulerConfig(), 0), 0.0)
    assert rep.status == "pass"


def test_admissibility_gradient_condition():
    lp = level_params(SchedulerConfig(), 0)
    rep = check_admissibility(lp, 0.2 / lp.tau_q)
    bad = [c.name for c in rep.conditions if not c.ok]
    assert rep.status == "fail" and "tau*|grad v|<=1/10" in bad


def test_admissibility_demo_downgrades():
    lp = level_params(SchedulerConfig(), 0)
    rep = check_admissibility(lp, 0.2 / lp.tau_q, demo_mode=True)
    assert rep.status == "warn"
    assert rep.to_dict()["conditions"][1]["margin"] < 0


def test_shear_window():
    ok, _ = shear_window_ok(SchedulerConfig(alpha=0.14, b=1.1, lambda0=1e5), 4)
    assert ok
    ok, msg = shear_window_ok(SchedulerConfig(), 4)
    assert not ok and msg
