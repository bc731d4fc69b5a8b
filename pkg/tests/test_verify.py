import math

import numpy as np
import pytest

from eulerci import verify
from eulerci.params import level_params


def test_row_defaults_to_value_below_scale():
    assert verify.row("a", 1.0, 2.0)["ok"]
    assert not verify.row("a", 3.0, 2.0)["ok"]
    r = verify.row("a", 3.0, 2.0, kind="soft", ok=True, note="x")
    assert r["ok"] and r["kind"] == "soft" and r["note"] == "x"


def test_third_difference_exact_on_cubic():
    dt = 0.01
    t = dt * np.arange(40)
    assert verify._third_diff(t ** 3, dt) == pytest.approx(6.0, rel=1e-6)
    assert verify._third_diff(np.ones(40), dt) == 0.0


def test_zero_seed_is_clean(zero_seed, demo_cfg):
    res = verify.residual_suite(zero_seed)
    assert res["pass"]
    assert res["momentum"] == res["energy"] == res["divergence"] == 0.0
    ind = verify.inductive_report(zero_seed, level_params(demo_cfg, 0))
    assert ind["pass"] and ind["level"] == 0


def test_residual_suite_flags_a_broken_tuple(zero_seed):
    import copy
    bad = copy.deepcopy(zero_seed)
    bad.p.data[:] = np.sin(np.linspace(0, 2 * math.pi, bad.n, endpoint=False))[None, None, :, None, None]
    res = verify.residual_suite(bad)
    assert not res["pass"]
    assert not res["rows"][0]["ok"]


def test_kappa_row_catches_wrong_trace(zero_seed, demo_cfg):
    import copy
    bad = copy.deepcopy(zero_seed)
    bad.kappa.data[:] = 1e-6
    rows = {r["tag"]: r for r in verify.inductive_report(bad, level_params(demo_cfg, 0))["rows"]}
    assert not rows["kappa = tr R / 2"]["ok"]


def test_ladder_rule():
    assert verify._ladder_ok([1.0, 2.0, 3.9])
    assert not verify._ladder_ok([1.0, 4.5])


def test_commutator_ratios_stay_bounded():
    rep = verify.commutator_ratios(n=32, ells=(1 / 2, 1 / 4, 1 / 8))
    for k in ("commutator.product", "commutator.transport", "commutator.quadratic"):
        assert rep[k]["pass"], rep[k]


def test_flow_ratio():
    rep = verify.flow_ratio()
    assert rep["pass"] and rep["max_id_minus_grad"] > 0
