import json

import numpy as np
import pytest

from eulerci.geometry import (EXAMPLE_PHI0, EXAMPLE_R0, DirectionFamilyPhi, DirectionFamilyR, FamilyTable,
                              OutsideLemmaDomain, build_family_table, check_noncolinear, class_index,
                              class_tuple, default_table, from_sym6, gamma_phi, gamma_R, reconstruct_phi,
                              reconstruct_R, sym6)
from eulerci.shifts import PeriodizedLine, line_distance


@pytest.fixture(scope="module")
def ex():
    return DirectionFamilyR.build(EXAMPLE_R0)


def test_example_family(ex):
    assert ex.C == 4
    G = gamma_R(ex, np.eye(3))
    assert np.allclose(G, 0.5, atol=1e-15)
    assert np.abs(reconstruct_R(ex, G) - np.eye(3)).max() < 1e-15


def test_small_perturbation(ex):
    K = 1e-6 * np.array([[1, 2, 0], [2, -1, 3], [0, 3, 0.5]])
    G = gamma_R(ex, np.eye(3) - K)
    assert np.allclose(G, 0.5, atol=1e-5)
    assert np.abs(reconstruct_R(ex, G) - (np.eye(3) - K)).max() < 1e-15


def test_boundary_raises(ex):
    A = from_sym6(sym6(np.eye(3)))
    # push L_0 to zero along its dual direction
    B = np.outer(ex.f[1], ex.f[1]).astype(float)
    for v in ex.f[2:]:
        B += np.outer(v, v)
    assert ex.L(B)[0] == pytest.approx(0, abs=1e-14)
    with pytest.raises(OutsideLemmaDomain):
        gamma_R(ex, B)
    assert gamma_R(ex, A).shape == (6,)


def test_not_isotropic_rejected():
    with pytest.raises(ValueError):
        DirectionFamilyR.build([(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1)])


def test_current_family_example():
    fam = DirectionFamilyPhi.build(*EXAMPLE_PHI0)
    assert fam.f[3].tolist() == [1, -3, -1]
    N0 = 2.0
    assert np.allclose(gamma_phi(fam, np.zeros(3), N0), 2 * N0)
    u = np.array([0, 0, N0 / 2])
    G = gamma_phi(fam, u, N0)
    assert G[2] == pytest.approx(2.5 * N0)
    assert np.abs(reconstruct_phi(fam, G) - u).max() < 1e-15
    with pytest.raises(OutsideLemmaDomain):
        gamma_phi(fam, np.array([N0 * 1.01, 0, 0]), N0)


def test_current_family_needs_orthogonal_frame():
    with pytest.raises(ValueError):
        DirectionFamilyPhi.build((1, 1, 0), (1, 0, 0), (0, 0, 1))


def test_lower_bound_on_random_inputs():
    fam = DirectionFamilyPhi.build(*EXAMPLE_PHI0)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(2000, 3))
    u *= rng.uniform(0, 1, (2000, 1)) / np.linalg.norm(u, axis=1, keepdims=True)
    assert gamma_phi(fam, u, 1.0).min() >= 1.0


def test_class_index_roundtrip():
    for i in range(27):
        assert class_index(class_tuple(i)) == i
    assert class_index((0, 0, 0)) == 0


@pytest.fixture(scope="module")
def table():
    return default_table()


def test_shipped_table_matches_construction(table):
    built = build_family_table()
    assert [f.f.tolist() for f in built.R] == [f.f.tolist() for f in table.R]
    assert [f.f.tolist() for f in built.phi] == [f.f.tolist() for f in table.phi]
    assert table.R[0].f.tolist() == [list(v) for v in EXAMPLE_R0]
    assert table.phi[0].f[:3].tolist() == [list(v) for v in EXAMPLE_PHI0]


def test_table_invariants(table):
    dirs = [f for *_, f in table.directions()]
    assert len(dirs) == 270
    assert check_noncolinear(table) == 0
    for fam in table.R:
        S = sum(np.outer(v, v) for v in fam.f)
        assert np.array_equal(S, fam.C * np.eye(3))
    assert table.eta <= table.d0 / 2


def test_base_shift_distances(table):
    lines = [PeriodizedLine(f, tuple(table.pbar[(j, kind, k)])) for j, kind, k, f in table.directions()]
    rng = np.random.default_rng(1)
    pairs = rng.choice(len(lines), size=(400, 2))
    for a, b in pairs:
        if a != b:
            assert line_distance(lines[a], lines[b]) >= 3 * table.d0 * (1 - 1e-9)


def test_table_json_roundtrip(table, tmp_path):
    p = tmp_path / "t.json"
    table.to_json(p)
    back = FamilyTable.from_json(p)
    assert back.d0 == table.d0 and back.eta == table.eta
    assert json.loads(p.read_text())["R"] == table.to_dict()["R"]
