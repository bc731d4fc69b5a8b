import pytest
from fastapi.testclient import TestClient

from eulerci import io
from eulerci.models import RunConfig
from eulerci.service import app, verify_tuple


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_params(client):
    r = client.post("/params", json={"config": {"lambda0": 10, "b": 1.5}, "q": 3})
    assert r.status_code == 200
    body = r.json()
    assert body["level"]["lambda_q"] == 2372
    assert body["admissibility"]["status"] in ("pass", "warn", "fail")


def test_params_demo_level(client):
    lev = client.post("/params", json={}).json()["level"]
    assert lev["lambda_q"] == 8 and lev["lambda_q1"] == 14


def test_bad_request_is_422(client):
    assert client.post("/params", json={"config": {"alpha": "x"}}).status_code == 422
    assert client.post("/params", json={"config": {"n": 24}}).status_code == 422
    assert client.post("/params", json={"config": {"bogus": 1}}).status_code == 422


def test_engine_config_error_is_422(client):
    r = client.post("/params", json={"config": {"alpha": 0.5}})
    assert r.status_code == 422
    assert r.json()["exit_code"] == 1


def test_missing_tuple_is_io_error(client, tmp_path):
    r = client.post("/verify", json={"tuple_path": str(tmp_path / "none.pfld")})
    assert r.status_code == 500
    assert r.json()["kind"] == "io" and r.json()["exit_code"] == 4


def test_verify_and_export(client, tmp_path, zero_seed, demo_cfg):
    path = io.save_tuple(zero_seed, tmp_path / "level0.pfld")
    r = client.post("/verify", json={"tuple_path": str(path), "out": str(tmp_path / "v.json")})
    assert r.status_code == 200 and r.json()["pass"]
    assert r.json() == io.jsonable(verify_tuple(zero_seed, demo_cfg))
    r = client.post("/export", json={"tuple_path": str(path), "out": str(tmp_path / "csv"), "field": "R"})
    assert r.status_code == 200
    assert (tmp_path / "csv" / "level0_norms.csv").exists()


def test_seed_endpoint(client, tmp_path):
    cfg = RunConfig(out=str(tmp_path), dt_divisor=8).model_dump()
    r = client.post("/seed", json={"config": cfg})
    assert r.status_code == 200 and r.json()["certified"]
    assert (tmp_path / "level0.pfld").exists() and (tmp_path / "level0.verify.json").exists()


def test_bifurcation_needs_interval(client, tmp_path):
    r = client.post("/bifurcate", json={"config": {"out": str(tmp_path)}})
    assert r.status_code == 422
