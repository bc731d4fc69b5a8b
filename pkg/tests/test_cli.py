import json

import pytest

from eulerci import cli, io


def test_params(capsys):
    assert cli.main(["params", "--q", "3", "--set", "lambda0=10", "--set", "b=1.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["level"]["lambda_q"] == 2372 and out["q"] == 3


def test_demo_preset(capsys):
    assert cli.main(["params", "--demo"]) == 0
    assert json.loads(capsys.readouterr().out)["level"]["lambda_q1"] == 14


def test_config_errors_exit_1(capsys, tmp_path):
    assert cli.main(["params", "--set", "alpha=0.5"]) == 1
    assert cli.main(["params", "--set", "alpha"]) == 1
    assert cli.main(["params", "--config", str(tmp_path / "none.cfg")]) == 1
    (tmp_path / "bad.cfg").write_text("alpha 0.1\n")
    assert cli.main(["params", "--config", str(tmp_path / "bad.cfg")]) == 1
    assert cli.main(["verify"]) == 1
    err = capsys.readouterr().err.strip().splitlines()[0]
    assert json.loads(err)["exit_code"] == 1


def test_missing_tuple_exit_4(tmp_path, capsys):
    assert cli.main(["verify", "--tuple", str(tmp_path / "none.pfld")]) == 4
    assert cli.main(["step", "--tuple", str(tmp_path / "none.pfld")]) == 4


def test_verify_and_export(tmp_path, zero_seed, capsys):
    path = io.save_tuple(zero_seed, tmp_path / "level0.pfld")
    assert cli.main(["verify", "--tuple", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["residuals"]["pass"]
    assert cli.main(["export", "--tuple", str(path), "--out", str(tmp_path / "csv"), "--field", "v"]) == 0
    assert (tmp_path / "csv" / "level0_norms.csv").exists()


def test_unreachable_server_is_io(capsys):
    assert cli.main(["params", "--server", "http://127.0.0.1:9"]) == 4


def test_unknown_command():
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
