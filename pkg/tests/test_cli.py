import csv
import json

import pytest

from noma_offload.cli import ConfigError, main, parse_config_text, parse_values


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# two devices\nn_devices = 2\nk_common_bits = 3e6  # bits\ne_max_j = 0.2\nseed = 4\n")
    return path


def test_parse_values():
    assert parse_values("1e6:3e6:1e6") == (1e6, 2e6, 3e6)
    assert parse_values("0.1:0.3:0.05") == pytest.approx((0.1, 0.15, 0.2, 0.25, 0.3))
    assert parse_values("2,3,4") == (2.0, 3.0, 4.0)
    with pytest.raises(ConfigError):
        parse_values("1:0:1")


def test_parse_config_text():
    assert parse_config_text("n_devices = 3  # comment\n\nseed=1") == {"n_devices": "3", "seed": "1"}
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError):
        parse_config_text("n_devices 2")


def test_solve_writes_outputs(tmp_path, cfg_file, capsys):
    out = tmp_path / "o"
    code = main(["solve", "--config", str(cfg_file), "--out", str(out), "--schemes", "proposed,s_oma"])
    assert code == 0
    assert "objective_bits=" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["outputs"] == ["allocation.csv"]
    with open(out / "allocation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {r["scheme"] for r in rows} == {"proposed", "s_oma"}


def test_solve_infeasible_exit_code(tmp_path, cfg_file, capsys):
    code = main(["solve", "--config", str(cfg_file), "--set", "k_common_bits=1e9",
                 "--out", str(tmp_path)])
    assert code == 2
    assert "objective_bits=0" in capsys.readouterr().out


def test_unknown_key_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_devices = 2\nbandwith_hz = 1e6\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "bandwith_hz" in capsys.readouterr().err


def test_bad_value_exit_code(tmp_path, capsys):
    assert main(["solve", "--set", "n_devices=two", "--out", str(tmp_path)]) == 1
    assert "n_devices" in capsys.readouterr().err


def test_sweep_rows(tmp_path, cfg_file):
    out = tmp_path / "s"
    code = main(["sweep", "--config", str(cfg_file), "--axis", "k", "--values", "1e6:3e6:1e6",
                 "--trials", "1", "--schemes", "proposed", "--out", str(out)])
    assert code == 0
    with open(out / "sweep_k.csv", newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["metric"] == "objective"]
    assert [float(r["sweep"]) for r in rows] == [1e6, 2e6, 3e6]


def test_convergence_oracle_line(tmp_path, cfg_file, capsys):
    out = tmp_path / "c2"
    assert main(["convergence", "--config", str(cfg_file), "--out", str(out)]) == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "iteration,phi_bits"
    assert lines[-1].startswith("oracle,")
    out4 = tmp_path / "c4"
    assert main(["convergence", "--config", str(cfg_file), "--set", "n_devices=4",
                 "--out", str(out4)]) == 0
    assert "oracle" not in (out4 / "convergence.csv").read_text()
    assert "omitted" in capsys.readouterr().err
    assert "omitted" in json.loads((out4 / "manifest.json").read_text())["note"]


def test_manifest_echo_reproduces(tmp_path, cfg_file):
    first = tmp_path / "a"
    main(["solve", "--config", str(cfg_file), "--out", str(first)])
    echo = tmp_path / "echo.cfg"
    echo.write_text(json.loads((first / "manifest.json").read_text())["config_text"])
    second = tmp_path / "b"
    main(["solve", "--config", str(echo), "--out", str(second)])
    assert (first / "allocation.csv").read_bytes() == (second / "allocation.csv").read_bytes()
