import json

import pytest

from nmdecay.cli import RunConfig, load_config, main


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def manifest(tmp_path, command):
    return json.loads((tmp_path / f"manifest_{command}.json").read_text())


def test_sp_writes_series_and_manifest(tmp_path):
    assert run(tmp_path, "sp", "--case", "II", "--tmax", "40") == 0
    lines = (tmp_path / "sp_II.csv").read_text().splitlines()
    assert lines[1] == "t,p" and len(lines) == 2 + 801
    man = manifest(tmp_path, "sp")
    assert man["command"] == "sp" and man["outputs"] == ["sp_II.csv"]
    # the truncation is sized from the horizon and recorded
    assert man["config"]["n_env"] >= 120
    assert man["results"]["rate"]["rate"] == pytest.approx(1.0, abs=0.02)
    assert man["wall_time_s"] >= 0


def test_le_public_bath(tmp_path):
    assert run(tmp_path, "le", "--case", "VI", "--tmax", "40") == 0
    assert manifest(tmp_path, "le")["results"]["rate"]["rate"] == pytest.approx(1.254, abs=0.02)


@pytest.mark.parametrize("kind", ["surface", "bulk", "site_A"])
def test_ldos(tmp_path, kind):
    assert run(tmp_path, "ldos", "--kind", kind, "--num", "51", "--case", "III") == 0
    lines = (tmp_path / f"ldos_{kind}.csv").read_text().splitlines()
    assert len([l for l in lines if l and l[0] not in "#abcdefghijklmnopqrstuvwxyz"]) == 51


def test_poles(tmp_path):
    assert run(tmp_path, "poles", "--case", "VI") == 0
    res = manifest(tmp_path, "poles")["results"]
    assert res["forward"] == pytest.approx(1.7262, abs=1e-3)
    assert res["backward"] == pytest.approx(0.5754, abs=1e-3)
    data = json.loads((tmp_path / "poles_VI.json").read_text())
    assert len(data["poles"] if isinstance(data, dict) else data) == 2


def test_rates(tmp_path):
    assert run(tmp_path, "rates", "--case", "I", "--kinds", "SP,LE") == 0
    rec = json.loads((tmp_path / "rates_I.json").read_text())
    assert rec["SP"]["rate"] == pytest.approx(2.0, abs=0.05)
    assert rec["LE"]["rate"] == pytest.approx(2.0, abs=0.05)


def test_sweep(tmp_path):
    assert run(tmp_path, "sweep", "--case", "II", "--v0-list", "0.1,0.15", "--kinds", "SP",
               "--threads", "1") == 0
    assert manifest(tmp_path, "sweep")["results"]["SP"] == pytest.approx(1.0, abs=0.02)
    assert (tmp_path / "sweep_II.csv").read_text().startswith("v0_sq_over_v,rate_SP")


def test_table1_pass_and_acceptance_failure(tmp_path):
    assert run(tmp_path, "table1", "--rows", "I", "--n-env-min", "1") == 0
    assert "I" in (tmp_path / "table1.txt").read_text()
    assert run(tmp_path, "table1", "--rows", "I", "--n-env-min", "1", "--tolerance", "0") == 2
    assert manifest(tmp_path, "table1")["results"]["passed"] is False


def test_jwt_check(tmp_path):
    assert run(tmp_path, "jwt-check", "--m", "6", "--tmax", "5", "--dt", "0.1",
               "--f-site", "3") == 0
    assert manifest(tmp_path, "jwt-check")["results"]["sup_gap"] <= 1e-10


@pytest.mark.parametrize("argv", [
    ["sp", "--case", "VII"],
    ["sp", "--v0", "-1"],
    ["sp", "--tmax", "1", "--dt", "0.3"],
    ["sp", "--n-env", "5", "--tmax", "40"],
    ["rates", "--kinds", "XX"],
    ["poles", "--directions", "sideways"],
    ["table1", "--rows", "nope"],
    ["jwt-check", "--m", "20"],
])
def test_validation_errors_exit_1(tmp_path, argv, capsys):
    assert run(tmp_path, *argv) == 1
    assert "invalid input" in capsys.readouterr().err
    assert not list(tmp_path.glob("manifest_*.json"))


def test_numerical_failure_exits_3(tmp_path, capsys):
    # a horizon far too short for any decay window
    assert run(tmp_path, "rates", "--case", "IV", "--tmax", "1") == 3
    assert "numerical failure" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("case = I\nbogus = 3\n")
    assert run(tmp_path, "poles", "--config", str(cfg)) == 1


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ncase = III\nv = 5   # trailing\nv0 = 0.1\n")
    assert load_config(cfg) == {"case": "III", "v": 5.0, "v0": 0.1}
    assert run(tmp_path, "poles", "--config", str(cfg), "--v", "1") == 0
    man = manifest(tmp_path, "poles")
    assert man["config"]["case"] == "III" and man["config"]["v"] == 1.0


def test_manifest_replay_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["le", "--case", "IV", "--v", "5", "--out", str(a)]) == 0
    assert main(["le", "--config", str(a / "manifest_le.json"), "--out", str(b)]) == 0
    assert (a / "le_IV.csv").read_bytes() == (b / "le_IV.csv").read_bytes()
    ma, mb = manifest(a, "le"), manifest(b, "le")
    for m in (ma, mb):
        m.pop("wall_time_s")
        m["config"].pop("output_dir")
    assert ma == mb


def test_repeat_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["rates", "--case", "III", "--out", str(d)]) == 0
        assert main(["poles", "--case", "VI", "--out", str(d)]) == 0
    for name in ("rates_III.json", "poles_VI.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_config_defaults_round_trip():
    rec = RunConfig().validate().to_record()
    assert rec["n_env"] >= 120
    assert RunConfig(**{k: tuple(v) if isinstance(v, list) else v
                        for k, v in rec.items()}).validate().to_record() == rec
