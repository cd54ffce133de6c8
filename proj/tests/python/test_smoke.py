import json
import math
import os
import subprocess

import pytest

import perlcf


def test_idm_limits():
    assert perlcf.idm_accel(0.0, 0.0, 1e9) == pytest.approx(0.911, abs=1e-9)
    assert perlcf.idm_accel(22.495, 0.0, 1e9) == pytest.approx(0.0, abs=1e-9)
    custom = {"v_free": 30.0, "t_gap": 1.5, "a_max": 1.0, "b_comf": 2.0, "s0": 2.0}
    s = 2.0 + 1.5 * 10.0 - 10.0 * 2.0 / (2.0 * math.sqrt(2.0))
    direct = 1.0 - (10.0 / 30.0) ** 4 - (s / 15.0) ** 2
    assert perlcf.idm_accel(10.0, 2.0, 15.0, custom) == pytest.approx(direct, abs=1e-12)


def test_fvd_is_linear_in_speed_difference():
    base = perlcf.fvd_accel(10.0, 0.0, 20.0)
    assert perlcf.fvd_accel(10.0, 1.0, 20.0) - base == pytest.approx(0.3, abs=1e-12)


def test_reconstruct_speed():
    assert perlcf.reconstruct_speed(10.0, [1.0] * 5, 0.1) == pytest.approx([10.1, 10.2, 10.3, 10.4, 10.5])
    assert perlcf.interpolate_series([0.0, 2.0], 0.25) == pytest.approx(0.5)


def test_synth_and_extract_are_deterministic():
    cfg = {"platoons": 1, "vehicles_per_platoon": 3, "duration_steps": 120, "seed": 4}
    csv = perlcf.synth_csv(cfg)
    assert csv == perlcf.synth_csv(cfg)
    lines = perlcf.extract_jsonl(csv, {"k_vehicles": 2, "t_back": 5, "t_fwd": 2}).splitlines()
    header = json.loads(lines[0])
    assert header["t_back"] == 5
    assert len(lines) > 100


def test_errors_map_to_python_exceptions():
    with pytest.raises(perlcf.ConfigError):
        perlcf.synth_csv({"platoons": 0})
    with pytest.raises(perlcf.ParseError):
        perlcf.extract_jsonl("vehicle_id,time,position,speed,accel,leader_id\n1,0,0,abc,0,\n")


def test_gradient_check():
    result = perlcf.gradient_check("gru", dropout=0.2, activation="relu")
    assert result["max_relative_error"] < 1e-4
    assert result["checked"] > 0


def test_in_process_cli(tmp_path):
    code, out, _ = perlcf.cli("synth", "--out", tmp_path / "raw.csv", "--seed", 2, "--platoons", 1, "--steps", 80)
    assert code == 0
    assert (tmp_path / "raw.csv").exists()
    assert perlcf.cli("bogus")[0] == 1


@pytest.mark.skipif("PERLCF_BIN" not in os.environ, reason="binary path not provided")
def test_binary_matches_in_process(tmp_path):
    args = ["synth", "--seed", "3", "--platoons", "1", "--steps", "60"]
    subprocess.run([os.environ["PERLCF_BIN"], *args, "--out", str(tmp_path / "a.csv")], check=True)
    perlcf.cli(*args, "--out", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
