import json
import time

import numpy as np
import pytest

from survquant import build_composite, weighted_quantile, write_cohort_csv
from survquant.cli import RunConfig, main
from survquant.simulate import gen_time_varying, setting_truth

from conftest import make_cohort

TOY_CSV = """subject_id,visit,D,A,L_1,Y
1,0,0,1,0.3,
1,1,0,,,4.0
2,0,0,1,1.2,
2,1,0,,,1.5
3,0,0,1,0.7,
3,1,1,,,
4,0,0,1,0.1,
4,1,0,,,3.0
5,0,0,1,2.0,
5,1,0,,,2.5
6,0,0,1,0.4,
6,1,1,,,
"""


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_unit_weights_give_unweighted_median(tmp_path, capsys):
    data = tmp_path / "toy.csv"
    data.write_text(TOY_CSV)
    code, out, err = run(["estimate", data, "--regimen", "1", "--weighting", "unit", "--out", tmp_path], capsys)
    assert code == 0, err
    report = json.loads((tmp_path / "report.json").read_text())
    # composites: 4, 1.5, dead, 3, 2.5, dead -> sorted: s, s, 1.5, 2.5, 3, 4 -> leftmost median 1.5
    assert report["estimate"] == 1.5
    assert (tmp_path / "weights.csv").read_text().startswith("subject_id,weight")


def test_estimate_simulated_cohort_near_truth(tmp_path, capsys):
    c = gen_time_varying(5000, seed=7)
    write_cohort_csv(c, tmp_path / "tv.csv")
    code, out, err = run(["estimate", tmp_path / "tv.csv", "--regimen", "1,1", "--out", tmp_path], capsys)
    assert code == 0, err
    report = json.loads((tmp_path / "report.json").read_text())
    truth, _ = setting_truth("time_varying", (1, 1))
    # Monte Carlo sd of the estimator at N = 5000 is about 0.066
    assert abs(report["estimate"] - truth) < 3 * 0.066
    assert report["avar_experimental"] is True


def test_malformed_header_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(TOY_CSV.replace("L_1", "Lx"))
    code, out, err = run(["estimate", bad], capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["exit_code"] == 2 and "Lx" in payload["message"]


def test_bad_flag_value_exit_2(capsys):
    code, _, err = run(["estimate", "x.csv", "--tau", "abc"], capsys)
    assert code == 2 and json.loads(err)["error"] == "InputError"


def test_positivity_exit_3(tmp_path, capsys):
    c = gen_time_varying(3000, seed=1)
    write_cohort_csv(c, tmp_path / "tv.csv")
    code, _, err = run(["estimate", tmp_path / "tv.csv", "--regimen", "0,0", "--eps-floor", "0.35",
                        "--strict-positivity"], capsys)
    assert code == 3 and json.loads(err)["error"] == "PositivityViolation"


def test_numeric_failure_exit_4(tmp_path, capsys):
    data = tmp_path / "toy.csv"
    data.write_text(TOY_CSV)
    # everyone is treated, so there is nothing to fit a propensity model on
    code, _, err = run(["estimate", data, "--regimen", "1"], capsys)
    assert code == 4 and json.loads(err)["exit_code"] == 4


def test_truth_command(capsys):
    code, out, _ = run(["truth"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "setting,regimen,p_death,truth,survivor_quantile"
    assert "point,0,0.136,1.449,2.002" in lines
    assert "time_varying,00,0.170,1.726,2.458" in lines


def test_simulate_truths_preset(tmp_path, capsys):
    code, out, _ = run(["simulate", "truths", "--out", tmp_path], capsys)
    assert code == 0
    for v in ("1.449", "0.915", "1.726", "0.751"):
        assert v in out
    assert (tmp_path / "table.csv").exists() and (tmp_path / "table.json").exists()


def test_simulate_smoke_and_thread_determinism(tmp_path, capsys):
    t0 = time.time()
    code, out, _ = run(["simulate", "table2", "--n", "500", "--reps", "2", "--out", tmp_path / "a"], capsys)
    assert code == 0 and time.time() - t0 < 5
    code, _, _ = run(["simulate", "table2", "--n", "500", "--reps", "2", "--threads", "2",
                      "--out", tmp_path / "b"], capsys)
    a, b = (tmp_path / "a" / "table.csv").read_bytes(), (tmp_path / "b" / "table.csv").read_bytes()
    assert a == b
    rows = a.decode().strip().splitlines()
    assert len(rows) == 3 and rows[1].startswith("00,500,")


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tau": 0.25, "seed": 3}))
    code, out, _ = run(["truth", "--config", cfg, "--tau", "0.5"], capsys)
    assert "1.449" in out
    code, out, _ = run(["truth", "--config", cfg], capsys)
    assert "1.449" not in out


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"taux": 0.25}))
    code, _, err = run(["truth", "--config", cfg], capsys)
    assert code == 2 and "taux" in json.loads(err)["message"]


def test_run_config_round_trip():
    cfg = RunConfig(tau=0.3, regimen=[1, 0], n=[500, 1500], bootstrap=200, sentinel=-99.5)
    assert RunConfig.from_json(cfg.to_json()) == cfg
    assert RunConfig.from_json(RunConfig().to_json()) == RunConfig()


def test_oracle_check_command(capsys):
    code, out, _ = run(["oracle-check", "--instances", "20", "--seed", "2"], capsys)
    assert code == 0 and "mismatches=0" in out
