import json

import numpy as np
import pytest
from helpers import random_control_coupled, random_state_coupled

from mfteams.cli import main
from mfteams.diagnostics import ConvergenceReport
from mfteams.model import NoiseLaw, scalar_state_coupled
from mfteams.serialization import (
    CSV_HEADER,
    SUITES,
    ConfigError,
    config_from_dict,
    config_to_dict,
    dumps,
    load_config,
    parse_json,
    read_report_csv,
    report_from_dict,
    report_to_csv,
    report_to_dict,
    spec_to_dict,
    team_spec_from_dict,
)
from mfteams.suites import default_config


def _same_spec(a, b):
    return json.dumps(spec_to_dict(a), sort_keys=True) == json.dumps(spec_to_dict(b), sort_keys=True)


def test_team_spec_round_trip(rng):
    specs = [random_state_coupled(rng) for _ in range(5)] + [random_control_coupled(rng) for _ in range(5)]
    specs.append(scalar_state_coupled(state_law=NoiseLaw.two_point(1.5)))
    for spec in specs:
        back = team_spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
        assert _same_spec(spec, back)
        np.testing.assert_array_equal(back.cost.R, spec.cost.R)


@pytest.mark.parametrize("suite", SUITES)
def test_config_round_trip(suite):
    cfg = default_config(suite)
    doc = config_to_dict(cfg)
    back = config_from_dict(json.loads(dumps(doc)))
    assert config_to_dict(back) == doc


def _ex1_doc():
    return config_to_dict(default_config("ex1_state_coupled"))


def test_unknown_key_reports_its_path():
    doc = _ex1_doc()
    doc["spec"]["cost"]["Z"] = [[1.0]]
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert "spec.cost.Z" in str(info.value)


def test_schedule_must_increase():
    doc = _ex1_doc()
    doc["ns"] = [10, 10]
    with pytest.raises(ConfigError, match="strictly increasing"):
        config_from_dict(doc)
    doc["ns"] = []
    with pytest.raises(ConfigError, match="nonempty"):
        config_from_dict(doc)


def test_unknown_suite_lists_valid_ones():
    doc = _ex1_doc()
    doc["suite"] = "ex9"
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert all(s in str(info.value) for s in SUITES)


def test_malformed_json_has_line_number():
    with pytest.raises(ConfigError) as info:
        parse_json('{\n  "suite": "ex1_state_coupled",\n  "ns": [10,, 20]\n}')
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


def test_report_csv_and_dict_round_trip():
    r = ConvergenceReport([10, 100], [0.1 / 3, 1e-17], [2.0 / 7, 0.0], [0.0, 0.01], [1.5, 1.25], {"k": [1, 2]})
    text = report_to_csv(r)
    assert text.splitlines()[0] == ",".join(CSV_HEADER) == "N,policy_gap,cost_gap,cost_gap_ci,ui_stat"
    back = read_report_csv(text)
    assert back.rows() == r.rows()
    doc = json.loads(dumps(report_to_dict(r)))
    again = report_from_dict(doc)
    assert again.rows() == r.rows() and again.extras == r.extras


# --- command line -----------------------------------------------------------


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_list_suites(capsys):
    assert main(["--list"]) == 0
    assert capsys.readouterr().out.split() == list(SUITES)


def test_unknown_suite_exit_code(capsys):
    assert main(["--suite", "ex9"]) == 1
    err = capsys.readouterr().err
    assert "valid suites" in err and "ex1_state_coupled" in err


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    assert main(["--config", str(p)]) == 1
    assert "line 1" in capsys.readouterr().err
    doc = _ex1_doc()
    doc["spec"]["cost"]["R"] = [[-1.0]]
    assert main(["--config", str(_write(tmp_path, doc)), "--quiet"]) == 1


def test_no_arguments_is_input_error():
    assert main([]) == 1


def test_suite_run_writes_outputs(tmp_path):
    doc = _ex1_doc()
    doc["mc"]["samples"] = 2000
    code = main(["--config", str(_write(tmp_path, doc)), "--out", str(tmp_path / "out"), "--quiet"])
    assert code == 0
    csv_text = (tmp_path / "out" / "ex1_state_coupled.csv").read_text()
    lines = csv_text.splitlines()
    assert lines[0] == "N,policy_gap,cost_gap,cost_gap_ci,ui_stat" and len(lines) == 4
    pg = [float(line.split(",")[1]) for line in lines[1:]]
    assert pg[0] > pg[1] > pg[2]
    doc_out = json.loads((tmp_path / "out" / "ex1_state_coupled.json").read_text())
    assert report_from_dict(doc_out["report"]).rows() == read_report_csv(csv_text).rows()
    meta = json.loads((tmp_path / "out" / "ex1_state_coupled.meta.json").read_text())
    assert meta["checks_passed"] and "finished_utc" in meta


def test_end_to_end_determinism(tmp_path, monkeypatch):
    doc = _ex1_doc()
    doc["mc"]["samples"] = 2000
    cfg = _write(tmp_path, doc)
    monkeypatch.setenv("MFTEAMS_THREADS", "1")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "a"), "--format", "csv", "--quiet"]) == 0
    monkeypatch.setenv("MFTEAMS_THREADS", "4")
    assert main(["--config", str(cfg), "--out", str(tmp_path / "b"), "--format", "csv", "--quiet"]) == 0
    a = (tmp_path / "a" / "ex1_state_coupled.csv").read_bytes()
    b = (tmp_path / "b" / "ex1_state_coupled.csv").read_bytes()
    assert a == b
    assert main(["--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "c"), "--format", "csv", "--quiet"]) == 0
    assert (tmp_path / "c" / "ex1_state_coupled.csv").read_bytes() != a


def test_failed_check_exit_code(tmp_path, capsys):
    doc = config_to_dict(default_config("ex5_lqg_classical"))
    # k_T^0 is still about 4e-9 away from K at T = 10
    doc["ts"] = [5, 10]
    doc["options"]["mc_check"] = False
    code = main(["--config", str(_write(tmp_path, doc)), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "CHECK FAILED" in capsys.readouterr().out
    assert (tmp_path / "out" / "ex5_lqg_classical.csv").read_text().splitlines()[0] == "T,k_residual,cost_gap"


def test_conflicting_suite_flag(tmp_path):
    assert main(["--config", str(_write(tmp_path, _ex1_doc())), "--suite", "ex3_control_coupled"]) == 1
