import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from got import cli, config
from got.errors import ConfigError, DataError

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def cfg_path(name):
    return os.path.abspath(os.path.join(CONFIGS, name))


def run(argv):
    return cli.run([str(a) for a in argv])


def read_report(out):
    with open(os.path.join(out, "report.json")) as fh:
        return json.load(fh)


def write_csv(path, rows, header=("t1", "t2", "t3")):
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


@pytest.fixture
def tmp(tmp_path):
    return tmp_path


def test_atom_only_solve(tmp):
    assert run(["solve", cfg_path("atom_only.json"), "--out", tmp]) == 0
    rep = read_report(tmp)
    assert rep["results"]["upper"] == pytest.approx(1.0, abs=1e-8)
    assert rep["status"] == "converged" and rep["command"] == "solve"


@pytest.mark.parametrize("cost,fragment", [("t1 + * 2", "column"), ("t1 + foo", "'foo'")])
def test_malformed_cost_exits_1(tmp, capsys, cost, fragment):
    with open(cfg_path("atom_only.json")) as fh:
        raw = json.load(fh)
    raw["cost"] = cost
    p = tmp / "bad.json"
    p.write_text(json.dumps(raw))
    assert run(["solve", p, "--out", tmp / "o"]) == 1
    assert fragment in capsys.readouterr().err


def test_invalid_json_reports_location(tmp, capsys):
    p = tmp / "broken.json"
    p.write_text('{"version": 1,\n "support": }')
    assert run(["solve", p]) == 1
    assert "line 2" in capsys.readouterr().err


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as info:
        cli.run(["frobnicate", "x.json"])
    assert info.value.code == 1


def test_non_convergence_exits_2(tmp):
    with open(cfg_path("sim_population.json")) as fh:
        raw = json.load(fh)
    raw["solver"]["max_iter"] = 2
    p = tmp / "short.json"
    p.write_text(json.dumps(raw))
    assert run(["solve", p, "--out", tmp / "o"]) == 2
    rep = read_report(tmp / "o")
    assert rep["status"] == "not_converged" and rep["warnings"]


def test_population_solve_and_determinism(tmp):
    a, b = tmp / "a", tmp / "b"
    assert run(["solve", cfg_path("sim_population.json"), "--out", a]) == 0
    assert run(["solve", cfg_path("sim_population.json"), "--out", b]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    rep = read_report(a)
    v = rep["results"]["upper"]
    assert -1e-6 <= v <= 1e-3
    assert rep["results"]["diagnostics"]["upper"]["final_violation"] <= 1e-6


def test_estimate_from_csv(tmp):
    csv = write_csv(tmp / "sample.csv", np.random.default_rng(5).uniform(0, 1, (1000, 3)))
    assert run(["estimate", cfg_path("sim_empirical.json"), csv, "--out", tmp / "o"]) == 0
    rep = read_report(tmp / "o")
    assert rep["results"]["n"] == 1000
    assert -0.1 <= rep["results"]["upper"] <= 0.25
    assert rep["results"]["diagnostics"]["upper"]["status"] == "converged"
    assert rep["config"]["cli"]["csv"] == [str(csv)]


def test_estimate_single_row(tmp):
    csv = write_csv(tmp / "one.csv", np.array([[0.1, 0.4, 0.8]]))
    assert run(["estimate", cfg_path("sim_empirical.json"), f"sample={csv}", "--out", tmp / "o"]) == 0
    assert np.isfinite(read_report(tmp / "o")["results"]["upper"])


def test_estimate_value_outside_box(tmp, capsys):
    rows = np.random.default_rng(5).uniform(0, 1, (10, 3))
    rows[3, 2] = 1.7
    csv = write_csv(tmp / "bad.csv", rows)
    assert run(["estimate", cfg_path("sim_empirical.json"), csv, "--out", tmp / "o"]) == 1
    err = capsys.readouterr().err
    assert "t3" in err and "outside" in err


def test_estimate_missing_column(tmp, capsys):
    csv = write_csv(tmp / "cols.csv", np.zeros((3, 3)), header=("t1", "x", "t3"))
    assert run(["estimate", cfg_path("sim_empirical.json"), csv, "--out", tmp / "o"]) == 1
    assert "'t2'" in capsys.readouterr().err


def test_estimate_non_numeric_cell(tmp, capsys):
    p = tmp / "text.csv"
    p.write_text("t1,t2,t3\n0.1,0.2,0.3\n0.1,abc,0.3\n")
    assert run(["estimate", cfg_path("sim_empirical.json"), p, "--out", tmp / "o"]) == 1
    assert "'t2'" in capsys.readouterr().err


def test_overrides_are_applied_and_echoed(tmp):
    assert run(["solve", cfg_path("atom_only.json"), "--tol", "1e-7", "--gamma", "2", "--out", tmp]) == 0
    rep = read_report(tmp)
    assert rep["config"]["cli"] == {"tol": 1e-7, "gamma": 2.0}
    assert rep["results"]["tol"] == 1e-7


def test_timing_only_on_request(tmp):
    run(["solve", cfg_path("atom_only.json"), "--out", tmp / "a"])
    run(["solve", cfg_path("atom_only.json"), "--out", tmp / "b", "--timing"])
    assert "timing" not in read_report(tmp / "a")
    assert read_report(tmp / "b")["timing"]["seconds"] >= 0


def test_oracle_balke_pearl(tmp):
    assert run(["oracle", cfg_path("balke_pearl.json"), "--out", tmp]) == 0
    res = read_report(tmp)["results"]
    assert res["feasible"]
    for side in ("upper", "lower"):
        assert res[side]["gap"] <= 1e-6
    assert res["lower"]["lp_value"] <= res["upper"]["lp_value"]


def test_oracle_transport(tmp):
    assert run(["oracle", cfg_path("transport.json"), "--out", tmp]) == 0
    res = read_report(tmp)["results"]
    # uniform weights 1/3 on the diagonal: one third times the optimal trace 3
    assert res["ot_value"] == pytest.approx(1.0, abs=1e-12)
    assert res["upper"]["lp_value"] == pytest.approx(1.0, abs=1e-12)
    assert res["upper"]["gap"] <= 1e-6


def test_oracle_infeasible(tmp):
    assert run(["oracle", cfg_path("infeasible.json"), "--out", tmp]) == 0
    rep = read_report(tmp)
    assert rep["results"]["feasible"] is False
    assert any("infeasible" in w for w in rep["warnings"])


def test_oracle_requires_section(tmp):
    assert run(["oracle", cfg_path("atom_only.json"), "--out", tmp]) == 1


def test_run_report_round_trip(tmp):
    run(["oracle", cfg_path("balke_pearl.json"), "--out", tmp])
    text = (tmp / "report.json").read_text()
    rep = cli.RunReport.from_json(text)
    assert rep.to_json() == text
    assert cli.RunReport.from_json(rep.to_json()) == rep


def test_run_report_sanitises_values():
    rep = cli.RunReport("solve", {"a": (1, 2)}, {"x": np.float64(0.5), "y": float("inf"), "z": np.arange(2)})
    again = cli.RunReport.from_json(rep.to_json())
    assert again == rep
    assert again.results == {"x": 0.5, "y": None, "z": [0, 1]}


def test_console_script_entry_point(tmp):
    exe = shutil.which("got")
    cmd = [exe] if exe else [sys.executable, "-m", "got.cli"]
    proc = subprocess.run(cmd + ["solve", cfg_path("atom_only.json"), "--out", str(tmp)], capture_output=True,
                          text=True)
    assert proc.returncode == 0, proc.stderr
    assert "upper = 1" in proc.stdout


def test_config_parsing_details(tmp):
    raw = {
        "version": 1,
        "support": {"dimension": 4, "box": [[0, 1]] * 4, "discrete": {"t4": [0, 1]},
                    "equalities": ["t3 = t4*t2 + (1 - t4)*t1"]},
        "cost": "t2 - t1",
        "restrictions": [
            {"kind": "marginal", "indices": ["t3", "t4"], "kernel": {"kind": "matern", "smoothness": 1.5},
             "target": {"law": {"discrete": {"points": [[0.2, 0], [0.7, 1]], "probs": [0.5, 0.5]}}}},
            {"kind": "independence", "indices": [["t1"], ["t4"]], "marginal": {"law": {"uniform": [[0, 1]]}}},
            {"kind": "conditional_independence", "indices": [["t1"], ["t2"], ["t4"]], "cond_mgf": "exp(s1 * t4)",
             "delta": 0.5},
            {"kind": "discrete_moments", "functions": ["t4"], "targets": [0.5]},
            {"kind": "marginal", "indices": ["t1"], "target": {"function": "exp(s1) + s1"}},
        ],
    }
    cfg = config.parse_config(raw)
    assert cfg.support.dimension == 4 and 2 in cfg.support.derived
    kinds = [r.kind.value for r in cfg.restrictions]
    assert kinds == ["marginal", "independence", "conditional_independence", "discrete_moments", "marginal"]
    mgf = cfg.restrictions[2].cond_mgf(np.array([[0.5]]), np.array([[1.0]]))
    assert mgf[0] == pytest.approx(np.exp(0.5))
    assert cfg.restrictions[0].kernel.kind.value == "matern"


@pytest.mark.parametrize("patch,msg", [
    ({"version": 2}, "version"),
    ({"bogus": 1}, "unknown key"),
    ({"restrictions": [{"kind": "marginal", "indices": ["t9"], "target": {"dataset": "d"}}]}, "t9"),
    ({"restrictions": [{"kind": "weird"}]}, "unknown kind"),
    ({"solver": {"schedule": "magic"}}, "schedule"),
    ({"solver": {"tol": -1}}, "tol"),
])
def test_config_errors(patch, msg):
    raw = {"version": 1, "support": {"dimension": 1, "box": [[-1, 1]]}, "cost": "t1", "restrictions": []}
    raw.update(patch)
    with pytest.raises(ConfigError, match=msg):
        config.parse_config(raw)


def test_dataset_assignment(tmp):
    raw = {"version": 1, "support": {"dimension": 1, "box": [[0, 1]]}, "cost": "t1",
           "restrictions": [], "datasets": {"a": {"columns": {"t1": "x"}}, "b": {"columns": {"t1": "x"}}}}
    cfg = config.parse_config(raw, str(tmp))
    for name in ("one.csv", "two.csv"):
        (tmp / name).write_text("x\n0.5\n")
    with pytest.raises(DataError, match="datasets declared"):
        config.attach_datasets(cfg, [str(tmp / "one.csv")] * 3)
    out = config.attach_datasets(cfg, [f"b={tmp / 'two.csv'}", str(tmp / "one.csv")])
    assert set(out) == {"a", "b"}
    with pytest.raises(DataError, match="undeclared"):
        config.attach_datasets(cfg, [f"c={tmp / 'two.csv'}"])


def test_sample_configs_parse():
    for name in sorted(os.listdir(CONFIGS)):
        config.load_config(cfg_path(name))


_json_leaf = st.one_of(st.none(), st.booleans(), st.integers(-10**6, 10**6),
                       st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=8))
_json = st.recursive(_json_leaf, lambda inner: st.one_of(st.lists(inner, max_size=4),
                                                         st.dictionaries(st.text(max_size=6), inner, max_size=4)),
                     max_leaves=12)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["solve", "estimate", "simulate", "oracle"]), _json, _json,
       st.lists(st.text(max_size=10), max_size=3), st.sampled_from(["converged", "not_converged", "ok"]))
def test_run_report_round_trip_property(command, cfg, results, warns, status):
    rep = cli.RunReport(command, {"c": cfg}, {"r": results}, warnings=warns, status=status)
    text = rep.to_json()
    again = cli.RunReport.from_json(text)
    assert again == rep
    assert again.to_json() == text
