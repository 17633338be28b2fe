import json
import math
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fblopt import bench, cli
from fblopt.allocator import AllocationProblem, solve_integer, solve_joint
from fblopt.errors import ValidationError


# ------------------------------------------------------------------ scenarios

def test_defaults_match_simulation_setup():
    sc = bench.scenario_from_dict({"experiment": "allocate"})
    pb = sc.problem
    assert (pb["m_total"], pb["e_total"], pb["d_bits"]) == (800.0, 2400.0, 480.0)
    assert (pb["sigma2"], pb["eps_max"], pb["gamma_th"]) == (0.01, 0.1, 1.0)
    assert sc.sweep is None and sc.seed == 0 and sc.schema_version == 1


def test_unknown_fields_are_named():
    with pytest.raises(ValidationError) as err:
        bench.scenario_from_dict({"experiment": "allocate", "colour": 1})
    assert err.value.field == "colour"
    with pytest.raises(ValidationError) as err:
        bench.scenario_from_dict({"experiment": "allocate", "problem": {"m_totl": 5}})
    assert err.value.field == "problem.m_totl"
    with pytest.raises(ValidationError) as err:
        bench.scenario_from_dict({"experiment": "allocate", "sweep": {"variable": "nope", "values": [1]}})
    assert "nope" in str(err.value)


def test_schema_checks():
    for bad, field in (({"experiment": "plot"}, "experiment"),
                       ({"experiment": "allocate", "schema_version": 9}, "schema_version"),
                       ({"experiment": "allocate", "problem": {"n_users": 0}}, "problem.n_users"),
                       ({"experiment": "allocate", "problem": {"m_total": "big"}}, "problem.m_total"),
                       ({"experiment": "allocate", "seed": 1.5}, "seed")):
        with pytest.raises(ValidationError) as err:
            bench.scenario_from_dict(bad)
        assert err.value.field == field


def test_load_scenario_files(tmp_path):
    f = tmp_path / "s.json"
    f.write_text(json.dumps({"experiment": "relay", "problem": {"gain": [1.0, 2.0]}}))
    sc = bench.load_scenario(f)
    assert sc.problem["gain"] == [1.0, 2.0]
    with pytest.raises(OSError):
        bench.load_scenario(tmp_path / "missing.json")
    f.write_text("{not json")
    with pytest.raises(ValidationError):
        bench.load_scenario(f)


def test_scenario_roundtrip():
    sc = bench.default_scenario("fig5")
    again = bench.scenario_from_dict(sc.to_dict())
    assert again == sc


# ------------------------------------------------------------------------ CSV

def test_csv_roundtrip_exact():
    rows = [{"a": 0.1 + 0.2, "b": 3, "c": "x,y", "d": True, "e": 1e-300},
            {"a": -2.5e17, "b": -1, "c": 'q"t', "d": False, "e": 5.0}]
    assert bench.parse_csv(bench.format_csv(rows)) == rows


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=6))
def test_csv_float_roundtrip_property(xs):
    rows = [{"x": x} for x in xs]
    back = bench.parse_csv(bench.format_csv(rows))
    assert [r["x"] for r in back] == xs


def test_csv_empty_and_nan(tmp_path):
    path = tmp_path / "o.csv"
    bench.emit_csv([], path)
    assert path.read_bytes() == b"\r\n"
    rows = [{"k": 1.0, "v": math.nan}]
    text = bench.format_csv(rows)
    assert text.splitlines()[1] == "1.0,,nan:v"
    back = bench.parse_csv(text)
    assert math.isnan(back[0]["v"]) and back[0]["status"] == ""


def test_header_is_stable_across_rows():
    text = bench.format_csv([{"a": 1, "b": 2}, {"b": 3, "c": 4}])
    assert text.splitlines()[0] == "a,b,c"
    assert text.splitlines()[2] == ",3,4"


# ---------------------------------------------------------------- experiments

def test_fig5_objectives_decrease():
    rows = bench.run_experiment(bench.default_scenario("fig5"))
    for method in ("joint", "integer", "alternating"):
        objs = [r["objective"] for r in rows if r["method"] == method]
        assert len(objs) == 3
        assert objs[0] > objs[1] > objs[2]


def test_fig6_payloads():
    sc = bench.default_scenario("fig6")
    d = bench.allocation_problem(sc.problem).d_bits
    assert d == pytest.approx((384.0, 432.0, 480.0, 528.0, 576.0), rel=1e-15)
    rows = bench.run_experiment(sc)
    assert all(r["status"] == "ok" for r in rows)
    assert all(len([k for k in r if k.startswith("m_") and k != "m_total"]) == 5 for r in rows)


def test_fig8_equal_gain_row():
    rows = bench.run_experiment(bench.default_scenario("fig8"))
    eq = next(r for r in rows if r["gain[1]"] == 1.0)
    assert eq["m_ratio"] == pytest.approx(1.0, abs=1e-3)
    assert eq["p_ratio"] == pytest.approx(1.0, abs=1e-3)
    assert [r["index"] for r in rows] == list(range(5))


def test_error_isolation():
    sc = bench.scenario_from_dict({
        "experiment": "allocate",
        "sweep": {"variable": "e_total", "values": [2400.0, 50.0, 1800.0]},
    })
    rows = bench.run_experiment(sc)
    assert [r["status"] for r in rows] == ["ok", "error", "ok"]
    assert rows[1]["error"].startswith("InfeasibleError")


def test_compare_tiny_instance():
    pr = AllocationProblem(d_bits=(40.0, 40.0), gain=(1.0, 2.0), m_total=60.0, e_total=180.0)
    rows = {r["solver"]: r for r in bench.compare_solvers(pr, seeds=3, seed=5)}
    assert rows["integer"]["status"] == "ok"
    assert rows["joint+round"]["objective"] == pytest.approx(rows["integer"]["objective"], rel=1e-3)
    assert rows["alternating"]["objective"] >= rows["joint"]["objective"] - 1e-9
    assert rows["alternating"]["objective"] <= rows["alternating"]["objective_median"] <= rows["alternating"]["objective_worst"]
    assert rows["joint"]["objective"] <= solve_integer(pr).objective + 1e-12
    assert rows["joint"]["objective"] == pytest.approx(solve_joint(pr).objective, rel=1e-12)


def test_compare_large_instance_skips_integer():
    pr = AllocationProblem(d_bits=(480.0,) * 5, gain=(1.0,) * 5, m_total=800.0, e_total=2400.0)
    rows = {r["solver"]: r for r in bench.compare_solvers(pr, seeds=1)}
    assert rows["integer"]["status"] == "skipped: cap"
    assert rows["integer"]["enumeration_count"] > 10**6


def test_compare_seeded_determinism():
    pr = AllocationProblem(d_bits=(40.0, 40.0), gain=(1.0, 2.0), m_total=60.0, e_total=180.0)
    assert bench.compare_solvers(pr, seeds=1, seed=3) == bench.compare_solvers(pr, seeds=1, seed=3)


# ------------------------------------------------------------------------ CLI

def test_cli_writes_csv(tmp_path):
    out = tmp_path / "eval.csv"
    assert cli.run(["eval", "--out", str(out)]) == 0
    row = bench.read_csv(out)[0]
    assert row["m"] == 800.0 and 0 <= row["eps"] <= 1


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.run(["allocate", "--scenario", str(tmp_path / "none.json")]) == 5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "allocate", "extra": 1}))
    assert cli.run(["allocate", "--scenario", str(bad)]) == 2
    assert "extra" in capsys.readouterr().err
    infeasible = tmp_path / "inf.json"
    infeasible.write_text(json.dumps({"experiment": "allocate", "problem": {"e_total": 50.0}}))
    assert cli.run(["allocate", "--scenario", str(infeasible), "--out", str(tmp_path / "x.csv")]) == 3
    assert cli.run(["fading", "--phi", "0"]) == 2
    assert cli.run(["bogus"]) == 2
    mismatch = tmp_path / "mm.json"
    mismatch.write_text(json.dumps({"experiment": "relay"}))
    assert cli.run(["allocate", "--scenario", str(mismatch)]) == 2


def test_cli_module_entry_point(tmp_path):
    out = tmp_path / "r.csv"
    proc = subprocess.run([sys.executable, "-m", "fblopt", "relay", "--out", str(out)],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert bench.read_csv(out)[0]["m_ratio"] == pytest.approx(1.0, abs=1e-3)
