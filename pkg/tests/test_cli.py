import json

import pytest

from lossnet import cli
from lossnet.core import knapsack
from lossnet.sim import FeasibilityFault


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_open_system(path, lam, mu):
    sc = knapsack(lam, mu, [1.0] * len(lam), [0.01] * len(lam), 1.0)
    path.write_text(json.dumps(sc.to_json()))
    return path


def data_rows(path):
    return [l for l in path.read_text().splitlines() if l and not l.startswith("#")]


def test_scenarios_lists_builtins(tmp_path, capsys):
    code, out, _ = run(capsys, "scenarios", "--out", str(tmp_path))
    assert code == 0
    names = [l.split()[0] for l in out.splitlines()]
    assert names == ["eq52", "s1", "s2", "s3", "s4", "s5"]


def test_bounds_reports_steady_optimum(tmp_path, capsys):
    code, out, _ = run(capsys, "bounds", "--scenario", "eq52", "--out", str(tmp_path))
    assert code == 0
    assert "steady_upper=207.2727" in out
    rows = data_rows(tmp_path / "bounds.csv")
    assert rows[0] == "t,upper,lower,steady_upper,steady_lower"
    assert len(rows) == 201


def test_zero_horizon_gives_zero_row(tmp_path, capsys):
    code, _, _ = run(capsys, "bounds", "--horizon", "0", "--out", str(tmp_path))
    assert code == 0
    rows = data_rows(tmp_path / "bounds.csv")[1:]
    assert rows and all(r.split(",")[:3] == ["0", "0", "0"] for r in rows)


def test_out_of_range_eps_is_a_config_error(tmp_path, capsys):
    code, _, err = run(capsys, "bounds", "--eps", "0.3", "--out", str(tmp_path))
    assert code == 2
    assert "eps must be in (0, 0.25]" in err


def test_unknown_scenario_is_a_config_error(tmp_path, capsys):
    code, _, err = run(capsys, "bounds", "--scenario", "nope", "--out", str(tmp_path))
    assert code == 2 and "nope" in err


def test_table_has_eleven_scales(tmp_path, capsys):
    code, _, _ = run(capsys, "table1", "--out", str(tmp_path))
    assert code == 0
    text = (tmp_path / "table1.csv").read_text()
    rows = data_rows(tmp_path / "table1.csv")
    assert len(rows) == 12
    assert "power_law" in text


def test_simulate_writes_trace(tmp_path, capsys):
    code, _, _ = run(capsys, "simulate", "--scenario", "s1", "--scale", "10", "--runs", "3", "--grid", "20", "--out", str(tmp_path))
    assert code == 0
    rows = data_rows(tmp_path / "trace_penalty.csv")
    assert rows[0].startswith("t,mean_reward,se_reward") and len(rows) == 21


def test_compare_shares_arrival_streams(tmp_path, capsys):
    code, out, _ = run(capsys, "compare", "--scenario", "s4", "--runs", "3", "--grid", "20", "--out", str(tmp_path))
    assert code == 0

    def digest(name):
        return [l for l in (tmp_path / name).read_text().splitlines() if l.startswith("# arrival_sha256=")]

    assert digest("trace_penalty.csv") == digest("trace_thinning.csv") != []


def test_rerun_is_bit_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "simulate", "--scenario", "s2", "--scale", "10", "--runs", "4", "--grid", "30", "--out", str(a))[0] == 0
    assert run(capsys, "rerun", str(a / "manifest.json"), "--out", str(b))[0] == 0
    man = json.loads((a / "manifest.json").read_text())
    for name in man["outputs"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_polytope_command_writes_membership(tmp_path, capsys):
    scen = write_open_system(tmp_path / "open.json", [3.0, 2.0], [1.0, 1.0])
    poly = tmp_path / "p.json"
    poly.write_text(json.dumps({"D": [[1.0, -1.0], [1.0, 1.0]], "h": [0.0, 2.5]}))
    out = tmp_path / "o"
    code, text, err = run(capsys, "polytope", "--scenario", str(scen), "--polytope", str(poly), "--scale", "100", "--runs", "5", "--grid", "20", "--out", str(out))
    assert code == 0, err
    rows = data_rows(out / "membership.csv")
    assert rows[0] == "t,slack_1,slack_2,inside"
    assert all(r.endswith(",1") for r in rows[1:])


def test_rate_assumption_violation_exits_three(tmp_path, capsys):
    scen = write_open_system(tmp_path / "slow.json", [3.0, 0.2], [1.0, 0.1])
    poly = tmp_path / "p.json"
    poly.write_text(json.dumps({"D": [[1.0, -1.0], [1.0, 1.0]], "h": [0.0, 2.5]}))
    code, _, err = run(capsys, "polytope", "--scenario", str(scen), "--polytope", str(poly), "--runs", "2", "--out", str(tmp_path / "o"))
    assert code == 3 and "gamma" in err


def test_feasibility_fault_exits_four(tmp_path, capsys, monkeypatch):
    def broken(*a, **k):
        raise FeasibilityFault("capacity exceeded")

    monkeypatch.setattr(cli, "simulate_ensemble", broken)
    code, _, err = run(capsys, "simulate", "--scenario", "s1", "--scale", "10", "--runs", "2", "--out", str(tmp_path))
    assert code == 4 and "feasibility" in err


def test_missing_scenario_file_exits_two(tmp_path, capsys):
    code, _, _ = run(capsys, "bounds", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path))
    assert code == 2


def test_argument_errors_exit_through_argparse(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--policy", "bogus"])
    assert exc.value.code == 2
