import json
from importlib import resources

import jsonschema
import pytest

from mindrawdown.cli import main
from mindrawdown.data import write_panel

from conftest import grw_panel


def _schema(name):
    return json.loads(resources.files("mindrawdown").joinpath("schemas", name).read_text())


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    panel, index = grw_panel(seed=5)
    write_panel(panel, root / "prices.csv")
    (root / "index.csv").write_text(
        "date,value\n" + "".join(f"{d},{float(v)!r}\n" for d, v in zip(index.dates, index.values)))
    return root


def test_drawdown_table(capsys):
    assert main(["drawdown", "--values", "50,70,60,90,40,60", "--lookback", "5"]) == 0
    out = capsys.readouterr().out
    assert "55.56" in out and "17.20" in out and "52.84" in out


def test_drawdown_bad_values(capsys):
    assert main(["drawdown", "--values", "1,x"]) == 2
    assert main(["drawdown", "--values", "1,0,2"]) == 2


def test_solve_writes_valid_result(files, tmp_path, capsys):
    out = tmp_path / "solve"
    code = main(["solve", "--prices", str(files / "prices.csv"), "--objective", "minmax",
                 "--delta", "1", "--out", str(out)])
    assert code == 0
    result = json.loads((out / "solve_result.json").read_text())
    jsonschema.validate(result, _schema("solve_result.schema.json"))
    assert result["status"] == "ProvenOptimal"
    assert sum(result["weights"].values()) == pytest.approx(1.0)
    assert (out / "timing.json").exists()


def test_solve_without_solution_exits_1(files, tmp_path):
    out = tmp_path / "infeasible"
    with pytest.warns(UserWarning):
        code = main(["solve", "--prices", str(files / "prices.csv"), "--objective", "minmax",
                     "--delta", "0.1", "--out", str(out)])
    assert code == 1
    result = json.loads((out / "solve_result.json").read_text())
    jsonschema.validate(result, _schema("solve_result.schema.json"))
    assert result["holdings"] is None


def test_backtest_from_config_is_byte_identical(files, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(
        f"prices: {files / 'prices.csv'}\nindex: {files / 'index.csv'}\n"
        "objective: minmax\ndelta: 1.0\ndeterministic: true\nout: out\n")
    assert main(["backtest", "--config", str(cfg)]) == 0
    first = (tmp_path / "out" / "report.json").read_bytes()
    csv_first = (tmp_path / "out" / "stitched.csv").read_bytes()
    assert main(["backtest", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "report.json").read_bytes() == first
    assert (tmp_path / "out" / "stitched.csv").read_bytes() == csv_first
    report = json.loads(first)
    jsonschema.validate(report, _schema("backtest_report.schema.json"))
    assert report["config"]["deterministic"] is True


def test_flags_override_config(files, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"prices: {files / 'prices.csv'}\nobjective: minavg\ndelta: 1.0\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--objective", "minmax", "--out", str(out)]) == 0
    assert json.loads((out / "solve_result.json").read_text())["objective"] == "minmax"


@pytest.mark.parametrize("args", [
    ["solve"],
    ["solve", "--prices", "does-not-exist.csv"],
    ["backtest", "--config", "missing.yaml"],
])
def test_usage_errors_exit_2(args, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(args) == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("prices: p.csv\nlookbak: 3\n")
    assert main(["solve", "--config", str(cfg)]) == 2


def test_malformed_prices(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("date,asset,price\n2020-01-01,A,oops\n")
    assert main(["solve", "--prices", str(p), "--out", str(tmp_path / "o")]) == 2


def test_solve_minavg_on_two_paths_matches_grid(tmp_path):
    import numpy as np
    from mindrawdown.data import PricePanel
    from oracles import grid_oracle

    V = np.array([[50, 70, 60, 90, 40, 60], [50, 77.45, 55.97, 29.76, 57.11, 60]], float)
    write_panel(PricePanel.from_array(V, ["SOLID", "DOTTED"], [f"d{k}" for k in range(6)]),
                tmp_path / "p.csv")
    cfg = tmp_path / "c.yaml"
    cfg.write_text("prices: p.csv\nT: 6\nD: 5\ndelta: 1.0\nobjective: minavg\nout: res\n")
    assert main(["solve", "--config", str(cfg)]) == 0
    result = json.loads((tmp_path / "res" / "solve_result.json").read_text())
    best, _ = grid_oracle(V, 5, "minavg")
    assert result["objective_value"] == pytest.approx(best, abs=1e-2)


def test_backtest_objective_tag_in_summary_row(files, tmp_path, capsys):
    rows = {}
    for objective in ("minmax", "minavg"):
        code = main(["backtest", "--prices", str(files / "prices.csv"), "--objective", objective,
                     "--delta", "1", "--deterministic", "--node-limit", "30",
                     "--out", str(tmp_path / objective)])
        assert code == 0
        rows[objective] = capsys.readouterr().out.strip().splitlines()[-1]
    assert rows["minmax"].startswith("MINMAX") and rows["minavg"].startswith("MINAVG")
