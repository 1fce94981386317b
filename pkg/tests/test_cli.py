import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from conftest import R1_COV, R1_MEAN
from tangency_forecast import report
from tangency_forecast.cli import main
from tangency_forecast.config import ConfigError, load_config, parse_config_text
from tangency_forecast.data import ReturnPanel, write_price_csv
from tangency_forecast.forecast import ForecastDataset, run_online
from tangency_forecast.synthetic import prices_from_returns, stationary_returns

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "synthetic"


def write_config(path: Path, **keys) -> Path:
    path.write_text("".join(f"{k} = {v}\n" for k, v in keys.items()))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def tree(directory: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.fixture
def fixture_dir(tmp_path):
    d = tmp_path / "fx"
    shutil.copytree(FIXTURE, d)
    return d


def r1_prices(tmp_path, n=21):
    returns = stationary_returns(R1_MEAN, R1_COV, n, seed=1, match_moments=True, symbols=("A", "B"))
    path = tmp_path / "r1.csv"
    write_price_csv(prices_from_returns(returns), path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


# --------------------------------------------------------------------------
# config


def test_parse_config_text(tmp_path):
    values = parse_config_text("# comment\nprices = a.csv, b.csv\nlookback_len = 42  # inline\n\n", tmp_path)
    assert values["prices"] == [tmp_path / "a.csv", tmp_path / "b.csv"]
    assert values["lookback_len"] == 42


@pytest.mark.parametrize("text", ["bogus = 1\n", "no equals sign\n", "lookback_len = x\n", "in_sample_end = soon\n"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_config_overrides_and_ordering(tmp_path):
    cfg_path = write_config(tmp_path / "c.cfg", prices="p.csv", cost_rate="0.01", risk_free_rate="0")
    cfg = load_config(cfg_path, {"cost_rate": 0.0, "as_of": "2020-01-02"})
    assert cfg.cost_rate == 0.0
    assert cfg.as_of == np.datetime64("2020-01-02")
    assert cfg.strategy().cost_rate == 0.0
    bad = write_config(tmp_path / "d.cfg", prices="p.csv", in_sample_end="2020-01-01", out_of_sample_end="2019-01-01")
    with pytest.raises(ConfigError):
        load_config(bad)


# --------------------------------------------------------------------------
# frontier


def test_frontier_r1_vertex(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", prices=r1_prices(tmp_path), risk_free_rate="0.05", out_dir=tmp_path / "out")
    assert run("frontier", "--config", cfg) == 0
    summary = json.loads((tmp_path / "out" / "frontier.json").read_text())
    assert summary["coefficients"]["r_mvp"] == pytest.approx(0.15, rel=1e-10)
    assert summary["coefficients"]["sigma_mvp"] == pytest.approx(0.1414214, abs=1e-7)
    assert summary["coefficients"]["u"] == pytest.approx(0.3535534, abs=1e-7)
    assert summary["tangency"]["ret"] == pytest.approx(0.175, rel=1e-9)
    np.testing.assert_allclose(summary["tangency"]["weights"], [0.25, 0.75], atol=1e-9)
    rows = read_csv(tmp_path / "out" / "frontier_curve.csv")
    assert rows[0] == ["sigma", "ret", "branch"]
    sig = np.array([float(r[0]) for r in rows[1:]])
    ret = np.array([float(r[1]) for r in rows[1:]])
    assert sig.min() == pytest.approx(0.1414214, abs=1e-7)
    assert ret[sig.argmin()] == pytest.approx(0.15, rel=1e-10)


def test_frontier_insufficient_history(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.cfg", prices=r1_prices(tmp_path, 40), risk_free_rate="0.05", out_dir=tmp_path / "out")
    assert run("frontier", "--config", cfg, "--as-of", "2000-01-10") == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: InsufficientHistoryError:")
    assert not (tmp_path / "out").exists() or not any((tmp_path / "out").iterdir())


def test_frontier_degenerate_exit(tmp_path, capsys):
    # two identical assets: the ridge makes the covariance invertible but
    # the frontier collapses onto a single point
    dates = np.datetime64("2000-01-03") + np.arange(30)
    rng = np.random.default_rng(0)
    r = rng.normal(0, 0.01, 30)
    panel = ReturnPanel(dates, ("A", "B"), np.column_stack([r, r]))
    write_price_csv(prices_from_returns(panel), tmp_path / "p.csv")
    cfg = write_config(tmp_path / "c.cfg", prices=tmp_path / "p.csv", risk_free_rate="0", out_dir=tmp_path / "out")
    assert run("frontier", "--config", cfg) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_frontier_with_projection(fixture_dir):
    cfg = fixture_dir / "config.cfg"
    assert run("frontier", "--config", cfg, "--as-of", "2003-06-02", "--out-dir", fixture_dir / "f") == 0
    summary = json.loads((fixture_dir / "f" / "frontier.json").read_text())
    assert summary["projection"]["method"] in ("newton", "fallback")
    rows = read_csv(fixture_dir / "f" / "projection.csv")
    assert tuple(rows[0]) == report.PROJECTION_COLUMNS
    assert float(rows[1][3]) == pytest.approx(summary["projection"]["point"]["ret"], rel=1e-15)


def test_frontier_rerun_identical(fixture_dir):
    cfg = fixture_dir / "config.cfg"
    assert run("frontier", "--config", cfg, "--out-dir", fixture_dir / "a") == 0
    assert run("frontier", "--config", cfg, "--out-dir", fixture_dir / "b") == 0
    assert tree(fixture_dir / "a") == tree(fixture_dir / "b")


# --------------------------------------------------------------------------
# coeffs


def test_coeffs_counting(tmp_path):
    rng = np.random.default_rng(2)
    dates = np.datetime64("2000-01-03") + np.arange(299)
    panel = ReturnPanel(dates, ("A", "B", "C"), rng.normal(5e-4, 0.01, (299, 3)))
    write_price_csv(prices_from_returns(panel), tmp_path / "p.csv")
    assert len(read_csv(tmp_path / "p.csv")) == 301  # header + 300 prices
    cfg = write_config(tmp_path / "c.cfg", prices=tmp_path / "p.csv", risk_free_rate="0", out_dir=tmp_path / "out")
    assert run("coeffs", "--config", cfg) == 0
    rows = read_csv(tmp_path / "out" / "coeffs_252.csv")
    assert rows[0] == ["date", "r_mvp", "sigma_mvp", "u", "window_len"]
    assert len(rows) - 1 == 48
    assert len(read_csv(tmp_path / "out" / "coeffs_21.csv")) - 1 == 299 - 21 + 1


def test_coeffs_periodic_panel_constant(tmp_path):
    rng = np.random.default_rng(3)
    block = rng.normal(5e-4, 0.01, (21, 3))
    ret = np.vstack([block] * 4)
    dates = np.datetime64("2000-01-03") + np.arange(ret.shape[0])
    write_price_csv(prices_from_returns(ReturnPanel(dates, ("A", "B", "C"), ret)), tmp_path / "p.csv")
    cfg = write_config(tmp_path / "c.cfg", prices=tmp_path / "p.csv", risk_free_rate="0",
                       feature_window="42", out_dir=tmp_path / "out")
    assert run("coeffs", "--config", cfg) == 0
    rows = np.array([[float(x) for x in r[1:4]] for r in read_csv(tmp_path / "out" / "coeffs_21.csv")[1:]])
    np.testing.assert_allclose(rows, np.broadcast_to(rows[0], rows.shape), rtol=1e-8)


def test_coeffs_missing_file(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.cfg", prices=tmp_path / "nope.csv", risk_free_rate="0", out_dir=tmp_path / "out")
    assert run("coeffs", "--config", cfg) == 1
    assert capsys.readouterr().err.startswith("error: FileNotFoundError")


def test_missing_config(tmp_path, capsys):
    assert run("coeffs", "--config", tmp_path / "none.cfg") == 1
    assert "ConfigError" in capsys.readouterr().err


# --------------------------------------------------------------------------
# forecast


def test_forecast_outputs(fixture_dir):
    assert run("forecast", "--config", fixture_dir / "config.cfg", "--out-dir", fixture_dir / "o") == 0
    out = fixture_dir / "o"
    assert read_csv(out / "forecast_log.csv")[0] == ["date", "pred_r_mvp", "pred_sigma_mvp", "pred_u", "flags"]
    table = read_csv(out / "r2_table.csv")
    assert tuple(table[0]) == report.R2_COLUMNS
    assert len(table) == 4
    assert table[1][0].startswith("r_mvp[t+21](21)")
    text = (out / "r2_table.txt").read_text().splitlines()
    assert text[0].split("  ")[0] == "VARX Model" and "OoS R2 (%)" in text[0]
    assert json.loads((out / "model.json").read_text())["mask"]


def test_forecast_white_noise(tmp_path):
    panel = stationary_returns([4e-4, 6e-4, 5e-4], np.diag([1e-4, 2e-4, 1.5e-4]), 3000, seed=5)
    write_price_csv(prices_from_returns(panel), tmp_path / "p.csv")
    cfg = write_config(tmp_path / "c.cfg", prices=tmp_path / "p.csv", risk_free_rate="0",
                       in_sample_end=panel.dates[800], out_dir=tmp_path / "out")
    assert run("forecast", "--config", cfg) == 0
    r2 = [float(r[1]) for r in read_csv(tmp_path / "out" / "r2_table.csv")[1:]]
    assert all(v <= 5.0 for v in r2)  # percent


def test_forecast_exact_linear_table(tmp_path):
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, (120, 4))
    y = np.column_stack([2 * x[:, 0] + 1, 0.5 * x[:, 1] + 0.25, 0.3 * x[:, 1] - 1.5 * x[:, 3] + 2])
    dates = np.datetime64("2000-01-03") + np.arange(141)
    ds = ForecastDataset(dates[:120], x, y, dates[21:141], 21)
    log, _ = run_online(ds, dates[50])
    report.write_r2_table(log.r2(), report.equation_labels(21, 21, 252), tmp_path)
    values = [float(r[1]) for r in read_csv(tmp_path / "r2_table.csv")[1:]]
    np.testing.assert_allclose(values, 100.0, atol=1e-8)
    assert all(line.rstrip().endswith("100") for line in (tmp_path / "r2_table.txt").read_text().splitlines()[2:])


def test_forecast_too_short(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.cfg", prices=r1_prices(tmp_path, 100), risk_free_rate="0",
                       in_sample_end="2000-02-01", out_dir=tmp_path / "out")
    assert run("forecast", "--config", cfg) == 1
    assert capsys.readouterr().err.startswith("error: ")


# --------------------------------------------------------------------------
# backtest


def test_backtest_bundled_fixture(fixture_dir):
    out = fixture_dir / "bt"
    assert run("backtest", "--config", fixture_dir / "config.cfg", "--out-dir", out) == 0
    for key in report.RUN_ORDER:
        rows = read_csv(out / f"results_{key}.csv")
        assert rows[0] == ["date", "net_return", "gross_return", "cost", "wealth", "turnover", "flag"]
    metrics = read_csv(out / "metrics.csv")
    assert metrics[0] == ["portfolio", "sharpe", "sortino", "annual_return", "max_drawdown"]
    assert len(metrics) == 6
    alpha = read_csv(out / "alpha.csv")
    assert alpha[0] == ["portfolio", "alpha", "p_value"]
    assert len(alpha) == 5
    assert read_csv(out / "wealth.csv")[0] == ["date", *report.RUN_ORDER]


def test_backtest_cost_isolation(fixture_dir):
    cfg = fixture_dir / "config.cfg"
    assert run("backtest", "--config", cfg, "--cost-rate", "0", "--out-dir", fixture_dir / "c0") == 0
    assert run("backtest", "--config", cfg, "--cost-rate", "0.01", "--out-dir", fixture_dir / "c1") == 0
    a = read_csv(fixture_dir / "c0" / "results_min_distance.csv")[1:]
    b = read_csv(fixture_dir / "c1" / "results_min_distance.csv")[1:]
    assert [r[2] for r in a] == [r[2] for r in b]
    assert [r[1] for r in a] != [r[1] for r in b]


def test_backtest_rerun_byte_identical(fixture_dir):
    cfg = fixture_dir / "config.cfg"
    assert run("backtest", "--config", cfg, "--out-dir", fixture_dir / "x") == 0
    assert run("backtest", "--config", cfg, "--out-dir", fixture_dir / "y") == 0
    assert tree(fixture_dir / "x") == tree(fixture_dir / "y")


def test_backtest_failure_leaves_no_outputs(fixture_dir, capsys):
    cfg = fixture_dir / "config.cfg"
    text = cfg.read_text().replace("index_prices = index.csv\n", "")
    cfg.write_text(text)
    assert run("backtest", "--config", cfg, "--out-dir", fixture_dir / "z") == 1
    assert len(capsys.readouterr().err.strip().splitlines()) == 1
    assert not (fixture_dir / "z").exists()
    assert not list(fixture_dir.glob(".staging-*"))


def test_synth_command(tmp_path):
    assert run("synth", "--out-dir", tmp_path / "s", "--seed", 3, "--n-days", 400) == 0
    assert sorted(p.name for p in (tmp_path / "s").iterdir()) == ["config.cfg", "index.csv", "prices.csv", "rf.csv"]
    cfg = load_config(tmp_path / "s" / "config.cfg")
    assert cfg.prices == [tmp_path / "s" / "prices.csv"]


def test_bundled_fixture_matches_generator(tmp_path):
    assert run("synth", "--out-dir", tmp_path / "s") == 0
    assert tree(tmp_path / "s") == tree(FIXTURE)
