import numpy as np
import pandas as pd
import pytest
import yaml

from mrpdesign.cli import build_parser, load_config, main, resolve_config
from mrpdesign.errors import ConfigError
from mrpdesign.experiment import DEFAULT_CONFIG
from mrpdesign.writers import read_json

SMALL_MARKET = ["--assets", "4", "--rank", "3", "--length", "160", "--seed", "11"]
SMALL_WINDOWS = ["--p", "2", "--tin", "80", "--tout", "40", "--windows", "2"]


def _out(tmp_path, name="out"):
    return ["--out", str(tmp_path / name)]


@pytest.fixture
def noise_csv(tmp_path, rng):
    path = tmp_path / "noise.csv"
    df = pd.DataFrame(rng.standard_normal((200, 3)), columns=["a", "b", "c"])
    df.to_csv(path, index=False)
    return path


class TestUsage:
    def test_no_command(self):
        assert main([]) == 2

    def test_help(self):
        assert main(["--help"]) == 0

    def test_bad_choice(self, tmp_path):
        assert main(["design", "--psi", "nuclear", *_out(tmp_path)]) == 2

    def test_rank_above_assets(self, tmp_path):
        argv = ["generate", "--assets", "6", "--rank", "9", *_out(tmp_path)]
        assert main(argv) == 2
        error = read_json(tmp_path / "out" / "error.json")
        assert error["error"] == "ConfigError"
        assert error["exit_code"] == 2

    def test_missing_data_file(self, tmp_path):
        argv = ["design", "--data", str(tmp_path / "missing.csv"), *_out(tmp_path)]
        assert main(argv) == 2

    def test_output_under_a_file(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        assert main(["generate", "--out", str(blocker / "out")]) == 5

    def test_unwritable_output_file(self, tmp_path):
        (tmp_path / "out" / "prices.csv").mkdir(parents=True)
        assert main(["generate", *_out(tmp_path)]) == 5
        error = read_json(tmp_path / "out" / "error.json")
        assert error["error"] == "DataError"
        assert error["exit_code"] == 5


class TestConfigResolution:
    def test_defaults_only(self):
        assert load_config(None) == DEFAULT_CONFIG

    def test_file_then_flags(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"n-starts": 3, "p": 2, "windows": 2}))
        args = build_parser().parse_args(
            ["experiment", "--config", str(path), "--windows", "1"]
        )
        cfg = resolve_config(args)
        assert (cfg.n_starts, cfg.p, cfg.windows) == (3, 2, 1)
        assert cfg.tin == DEFAULT_CONFIG["tin"]

    def test_unset_store_true_flags_do_not_override(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({"parquet": True}))
        args = build_parser().parse_args(["experiment", "--config", str(path)])
        assert resolve_config(args).parquet

    @pytest.mark.parametrize("text", ["lags: 3\n", "- 1\n- 2\n", "p: [unclosed\n"])
    def test_bad_file(self, tmp_path, text):
        path = tmp_path / "config.yaml"
        path.write_text(text)
        assert main(["experiment", "--config", str(path), *_out(tmp_path)]) == 2

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "missing.yaml"))


def test_generate_is_reproducible(tmp_path):
    argv = ["generate", *SMALL_MARKET, "--p", "2", "--tin", "80"]
    assert main([*argv, *_out(tmp_path, "a")]) == 0
    assert main([*argv, *_out(tmp_path, "b")]) == 0
    for name in ("prices.csv", "market.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    prices = pd.read_csv(tmp_path / "a" / "prices.csv", comment="#")
    assert prices.shape == (160, 4)


class TestDesign:
    def test_infeasible_level(self, tmp_path):
        argv = ["design", *SMALL_MARKET, "--tin", "80", "--nu", "1e-12"]
        assert main([*argv, *_out(tmp_path)]) == 4
        error = read_json(tmp_path / "out" / "error.json")
        assert error["error"] == "InfeasibleVarianceError"
        assert error["nu"] == 1e-12
        assert error["nu_min"] > error["nu"]

    def test_csv_input(self, tmp_path, noise_csv):
        argv = ["design", "--data", str(noise_csv), "--p", "1", "--max-iter", "10000"]
        assert main([*argv, *_out(tmp_path)]) == 0
        weights = read_json(tmp_path / "out" / "weights.json")
        assert weights["spread_names"] == ["a", "b", "c"]
        assert np.sum(weights["w"]) == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_allclose(weights["hedge"], np.eye(3))

    def test_blank_cell(self, tmp_path):
        path = tmp_path / "prices.csv"
        path.write_text("a,b\n1.0,2.0\n1.1,\n1.2,2.2\n")
        assert main(["design", "--data", str(path), *_out(tmp_path)]) == 5
        error = read_json(tmp_path / "out" / "error.json")
        assert (error["row"], error["column"]) == (2, "b")

    def test_iteration_cap(self, tmp_path):
        argv = ["design", *SMALL_MARKET, "--tin", "80", "--max-iter", "1"]
        assert main([*argv, "--n-starts", "1", *_out(tmp_path)]) == 3
        weights = read_json(tmp_path / "out" / "weights.json")
        assert not weights["converged"]
        assert weights["iterations"] == 1


def test_design_then_backtest(tmp_path):
    design = ["design", *SMALL_MARKET, "--tin", "80", "--max-iter", "10000"]
    assert main([*design, *_out(tmp_path)]) == 0
    weights = str(tmp_path / "out" / "weights.json")
    backtest = ["backtest", *SMALL_MARKET, "--tin", "80", "--tout", "40"]
    assert main([*backtest, "--weights", weights, *_out(tmp_path, "bt")]) == 0
    doc = read_json(tmp_path / "bt" / "backtest.json")
    assert len(doc["windows"]) == 2
    assert (tmp_path / "bt" / "reports" / "mrp_window1.csv").is_file()


def test_experiment(tmp_path):
    argv = ["experiment", *SMALL_MARKET, *SMALL_WINDOWS, "--n-starts", "2"]
    assert main([*argv, "--compare", "mrp", "--parquet", *_out(tmp_path)]) == 0
    summary = read_json(tmp_path / "out" / "summary.json")
    (row,) = summary["strategies"]
    assert row["strategy"] == "mrp"
    assert len(row["sharpe_by_window"]) == 2
    assert (tmp_path / "out" / "plot_series.parquet").is_file()


def test_study(tmp_path):
    argv = ["study", *SMALL_MARKET, *SMALL_WINDOWS, "--windows", "1", "--seeds", "2"]
    assert main([*argv, "--n-starts", "2", *_out(tmp_path)]) == 0
    study = read_json(tmp_path / "out" / "study.json")
    assert study["seeds"] == [11, 12]


@pytest.mark.slow
def test_default_experiment(tmp_path):
    assert main(["experiment", *_out(tmp_path)]) == 0
    summary = read_json(tmp_path / "out" / "summary.json")
    assert [row["strategy"] for row in summary["strategies"]] == [
        "mrp",
        *(f"spread_{n}" for n in range(1, 6)),
    ]
