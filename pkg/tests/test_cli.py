"""
Configuration and command-line tests

Small flat market, few paths: these check plumbing, exit codes and
artifacts rather than statistical accuracy.
"""
import json

import pytest

from commodity_lv.cli import EXIT_BELOW_THRESHOLD, EXIT_ERROR, EXIT_OK, main
from commodity_lv.config import CALIBRATION_SEED_OFFSET, cli_overrides, load_config
from commodity_lv.exceptions import ConfigError
from commodity_lv.models import AccumulatorKind, RateMode
from commodity_lv.reports import read_csv, read_header, read_json


def write_ini(path, data_dir, extra=""):
    path.write_text(
        "[market]\n"
        f"futures = {data_dir / 'futures.csv'}\n"
        f"vols = {data_dir / 'vols.csv'}\n"
        f"discount = {data_dir / 'discount.csv'}\n"
        f"returns = {data_dir / 'returns.csv'}\n"
        "\n[backbone]\n"
        "rho_source = estimate\n"
        "\n[calibration]\n"
        "slices_per_year = 12\n"
        "y_nodes = 21\n"
        "mc_paths = 200\n"
        "\n[simulation]\n"
        "n_paths = 500\n"
        "steps_per_year = 24\n"
        + extra,
        encoding="utf-8",
    )
    return path


@pytest.fixture
def ini(tmp_path, market_dir):
    return write_ini(tmp_path / "run.ini", market_dir, "\n[validation]\nse_multiple = 3.0\n")


def run(ini, command, out, *flags):
    return main([command, "--config", str(ini), "--out", str(out), "--deterministic", *flags])


def test_config_precedence(tmp_path, market_dir, monkeypatch):
    monkeypatch.setenv("CLV_SIMULATION__N_PATHS", "777")
    monkeypatch.setenv("CLV_SIMULATION__STEPS_PER_YEAR", "96")
    config = load_config(write_ini(tmp_path / "run.ini", market_dir))
    assert config.simulation.n_paths == 500, "INI beats the environment"
    assert config.simulation.steps_per_year == 24
    config = load_config(None)
    assert config.simulation.n_paths == 777
    assert config.simulation.steps_per_year == 96
    config = load_config(tmp_path / "run.ini", cli_overrides(paths=123, seed=9))
    assert config.simulation.n_paths == 123
    assert config.simulation.seed == 9
    assert config.calibration.seed == 9 + CALIBRATION_SEED_OFFSET


def test_config_parsing(tmp_path, market_dir):
    extra = ("\n[tiv]\naccumulator = mixture\nmixture = linear:0.25, quadratic:0.75\n"
             "\n[validation]\nmoneyness = 0.9, 1.0, 1.1\n")
    config = load_config(write_ini(tmp_path / "run.ini", market_dir, extra))
    assert config.tiv.accumulator == AccumulatorKind.MIXTURE
    assert config.tiv.mixture == {AccumulatorKind.LINEAR: 0.25, AccumulatorKind.QUADRATIC: 0.75}
    assert config.validation.moneyness == [0.9, 1.0, 1.1]
    assert config.rates.mode == RateMode.DETERMINISTIC


def test_config_errors(tmp_path, market_dir):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        load_config(write_ini(tmp_path / "run.ini", market_dir, "\n[rates]\nmode = vasicek\n"))


def test_hashes(tmp_path, market_dir):
    path = write_ini(tmp_path / "run.ini", market_dir)
    base = load_config(path)
    more_paths = load_config(path, cli_overrides(paths=900))
    elsewhere = load_config(path, cli_overrides(out=str(tmp_path / "x")))
    assert base.config_hash() == elsewhere.config_hash()
    assert base.config_hash() != more_paths.config_hash()
    assert base.calibration_hash() == more_paths.calibration_hash()
    other = load_config(path, cli_overrides(accumulator="ttm-iv"))
    assert base.calibration_hash() != other.calibration_hash()


def test_calibrate_validate_simulate(tmp_path, ini):
    out = tmp_path / "out"
    assert run(ini, "calibrate", out) == EXIT_OK
    for name in ("params.json", "seasonality.csv", "tiv.csv", "leverage.csv", "diagnostics.json", "calibration.log"):
        assert (out / name).exists(), name
    header = read_header(out / "leverage.csv")
    assert set(header) == {"config_hash", "seed"}, "deterministic runs carry no timestamp"
    params = read_json(out / "params.json")
    assert params["accumulator"] == "linear"
    assert len(params["params"]["seasonality_times"]) == 4

    assert run(ini, "validate", out, "--paths", "10000") == EXIT_OK
    _, report = read_csv(out / "validation.csv")
    assert len(report) == 4 * 9
    assert {"market_price", "mc_price", "se", "z", "pass"} <= set(report.columns)
    assert report["pass"].mean() >= 0.95

    assert run(ini, "validate", out, "--paths", "10000", "--atm-only", "--no-leverage") == EXIT_OK
    _, atm = read_csv(out / "validation_atm.csv")
    assert len(atm) == 4
    assert atm["pass"].all()

    assert run(ini, "simulate", out) == EXIT_OK
    _, rv = read_csv(out / "rv_linear.csv")
    assert {"j", "t", "rv_mean", "rv_se", "backbone_var"} <= set(rv.columns)


def test_validation_threshold_exit_code(tmp_path, market_dir):
    ini = write_ini(tmp_path / "run.ini", market_dir, "\n[validation]\nse_multiple = 1e-9\nthreshold = 0.5\n")
    out = tmp_path / "out"
    assert run(ini, "calibrate", out) == EXIT_OK
    assert run(ini, "validate", out) == EXIT_BELOW_THRESHOLD


CALIBRATION_ARTIFACTS = ("params.json", "seasonality.csv", "tiv.csv", "leverage.csv", "diagnostics.json")


def test_calibrate_and_validate_are_byte_identical(tmp_path, ini):
    out = tmp_path / "out"
    assert run(ini, "calibrate", out) == EXIT_OK
    first = {name: (out / name).read_bytes() for name in CALIBRATION_ARTIFACTS}
    run(ini, "validate", out)
    report = (out / "validation.csv").read_bytes()

    assert run(ini, "calibrate", out) == EXIT_OK
    for name in CALIBRATION_ARTIFACTS:
        assert (out / name).read_bytes() == first[name], name
    run(ini, "validate", out)
    assert (out / "validation.csv").read_bytes() == report


def test_simulate_is_byte_identical(tmp_path, ini):
    out = tmp_path / "out"
    assert run(ini, "calibrate", out) == EXIT_OK
    assert run(ini, "simulate", out) == EXIT_OK
    first = (out / "rv_linear.csv").read_bytes()
    assert run(ini, "simulate", out) == EXIT_OK
    assert (out / "rv_linear.csv").read_bytes() == first


def test_mismatched_artifacts(tmp_path, ini):
    out = tmp_path / "out"
    assert run(ini, "calibrate", out) == EXIT_OK
    assert run(ini, "validate", out, "--accumulator", "quadratic") == EXIT_ERROR


def test_error_exit_codes(tmp_path, ini, market_dir):
    out = tmp_path / "out"
    assert run(ini, "validate", out) == EXIT_ERROR, "no calibration artifacts yet"
    assert run(ini, "calibrate", out) == EXIT_OK
    assert run(ini, "simulate", out, "--paths", "0") == EXIT_ERROR
    (market_dir / "vols.csv").unlink()
    assert run(ini, "calibrate", tmp_path / "other") == EXIT_ERROR


def test_estimate_corr(tmp_path, ini):
    out = tmp_path / "out"
    assert run(ini, "estimate-corr", out) == EXIT_OK
    pooled = json.loads((out / "correlation.json").read_text())
    assert -1.0 <= pooled["rho_inf"] <= 1.0
    assert pooled["meta"]["seed"] == 42
    _, buckets = read_csv(out / "correlation.csv")
    assert list(buckets.columns) == ["month", "n_obs", "rho", "p_value", "low_sample"]
