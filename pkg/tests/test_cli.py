# tests/test_cli.py
import json

import pandas as pd
import pytest

from sisfactor.errors import ConfigError
from sisfactor.main import EXIT_ERROR, EXIT_OK, apply_override, create_parser, load_run_config, main, run_command
from sisfactor.models import RunConfig
from sisfactor.settings import Settings

from conftest import toy_responses

SHORT_CHAIN = {"n_iterations": 40, "burn_in": 20, "thin": 5, "seed": 3}
SMALL_PRIOR_CHECK = {
    "p": 6, "H": 4, "n_draws": 1000, "H_grid": [2, 3], "H_max": 10, "h_grid": [1, 2],
    "support_p_grid": [16, 32], "support_draws": 100,
}


def write_responses(tmp_path) -> str:
    path = tmp_path / "y.csv"
    pd.DataFrame(toy_responses(n=30, p=4), columns=["u", "v", "w", "z"]).to_csv(path, index=False)
    return str(path)


def envelope(capsys) -> dict:
    # the error envelope is the last stderr line
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])

# ---------- Unit ----------

def test_settings_read_the_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SIS_OUTPUT_DIR", str(tmp_path))
    monkeypatch.setenv("SIS_LOG_LEVEL", "debug")
    monkeypatch.setenv("SIS_ENABLE_METRICS", "0")
    monkeypatch.setenv("SIS_CHAIN_FORMAT", "SQLite")
    monkeypatch.setenv("SIS_THREADS", "3")
    monkeypatch.setenv("SIS_INCLUDE_TIMING", "1")
    s = Settings()
    assert (s.output_dir, s.log_level, s.chain_format, s.threads) == (str(tmp_path), "DEBUG", "sqlite", 3)
    assert not s.enable_metrics and s.include_timing
    # every field is consumed somewhere in the package
    assert set(vars(s)) == {"output_dir", "log_level", "enable_metrics", "chain_format", "threads", "include_timing"}


def test_parser_accepts_the_four_commands():
    parser = create_parser()
    for command in ("fit", "simulate", "prior-check", "summarize"):
        assert parser.parse_args([command]).command == command
    args = parser.parse_args(["fit", "--seed", "9", "--set", "chain.thin=2", "--set", "mode=probit"])
    assert args.seed == 9 and args.overrides == ["chain.thin=2", "mode=probit"]
    with pytest.raises(SystemExit):
        parser.parse_args(["sample"])


def test_dotted_overrides():
    raw = {"chain": {"thin": 5}}
    apply_override(raw, "chain.n_iterations=2000")
    apply_override(raw, "families=[\"sis\", \"mgp\"]")
    apply_override(raw, "mode=probit")
    assert raw == {"chain": {"thin": 5, "n_iterations": 2000}, "families": ["sis", "mgp"], "mode": "probit"}
    with pytest.raises(ConfigError):
        apply_override(raw, "no-equals-sign")
    with pytest.raises(ConfigError):
        apply_override(raw, "mode.inner=1")


def test_seed_flag_overrides_every_seed(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"chain": {"seed": 1}, "scenario": {"seed": 2}}), encoding="utf-8")
    config = load_run_config("simulate", path, seed=77, threads=2, output=tmp_path / "out")
    assert config.resolved_chain().seed == 77
    assert config.resolved_scenario().seed == 77
    assert config.resolved_prior_check().seed == 77
    assert config.threads == 2
    assert config.paths.output == str(tmp_path / "out")


def test_partial_chain_config_keeps_mode_defaults():
    config = RunConfig(command="fit", mode="probit", chain={"thin": 2})
    chain = config.resolved_chain()
    assert (chain.n_iterations, chain.burn_in, chain.thin, chain.mode) == (40000, 20000, 2, "probit")
    assert config.resolved_hyper().alpha == 4.0


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config("fit", tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config("fit", bad)

# ---------- Integration ----------

def test_prior_check_writes_report_and_metrics(tmp_path, settings):
    config = RunConfig(command="prior-check", prior_check=SMALL_PRIOR_CHECK, paths={"output": str(tmp_path)})
    assert run_command(config, settings) == EXIT_OK
    report = json.loads((tmp_path / "prior_check.json").read_text(encoding="utf-8"))
    assert report["p"] == 6 and len(report["shrinkage"]) == 3
    assert (tmp_path / "metrics.prom").is_file()


def test_fit_then_summarize_reproduces_the_summary(tmp_path, settings):
    y = write_responses(tmp_path)
    fit = RunConfig(command="fit", paths={"y": y, "output": str(tmp_path / "fit")}, chain=SHORT_CHAIN)
    assert run_command(fit, settings) == EXIT_OK
    for name in ("chain.json", "trace.csv", "log_density.csv", "summary.json", "lambda_map.csv",
                 "correlation.csv", "partial_correlation.csv", "edges.csv", "metrics.prom"):
        assert (tmp_path / "fit" / name).is_file(), name
    trace = pd.read_csv(tmp_path / "fit" / "trace.csv")
    assert list(trace.columns) == ["iteration", "H", "h_active"] and len(trace) == 40

    summarize = RunConfig(command="summarize", paths={
        "y": y, "chain": str(tmp_path / "fit" / "chain.json"), "output": str(tmp_path / "again"),
    })
    assert run_command(summarize, settings) == EXIT_OK
    first = (tmp_path / "fit" / "summary.json").read_bytes()
    assert (tmp_path / "again" / "summary.json").read_bytes() == first
    assert b"seconds_per_iteration\": null" in first


def test_fit_is_byte_reproducible(tmp_path, settings):
    y = write_responses(tmp_path)
    for name in ("a", "b"):
        config = RunConfig(command="fit", paths={"y": y, "output": str(tmp_path / name)}, chain=SHORT_CHAIN)
        assert run_command(config, settings) == EXIT_OK
    for name in ("chain.json", "summary.json", "trace.csv", "edges.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_fit_with_sqlite_checkpoint(tmp_path, settings):
    settings.chain_format = "sqlite"
    y = write_responses(tmp_path)
    config = RunConfig(command="fit", paths={"y": y, "output": str(tmp_path)}, chain=SHORT_CHAIN)
    assert run_command(config, settings) == EXIT_OK
    assert (tmp_path / "chain.sqlite").is_file()


def test_simulate_writes_one_table_per_family(tmp_path, settings):
    config = RunConfig(
        command="simulate", families=["sis", "cusp"], chain=SHORT_CHAIN, paths={"output": str(tmp_path)},
        scenario={"scenario": "b", "p": 6, "k": 2, "s": 0.6, "n": 25, "n_replicates": 1},
    )
    assert run_command(config, settings) == EXIT_OK
    sis = pd.read_csv(tmp_path / "metrics_sis.csv")
    cusp = pd.read_csv(tmp_path / "metrics_cusp.csv")
    assert "seconds_per_iteration" not in sis.columns
    assert {"mce@0.03", "mce@0.05", "mce@0.1"} <= set(cusp.columns)
    report = json.loads((tmp_path / "metrics_sis.json").read_text(encoding="utf-8"))
    assert report["n_succeeded"] == 1


def test_missing_responses_give_an_envelope(tmp_path, settings, capsys):
    config = RunConfig(command="fit", paths={"output": str(tmp_path)}, chain=SHORT_CHAIN)
    assert run_command(config, settings) == EXIT_ERROR
    assert envelope(capsys)["error"]["code"] == "VALIDATION_ERROR"


def test_summarize_mode_mismatch(tmp_path, settings, capsys):
    y = write_responses(tmp_path)
    fit = RunConfig(command="fit", paths={"y": y, "output": str(tmp_path)}, chain=SHORT_CHAIN)
    assert run_command(fit, settings) == EXIT_OK
    capsys.readouterr()
    again = RunConfig(command="summarize", mode="probit",
                      paths={"y": y, "chain": str(tmp_path / "chain.json"), "output": str(tmp_path / "s")})
    assert run_command(again, settings) == EXIT_ERROR
    assert envelope(capsys)["error"]["code"] == "CONFIG_ERROR"


def test_main_reports_bad_configuration(tmp_path, capsys, monkeypatch):
    # keep the stderr handler off the shared package logger
    monkeypatch.setattr("sisfactor.main.configure_logging", lambda level="INFO": None)
    assert main(["prior-check", "--set", "bogus=1", "--output", str(tmp_path)]) == EXIT_ERROR
    assert envelope(capsys)["error"]["code"] == "CONFIG_ERROR"
    assert main(["fit", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR
    assert envelope(capsys)["error"]["details"]["path"].endswith("missing.json")
