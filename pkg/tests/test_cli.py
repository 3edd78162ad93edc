import json

import pytest
from click.testing import CliRunner

from cli import EXIT_CONFIG, EXIT_FAILED, cli

CYCLE = {"kind": "cycle", "m": 4, "laziness": 0.5}


@pytest.fixture
def runner():
    return CliRunner()


def test_bisector_command(runner):
    result = runner.invoke(cli, ["bisector", "--a", "0.2", "--b", "0.2", "--samples", "100"])
    assert result.exit_code == 0
    body = json.loads(result.stdout)
    assert body["case"] == "singular_no_reflection"
    assert body["max_residual"] <= 1e-12


def test_bisector_rejects_bad_pair(runner):
    result = runner.invoke(cli, ["bisector", "--a", "0.7", "--b", "0.2"])
    assert result.exit_code == EXIT_CONFIG


def test_verify_and_report(runner, tmp_path):
    out = str(tmp_path / "results")
    params = json.dumps({"t_max": 3, "chains": [CYCLE]})
    result = runner.invoke(cli, ["verify", "hahn", "--params", params, "--output-dir", out])
    assert result.exit_code == 0, result.output
    run_id = json.loads(result.stdout)["run_id"]

    listing = runner.invoke(cli, ["report", "--output-dir", out])
    assert run_id in listing.output and "pass" in listing.output

    shown = runner.invoke(cli, ["report", run_id, "--output-dir", out])
    assert json.loads(shown.stdout)["checks"][0]["check"] == "hahn"

    missing = runner.invoke(cli, ["report", "nothere", "--output-dir", out])
    assert missing.exit_code == EXIT_FAILED


def test_verify_bad_params(runner, tmp_path):
    result = runner.invoke(cli, ["verify", "hahn", "--params", "{", "--output-dir", str(tmp_path)])
    assert result.exit_code == EXIT_CONFIG
    assert "--params" in result.output


def test_simulate_needs_seed(runner, tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"chain": CYCLE, "t_grid": [1, 2]}))
    result = runner.invoke(cli, ["simulate", "--config", str(path), "--output-dir", str(tmp_path / "out")])
    assert result.exit_code == EXIT_CONFIG

    seeded = runner.invoke(cli, ["simulate", "--config", str(path), "--seed", "3",
                                 "--output-dir", str(tmp_path / "out")])
    assert seeded.exit_code in (0, EXIT_FAILED)
    assert len(json.loads(seeded.stdout)["outputs"]) == 3


def test_exact_command(runner, tmp_path):
    path = tmp_path / "exact.json"
    path.write_text(json.dumps({"chain": CYCLE, "t_grid": [1, 2]}))
    result = runner.invoke(cli, ["exact", "--config", str(path), "--output-dir", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout)["passed"] is True


def test_simulate_from_inline_flags(runner, tmp_path):
    result = runner.invoke(cli, [
        "simulate", "--space", "euclidean", "--x1=-0.5", "--x2", "0.5", "--coupling", "mirror",
        "--trials", "200", "--t-grid", "0.25,1", "--seed", "7", "--output-dir", str(tmp_path),
    ])
    assert result.exit_code in (0, EXIT_FAILED), result.output
    outputs = json.loads(result.stdout)["outputs"]
    with open(outputs[0], encoding="utf-8") as f:
        assert f.readline().strip() == "t,survival_hat,se,n"


def test_simulate_inline_chain_overrides_config(runner, tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"chain": CYCLE, "t_grid": [1, 2], "seed": 1}))
    result = runner.invoke(cli, ["simulate", "--config", str(path), "--chain", '{"kind": "tree", "m": 1}',
                                 "--coupling", "tree", "--trials", "50", "--output-dir", str(tmp_path / "out")])
    assert result.exit_code in (0, EXIT_FAILED), result.output
    manifest = json.loads(runner.invoke(cli, ["report", json.loads(result.stdout)["run_id"],
                                              "--output-dir", str(tmp_path / "out")]).stdout)
    assert manifest["config"]["chain"]["kind"] == "tree"
    assert manifest["config"]["trials"] == 50


def test_simulate_rejects_malformed_grid(runner, tmp_path):
    result = runner.invoke(cli, ["simulate", "--t-grid", "0.25,x", "--seed", "1", "--output-dir", str(tmp_path)])
    assert result.exit_code == EXIT_CONFIG


def test_exact_from_inline_flags(runner, tmp_path):
    result = runner.invoke(cli, ["exact", "--space", "circle", "--t", "0.25", "--output-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output
    outputs = json.loads(result.stdout)["outputs"]
    assert outputs[0].endswith("density_t0.25.csv")


@pytest.mark.parametrize("args", [["--check", "hahn"], ["hahn"]])
def test_verify_check_option_or_argument(runner, tmp_path, args):
    params = json.dumps({"t_max": 3, "chains": [CYCLE]})
    result = runner.invoke(cli, ["verify", *args, "--params", params, "--output-dir", str(tmp_path)])
    assert result.exit_code == 0, result.output


def test_verify_needs_a_check(runner, tmp_path):
    assert runner.invoke(cli, ["verify", "--output-dir", str(tmp_path)]).exit_code == EXIT_CONFIG
    clash = runner.invoke(cli, ["verify", "hahn", "--check", "wasser", "--output-dir", str(tmp_path)])
    assert clash.exit_code == EXIT_CONFIG
