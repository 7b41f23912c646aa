"""
Tests for the CLI entry point (fedspace/__main__.py).

Covers:
- Exit-code mapping for configuration and numeric failures
- Run banner display
- Each subcommand on tiny inputs
"""

import json
from unittest.mock import patch

import click.testing
import pytest
import torch
import yaml

from fedspace.__main__ import EXIT_CONFIG, EXIT_NUMERIC, display_run_banner, main
from fedspace.core.config import SimConfig
from fedspace.core.errors import DivergenceError, NumericError
from fedspace.core.system_detector import SystemInfo
from fedspace.data.splitgen import load_split
from fedspace.federated.server import load_server_checkpoint
from fedspace.nn.checkpoint import load_params
from fedspace.nn.models import parameter_state


@pytest.fixture
def mock_system_info():
    """Create a SystemInfo for testing."""
    return SystemInfo(total_ram_gb=16.0, available_ram_gb=8.0, cpu_count=8, platform="linux", torch_threads=4)


@pytest.fixture
def cli_runner():
    """Create a Click test runner."""
    return click.testing.CliRunner()


@pytest.fixture
def run_file(tmp_path, toy_run_data):
    """Toy run document on disk."""
    path = tmp_path / "run.yaml"
    path.write_text(yaml.dump({**toy_run_data, "output_dir": str(tmp_path / "out")}))
    return path


class TestMainGroup:
    """Test the command group."""

    def test_version(self, cli_runner):
        """Test --version prints the program name."""
        result = cli_runner.invoke(main, ["--version"])

        assert result.exit_code == 0
        assert "fedspace" in result.output

    def test_help_lists_commands(self, cli_runner):
        """Test --help names every subcommand."""
        result = cli_runner.invoke(main, ["--help"])

        assert result.exit_code == 0
        for command in ("gen-split", "gen-fractals", "pretrain", "train", "eval"):
            assert command in result.output


class TestDisplayRunBanner:
    """Test the run banner."""

    def test_banner_shows_method_and_components(self, mock_system_info):
        """Test the banner prints without errors and names the method."""
        with patch("fedspace.__main__.console") as console:
            display_run_banner(SimConfig(method="pass"), mock_system_info)

        assert console.print.call_count >= 2


class TestGenSplit:
    """Test the gen-split command."""

    def test_writes_valid_split(self, cli_runner, tmp_path):
        """Test a synthetic split is written and loadable."""
        out = tmp_path / "split.json"

        result = cli_runner.invoke(
            main,
            ["gen-split", "--clients", "5", "--tasks", "2", "--classes-per-task", "4", "--rounds", "40",
             "--min-size", "16", "--min-stage-len", "5", "--out", str(out)],
        )

        assert result.exit_code == 0, result.output
        split = load_split(out)
        assert split.num_clients == 5
        assert split.num_classes == 8

    def test_shuffle_classes(self, cli_runner, tmp_path):
        """Test --shuffle-classes is recorded and mixes classes across task blocks."""
        args = ["gen-split", "--clients", "5", "--tasks", "4", "--classes-per-task", "2", "--rounds", "40",
                "--min-size", "16", "--min-stage-len", "5"]

        plain = cli_runner.invoke(main, [*args, "--out", str(tmp_path / "plain.json")])
        shuffled = cli_runner.invoke(main, [*args, "--shuffle-classes", "--out", str(tmp_path / "shuffled.json")])

        assert plain.exit_code == 0, plain.output
        assert shuffled.exit_code == 0, shuffled.output
        split = load_split(tmp_path / "shuffled.json")
        assert split.extra["shuffle_classes"] is True
        assert not load_split(tmp_path / "plain.json").extra["shuffle_classes"]
        blocks = {tuple(sorted(t)) for client in split.clients for t in client.stream.tasks}
        assert blocks != {(0, 1), (2, 3), (4, 5), (6, 7)}

    def test_infeasible_split_exit_code(self, cli_runner, tmp_path):
        """Test constraint violations exit with code 2."""
        result = cli_runner.invoke(
            main,
            ["gen-split", "--clients", "5", "--tasks", "2", "--classes-per-task", "4", "--rounds", "3",
             "--out", str(tmp_path / "split.json")],
        )

        assert result.exit_code == EXIT_CONFIG
        assert "Configuration error" in result.output


class TestFractalCommands:
    """Test gen-fractals and pretrain."""

    def test_generate_then_pretrain(self, cli_runner, tmp_path):
        """Test rendering a tiny set and pre-training an MLP on it."""
        data = tmp_path / "fractals.bin"
        theta = tmp_path / "theta0.pt"

        gen = cli_runner.invoke(
            main,
            ["gen-fractals", "--classes", "2", "--per-class", "2", "--size", "16", "--iterations", "1000",
             "--out", str(data)],
        )
        assert gen.exit_code == 0, gen.output

        result = cli_runner.invoke(
            main,
            ["pretrain", "--data", str(data), "--encoder", "mlp", "--channels", "1", "--side", "4",
             "--feature-dim", "8", "--out", str(theta)],
        )

        assert result.exit_code == 0, result.output
        assert theta.exists()

    def test_pretrain_records_rotations(self, cli_runner, tmp_path):
        """Test --rotations stores a four-rotation head that the run can check against."""
        data = tmp_path / "fractals.bin"
        theta = tmp_path / "theta0.pt"
        gen = cli_runner.invoke(
            main,
            ["gen-fractals", "--classes", "2", "--per-class", "2", "--size", "16", "--iterations", "1000",
             "--out", str(data)],
        )
        assert gen.exit_code == 0, gen.output

        result = cli_runner.invoke(
            main,
            ["pretrain", "--data", str(data), "--encoder", "conv", "--channels", "1", "--feature-dim", "8",
             "--rotations", "--out", str(theta)],
        )

        assert result.exit_code == 0, result.output
        model = load_params(theta)
        assert model.spec.num_rotations == 4
        assert model.num_outputs == 8

    def test_divergence_exit_code(self, cli_runner, tmp_path):
        """Test divergence errors exit with code 3."""
        with patch("fedspace.__main__.build_pretrain_dataset", side_effect=DivergenceError("escaped")):
            result = cli_runner.invoke(main, ["gen-fractals", "--classes", "1", "--out", str(tmp_path / "f.bin")])

        assert result.exit_code == EXIT_NUMERIC
        assert "Numeric failure" in result.output


class TestTrain:
    """Test the train command."""

    def test_toy_run(self, cli_runner, run_file, tmp_path):
        """Test a toy run writes its artifacts."""
        result = cli_runner.invoke(main, ["train", "--config", str(run_file)])

        assert result.exit_code == 0, result.output
        for name in ("metrics.csv", "summary.json", "checkpoint.pt", "config.yaml", "split.json"):
            assert (tmp_path / "out" / name).exists()
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["rounds"] == 6

    def test_overrides(self, cli_runner, run_file, tmp_path):
        """Test --method, --rounds and --out override the document."""
        out = tmp_path / "fedavg"

        result = cli_runner.invoke(
            main, ["train", "--config", str(run_file), "--method", "fedavg", "--rounds", "4", "--out", str(out)]
        )

        assert result.exit_code == 0, result.output
        saved = yaml.safe_load((out / "config.yaml").read_text())
        assert saved["method"] == "fedavg"
        assert saved["total_rounds"] == 4

    def test_resume(self, cli_runner, run_file, tmp_path):
        """Test --resume reuses the split saved beside the checkpoint and matches a full run."""
        full = cli_runner.invoke(main, ["train", "--config", str(run_file), "--out", str(tmp_path / "full")])
        assert full.exit_code == 0, full.output
        first = cli_runner.invoke(
            main,
            ["train", "--config", str(run_file), "--split", str(tmp_path / "full" / "split.json"),
             "--rounds", "3", "--out", str(tmp_path / "first")],
        )
        assert first.exit_code == 0, first.output

        result = cli_runner.invoke(
            main,
            ["train", "--config", str(run_file), "--resume", str(tmp_path / "first" / "checkpoint.pt"),
             "--out", str(tmp_path / "resumed")],
        )

        assert result.exit_code == 0, result.output
        summary = json.loads((tmp_path / "resumed" / "summary.json").read_text())
        assert summary["rounds"] == 3
        expected = load_server_checkpoint(tmp_path / "full" / "checkpoint.pt").model
        resumed = load_server_checkpoint(tmp_path / "resumed" / "checkpoint.pt").model
        a, b = parameter_state(expected), parameter_state(resumed)
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_resume_without_saved_split(self, cli_runner, run_file, tmp_path):
        """Test resuming refuses to regenerate a split when none is saved or given."""
        first = cli_runner.invoke(main, ["train", "--config", str(run_file)])
        assert first.exit_code == 0, first.output
        (tmp_path / "out" / "split.json").unlink()

        result = cli_runner.invoke(
            main, ["train", "--config", str(run_file), "--resume", str(tmp_path / "out" / "checkpoint.pt")]
        )

        assert result.exit_code == EXIT_CONFIG
        assert "split" in result.output

    def test_config_error_exit_code(self, cli_runner, tmp_path):
        """Test an invalid document exits with code 2."""
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.dump({"rho": 3.0}))

        result = cli_runner.invoke(main, ["train", "--config", str(path)])

        assert result.exit_code == EXIT_CONFIG
        assert "rho" in result.output

    def test_numeric_error_exit_code(self, cli_runner, run_file):
        """Test numeric failures exit with code 3."""
        with patch("fedspace.__main__.run_simulation", side_effect=NumericError("non-finite loss")):
            result = cli_runner.invoke(main, ["train", "--config", str(run_file)])

        assert result.exit_code == EXIT_NUMERIC

    def test_unexpected_error_exit_code(self, cli_runner, run_file):
        """Test other failures exit with code 1."""
        with patch("fedspace.__main__.run_simulation", side_effect=RuntimeError("boom")):
            result = cli_runner.invoke(main, ["train", "--config", str(run_file)])

        assert result.exit_code == 1
        assert "boom" in result.output

    def test_keyboard_interrupt(self, cli_runner, run_file):
        """Test Ctrl-C exits with code 130."""
        with patch("fedspace.__main__.run_simulation", side_effect=KeyboardInterrupt):
            result = cli_runner.invoke(main, ["train", "--config", str(run_file)])

        assert result.exit_code == 130
        assert "Interrupted" in result.output


class TestEval:
    """Test the eval command."""

    def test_checkpoint_accuracy(self, cli_runner, run_file, tmp_path):
        """Test evaluating a trained checkpoint prints overall and per-task accuracy."""
        trained = cli_runner.invoke(main, ["train", "--config", str(run_file)])
        assert trained.exit_code == 0, trained.output

        result = cli_runner.invoke(
            main, ["eval", "--checkpoint", str(tmp_path / "out" / "checkpoint.pt"), "--config", str(run_file)]
        )

        assert result.exit_code == 0, result.output
        assert "Top-1 accuracy" in result.output
        assert "Per task" in result.output

    def test_head_mismatch(self, cli_runner, run_file, tmp_path, toy_run_data):
        """Test a checkpoint for another class count exits with code 2."""
        trained = cli_runner.invoke(main, ["train", "--config", str(run_file)])
        assert trained.exit_code == 0, trained.output
        other = tmp_path / "other.yaml"
        other.write_text(yaml.dump({**toy_run_data, "dataset": {**toy_run_data["dataset"], "num_classes": 5}}))

        result = cli_runner.invoke(
            main, ["eval", "--checkpoint", str(tmp_path / "out" / "checkpoint.pt"), "--config", str(other)]
        )

        assert result.exit_code == EXIT_CONFIG
