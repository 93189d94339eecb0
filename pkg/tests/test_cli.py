"""Command-line interface: validation, artifacts and delimited output."""

import json

import numpy as np
import pytest

from jetpinn.cli import ConfigError, load_experiment, main


def write_experiment(tmp_path, payload):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(payload))
    return str(path)


VALID = {
    "schema": "jetpinn-experiment-v1",
    "config": {
        "operator": "sine_gordon",
        "d": 4,
        "method": "hte",
        "V": 2,
        "epochs": 4,
        "n_points": 8,
        "hidden": [8, 8],
        "seed": 0,
        "n_eval": 100,
    },
}


class TestExperimentValidation:
    def test_valid_loads(self, tmp_path):
        exp = load_experiment(write_experiment(tmp_path, VALID))
        assert exp["config"]["d"] == 4
        assert exp["sweep"] is None

    def test_bad_schema(self, tmp_path):
        bad = dict(VALID, schema="jetpinn-experiment-v2")
        with pytest.raises(ConfigError, match="schema"):
            load_experiment(write_experiment(tmp_path, bad))

    def test_unknown_field(self, tmp_path):
        bad = dict(VALID, config=dict(VALID["config"], epochz=4))
        with pytest.raises(ConfigError, match="epochz"):
            load_experiment(write_experiment(tmp_path, bad))

    def test_wrong_type(self, tmp_path):
        bad = dict(VALID, config=dict(VALID["config"], epochs="four"))
        with pytest.raises(ConfigError, match="epochs"):
            load_experiment(write_experiment(tmp_path, bad))

    def test_bad_sweep(self, tmp_path):
        bad = dict(VALID, sweep={"V": [0]})
        with pytest.raises(ConfigError, match="sweep"):
            load_experiment(write_experiment(tmp_path, bad))

    def test_unknown_top_level(self, tmp_path):
        bad = dict(VALID, notes="hi")
        with pytest.raises(ConfigError, match="notes"):
            load_experiment(write_experiment(tmp_path, bad))

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            load_experiment(str(path))

    def test_cli_exit_code_on_bad_config(self, tmp_path, capsys):
        bad = write_experiment(tmp_path, dict(VALID, schema="nope"))
        rc = main(["train", "--config", bad, "--outdir", str(tmp_path / "out")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestTrainCommand:
    def test_artifacts_written(self, tmp_path, capsys):
        cfg = write_experiment(tmp_path, VALID)
        out = tmp_path / "run"
        rc = main(["train", "--config", cfg, "--outdir", str(out)])
        assert rc == 0
        for name in ("report.json", "loss.csv", "loss.png", "params.json"):
            assert (out / name).exists(), name
        report = json.loads((out / "report.json").read_text())
        assert report["schema"] == "jetpinn-report-v1"
        assert report["epochs_run"] == 4
        lines = (out / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,loss,lr"
        assert len(lines) == 5
        stdout = capsys.readouterr().out
        assert "final_error\t" in stdout

    def test_flag_overrides(self, tmp_path):
        cfg = write_experiment(tmp_path, VALID)
        out = tmp_path / "run2"
        rc = main(["train", "--config", cfg, "--outdir", str(out), "--epochs", "2"])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["epochs_run"] == 2

    def test_checkpoint_loadable(self, tmp_path):
        cfg = write_experiment(tmp_path, VALID)
        out = tmp_path / "run3"
        assert main(["train", "--config", cfg, "--outdir", str(out)]) == 0
        from jetpinn.network import load_params

        p = load_params(out / "params.json")
        assert p.layer_sizes == (4, 8, 8, 1)


class TestSweepCommand:
    def test_sweep_artifacts(self, tmp_path, capsys):
        payload = dict(VALID, sweep={"V": [1, 2]})
        cfg = write_experiment(tmp_path, payload)
        out = tmp_path / "sweep"
        rc = main(["sweep", "--config", cfg, "--outdir", str(out)])
        assert rc == 0
        summary = json.loads((out / "sweep.json").read_text())
        assert [r["V"] for r in summary["runs"]] == [1, 2]
        assert (out / "sweep.png").exists()
        assert (out / "V1" / "report.json").exists()
        assert (out / "V2" / "loss.png").exists()

    def test_sweep_requires_section(self, tmp_path, capsys):
        cfg = write_experiment(tmp_path, VALID)
        rc = main(["sweep", "--config", cfg, "--outdir", str(tmp_path / "s")])
        assert rc == 2


class TestDiagnosticCommands:
    def test_estimate_output(self, capsys):
        rc = main(["estimate", "--d", "6", "--V", "16", "--seed", "3"])
        assert rc == 0
        out = capsys.readouterr().out
        fields = dict(line.split("\t") for line in out.strip().splitlines())
        assert "exact_trace" in fields
        assert "hutchinson_rademacher_16" in fields
        float(fields["exact_trace"])

    def test_variance_hte(self, capsys):
        rc = main(["variance", "--d", "5", "--method", "hte", "--batch", "2",
                   "--trials", "400", "--symmetric"])
        assert rc == 0
        out = capsys.readouterr().out
        fields = dict(line.split("\t") for line in out.strip().splitlines())
        closed = float(fields["closed_form"])
        empirical = float(fields["empirical_400"])
        assert empirical == pytest.approx(closed, rel=0.5)

    def test_variance_sdgd(self, capsys):
        rc = main(["variance", "--d", "5", "--method", "sdgd", "--batch", "2",
                   "--trials", "400"])
        assert rc == 0

    def test_check_sine_gordon(self, capsys):
        rc = main(["check", "--operator", "sine_gordon", "--d", "5", "--points", "10"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "laplacian_consistency" in out
        assert "FAIL" not in out

    def test_check_biharmonic(self, capsys):
        rc = main(["check", "--operator", "biharmonic", "--d", "4", "--points", "5"])
        assert rc == 0

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
