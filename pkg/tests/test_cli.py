"""CLI wiring: artifacts, determinism, precedence, exit codes."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from spectraj import cli
from spectraj.verify import CheckResult

SMALL = ["--set", "num_scenes=6", "--set", "epochs=2", "--set", "n_max=4",
         "--set", "embed_dim=8", "--set", "image_size=16",
         "--set", "k_list=1,5,20"]


def run_pipeline(out, seed="3", extra=()):
    args = ["--out", str(out), "--seed", seed, *SMALL, *extra]
    for cmd in ("synth", "train", "eval", "predict", "ksweep"):
        rc = cli.main([cmd] + args)
        assert rc == 0, f"{cmd} failed with rc={rc}"


class TestPipeline:
    def test_artifacts_exist(self, tmp_path):
        run_pipeline(tmp_path / "out")
        out = tmp_path / "out"
        assert (out / "dataset").is_dir()
        assert len(list((out / "dataset").glob("*.scene"))) == 6
        for name in ("checkpoint.json", "loss_log.csv", "metrics.json",
                     "predictions.jsonl", "ksweep.csv"):
            assert (out / name).is_file(), name

    def test_metrics_shape(self, tmp_path):
        run_pipeline(tmp_path / "out")
        payload = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert payload["metrics"]["k_values"] == [1, 5, 20]
        assert set(payload["metrics"]["min_ade"]) == {"1", "5", "20"}
        # resolved config rides along, without any path fields
        assert "lr" in payload["config"]
        assert "out" not in payload["config"]

    def test_ksweep_monotone(self, tmp_path):
        run_pipeline(tmp_path / "out")
        rows = (tmp_path / "out" / "ksweep.csv").read_text().splitlines()
        assert rows[0] == "k,min_ade,min_fde"
        assert len(rows) == 21
        ade = [float(r.split(",")[1]) for r in rows[1:]]
        fde = [float(r.split(",")[2]) for r in rows[1:]]
        assert all(a >= b for a, b in zip(ade, ade[1:]))
        assert all(a >= b for a, b in zip(fde, fde[1:]))

    def test_predictions_jsonl(self, tmp_path):
        run_pipeline(tmp_path / "out")
        lines = (tmp_path / "out" / "predictions.jsonl").read_text()
        records = [json.loads(l) for l in lines.splitlines()]
        assert len(records) == 2          # test split of 6 at 60/20/20
        for rec in records:
            samples = rec["samples"]
            assert len(samples) == 20     # K = max(k_list)
            assert len(samples[0]) == 12  # forecast frames
            assert len(samples[0][0]) == len(rec["agents"])
            assert len(samples[0][0][0]) == 2

    def test_rerun_is_byte_identical(self, tmp_path):
        run_pipeline(tmp_path / "a")
        run_pipeline(tmp_path / "b")
        files_a = sorted(p for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert [p.name for p in files_a] == [p.name for p in files_b]
        for pa, pb in zip(files_a, files_b):
            assert pa.read_bytes() == pb.read_bytes(), pa.name


class TestPrecedence:
    def test_flag_beats_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("num_scenes = 4\nseed = 9\n")
        out = tmp_path / "out"
        rc = cli.main(["synth", "--config", str(cfg), "--out", str(out),
                       "--set", "num_scenes=3"])
        assert rc == 0
        assert len(list((out / "dataset").glob("*.scene"))) == 3

    def test_named_flag_beats_set_pair(self, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["synth", "--out", str(out), "--seed", "5",
                       "--set", "seed=8", "--set", "num_scenes=2"])
        assert rc == 0
        # same command with --seed 5 alone reproduces the files exactly
        out2 = tmp_path / "out2"
        rc = cli.main(["synth", "--out", str(out2), "--seed", "5",
                       "--set", "num_scenes=2"])
        assert rc == 0
        for pa, pb in zip(sorted((out / "dataset").iterdir()),
                          sorted((out2 / "dataset").iterdir())):
            assert pa.read_bytes() == pb.read_bytes()

    def test_dataset_flag_redirects(self, tmp_path):
        data = tmp_path / "elsewhere"
        rc = cli.main(["synth", "--out", str(tmp_path / "out"),
                       "--dataset", str(data), "--set", "num_scenes=2"])
        assert rc == 0
        assert len(list(data.glob("*.scene"))) == 2


class TestExitCodes:
    def test_unknown_command_is_usage_error(self):
        assert cli.main(["frobnicate"]) == 2

    def test_unknown_set_key(self, tmp_path):
        rc = cli.main(["synth", "--out", str(tmp_path), "--set", "nope=1"])
        assert rc == 2

    def test_malformed_set_pair(self, tmp_path):
        rc = cli.main(["synth", "--out", str(tmp_path), "--set", "epochs"])
        assert rc == 2

    def test_missing_config_file(self, tmp_path):
        rc = cli.main(["synth", "--config", str(tmp_path / "absent.cfg")])
        assert rc == 2

    def test_bad_ablate_choice(self, tmp_path):
        rc = cli.main(["train", "--ablate", "everything"])
        assert rc == 2

    def test_eval_without_checkpoint(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["synth", "--out", str(out),
                         "--set", "num_scenes=5"]) == 0
        rc = cli.main(["eval", "--out", str(out)])
        assert rc == 1

    def test_train_without_dataset(self, tmp_path):
        rc = cli.main(["train", "--out", str(tmp_path / "empty")])
        assert rc == 1


class TestGradcheckCommand:
    # the real suite runs in the acceptance tests; here only the wiring
    def test_exit_zero_when_all_pass(self, tmp_path, monkeypatch, capsys):
        fake = [CheckResult("primitive.exp", 1e-9, 1e-6)]
        monkeypatch.setattr(cli, "run_suite", lambda seed: fake)
        assert cli.main(["gradcheck", "--out", str(tmp_path)]) == 0
        assert "1/1 checks passed" in capsys.readouterr().out

    def test_exit_one_on_failure(self, tmp_path, monkeypatch, capsys):
        fake = [CheckResult("primitive.exp", 1e-9, 1e-6),
                CheckResult("model.bad", 5e-3, 1e-4)]
        monkeypatch.setattr(cli, "run_suite", lambda seed: fake)
        assert cli.main(["gradcheck", "--out", str(tmp_path)]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestEntryPoint:
    def test_module_runs_as_script(self):
        proc = subprocess.run(
            [sys.executable, "-m", "spectraj.cli", "--help"],
            capture_output=True, text=True,
            cwd=Path(__file__).resolve().parent.parent)
        assert proc.returncode == 0
        assert "synth" in proc.stdout and "ksweep" in proc.stdout
