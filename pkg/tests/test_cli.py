"""Command line behavior: exit codes, log rows, and the end-to-end pipeline."""

import shutil
import subprocess
import sys

import pytest

from ulw.cli import _parse_density, build_parser, main
from ulw.errors import UsageError


class TestParsing:
    def test_density_range(self):
        assert _parse_density("0.3:0.9") == (0.3, 0.9)
        assert _parse_density("0.5") == (0.5, 0.5)

    def test_density_rejects_garbage(self):
        for spec in ("a:b", "0.9:0.3", "-0.1:0.5", "0.2:1.5", ""):
            with pytest.raises(UsageError):
                _parse_density(spec)

    def test_parser_knows_all_commands(self):
        parser = build_parser()
        for command in ("synth", "train", "desmoke", "eval"):
            assert command in parser.format_help()


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "synth" in capsys.readouterr().out

    def test_subcommand_help(self, capsys):
        assert main(["train", "--help"]) == 0
        assert "--preset" in capsys.readouterr().out

    def test_no_arguments_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "error=" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["synth", "--bogus", "1"]) == 1
        err = capsys.readouterr().err
        assert "error=" in err
        assert "usage" in err.lower()

    def test_bad_weights_fail_before_data_is_read(self, capsys, tmp_path):
        code = main(["train", "--data", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "m.ulwk"),
                     "--alpha", "0.5", "--beta", "0.5", "--gamma", "0.5"])
        assert code == 1
        assert "error=" in capsys.readouterr().err

    def test_bad_density_spec(self, capsys, tmp_path):
        code = main(["synth", "--out", str(tmp_path), "--count", "1",
                     "--density", "0.9:0.1"])
        assert code == 1

    def test_missing_checkpoint_is_runtime_error(self, capsys, tmp_path):
        (tmp_path / "in").mkdir()
        code = main(["desmoke", "--ckpt", str(tmp_path / "absent.ulwk"),
                     "--in", str(tmp_path / "in"), "--out", str(tmp_path / "out")])
        assert code == 2
        assert "error=" in capsys.readouterr().err

    def test_eval_empty_dirs(self, capsys, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        code = main(["eval", "--pred", str(tmp_path / "a"), "--target", str(tmp_path / "b"),
                     "--report", str(tmp_path / "r.csv")])
        assert code == 1


class TestModuleEntry:
    def test_python_m_ulw(self):
        proc = subprocess.run([sys.executable, "-m", "ulw", "--help"],
                              capture_output=True, text=True, timeout=60)
        assert proc.returncode == 0
        assert "synth" in proc.stdout


class TestPipeline:
    def test_synth_writes_dataset(self, tmp_path, capsys):
        out = tmp_path / "data"
        assert main(["synth", "--out", str(out), "--count", "4", "--size", "32",
                     "--seed", "3"]) == 0
        assert "manifest=" in capsys.readouterr().out
        assert len(list(out.glob("*.png"))) == 8
        assert (out / "manifest.tsv").exists()

    def test_eval_identical_dirs(self, tmp_path, capsys):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--count", "2", "--size", "32"])
        capsys.readouterr()
        report = tmp_path / "report.csv"
        pred = tmp_path / "pred"
        target = tmp_path / "target"
        pred.mkdir()
        target.mkdir()
        for path in data.glob("*_clean.png"):
            name = path.name.replace("_clean", "")
            shutil.copy(path, pred / name)
            shutil.copy(path, target / name)
        assert main(["eval", "--pred", str(pred), "--target", str(target),
                     "--report", str(report)]) == 0
        out = capsys.readouterr().out
        assert "pairs=2 errors=0" in out
        assert "mean_ssim=1.000000" in out
        rows = report.read_text().splitlines()
        assert rows[0] == "pair,ssim,psnr_db,mse,ciede2000"
        assert any(row.startswith("#mean,") for row in rows)

    def test_full_pipeline(self, tmp_path, capsys):
        data = tmp_path / "data"
        ckpt = tmp_path / "model.ulwk"
        grid = tmp_path / "grid.png"
        assert main(["synth", "--out", str(data), "--count", "4", "--size", "32",
                     "--seed", "5"]) == 0

        assert main(["train", "--data", str(data), "--out", str(ckpt),
                     "--steps", "3", "--batch", "2", "--depth", "1",
                     "--base-channels", "2", "--image-size", "32",
                     "--dump-grid", str(grid)]) == 0
        out = capsys.readouterr().out
        assert ckpt.exists()
        assert grid.exists()
        step_rows = [l for l in out.splitlines() if l.startswith("step=")]
        assert len(step_rows) == 3
        for row in step_rows:
            assert " total=" in row and " mse=" in row
        assert any(l.startswith("checkpoint=") for l in out.splitlines())

        smoky = tmp_path / "smoky"
        clean = tmp_path / "clean"
        smoky.mkdir()
        clean.mkdir()
        for path in data.glob("*_smoky.png"):
            shutil.copy(path, smoky / path.name.replace("_smoky", ""))
        for path in data.glob("*_clean.png"):
            shutil.copy(path, clean / path.name.replace("_clean", ""))

        restored = tmp_path / "restored"
        assert main(["desmoke", "--ckpt", str(ckpt), "--in", str(smoky),
                     "--out", str(restored)]) == 0
        out = capsys.readouterr().out
        assert "images=4" in out
        assert len(list(restored.glob("*.png"))) == 4

        report = tmp_path / "report.csv"
        assert main(["eval", "--pred", str(restored), "--target", str(clean),
                     "--report", str(report)]) == 0
        out = capsys.readouterr().out
        assert "pairs=4 errors=0" in out
        rows = report.read_text().splitlines()
        assert rows[0] == "pair,ssim,psnr_db,mse,ciede2000"
        data_rows = [r for r in rows[1:] if not r.startswith("#")]
        assert len(data_rows) == 4
        for row in data_rows:
            fields = row.split(",")
            assert len(fields) == 5
            assert 0.0 <= float(fields[1]) <= 1.0

    def test_base_preset_trains(self, tmp_path, capsys):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--count", "2", "--size", "32"])
        ckpt = tmp_path / "base.ulwk"
        assert main(["train", "--data", str(data), "--preset", "base",
                     "--out", str(ckpt), "--steps", "2", "--batch", "2",
                     "--depth", "1", "--base-channels", "2",
                     "--image-size", "32"]) == 0
        out = capsys.readouterr().out
        assert "preset=base" in out
        assert ckpt.exists()

    def test_train_seed_reproducible_checkpoints(self, tmp_path, capsys):
        data = tmp_path / "data"
        main(["synth", "--out", str(data), "--count", "2", "--size", "32"])
        args = ["--data", str(data), "--steps", "2", "--batch", "2",
                "--depth", "1", "--base-channels", "2", "--image-size", "32",
                "--seed", "9"]
        a, b = tmp_path / "a.ulwk", tmp_path / "b.ulwk"
        assert main(["train", "--out", str(a)] + args) == 0
        assert main(["train", "--out", str(b)] + args) == 0
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()
