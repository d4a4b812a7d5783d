"""End-to-end tests of the command-line interface."""

import json
import os

import numpy as np
import pytest

from korigins.cli import main
from korigins import synthgen


def _spec_file(tmp_path, name="spec.json", **kw):
    spec = dict(background={"mu": 20000.0, "sigma": 0.0},
                targets=[{"mu": 25000.0, "sigma": 0.0}],
                side_range=[4, 8], squares_per_image=5,
                image_count=4, height=32, width=32, seed=1)
    spec.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(spec))
    return path


def _generate(tmp_path, tag, seed):
    spec = _spec_file(tmp_path, f"{tag}.spec.json", seed=seed)
    manifest = tmp_path / tag / "manifest.json"
    manifest.parent.mkdir(exist_ok=True)
    assert main(["generate", "--manifest", str(manifest), "--spec", str(spec)]) == 0
    return manifest


class TestUtilityCommands:
    def test_hd_prints_distance(self, capsys):
        assert main(["hd", "--mu1", "20000", "--sigma1", "2000",
                     "--mu2", "25000", "--sigma2", "2000"]) == 0
        out = capsys.readouterr().out.strip()
        assert abs(float(out) - 0.7363) < 5e-4

    def test_rfl_prints_field_and_params(self, capsys):
        assert main(["rfl", "--net", "rfl8"]) == 0
        out = capsys.readouterr().out
        assert "RFL 8" in out
        assert "71,042" in out

    def test_param_audit_lists_all_networks(self, capsys):
        assert main(["param-audit"]) == 0
        out = capsys.readouterr().out
        for name in ("rfl8", "krfl38", "rfl32", "colour"):
            assert name in out
        assert "1,480,002" in out

    def test_error_exit_code_and_diagnostic(self, capsys):
        assert main(["rfl", "--net", "bogus"]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert err.count("\n") == 1  # one-line diagnostic


class TestGenerate:
    def test_writes_manifest_and_images(self, tmp_path):
        manifest = _generate(tmp_path, "train", seed=1)
        assert manifest.exists()
        spec, images = synthgen.load_dataset(manifest)
        assert spec.image_count == len(images) == 4

    def test_same_spec_same_bytes(self, tmp_path):
        m1 = _generate(tmp_path, "a", seed=9)
        m2 = _generate(tmp_path, "b", seed=9)
        d1, d2 = m1.parent, m2.parent
        for name in sorted(os.listdir(d1)):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_missing_spec_file_errors(self, tmp_path, capsys):
        assert main(["generate", "--manifest", str(tmp_path / "m.json"),
                     "--spec", str(tmp_path / "nope.json")]) == 1
        assert "error:" in capsys.readouterr().err


class TestTrainEvalRoundtrip:
    def test_train_then_eval(self, tmp_path, capsys):
        train_m = _generate(tmp_path, "train", seed=1)
        val_m = _generate(tmp_path, "val", seed=2)
        out = tmp_path / "run"
        assert main(["train", "--net", "colour", "--classes", "2",
                     "--data", str(train_m), "--val", str(val_m),
                     "--epochs", "2", "--seed", "0",
                     "--out", str(out)]) == 0
        msg = capsys.readouterr().out
        assert "trained colour" in msg
        assert (out / "colour.korg").exists()
        assert (out / "colour.spec.json").exists()
        history = json.loads((out / "colour.history.json").read_text())
        assert len(history) == 2

        assert main(["eval", "--checkpoint", str(out / "colour.korg"),
                     "--data", str(val_m)]) == 0
        assert capsys.readouterr().out.startswith("MAcc ")

    def test_eval_reproducible(self, tmp_path, capsys):
        train_m = _generate(tmp_path, "train", seed=1)
        val_m = _generate(tmp_path, "val", seed=2)
        out = tmp_path / "run"
        main(["train", "--net", "colour", "--classes", "2", "--data", str(train_m),
              "--val", str(val_m), "--epochs", "1", "--out", str(out)])
        capsys.readouterr()
        main(["eval", "--checkpoint", str(out / "colour.korg"), "--data", str(val_m)])
        first = capsys.readouterr().out
        main(["eval", "--checkpoint", str(out / "colour.korg"), "--data", str(val_m)])
        assert capsys.readouterr().out == first

    def test_class_count_mismatch_errors(self, tmp_path, capsys):
        train_m = _generate(tmp_path, "train", seed=1)
        assert main(["train", "--net", "colour", "--classes", "3",
                     "--data", str(train_m), "--val", str(train_m),
                     "--epochs", "1", "--out", str(tmp_path / "x")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_eval_missing_spec_errors(self, tmp_path, capsys):
        val_m = _generate(tmp_path, "val", seed=2)
        ckpt = tmp_path / "orphan.korg"
        ckpt.write_bytes(b"KORG\x01\x00\x00\x00")
        assert main(["eval", "--checkpoint", str(ckpt),
                     "--data", str(val_m)]) == 1
        assert "--spec" in capsys.readouterr().err


class TestSweepCommands:
    def test_tiny_rfl_sweep(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        assert main(["sweep-rfl", "--noise", "off", "--out", str(out),
                     "--rfls", "8", "--ratios", "0.3", "--families", "rfl",
                     "--images", "2", "--epochs", "1", "--f32"]) == 0
        assert "1 cells" in capsys.readouterr().out
        assert (out / "result.json").exists()
        assert (out / "rfl_sweep.csv").exists()

        exp = tmp_path / "exported"
        assert main(["export", "--result", str(out / "result.json"),
                     "--out", str(exp)]) == 0
        assert (exp / "rfl_sweep.csv").read_text() == \
            (out / "rfl_sweep.csv").read_text()

    def test_tiny_hd_sweep(self, tmp_path, capsys):
        out = tmp_path / "hd"
        assert main(["sweep-hd", "--problem", "detect", "--size", "small",
                     "--out", str(out), "--networks", "rfl14",
                     "--delta-mus", "0", "--delta-sigmas", "0",
                     "--images", "2", "--epochs", "1", "--f32"]) == 0
        assert "1 cells" in capsys.readouterr().out
        assert (out / "hd_rfl14.csv").exists()
