"""End-to-end runs of every subcommand against tiny inputs."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import make_blob_image
from test_bridge import STUB, stub_cmd
from xsal.cli import main
from xsal.pipeline import load_image, read_manifest, save_image_png
from xsal.tensor_ops import read_f32t


@pytest.fixture
def blob_png(tmp_path):
    path = tmp_path / "blob.png"
    save_image_png(path, make_blob_image(1, size=(32, 32)))
    return path


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


def explain_args(blob_png, out, method="gradcam", *extra):
    return (
        "explain", "--adapter", "micro:brightness", "--image", blob_png,
        "--size", 32, 32, "--method", method, "--out", out, *extra,
    )


class TestExplain:
    def test_writes_map_overlay_and_manifest(self, blob_png, tmp_path, capsys):
        out = tmp_path / "out"
        assert run_cli(*explain_args(blob_png, out)) == 0
        printed = [Path(line) for line in capsys.readouterr().out.splitlines()]
        assert [p.suffix for p in printed] == [".f32t", ".png", ".json"]
        assert all(p.exists() for p in printed)

        maps = read_f32t(printed[0])
        assert maps.shape == (1, 32, 32)
        manifest = read_manifest(printed[2])
        assert manifest.command == "explain"
        assert manifest.method == "gradcam"
        assert manifest.image_size == (32, 32)
        assert manifest.configs["gradcam"]["apply_relu"] is True
        assert set(manifest.timings) == {"detect_s", "saliency_s"}
        assert load_image(printed[1], size=None).shape == (3, 32, 32)

    @pytest.mark.parametrize(
        "method,extra",
        [
            ("rise", ("--masks", "40", "--grid", "4")),
            ("sidu", ()),
        ],
    )
    def test_other_methods_run(self, blob_png, tmp_path, capsys, method, extra):
        out = tmp_path / "out"
        assert run_cli(*explain_args(blob_png, out, method, *extra)) == 0
        printed = capsys.readouterr().out.splitlines()
        assert read_f32t(printed[0]).shape == (1, 32, 32)
        assert f".{method}." in printed[0]

    def test_explicit_target_box_is_honored(self, blob_png, tmp_path, capsys):
        out = tmp_path / "a"
        run_cli(*explain_args(blob_png, out))
        first = read_manifest(capsys.readouterr().out.splitlines()[2])
        box = first.target["box"]
        out2 = tmp_path / "b"
        assert (
            run_cli(
                *explain_args(blob_png, out2, "gradcam", "--target", ",".join(map(str, box)))
            )
            == 0
        )
        second = read_manifest(capsys.readouterr().out.splitlines()[2])
        assert second.target == first.target

    def test_unmatched_target_box_fails(self, blob_png, tmp_path, capsys):
        code = run_cli(
            *explain_args(blob_png, tmp_path / "o", "gradcam", "--target", "0,0,1,1")
        )
        assert code == 1
        assert capsys.readouterr().err.startswith("xsal: ")


class TestReplay:
    def test_replay_reproduces_artifacts_bitwise(self, blob_png, tmp_path, capsys):
        out = tmp_path / "run"
        run_cli(*explain_args(blob_png, out, "rise", "--masks", "40", "--grid", "4"))
        map_path, overlay_path, manifest_path = capsys.readouterr().out.splitlines()

        replay_out = tmp_path / "replayed"
        code = run_cli(
            "explain", "--replay", manifest_path, "--out", replay_out, "--size", 32, 32
        )
        assert code == 0
        remap, reoverlay = capsys.readouterr().out.splitlines()
        assert Path(remap).read_bytes() == Path(map_path).read_bytes()
        assert Path(reoverlay).read_bytes() == Path(overlay_path).read_bytes()

    def test_replay_refuses_modified_image(self, blob_png, tmp_path, capsys):
        out = tmp_path / "run"
        run_cli(*explain_args(blob_png, out))
        manifest_path = capsys.readouterr().out.splitlines()[2]
        save_image_png(blob_png, make_blob_image(2, size=(32, 32)))  # new content
        assert run_cli("explain", "--replay", manifest_path, "--out", tmp_path) == 1
        assert "changed" in capsys.readouterr().err


class TestEvaluate:
    def evaluate_args(self, blob_png, out, *extra):
        return (
            "evaluate", "--adapter", "micro:brightness", "--image", blob_png,
            "--size", 32, 32, "--steps", 6, "--out", out, *extra,
        )

    def test_writes_curves_aucs_and_manifest(self, blob_png, tmp_path, capsys):
        out = tmp_path / "out"
        code = run_cli(*self.evaluate_args(blob_png, out, "--method", "gradcam"))
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("deletion_auc=") and "insertion_auc=" in lines[0]
        del_csv, ins_csv, auc_json, manifest = (Path(p) for p in lines[1:])
        assert del_csv.exists() and ins_csv.exists()
        aucs = json.loads(auc_json.read_text())
        assert set(aucs) == {"deletion_auc", "insertion_auc"}
        assert read_manifest(manifest).configs["curve"]["steps"] == 6

    def test_saved_map_gives_same_aucs_as_method(self, blob_png, tmp_path, capsys):
        run_cli(*explain_args(blob_png, tmp_path / "e"))
        map_path = capsys.readouterr().out.splitlines()[0]

        run_cli(*self.evaluate_args(blob_png, tmp_path / "m", "--method", "gradcam"))
        from_method = json.loads(Path(capsys.readouterr().out.splitlines()[3]).read_text())
        run_cli(*self.evaluate_args(blob_png, tmp_path / "f", "--map", map_path))
        from_map = json.loads(Path(capsys.readouterr().out.splitlines()[3]).read_text())
        assert from_map == from_method


class TestBaseline:
    def test_baseline_smoke(self, blob_png, tmp_path, capsys):
        code = run_cli(
            "baseline", "--adapter", "micro:brightness", "--image", blob_png,
            "--size", 32, 32, "--steps", 4, "--trials", 3, "--out", tmp_path / "o",
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "random baseline over 3 orderings" in out
        auc_path = tmp_path / "o" / "blob.baseline.auc.json"
        assert set(json.loads(auc_path.read_text())) == {"deletion_auc", "insertion_auc"}


class TestBatch:
    @pytest.fixture
    def frames(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        for i in range(3):
            save_image_png(d / f"f{i}.png", make_blob_image(i + 10, size=(32, 32)))
        return d

    def batch_args(self, frames, *extra):
        return (
            "batch", "--images", frames, "--adapter", "micro:brightness",
            "--size", 32, 32, "--steps", 4, "--masks", 30, "--grid", 4, *extra,
        )

    def test_table_and_summary(self, frames, tmp_path, capsys):
        summary_path = tmp_path / "summary.json"
        code = run_cli(
            *self.batch_args(
                frames, "--methods", "gradcam,rise", "--summary", summary_path
            )
        )
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split() == ["method", "deletion", "insertion"]
        assert lines[1].startswith("gradcam") and "±" in lines[1]
        summary = json.loads(summary_path.read_text())
        assert summary["images"] == 3
        assert len(summary["methods"]["rise"]["deletion"]["values"]) == 3

    def test_unknown_method_fails(self, frames, capsys):
        assert run_cli(*self.batch_args(frames, "--methods", "sorcery")) == 1
        assert "unknown method" in capsys.readouterr().err

    def test_empty_directory_fails(self, tmp_path, capsys):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run_cli(*self.batch_args(empty)) == 1
        assert "no .png images" in capsys.readouterr().err

    def test_bridge_adapter_forces_serial_jobs(self, frames, capsys):
        code = run_cli(
            "batch", "--images", frames, "--adapter", f"bridge:{stub_cmd()}",
            "--jobs", 4, "--methods", "gradcam", "--steps", 4,
        )
        assert code == 0
        captured = capsys.readouterr()
        assert "forcing --jobs 1" in captured.err
        assert captured.out.splitlines()[1].startswith("gradcam")


class TestBridgeCheck:
    def test_stub_passes(self, capsys):
        assert run_cli("bridge-check", "--cmd", stub_cmd()) == 0
        out = capsys.readouterr().out
        assert "conformance: OK" in out
        assert "[pass] hello" in out
        assert "FAIL" not in out

    def test_command_from_environment(self, monkeypatch, capsys):
        monkeypatch.setenv("XSAL_BRIDGE_CMD", stub_cmd())
        assert run_cli("bridge-check") == 0
        assert "conformance: OK" in capsys.readouterr().out

    def test_no_peer_configured(self, monkeypatch, capsys):
        monkeypatch.delenv("XSAL_BRIDGE_CMD", raising=False)
        assert run_cli("bridge-check") == 1
        assert "needs --cmd" in capsys.readouterr().err


class TestUsageErrors:
    def assert_usage_error(self, *argv):
        with pytest.raises(SystemExit) as exc:
            run_cli(*argv)
        assert exc.value.code == 2

    def test_explain_needs_method_or_replay(self, blob_png):
        self.assert_usage_error("explain", "--image", blob_png)

    def test_explain_needs_image(self):
        self.assert_usage_error("explain", "--method", "gradcam")

    def test_evaluate_rejects_neither_and_both(self, blob_png):
        self.assert_usage_error("evaluate", "--image", blob_png)
        self.assert_usage_error(
            "evaluate", "--image", blob_png, "--method", "gradcam", "--map", "m.f32t"
        )

    def test_unknown_subcommand(self):
        self.assert_usage_error("explode")


class TestRuntimeErrors:
    def test_unknown_adapter_spec(self, blob_png, tmp_path, capsys):
        code = run_cli(
            "explain", "--adapter", "mega:detector", "--image", blob_png,
            "--method", "gradcam", "--out", tmp_path,
        )
        assert code == 1
        assert capsys.readouterr().err.startswith("xsal: unknown adapter spec")

    def test_missing_image_file(self, tmp_path, capsys):
        code = run_cli(
            "explain", "--image", tmp_path / "ghost.png",
            "--method", "gradcam", "--out", tmp_path, "--size", 32, 32,
        )
        assert code == 1
        assert capsys.readouterr().err.startswith("xsal: ")


class TestModuleEntryPoint:
    def test_python_dash_m_works(self):
        proc = subprocess.run(
            [sys.executable, "-m", "xsal", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "explain" in proc.stdout and "bridge-check" in proc.stdout
