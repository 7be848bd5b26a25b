"""Subcommand behavior through the real entry point (in-process calls)."""

import json
from pathlib import Path

import numpy as np
import pytest

from linewire.cli import main
from linewire.geometry import validate_wireframe
from linewire.io import read_line_cloud, read_wireframe, write_line_cloud, write_wireframe
from linewire.synth import read_scene

from conftest import cube_wireframe, segments_on_wireframe

FAST_TRAIN = ["--set", "train.epochs=2", "--set", "train.g_junction=8",
              "--set", "train.n_lines=8", "--set", "train.g_pair=8",
              "--set", "train.n_pair_lines=8"]
SMALL_SCENES = ["--set", "synth.family=gabled", "--set", "synth.frag_min=2",
                "--set", "synth.frag_max=4"]


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Scenes plus a small trained weights file shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "scenes", "--count", 2, "--seed", 7, *SMALL_SCENES) == 0
    assert run("train", "--data", root / "scenes", "--out", root / "run" / "w.lw",
               "--seed", 3, *FAST_TRAIN) == 0
    return root


class TestSynth:
    def test_deterministic_outputs(self, tmp_path):
        for name in ("a", "b"):
            assert run("synth", "--out", tmp_path / name, "--count", 2, "--seed", 9,
                       *SMALL_SCENES) == 0
        for rel in ("scene_0000/cloud.txt", "scene_0000/gt.obj", "scene_0001/cloud.txt",
                    "config.txt"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_refuses_nonempty_dir(self, tmp_path):
        out = tmp_path / "scenes"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        assert run("synth", "--out", out, "--count", 1) == 1
        assert run("synth", "--out", out, "--count", 1, "--force") == 0

    def test_invalid_spec_names_field(self, tmp_path, capsys):
        rc = run("synth", "--out", tmp_path / "s", "--count", 1,
                 "--set", "synth.clutter_ratio=-1")
        assert rc == 1
        assert "clutter_ratio" in capsys.readouterr().err

    def test_scene_count(self, tmp_path):
        assert run("synth", "--out", tmp_path / "many", "--count", 5, "--seed", 1,
                   *SMALL_SCENES) == 0
        dirs = [d for d in (tmp_path / "many").iterdir() if d.is_dir()]
        assert len(dirs) == 5


class TestLabel:
    def test_labels_noiseless_scene_fully(self, workspace, tmp_path, capsys):
        scene = workspace / "scenes" / "scene_0000"
        out = tmp_path / "relabel.txt"
        assert run("label", "--cloud", scene / "cloud.txt", "--gt", scene / "gt.obj",
                   "--out", out) == 0
        captured = capsys.readouterr()
        assert "(100.0%)" in captured.out
        relabeled = read_line_cloud(out)
        assert relabeled.labels is not None

    def test_cameras_without_supports_errors(self, workspace, tmp_path):
        scene = workspace / "scenes" / "scene_0000"
        rc = run("label", "--cloud", scene / "cloud.txt", "--gt", scene / "gt.obj",
                 "--cameras", scene / "gt.obj", "--out", tmp_path / "x.txt")
        assert rc == 1

    def test_output_reloadable_by_train(self, workspace, tmp_path):
        scene = workspace / "scenes" / "scene_0000"
        data = tmp_path / "data" / "scene_0000"
        data.mkdir(parents=True)
        assert run("label", "--cloud", scene / "cloud.txt", "--gt", scene / "gt.obj",
                   "--out", data / "cloud.txt") == 0
        (data / "gt.obj").write_bytes((scene / "gt.obj").read_bytes())
        assert run("train", "--data", tmp_path / "data", "--out", tmp_path / "w.lw",
                   "--seed", 1, *FAST_TRAIN) == 0


class TestTrain:
    def test_writes_artifacts(self, workspace):
        out = workspace / "run"
        assert (out / "w.lw").exists()
        assert (out / "w.lw.ckpt").exists()
        csv = (out / "w.lw.loss.csv").read_text().splitlines()
        assert csv[0] == "step,e_total,e_vclf,e_vreg,e_eclf"
        assert len(csv) == 1 + 2 * 2  # epochs * scenes
        assert (out / "w.lw.config.txt").exists()

    def test_resume_continues_steps(self, workspace, tmp_path):
        out = tmp_path / "resumed.lw"
        assert run("train", "--data", workspace / "scenes", "--out", out,
                   "--resume", workspace / "run" / "w.lw.ckpt", "--seed", 3,
                   *FAST_TRAIN) == 0
        csv = (Path(str(out) + ".loss.csv")).read_text().splitlines()
        first_step = int(csv[1].split(",")[0])
        assert first_step == 5  # continues after the 4 steps of the first run


class TestInfer:
    def test_model_inference(self, workspace, tmp_path):
        scene = workspace / "scenes" / "scene_0000"
        out = tmp_path / "pred.obj"
        report = tmp_path / "report.json"
        assert run("infer", "--cloud", scene / "cloud.txt", "--weights",
                   workspace / "run" / "w.lw", "--out", out, "--report", report,
                   "--seed", 5) == 0
        wf = read_wireframe(out)
        assert validate_wireframe(wf) == []
        doc = json.loads(report.read_text())
        assert "stages" in doc and doc["mode"] == "model"
        assert doc["stages"]["junctions_in"] >= doc["stages"]["junctions_after_nms"]

    def test_heuristic_needs_no_weights(self, workspace, tmp_path):
        scene = workspace / "scenes" / "scene_0000"
        out = tmp_path / "pred_h.obj"
        assert run("infer", "--cloud", scene / "cloud.txt", "--heuristic",
                   "--out", out, "--seed", 5) == 0
        assert validate_wireframe(read_wireframe(out)) == []

    def test_missing_weights_flag(self, workspace, tmp_path):
        scene = workspace / "scenes" / "scene_0000"
        assert run("infer", "--cloud", scene / "cloud.txt",
                   "--out", tmp_path / "x.obj") == 1

    def test_deterministic(self, workspace, tmp_path):
        scene = workspace / "scenes" / "scene_0001"
        outs = []
        for name in ("p1.obj", "p2.obj"):
            out = tmp_path / name
            assert run("infer", "--cloud", scene / "cloud.txt", "--heuristic",
                       "--out", out, "--seed", 9) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestEval:
    def test_perfect_table(self, tmp_path, capsys):
        wf = cube_wireframe(side=2.0)
        write_wireframe(wf, tmp_path / "gt.obj")
        write_wireframe(wf, tmp_path / "pred.obj")
        assert run("eval", "--pred", tmp_path / "pred.obj", "--gt", tmp_path / "gt.obj") == 0
        out = capsys.readouterr().out
        assert "100.00" in out
        assert "total          0" in out

    def test_missing_gt_file(self, tmp_path):
        wf = cube_wireframe()
        write_wireframe(wf, tmp_path / "pred.obj")
        assert run("eval", "--pred", tmp_path / "pred.obj", "--gt", tmp_path / "absent.obj") == 1

    def test_batch_mode_rows_and_mean(self, tmp_path, capsys):
        pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        for i in range(3):
            wf = cube_wireframe(side=1.0 + i)
            write_wireframe(wf, gt_dir / f"b{i}.obj")
            write_wireframe(wf, pred_dir / f"b{i}.obj")
        out_json = tmp_path / "all.json"
        assert run("eval", "--pred", pred_dir, "--gt", gt_dir, "--out", out_json) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert len(lines) == 4  # 3 rows + mean
        assert lines[-1].startswith("mean")
        doc = json.loads(out_json.read_text())
        assert set(doc) == {"b0.obj", "b1.obj", "b2.obj", "mean"}


class TestInspectPatch:
    def test_corner_patch_members_match_scan(self, tmp_path, capsys):
        lc = segments_on_wireframe(cube_wireframe(side=2.0), per_edge=2)
        cloud_path = tmp_path / "cloud.txt"
        write_line_cloud(lc, cloud_path)
        assert run("inspect-patch", "--cloud", cloud_path, "--point", "0,0,0",
                   "--eps", "0.1") == 0
        out = capsys.readouterr().out
        from linewire.patches import scan_members
        want, _ = scan_members(lc, (0, 0, 0), 0.1)
        for idx in want.tolist():
            assert f"line {idx:5d}" in out
        assert f"{len(want)} members" in out

    def test_empty_patch(self, tmp_path, capsys):
        lc = segments_on_wireframe(cube_wireframe(), per_edge=1)
        cloud_path = tmp_path / "cloud.txt"
        write_line_cloud(lc, cloud_path)
        assert run("inspect-patch", "--cloud", cloud_path, "--point", "50,50,50",
                   "--eps", "0.001") == 0
        assert "empty patch" in capsys.readouterr().out

    def test_pair_patch(self, tmp_path, capsys):
        lc = segments_on_wireframe(cube_wireframe(side=2.0), per_edge=2)
        cloud_path = tmp_path / "cloud.txt"
        write_line_cloud(lc, cloud_path)
        assert run("inspect-patch", "--cloud", cloud_path, "--point", "0,0,0",
                   "--point2", "2,0,0", "--eps", "0.1") == 0
        assert "pair patch" in capsys.readouterr().out

    def test_bad_point(self, tmp_path, capsys):
        lc = segments_on_wireframe(cube_wireframe(), per_edge=1)
        cloud_path = tmp_path / "cloud.txt"
        write_line_cloud(lc, cloud_path)
        assert run("inspect-patch", "--cloud", cloud_path, "--point", "1,2") == 1
