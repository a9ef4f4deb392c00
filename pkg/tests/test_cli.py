"""End-to-end command-line workflows over on-disk scenarios."""

from __future__ import annotations

import json
import shutil

import pytest

from flowtrack.cli import main
from flowtrack.flow import FlowDataError
from flowtrack.sim import demo_scenario, write_scenario

SIM_ARGS = ["--frames", "12", "--objects", "3", "--num-points", "2000"]


def run(args: list) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "scene"
    assert run(["sim", *SIM_ARGS, "--write-flow", "--out", out]) == 0
    return out


def track_args(sim_dir, out, **overrides):
    args = {
        "--detections": sim_dir / "detections.txt",
        "--clouds": sim_dir / "velodyne",
        "--calib": sim_dir / "calib.txt",
        "--gt": sim_dir / "gt.txt",
        "--flow-source": "oracle",
        "--num-points": "2000",
        "--out": out,
    }
    args.update(overrides)
    flat = ["track"]
    for key, value in args.items():
        if value is None:
            continue
        flat.extend([key, value])
    return flat


@pytest.fixture(scope="module")
def tracked_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trk") / "run"
    assert run(track_args(sim_dir, out)) == 0
    return out


class TestPipeline:
    def test_outputs_laid_out(self, sim_dir):
        assert (sim_dir / "calib.txt").exists()
        assert (sim_dir / "gt.txt").exists()
        assert (sim_dir / "detections.txt").exists()
        assert len(list((sim_dir / "velodyne").glob("*.bin"))) == 12
        assert len(list((sim_dir / "flow").glob("*.sfl"))) == 11

    def test_noise_free_run_scores_perfectly(self, sim_dir, tracked_dir, tmp_path):
        out = tmp_path / "eval"
        assert run(
            ["eval", "--gt", sim_dir / "gt.txt", "--results",
             tracked_dir / "results.txt", "--out", out]
        ) == 0
        report = json.loads((out / "report_iou0.25.json").read_text())
        assert report["sAMOTA"] == 100.0
        assert report["AMOTA"] == 100.0
        assert report["MOTA"] == 1.0
        assert report["MOTP"] == 1.0
        assert report["IDS"] == 0

    def test_manifest_written_per_command(self, sim_dir, tracked_dir, tmp_path):
        sim_manifest = json.loads((sim_dir / "run_manifest.json").read_text())
        assert sim_manifest["command"] == "sim"
        assert "version" in sim_manifest
        track_manifest = json.loads((tracked_dir / "run_manifest.json").read_text())
        assert track_manifest["command"] == "track"
        resolved = track_manifest["arguments"]["resolved_config"]
        assert resolved == {
            "iou_min": 0.01,
            "max_mis": 2,
            "min_det": 3,
            "flow_source": "oracle",
            "category": "Car",
        }
        out = tmp_path / "eval"
        run(["eval", "--gt", sim_dir / "gt.txt", "--results",
             tracked_dir / "results.txt", "--out", out])
        assert json.loads((out / "run_manifest.json").read_text())["command"] == "eval"

    def test_eval_prints_table(self, sim_dir, tracked_dir, tmp_path, capsys):
        run(["eval", "--gt", sim_dir / "gt.txt", "--results",
             tracked_dir / "results.txt", "--out", tmp_path / "e"])
        captured = capsys.readouterr().out
        assert "sAMOTA" in captured
        assert "100.00" in captured


class TestDeterminism:
    def test_track_byte_identical_repeat(self, sim_dir, tracked_dir, tmp_path):
        out = tmp_path / "again"
        run(track_args(sim_dir, out))
        assert (out / "results.txt").read_bytes() == (
            tracked_dir / "results.txt"
        ).read_bytes()

    def test_sim_byte_identical_repeat(self, sim_dir, tmp_path):
        out = tmp_path / "scene2"
        run(["sim", *SIM_ARGS, "--write-flow", "--out", out])
        for name in ("gt.txt", "detections.txt", "calib.txt"):
            assert (out / name).read_bytes() == (sim_dir / name).read_bytes()
        assert (out / "velodyne" / "000000.bin").read_bytes() == (
            sim_dir / "velodyne" / "000000.bin"
        ).read_bytes()
        assert (out / "flow" / "000000.sfl").read_bytes() == (
            sim_dir / "flow" / "000000.sfl"
        ).read_bytes()

    def test_scenario_file_reproduces_demo(self, sim_dir, tmp_path):
        scenario = demo_scenario(frames=12, num_objects=3)
        path = tmp_path / "demo.scn"
        write_scenario(path, scenario)
        out = tmp_path / "from_file"
        run(["sim", "--scenario", path, "--num-points", "2000", "--out", out])
        assert (out / "gt.txt").read_bytes() == (sim_dir / "gt.txt").read_bytes()


class TestFlowSources:
    def test_file_flow_matches_oracle(self, sim_dir, tracked_dir, tmp_path):
        out = tmp_path / "file_flow"
        run(track_args(sim_dir, out, **{
            "--flow-source": "file", "--flow-dir": sim_dir / "flow",
        }))
        assert (out / "results.txt").read_bytes() == (
            tracked_dir / "results.txt"
        ).read_bytes()

    def test_missing_flow_file_names_frame(self, sim_dir, tmp_path):
        flow_dir = tmp_path / "flow"
        shutil.copytree(sim_dir / "flow", flow_dir)
        (flow_dir / "000005.sfl").unlink()
        with pytest.raises(FlowDataError, match="frame 5"):
            run(track_args(sim_dir, tmp_path / "out", **{
                "--flow-source": "file", "--flow-dir": flow_dir,
            }))

    def test_nn_flow_runs(self, sim_dir, tmp_path):
        out = tmp_path / "nn"
        assert run(track_args(sim_dir, out, **{"--flow-source": "nn"})) == 0
        assert (out / "results.txt").stat().st_size > 0

    def test_constant_velocity_needs_no_clouds(self, sim_dir, tmp_path):
        out = tmp_path / "cv"
        assert run([
            "track", "--detections", sim_dir / "detections.txt",
            "--predictor", "cv", "--out", out,
        ]) == 0
        assert (out / "results.txt").stat().st_size > 0

    def test_oracle_requires_ground_truth(self, sim_dir, tmp_path):
        with pytest.raises(ValueError, match="--gt"):
            run(track_args(sim_dir, tmp_path / "x", **{"--gt": None}))

    def test_file_source_requires_flow_dir(self, sim_dir, tmp_path):
        with pytest.raises(ValueError, match="--flow-dir"):
            run(track_args(sim_dir, tmp_path / "x", **{"--flow-source": "file"}))


class TestConfigFile:
    def test_config_reflected_in_manifest(self, sim_dir, tmp_path):
        cfg = tmp_path / "tracker.cfg"
        cfg.write_text("iou_min = 0.2\nmax_mis = 5\nflow_source = nn\n")
        out = tmp_path / "cfg_run"
        run(track_args(sim_dir, out, **{"--config": cfg, "--flow-source": None}))
        manifest = json.loads((out / "run_manifest.json").read_text())
        resolved = manifest["arguments"]["resolved_config"]
        assert resolved["iou_min"] == 0.2
        assert resolved["max_mis"] == 5
        assert resolved["flow_source"] == "nn"
        assert resolved["min_det"] == 3

    def test_command_line_overrides_config(self, sim_dir, tmp_path):
        cfg = tmp_path / "tracker.cfg"
        cfg.write_text("flow_source = nn\n")
        out = tmp_path / "cfg_run"
        run(track_args(sim_dir, out, **{"--config": cfg}))
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["arguments"]["resolved_config"]["flow_source"] == "oracle"


class TestEvalCommand:
    def test_multiple_thresholds_write_report_pairs(self, sim_dir, tracked_dir, tmp_path):
        out = tmp_path / "eval"
        run(["eval", "--gt", sim_dir / "gt.txt", "--results",
             tracked_dir / "results.txt", "--iou-thres", "0.25",
             "--iou-thres", "0.5", "--out", out])
        for stem in ("report_iou0.25", "report_iou0.5"):
            assert (out / f"{stem}.txt").exists()
            assert (out / f"{stem}.json").exists()
        strict = json.loads((out / "report_iou0.5.json").read_text())
        assert strict["iou_thres"] == 0.5

    def test_empty_results_score_zero(self, sim_dir, tmp_path):
        empty = tmp_path / "results.txt"
        empty.write_text("")
        out = tmp_path / "eval"
        run(["eval", "--gt", sim_dir / "gt.txt", "--results", empty,
             "--recall-steps", "4", "--out", out])
        report = json.loads((out / "report_iou0.25.json").read_text())
        assert report["sAMOTA"] == 0.0
        assert report["AMOTA"] == 0.0
        assert all(row["MOTA"] == 0.0 for row in report["rows"])

    def test_disjoint_frames_rejected(self, sim_dir, tracked_dir, tmp_path):
        shifted = tmp_path / "shifted.txt"
        lines = (tracked_dir / "results.txt").read_text().splitlines()
        moved = []
        for line in lines:
            tokens = line.split()
            tokens[0] = str(int(tokens[0]) + 100)
            moved.append(" ".join(tokens))
        shifted.write_text("\n".join(moved) + "\n")
        with pytest.raises(ValueError, match="disjoint"):
            run(["eval", "--gt", sim_dir / "gt.txt", "--results", shifted,
                 "--out", tmp_path / "eval"])

    def test_smota_mode_flag_accepted(self, sim_dir, tracked_dir, tmp_path):
        out = tmp_path / "adj"
        assert run(["eval", "--gt", sim_dir / "gt.txt", "--results",
                    tracked_dir / "results.txt", "--smota-mode", "adjusted",
                    "--out", out]) == 0
        report = json.loads((out / "report_iou0.25.json").read_text())
        assert report["sAMOTA"] == 100.0


class TestDecimateCommand:
    def test_keep_even_halves_scene(self, sim_dir, tmp_path):
        out = tmp_path / "half"
        assert run(["decimate", "--in", sim_dir, "--keep", "even", "--out", out]) == 0
        bins = sorted(p.name for p in (out / "velodyne").glob("*.bin"))
        assert bins == [f"{i:06d}.bin" for i in range(6)]
        assert (out / "velodyne" / "000002.bin").read_bytes() == (
            sim_dir / "velodyne" / "000004.bin"
        ).read_bytes()
        gt_frames = {int(line.split()[0]) for line in (out / "gt.txt").read_text().splitlines()}
        assert gt_frames == set(range(6))
        assert (out / "calib.txt").read_bytes() == (sim_dir / "calib.txt").read_bytes()
        assert json.loads((out / "run_manifest.json").read_text())["command"] == "decimate"

    def test_stride_composes(self, sim_dir, tmp_path):
        half = tmp_path / "half"
        run(["decimate", "--in", sim_dir, "--keep", "even", "--out", half])
        quarter = tmp_path / "quarter"
        run(["decimate", "--in", half, "--stride", "2", "--out", quarter])
        direct = tmp_path / "direct"
        run(["decimate", "--in", sim_dir, "--stride", "4", "--out", direct])
        assert (quarter / "gt.txt").read_bytes() == (direct / "gt.txt").read_bytes()
        assert (quarter / "velodyne" / "000001.bin").read_bytes() == (
            direct / "velodyne" / "000001.bin"
        ).read_bytes()

    def test_exactly_one_mode_required(self, sim_dir, tmp_path):
        with pytest.raises(SystemExit):
            run(["decimate", "--in", sim_dir, "--out", tmp_path / "x"])
        with pytest.raises(SystemExit):
            run(["decimate", "--in", sim_dir, "--keep", "even", "--stride", "3",
                 "--out", tmp_path / "x"])

    def test_empty_input_warns(self, tmp_path):
        empty = tmp_path / "empty_scene"
        empty.mkdir()
        with pytest.warns(RuntimeWarning, match="no frames"):
            run(["decimate", "--in", empty, "--stride", "2", "--out", tmp_path / "out"])
