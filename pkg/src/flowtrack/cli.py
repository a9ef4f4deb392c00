"""Command-line interface and the pipeline glue behind it.

Four subcommands cover the workflow: ``sim`` writes a synthetic scenario to
disk in the same file formats real data uses, ``track`` runs the tracking
pipeline over detections plus point clouds, ``eval`` scores a result file
against ground truth, and ``decimate`` drops frames from a written scenario.
Every run writes a ``run_manifest.json`` capturing the configuration,
inputs, seed and timing; outputs are byte-identical across runs with the
same arguments and seed.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .flow import (
    FileFlowEstimator,
    FlowEstimator,
    NearestNeighborFlowEstimator,
    OracleFlowEstimator,
    estimate_oracle,
    save_flow,
)
from .geometry import Box3D
from .kitti_io import (
    LabelRow,
    camera_to_lidar_box,
    label_to_box,
    read_calib,
    read_labels,
    read_velodyne,
    result_row,
    write_calib,
    write_labels,
    write_results,
    write_velodyne,
)
from .metrics import EvalConfig, MetricsReport, TrackedBox, recall_sweep
from .preprocess import Calibration, Frustum, PointCloud, fit_ground, sample_points, filter_fov
from .sim import FrameData, Scenario, decimate, demo_scenario, generate, read_scenario
from .tracker import (
    Detection,
    EmittedTrack,
    PipelineConfig,
    Tracker,
    TrackerConfig,
)

DEFAULT_NUM_POINTS = 6000


def write_manifest(
    out_dir: Path,
    command: str,
    args: Mapping[str, object],
    seed: int | None,
    started: float,
    finished: float,
) -> None:
    """Write the per-run manifest next to the outputs."""
    manifest = {
        "command": command,
        "version": __version__,
        "arguments": {k: str(v) if isinstance(v, Path) else v for k, v in args.items()},
        "seed": seed,
        "started_unix": started,
        "duration_s": finished - started,
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def preprocess_frame(
    cloud: PointCloud,
    frustum: Frustum | None,
    num_points: int,
    seed: int,
    frame_index: int,
) -> PointCloud:
    """Standard per-frame chain: frustum crop, ground labeling, sampling.

    The random draws are keyed by ``(seed, frame_index)`` so every frame is
    reproducible independently of processing order.
    """
    if frustum is not None:
        cloud = filter_fov(cloud, frustum)
    if len(cloud) >= 3:
        cloud, _ = fit_ground(cloud, seed=(seed, frame_index, 0))
    return sample_points(cloud, num_points, seed=(seed, frame_index, 1))


def _rows_to_detections(
    rows: Sequence[LabelRow], calib: Calibration, category: str | None
) -> list[Detection]:
    detections = []
    for row in rows:
        if category is not None and row.category != category:
            continue
        detections.append(
            Detection(
                box=camera_to_lidar_box(row, calib),
                confidence=row.score if row.score is not None else 1.0,
                category=row.category,
            )
        )
    return detections


def _gt_boxes_by_frame(
    gt_rows: Mapping[int, Sequence[LabelRow]], calib: Calibration, category: str | None
) -> dict[int, dict[int, Box3D]]:
    boxes: dict[int, dict[int, Box3D]] = {}
    for frame, rows in gt_rows.items():
        frame_boxes = {}
        for row in rows:
            if category is not None and row.category != category:
                continue
            frame_boxes[row.track_id] = camera_to_lidar_box(row, calib)
        boxes[frame] = frame_boxes
    return boxes


def run_tracking(
    detections_by_frame: Mapping[int, Sequence[Detection]],
    clouds_by_frame: Mapping[int, PointCloud] | None,
    flow_estimator: FlowEstimator | None,
    tracker_config: TrackerConfig,
    predictor: str = "flow",
    frustum: Frustum | None = None,
    num_points: int = DEFAULT_NUM_POINTS,
    seed: int = 0,
) -> dict[int, list[EmittedTrack]]:
    """Run the tracker over a sequence held in memory.

    Frames are processed in ascending index order; the frame range is the
    union of the detection and cloud keys starting at 0.
    """
    frames: set[int] = set(detections_by_frame)
    if clouds_by_frame:
        frames |= set(clouds_by_frame)
    if not frames:
        return {}
    last_frame = max(frames)

    tracker = Tracker(config=tracker_config, predictor=predictor)
    results: dict[int, list[EmittedTrack]] = {}
    prev_sampled: PointCloud | None = None
    for frame in range(last_frame + 1):
        sampled = None
        if clouds_by_frame is not None and frame in clouds_by_frame:
            sampled = preprocess_frame(
                clouds_by_frame[frame], frustum, num_points, seed, frame
            )
        flow = None
        if (
            predictor == "flow"
            and frame > 0
            and prev_sampled is not None
            and sampled is not None
            and flow_estimator is not None
        ):
            flow = flow_estimator.estimate(prev_sampled, sampled, frame - 1)
        detections = list(detections_by_frame.get(frame, []))
        results[frame] = tracker.step(detections, prev_cloud=prev_sampled, flow=flow)
        prev_sampled = sampled
    return results


def run_tracking_files(
    detections_path: Path,
    clouds_dir: Path | None,
    calib_path: Path | None,
    out_dir: Path,
    flow_source: str = "oracle",
    flow_dir: Path | None = None,
    gt_path: Path | None = None,
    predictor: str = "flow",
    config: PipelineConfig | None = None,
    num_points: int = DEFAULT_NUM_POINTS,
    nn_max_distance: float = 2.0,
    fov_margin_deg: float = 10.0,
    image_width: int = 1200,
    image_height: int = 400,
    seed: int = 0,
) -> Path:
    """File-based tracking pipeline; returns the result file path."""
    pipeline = config if config is not None else PipelineConfig()
    calib = read_calib(calib_path) if calib_path else Calibration.nominal()
    frustum = None
    if calib_path and clouds_dir:
        frustum = Frustum(
            calibration=calib,
            image_width=image_width,
            image_height=image_height,
            margin_deg=fov_margin_deg,
        )

    detection_rows = read_labels(detections_path)
    detections_by_frame = {
        frame: _rows_to_detections(rows, calib, pipeline.category)
        for frame, rows in detection_rows.items()
    }

    clouds_by_frame = None
    if clouds_dir is not None:
        clouds_by_frame = {
            int(path.stem): read_velodyne(path)
            for path in sorted(Path(clouds_dir).glob("*.bin"))
        }

    flow_estimator: FlowEstimator | None = None
    if predictor == "flow":
        if flow_source == "oracle":
            if gt_path is None:
                raise ValueError("--flow-source oracle needs --gt for the true motions")
            flow_estimator = OracleFlowEstimator(
                _gt_boxes_by_frame(read_labels(gt_path), calib, pipeline.category)
            )
        elif flow_source == "nn":
            flow_estimator = NearestNeighborFlowEstimator(nn_max_distance)
        elif flow_source == "file":
            if flow_dir is None:
                raise ValueError("--flow-source file needs --flow-dir")
            flow_estimator = FileFlowEstimator(flow_dir)
        else:
            raise ValueError(f"unknown flow source {flow_source!r}")

    results = run_tracking(
        detections_by_frame,
        clouds_by_frame,
        flow_estimator,
        pipeline.tracker,
        predictor=predictor,
        frustum=frustum,
        num_points=num_points,
        seed=seed,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result_path = out_dir / "results.txt"
    write_results(result_path, results, calib)
    return result_path


def load_tracked_frames(
    path: Path, category: str | None = None, require_score: bool = False
) -> dict[int, list[TrackedBox]]:
    """Read a label file into per-frame evaluation boxes.

    Boxes use the calibration-free nominal conversion; ground truth and
    results go through the same transform, so IoU comparisons are
    unaffected.
    """
    frames: dict[int, list[TrackedBox]] = {}
    for frame, rows in read_labels(path).items():
        boxes = []
        for row in rows:
            if category is not None and row.category != category:
                continue
            boxes.append(TrackedBox(track_id=row.track_id, box=label_to_box(row), score=row.score))
        frames[frame] = boxes
    return frames


def _check_frame_alignment(gt: Mapping, pred: Mapping) -> None:
    """Reject result files whose frame indices share nothing with the ground
    truth; that pattern means the files were produced for different frame
    numbering (for example decimated results against full-rate truth)."""

    def frame_set(data: Mapping) -> set[int]:
        if data and all(isinstance(v, Mapping) for v in data.values()):
            return {f for frames in data.values() for f in frames}
        return set(data)

    gt_frames, pred_frames = frame_set(gt), frame_set(pred)
    if gt_frames and pred_frames and not (gt_frames & pred_frames):
        raise ValueError(
            "results and ground truth cover disjoint frame ranges; "
            "check that both use the same frame numbering"
        )


def run_evaluation(
    gt_path: Path,
    results_path: Path,
    out_dir: Path | None,
    iou_thresholds: Sequence[float] = (0.25,),
    category: str = "Car",
    recall_steps: int = 40,
    smota_mode: str = "ratio",
) -> list[MetricsReport]:
    """Evaluate a result file (or directory of per-sequence files) against
    ground truth and write the reports."""
    gt_path, results_path = Path(gt_path), Path(results_path)
    if gt_path.is_dir() != results_path.is_dir():
        raise ValueError("ground truth and results must both be files or both be directories")
    if gt_path.is_dir():
        gt = {
            p.stem: load_tracked_frames(p, category)
            for p in sorted(gt_path.glob("*.txt"))
        }
        pred = {
            p.stem: load_tracked_frames(p, category)
            for p in sorted(results_path.glob("*.txt"))
        }
    else:
        gt = load_tracked_frames(gt_path, category)
        pred = load_tracked_frames(results_path, category)

    _check_frame_alignment(gt, pred)
    reports = []
    for iou_thres in iou_thresholds:
        cfg = EvalConfig(
            iou_thres=iou_thres,
            category=category,
            num_recall_steps=recall_steps,
            smota_mode=smota_mode,
        )
        report = recall_sweep(gt, pred, cfg)
        reports.append(report)
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            stem = f"report_iou{iou_thres:g}"
            (out_dir / f"{stem}.txt").write_text(report.to_text())
            (out_dir / f"{stem}.json").write_text(
                json.dumps(report.to_dict(), indent=2) + "\n"
            )
    return reports


def _gt_row(frame: int, obj_id: int, category: str, box: Box3D, calib: Calibration) -> LabelRow:
    row = result_row(frame, EmittedTrack(obj_id, box, 1.0, category), calib)
    return replace(row, score=None)


def write_scenario_outputs(
    frames: Sequence[FrameData],
    out_dir: Path,
    calib: Calibration,
    write_flow: bool = False,
    num_points: int = DEFAULT_NUM_POINTS,
    seed: int = 0,
) -> None:
    """Write a generated scenario in the on-disk layout ``track`` consumes.

    Layout: ``calib.txt``, ``velodyne/<frame>.bin``, ``gt.txt``,
    ``detections.txt`` and optionally ``flow/<frame>.sfl``.  Flow files are
    computed on the clouds as re-read from disk with the same preprocessing
    seed, so a ``track`` run with that seed sees bit-identical sources.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_calib(out_dir / "calib.txt", calib)

    gt_rows: dict[int, list[LabelRow]] = {}
    det_rows: dict[int, list[LabelRow]] = {}
    for frame_data in frames:
        write_velodyne(out_dir / "velodyne" / f"{frame_data.index:06d}.bin", frame_data.cloud)
        gt_rows[frame_data.index] = [
            _gt_row(frame_data.index, g.obj_id, g.category, g.box, calib)
            for g in frame_data.gt
        ]
        det_rows[frame_data.index] = [
            result_row(
                frame_data.index,
                EmittedTrack(-1, d.box, d.confidence, d.category),
                calib,
            )
            for d in frame_data.detections
        ]
    write_labels(out_dir / "gt.txt", gt_rows)
    write_labels(out_dir / "detections.txt", det_rows)

    if write_flow:
        boxes_by_frame = {
            f.index: {g.obj_id: g.box for g in f.gt} for f in frames
        }
        estimator = OracleFlowEstimator(boxes_by_frame)
        frustum = Frustum(
            calibration=calib,
            image_width=int(calib.projection[0, 2] * 2),
            image_height=int(calib.projection[1, 2] * 2),
        )
        prev_sampled: PointCloud | None = None
        for frame_data in frames:
            cloud = read_velodyne(out_dir / "velodyne" / f"{frame_data.index:06d}.bin")
            sampled = preprocess_frame(cloud, frustum, num_points, seed, frame_data.index)
            if prev_sampled is not None:
                field = estimator.estimate(prev_sampled, sampled, frame_data.index - 1)
                save_flow(
                    out_dir / "flow", frame_data.index - 1, prev_sampled.positions, field
                )
            prev_sampled = sampled


def run_simulation(
    scenario: Scenario,
    out_dir: Path,
    write_flow: bool = False,
    num_points: int = DEFAULT_NUM_POINTS,
    preprocess_seed: int = 0,
) -> list[FrameData]:
    """Generate a scenario and write it out; returns the frames.

    ``scenario.seed`` drives generation; ``preprocess_seed`` drives the
    preprocessing chain used when writing flow files and must match the
    ``--seed`` of the later ``track`` run (both default to 0).
    """
    frames = generate(scenario)
    write_scenario_outputs(
        frames,
        out_dir,
        scenario.sensor.calibration(),
        write_flow=write_flow,
        num_points=num_points,
        seed=preprocess_seed,
    )
    return frames


def run_decimation(in_dir: Path, out_dir: Path, stride: int, offset: int) -> list[int]:
    """Decimate a written scenario directory, re-indexing frames densely.

    Returns the list of original frame indices kept.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if stride < 1:
        raise ValueError(f"stride must be at least 1, got {stride}")
    if offset < 0:
        raise ValueError(f"offset must be non-negative, got {offset}")
    original_indices = sorted(int(p.stem) for p in (in_dir / "velodyne").glob("*.bin"))
    kept = original_indices[offset::stride]
    if not kept:
        import warnings

        warnings.warn("decimation kept no frames", RuntimeWarning, stacklevel=2)

    index_map = {old: new for new, old in enumerate(kept)}
    (out_dir / "velodyne").mkdir(parents=True, exist_ok=True)
    for old, new in index_map.items():
        shutil.copyfile(
            in_dir / "velodyne" / f"{old:06d}.bin", out_dir / "velodyne" / f"{new:06d}.bin"
        )

    for name in ("gt.txt", "detections.txt"):
        source = in_dir / name
        if not source.exists():
            continue
        rows = read_labels(source)
        remapped: dict[int, list[LabelRow]] = {}
        for old, new in index_map.items():
            remapped[new] = [replace(r, frame=new) for r in rows.get(old, [])]
        write_labels(out_dir / name, remapped)

    calib_path = in_dir / "calib.txt"
    if calib_path.exists():
        shutil.copyfile(calib_path, out_dir / "calib.txt")
    return kept


def _add_track_parser(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("track", help="run the tracking pipeline")
    p.add_argument("--detections", type=Path, required=True, help="detection label file")
    p.add_argument("--clouds", type=Path, help="directory of point-cloud .bin files")
    p.add_argument("--calib", type=Path, help="calibration file")
    p.add_argument("--gt", type=Path, help="ground-truth file (needed for oracle flow)")
    p.add_argument(
        "--flow-source", choices=("oracle", "nn", "file"), default=None,
        help="where flow fields come from",
    )
    p.add_argument("--flow-dir", type=Path, help="directory of .sfl files for --flow-source file")
    p.add_argument("--predictor", choices=("flow", "cv"), default="flow")
    p.add_argument("--config", type=Path, help="key-value configuration file")
    p.add_argument("--category", default=None, help="category to track")
    p.add_argument("--num-points", type=int, default=DEFAULT_NUM_POINTS)
    p.add_argument("--nn-max-dist", type=float, default=2.0)
    p.add_argument("--fov-margin", type=float, default=10.0)
    p.add_argument("--image-width", type=int, default=1200)
    p.add_argument("--image-height", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")


def _add_eval_parser(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("eval", help="score results against ground truth")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--results", type=Path, required=True)
    p.add_argument(
        "--iou-thres", type=float, action="append", default=None,
        help="IoU threshold; repeat for several",
    )
    p.add_argument("--category", default="Car")
    p.add_argument("--recall-steps", type=int, default=40)
    p.add_argument("--smota-mode", choices=("ratio", "adjusted"), default="ratio")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)


def _add_sim_parser(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("sim", help="generate a synthetic scenario")
    p.add_argument("--scenario", type=Path, help="scenario file; omit for the built-in demo")
    p.add_argument("--frames", type=int, default=30, help="demo scenario length")
    p.add_argument("--objects", type=int, default=5, help="demo scenario object count")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--write-flow", action="store_true", help="also write exact flow fields")
    p.add_argument("--num-points", type=int, default=DEFAULT_NUM_POINTS)
    p.add_argument("--out", type=Path, required=True)


def _add_decimate_parser(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("decimate", help="drop frames from a written scenario")
    p.add_argument("--in", dest="in_dir", type=Path, required=True)
    p.add_argument("--keep", choices=("even", "odd"), default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)


def main(argv: Sequence[str] | None = None) -> int:
    """CLI entry point."""
    parser = argparse.ArgumentParser(
        prog="flowtrack",
        description="3D multi-object tracking with scene-flow motion prediction",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    _add_track_parser(subparsers)
    _add_eval_parser(subparsers)
    _add_sim_parser(subparsers)
    _add_decimate_parser(subparsers)
    args = parser.parse_args(argv)

    started = time.time()
    arg_record = {k: v for k, v in vars(args).items() if k != "command"}

    if args.command == "track":
        pipeline = (
            PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
        )
        if args.flow_source is not None:
            pipeline.flow_source = args.flow_source
        if args.category is not None:
            pipeline.category = args.category
        arg_record["resolved_config"] = {
            "iou_min": pipeline.tracker.iou_min,
            "max_mis": pipeline.tracker.max_mis,
            "min_det": pipeline.tracker.min_det,
            "flow_source": pipeline.flow_source,
            "category": pipeline.category,
        }
        result_path = run_tracking_files(
            detections_path=args.detections,
            clouds_dir=args.clouds,
            calib_path=args.calib,
            out_dir=args.out,
            flow_source=pipeline.flow_source,
            flow_dir=args.flow_dir,
            gt_path=args.gt,
            predictor=args.predictor,
            config=pipeline,
            num_points=args.num_points,
            nn_max_distance=args.nn_max_dist,
            fov_margin_deg=args.fov_margin,
            image_width=args.image_width,
            image_height=args.image_height,
            seed=args.seed,
        )
        print(f"results written to {result_path}")
    elif args.command == "eval":
        thresholds = args.iou_thres if args.iou_thres else [0.25]
        reports = run_evaluation(
            gt_path=args.gt,
            results_path=args.results,
            out_dir=args.out,
            iou_thresholds=thresholds,
            category=args.category,
            recall_steps=args.recall_steps,
            smota_mode=args.smota_mode,
        )
        for report in reports:
            print(report.to_text(), end="")
    elif args.command == "sim":
        if args.scenario is not None:
            scenario = read_scenario(args.scenario)
        else:
            scenario = demo_scenario(frames=args.frames, num_objects=args.objects)
        if args.seed is not None:
            scenario.seed = args.seed
        run_simulation(
            scenario, args.out, write_flow=args.write_flow, num_points=args.num_points
        )
        print(f"scenario written to {args.out}")
    elif args.command == "decimate":
        if (args.keep is None) == (args.stride is None):
            parser.error("give exactly one of --keep or --stride")
        if args.keep is not None:
            stride, offset = 2, (0 if args.keep == "even" else 1)
        else:
            stride, offset = args.stride, 0
        kept = run_decimation(args.in_dir, args.out, stride, offset)
        print(f"kept {len(kept)} frames")

    write_manifest(
        args.out, args.command, arg_record, getattr(args, "seed", None), started, time.time()
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
