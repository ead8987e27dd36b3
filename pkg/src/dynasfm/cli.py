"""Command line entry point.

Subcommands: generate | segment | sfm | fuse | evaluate | pipeline.
Exit codes: 0 success, 1 validation error (bad config, missing or
malformed inputs), 2 solver failure. Set DYNASFM_LOG=DEBUG|INFO|... for
verbosity. All runs are reproducible for a given seed, independent of
--threads; report.json and the trajectories are byte-identical across
reruns (diagnostics.json contains wall-clock timings and is exempt).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .bundle import BundleConfig
from .errors import (
    DynaSfmError,
    InvalidConfig,
    InvariantViolation,
    LengthMismatch,
    ParseError,
    ProbabilityOutOfRange,
)
from .fusion import fuse, calibrate_frames
from .metrics import ALIGN_MODES, MetricsReport, evaluate_trajectories, per_frame_errors, seg_metrics, track_losses
from .segmentation import SegmentationConfig, segment_tracks
from .sfm import SfmConfig, mark_all_static, run_global_sfm
from .synthetic import SceneConfig, generate_scene, scene_gt_record
from .tracks import TrackSet, sample_depth
from .viewgraph import ViewGraphConfig

logger = logging.getLogger(__name__)

_VALIDATION_ERRORS = (InvalidConfig, ParseError, InvariantViolation, LengthMismatch,
                      ProbabilityOutOfRange, FileNotFoundError)


def _dataclass_from(cls, obj: dict, where: str):
    allowed = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(obj) - set(allowed)
    if unknown:
        raise InvalidConfig(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in obj.items():
        if isinstance(value, list) and isinstance(allowed[key].default, tuple):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidConfig(f"{where}: {exc}") from exc


@dataclasses.dataclass
class PipelineConfig:
    paths: dict
    seed: int = 42
    align: str = "sim3"
    rpe_delta: int = 1
    lambdas: tuple = (1.0, 1.0, 1.0)
    include_static_depth: bool = False
    segmentation: SegmentationConfig = dataclasses.field(default_factory=SegmentationConfig)
    viewgraph: ViewGraphConfig = dataclasses.field(default_factory=ViewGraphConfig)
    bundle: BundleConfig = dataclasses.field(default_factory=BundleConfig)
    max_reproj_px: float = 4.0
    min_angle_deg: float = 1.0
    scene: SceneConfig | None = None

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        obj = fileio.read_json(path)
        if not isinstance(obj, dict):
            raise InvalidConfig(f"{path}: config must be a JSON object")
        known = {"paths", "seed", "align", "rpe_delta", "lambdas", "include_static_depth",
                 "segmentation", "viewgraph", "bundle", "max_reproj_px", "min_angle_deg",
                 "scene"}
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(f"{path}: unknown keys {sorted(unknown)}")
        cfg = PipelineConfig(paths=dict(obj.get("paths", {})))
        cfg.seed = int(obj.get("seed", 42))
        cfg.align = obj.get("align", "sim3")
        if cfg.align not in ALIGN_MODES:
            raise InvalidConfig(f"align must be one of {ALIGN_MODES}")
        cfg.rpe_delta = int(obj.get("rpe_delta", 1))
        cfg.lambdas = tuple(obj.get("lambdas", (1.0, 1.0, 1.0)))
        cfg.include_static_depth = bool(obj.get("include_static_depth", False))
        cfg.segmentation = _dataclass_from(SegmentationConfig, obj.get("segmentation", {}), "segmentation")
        cfg.viewgraph = _dataclass_from(ViewGraphConfig, obj.get("viewgraph", {}), "viewgraph")
        cfg.bundle = _dataclass_from(BundleConfig, obj.get("bundle", {}), "bundle")
        cfg.max_reproj_px = float(obj.get("max_reproj_px", 4.0))
        cfg.min_angle_deg = float(obj.get("min_angle_deg", 1.0))
        if "scene" in obj:
            cfg.scene = _dataclass_from(SceneConfig, obj["scene"], "scene")
        return cfg

    def sfm_config(self) -> SfmConfig:
        return SfmConfig(viewgraph=self.viewgraph, bundle=self.bundle,
                         max_reproj_px=self.max_reproj_px, min_angle_deg=self.min_angle_deg)

    def path(self, key: str, required: bool = True) -> Path | None:
        value = self.paths.get(key)
        if value is None:
            if required:
                raise InvalidConfig(f"config paths.{key} is required")
            return None
        return Path(value)


def _require_exists(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise InvalidConfig(f"input path does not exist: {p}")


def _write_report(report: dict, path: Path):
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- subcommands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    scene_cfg = cfg.scene or SceneConfig()
    if args.seed is not None:
        scene_cfg = replace(scene_cfg, seed=args.seed)
    out = Path(args.output or cfg.path("output_dir"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)

    scene, tracks, depth_frames = generate_scene(scene_cfg)
    fileio.write_tracks(tracks, out / "tracks.jsonl")
    fileio.write_camera_json(scene.camera, out / "camera.json")
    fileio.write_json(dataclasses.asdict(scene_cfg), out / "scene.json")
    for frame in depth_frames:
        fileio.write_depth_pfm(frame, out / "depth" / f"frame_{frame.frame:06d}.pfm")
    fileio.write_trajectory_tum(scene.poses, out / "gt" / "trajectory_gt.txt")
    fileio.write_json(scene_gt_record(scene), out / "gt" / "scene_gt.json")
    fileio.write_json({str(tid): int(lab) for tid, lab in sorted(scene.labels.items())},
                      out / "gt" / "labels_gt.json")

    # noiseless twin with the same seed: exact projections and labels
    gt_cfg = replace(scene_cfg, pixel_noise=0.0, depth_noise=0.0, emit_depth_rasters=False)
    gt_scene, gt_tracks, _ = generate_scene(gt_cfg)
    gt_labeled = TrackSet([replace(t, dyn=gt_scene.labels[t.track_id],
                                   score=float(gt_scene.labels[t.track_id]))
                           for t in gt_tracks])
    fileio.write_tracks(gt_labeled, out / "gt" / "tracks_gt.jsonl")
    print(f"generated scene with {len(tracks)} tracks over {scene.num_frames} frames -> {out}")
    return 0


def _load_camera(args, cfg: PipelineConfig | None):
    cam_path = getattr(args, "camera", None)
    if cam_path is None and cfg is not None:
        cam_path = cfg.paths.get("camera")
    if cam_path is None:
        raise InvalidConfig("camera intrinsics required (--camera or config paths.camera)")
    _require_exists(cam_path)
    return fileio.read_camera_json(cam_path)


def _attach_depth(tracks: TrackSet, depth_dir) -> TrackSet:
    """Fill missing per-track depth by sampling PFM rasters."""
    frames = {}
    for t in tracks:
        if t.depth is not None:
            continue
        missing_frames = range(t.start, t.end)
        for f in missing_frames:
            if f not in frames:
                path = Path(depth_dir) / f"frame_{f:06d}.pfm"
                _require_exists(path)
                frames[f] = fileio.read_depth_pfm(path, frame=f)
        t.depth = np.array([sample_depth(frames[f], t.point_at(f))
                            for f in missing_frames])
        t.validate()
    return tracks


def cmd_segment(args) -> int:
    cfg = PipelineConfig.from_file(args.config) if args.config else None
    _require_exists(args.tracks)
    tracks = fileio.read_tracks(args.tracks)
    cam = _load_camera(args, cfg)
    if not tracks.has_depth():
        depth_dir = args.depth_dir or (cfg.paths.get("depth_dir") if cfg else None)
        if depth_dir is None:
            raise InvalidConfig("tracks carry no depth; provide --depth-dir")
        tracks = _attach_depth(tracks, depth_dir)
    seg_cfg = cfg.segmentation if cfg else SegmentationConfig()
    labeled, diag = segment_tracks(tracks, cam, seg_cfg, threads=args.threads)
    fileio.write_tracks(labeled, args.output)
    print(f"segmented {len(labeled)} tracks: {diag['num_dynamic']} dynamic, "
          f"{diag['num_static']} static -> {args.output}")
    return 0


def cmd_sfm(args) -> int:
    cfg = PipelineConfig.from_file(args.config) if args.config else None
    _require_exists(args.tracks)
    tracks = fileio.read_tracks(args.tracks)
    cam = _load_camera(args, cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    sfm_cfg = cfg.sfm_config() if cfg else SfmConfig()
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 42)
    result = run_global_sfm(tracks, cam, sfm_cfg, seed=seed, threads=args.threads,
                            assume_static=args.no_segmentation)
    fileio.write_trajectory_tum(result.poses, out / "trajectory.txt")
    fileio.write_json(
        {str(tid): {"point": [float(x) for x in result.points[tid]],
                    "max_reproj_px": result.point_errors[tid]}
         for tid in sorted(result.points)},
        out / "points.json")
    fileio.write_json(result.diagnostics, out / "diagnostics.json")
    from .cloud import ScenePointCloud

    ids = sorted(result.points)
    cloud = ScenePointCloud(np.array([result.points[t] for t in ids]).reshape(-1, 3),
                            np.zeros(len(ids), dtype=np.uint8),
                            np.full(len(ids), -1, dtype=np.int32))
    fileio.write_ply(cloud, out / "cloud_sfm.ply")
    ba = result.diagnostics["stages"]["bundle_adjustment"]
    print(f"sfm solved {len(result.poses)} poses, {len(result.points)} points, "
          f"final rms {ba['rms_final_px']:.2e} px -> {out}")
    return 0


def cmd_fuse(args) -> int:
    cfg = PipelineConfig.from_file(args.config) if args.config else None
    _require_exists(args.tracks, args.sfm_dir)
    sfm_dir = Path(args.sfm_dir)
    _require_exists(sfm_dir / "trajectory.txt", sfm_dir / "points.json")
    tracks = fileio.read_tracks(args.tracks)
    cam = _load_camera(args, cfg)
    poses, _ = fileio.read_trajectory_tum(sfm_dir / "trajectory.txt")
    points_obj = fileio.read_json(sfm_dir / "points.json")
    sfm_points = {int(tid): np.array(rec["point"]) for tid, rec in points_obj.items()}
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    include_static = args.include_static_depth or (cfg.include_static_depth if cfg else False)
    calibrations, skipped = calibrate_frames(tracks, poses, sfm_points)
    cloud = fuse(tracks, cam, poses, sfm_points, calibrations, skipped,
                 include_static_depth=include_static)
    fileio.write_ply(cloud, out / "cloud.ply")
    fileio.write_json(
        {str(f): [calibrations[f][0], calibrations[f][1]] for f in sorted(calibrations)},
        out / "calibration.json")
    if skipped:
        fileio.write_json({str(f): r for f, r in sorted(skipped.items())},
                          out / "calibration_skipped.json")
    print(f"fused cloud with {len(cloud)} points "
          f"({int(np.sum(cloud.labels == 2))} dynamic samples) -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    _require_exists(args.pred, args.gt)
    pred, _ = fileio.read_trajectory_tum(args.pred)
    gt, _ = fileio.read_trajectory_tum(args.gt)
    report = evaluate_trajectories(pred, gt, align=args.align, rpe_delta=args.rpe_delta)

    if args.pred_tracks and args.gt_labels:
        _require_exists(args.pred_tracks, args.gt_labels)
        labeled = fileio.read_tracks(args.pred_tracks)
        gt_labels = {int(k): int(v) for k, v in fileio.read_json(args.gt_labels).items()}
        ids = sorted(set(t.track_id for t in labeled) & set(gt_labels))
        by_id = labeled.by_id()
        report.seg = seg_metrics([by_id[i].dyn for i in ids], [gt_labels[i] for i in ids])
    if args.pred_tracks and args.gt_tracks:
        _require_exists(args.gt_tracks)
        labeled = fileio.read_tracks(args.pred_tracks)
        gt_tracks = fileio.read_tracks(args.gt_tracks)
        report.losses = track_losses(labeled, gt_tracks, lambdas=tuple(args.lambdas))

    out = report.to_dict()
    if args.output:
        _write_report(out, Path(args.output))
    if args.csv:
        rows = per_frame_errors(pred, gt, align=args.align)
        with Path(args.csv).open("w", encoding="utf-8") as fh:
            fh.write("frame,error\n")
            for row in rows:
                fh.write(f"{row['frame']},{row['error']!r}\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.align is not None:
        cfg.align = args.align
    out = Path(args.output or cfg.path("output_dir"))

    tracks_path = cfg.path("tracks")
    camera_path = cfg.path("camera")
    _require_exists(tracks_path, camera_path)
    gt_traj = cfg.path("gt_trajectory", required=False)
    gt_labels_path = cfg.path("gt_labels", required=False)
    gt_tracks_path = cfg.path("gt_tracks", required=False)
    _require_exists(*(p for p in (gt_traj, gt_labels_path, gt_tracks_path) if p is not None))

    out.mkdir(parents=True, exist_ok=True)
    cam = fileio.read_camera_json(camera_path)
    tracks = fileio.read_tracks(tracks_path)
    if not tracks.has_depth():
        depth_dir = cfg.paths.get("depth_dir")
        if depth_dir is None:
            raise InvalidConfig("tracks carry no depth; set paths.depth_dir")
        tracks = _attach_depth(tracks, depth_dir)

    # segment
    if args.no_segmentation:
        labeled = mark_all_static(tracks)
        seg_diag = {"skipped": True}
    else:
        labeled, seg_diag = segment_tracks(tracks, cam, cfg.segmentation, threads=args.threads)
    fileio.write_tracks(labeled, out / "tracks_labeled.jsonl")
    fileio.write_json(seg_diag, out / "segmentation.json")

    # sfm
    result = run_global_sfm(labeled, cam, cfg.sfm_config(), seed=cfg.seed,
                            threads=args.threads)
    fileio.write_trajectory_tum(result.poses, out / "trajectory.txt")
    fileio.write_json(
        {str(tid): {"point": [float(x) for x in result.points[tid]],
                    "max_reproj_px": result.point_errors[tid]}
         for tid in sorted(result.points)},
        out / "points.json")
    fileio.write_json(result.diagnostics, out / "diagnostics.json")

    # fuse
    calibrations, skipped = calibrate_frames(labeled, result.poses, result.points)
    cloud = fuse(labeled, cam, result.poses, result.points, calibrations, skipped,
                 include_static_depth=cfg.include_static_depth)
    fileio.write_ply(cloud, out / "cloud.ply")
    fileio.write_json({str(f): list(calibrations[f]) for f in sorted(calibrations)},
                      out / "calibration.json")

    # evaluate
    report = MetricsReport(alignment=cfg.align)
    if gt_traj is not None:
        gt_poses, _ = fileio.read_trajectory_tum(gt_traj)
        report = evaluate_trajectories(result.poses, gt_poses, align=cfg.align,
                                       rpe_delta=cfg.rpe_delta)
    if gt_labels_path is not None:
        gt_labels = {int(k): int(v) for k, v in fileio.read_json(gt_labels_path).items()}
        ids = sorted(set(t.track_id for t in labeled) & set(gt_labels))
        by_id = labeled.by_id()
        report.seg = seg_metrics([by_id[i].dyn for i in ids], [gt_labels[i] for i in ids])
    if gt_tracks_path is not None:
        gt_tracks = fileio.read_tracks(gt_tracks_path)
        report.losses = track_losses(labeled, gt_tracks, lambdas=tuple(cfg.lambdas))
    report.extras["num_tracks"] = len(tracks)
    report.extras["num_static_selected"] = int(sum(1 for t in labeled if t.dyn == 0))
    report.extras["num_points"] = len(result.points)
    report.extras["cloud_size"] = len(cloud)
    report.extras["no_segmentation"] = bool(args.no_segmentation)
    _write_report(report.to_dict(), out / "report.json")
    if report.ate_rmse is not None:
        print(f"pipeline done: ATE {report.ate_rmse:.3e} ({cfg.align}) -> {out}")
    else:
        print(f"pipeline done -> {out}")
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynasfm", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for pairwise stages")

    p = sub.add_parser("generate", help="write a synthetic scene with ground truth")
    common(p, config_required=True)
    p.add_argument("--output", help="scene directory (default: config paths.output_dir)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("segment", help="label tracks static/dynamic")
    common(p)
    p.add_argument("tracks", help="input tracks .jsonl")
    p.add_argument("output", help="output labeled tracks .jsonl")
    p.add_argument("--camera", help="camera intrinsics JSON")
    p.add_argument("--depth-dir", help="PFM depth directory for tracks without depth")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sfm", help="global SfM on labeled tracks")
    common(p)
    p.add_argument("tracks", help="labeled tracks .jsonl")
    p.add_argument("output", help="output directory")
    p.add_argument("--camera", help="camera intrinsics JSON")
    p.add_argument("--no-segmentation", action="store_true",
                   help="treat every track as static (ablation)")
    p.set_defaults(func=cmd_sfm)

    p = sub.add_parser("fuse", help="fuse depth point clouds into the SfM cloud")
    common(p)
    p.add_argument("tracks", help="labeled tracks .jsonl")
    p.add_argument("output", help="output directory")
    p.add_argument("--sfm-dir", required=True, help="directory written by the sfm step")
    p.add_argument("--camera", help="camera intrinsics JSON")
    p.add_argument("--include-static-depth", action="store_true")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="ATE/RPE (+ segmentation and losses)")
    p.add_argument("pred", help="predicted trajectory (TUM)")
    p.add_argument("gt", help="ground-truth trajectory (TUM)")
    p.add_argument("--align", choices=ALIGN_MODES, default="sim3")
    p.add_argument("--rpe-delta", type=int, default=1)
    p.add_argument("--pred-tracks", help="labeled tracks for segmentation metrics")
    p.add_argument("--gt-labels", help="ground-truth labels JSON")
    p.add_argument("--gt-tracks", help="ground-truth tracks for loss metrics")
    p.add_argument("--lambdas", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    p.add_argument("--output", help="write report JSON here")
    p.add_argument("--csv", help="write per-frame errors CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="segment -> sfm -> fuse -> evaluate")
    common(p, config_required=True)
    p.add_argument("--output", help="run directory (default: config paths.output_dir)")
    p.add_argument("--no-segmentation", action="store_true",
                   help="skip segmentation (ablation)")
    p.add_argument("--align", choices=ALIGN_MODES, default=None)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DYNASFM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"[{stage}] " if stage else ""
        print(f"error: {prefix}{exc}", file=sys.stderr)
        return 1
    except DynaSfmError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"[{stage}] " if stage else ""
        print(f"solver failure: {prefix}{exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
