"""Global SfM pipeline: static/visible track selection, view graph,
rotation and translation averaging, triangulation, bundle adjustment.

Gauge: frame 0 gets the identity pose and the mean consecutive camera
baseline is normalized to one (restored after bundle adjustment, which is
free to drift the scale).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .averaging import rotation_averaging, translation_averaging
from .bundle import BundleConfig, bundle_adjust
from .errors import (
    BehindCamera,
    DegenerateGeometry,
    InvariantViolation,
    NoStaticTracks,
    TooFewPoints,
)
from .geometry import CameraModel, PoseSE3, quat_from_matrix, triangulate
from .tracks import Track, TrackSet
from .viewgraph import ViewGraphConfig, build_view_graph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SfmConfig:
    viewgraph: ViewGraphConfig = field(default_factory=ViewGraphConfig)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    max_reproj_px: float = 4.0
    min_angle_deg: float = 1.0


@dataclass(eq=False)
class SfMResult:
    poses: list                             # world-from-camera PoseSE3 per frame
    points: dict                            # track id -> (3,) world point
    point_errors: dict                      # track id -> max reprojection error (px)
    diagnostics: dict = field(default_factory=dict)


def select_static_visible(tracks: TrackSet) -> TrackSet:
    """Keep static tracks, trimmed to their visible extent; tracks left with
    fewer than two visible frames are dropped."""
    if not tracks.has_labels():
        raise InvariantViolation("tracks carry no dynamic labels; run segmentation first")
    kept = []
    for t in tracks:
        if t.dyn != 0:
            continue
        vis_frames = t.visible_frames()
        if len(vis_frames) < 2:
            continue
        lo = int(vis_frames[0] - t.start)
        hi = int(vis_frames[-1] - t.start) + 1
        kept.append(Track(
            track_id=t.track_id,
            start=int(vis_frames[0]),
            points=t.points[lo:hi],
            vis=t.vis[lo:hi],
            depth=t.depth[lo:hi] if t.depth is not None else None,
            dyn=t.dyn,
            score=t.score,
        ))
    if not kept:
        raise NoStaticTracks("no static track with two visible frames")
    return TrackSet(kept)


def mark_all_static(tracks: TrackSet) -> TrackSet:
    """Pretend every track is static (the no-segmentation ablation path)."""
    return TrackSet([replace(t, dyn=0, score=0.0) for t in tracks])


def triangulate_tracks(tracks: TrackSet, cam: CameraModel, poses: list,
                       max_reproj_px: float = 4.0, min_angle_deg: float = 1.0):
    """Triangulate every track over its visible frames.

    Returns ({track id: TriangulationResult}, diagnostics);
    per-track failures are recorded, never raised.
    """
    results = {}
    discarded = {"reproj": 0, "angle": 0, "cheirality": 0, "too_few": 0}
    for t in tracks:
        frames = [f for f in t.visible_frames() if f < len(poses)]
        if len(frames) < 2:
            discarded["too_few"] += 1
            continue
        obs = [(cam, poses[f], t.point_at(f)) for f in frames]
        try:
            res = triangulate(obs, min_angle_deg=min_angle_deg)
        except DegenerateGeometry:
            discarded["angle"] += 1
            continue
        except BehindCamera:
            discarded["cheirality"] += 1
            continue
        except TooFewPoints:
            discarded["too_few"] += 1
            continue
        if res.max_reproj_error > max_reproj_px:
            discarded["reproj"] += 1
            continue
        results[t.track_id] = res
    return results, discarded


def _bootstrap_points(tracks: TrackSet, cam: CameraModel, poses: list) -> dict:
    """Permissive two-view triangulation used to seed the first bundle
    adjustment round: the averaged initialization is usually too coarse for
    multi-view triangulation to pass cheirality in every frame, so each
    track is seeded from its widest-baseline visible pair."""
    seeds = {}
    for t in tracks:
        frames = [f for f in t.visible_frames() if f < len(poses)]
        if len(frames) < 2:
            continue
        centers = np.array([poses[f].t for f in frames])
        d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        order = np.dstack(np.unravel_index(np.argsort(-d, axis=None), d.shape))[0]
        for a, b in order[:8]:
            if a >= b:
                continue
            fa, fb = frames[a], frames[b]
            try:
                res = triangulate(
                    [(cam, poses[fa], t.point_at(fa)), (cam, poses[fb], t.point_at(fb))],
                    min_angle_deg=0.0)
            except (DegenerateGeometry, BehindCamera, TooFewPoints):
                continue
            seeds[t.track_id] = res.point
            break
    return seeds


def _observations(tracks: TrackSet, poses: list, points: dict, cam: CameraModel,
                  min_z: float = 0.05):
    """(cam_idx, pnt_idx, uv, ids) for bundle adjustment; observations where
    a seed point sits at or behind the camera are dropped and points are
    kept only with two clean views."""
    ids = sorted(points)
    by_id = tracks.by_id()
    kept_ids = []
    cam_idx, pnt_idx, uv = [], [], []
    staged = []
    for tid in ids:
        t = by_id[tid]
        obs = []
        for f in t.visible_frames():
            if f >= len(poses):
                continue
            if poses[f].apply_inverse(points[tid])[2] > min_z:
                obs.append((int(f), t.point_at(f)))
        if len(obs) >= 2:
            staged.append((tid, obs))
    for k, (tid, obs) in enumerate(staged):
        kept_ids.append(tid)
        for f, px in obs:
            cam_idx.append(f)
            pnt_idx.append(k)
            uv.append(px)
    return (np.array(cam_idx, dtype=np.intp), np.array(pnt_idx, dtype=np.intp),
            np.array(uv, dtype=np.float64).reshape(-1, 2), kept_ids)


def _normalize_gauge(poses: list, points: np.ndarray):
    centers = np.array([p.t for p in poses])
    baselines = np.linalg.norm(np.diff(centers, axis=0), axis=1)
    scale = 1.0 / max(float(baselines.mean()), 1e-300)
    poses = [PoseSE3(p.q, p.t * scale) for p in poses]
    return poses, points * scale, scale


def run_global_sfm(
    tracks: TrackSet,
    cam: CameraModel,
    config: SfmConfig = SfmConfig(),
    seed: int = 42,
    threads: int = 1,
    assume_static: bool = False,
) -> SfMResult:
    """The full static-track pipeline. Stage failures are re-raised with a
    ``stage`` attribute naming the stage that failed."""
    diagnostics = {"stages": {}}
    timings = {}

    def stage(name):
        class _Timer:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()
            def __exit__(self_inner, exc_type, exc, tb):
                timings[name] = time.perf_counter() - self_inner.t0
                if exc is not None and not hasattr(exc, "stage"):
                    exc.stage = name
                return False
        return _Timer()

    with stage("select"):
        selected = mark_all_static(tracks) if assume_static else tracks
        selected = select_static_visible(selected)
        diagnostics["stages"]["select"] = {"tracks_kept": len(selected)}

    with stage("view_graph"):
        graph = build_view_graph(selected, cam, config.viewgraph, seed=seed, threads=threads)
        diagnostics["stages"]["view_graph"] = {
            "edges": len(graph.edges),
            "inliers_total": int(sum(e.num_inliers for e in graph.edges)),
            "connected": graph.is_connected(),
        }

    with stage("rotation_averaging"):
        rotations = rotation_averaging(graph)
        diagnostics["stages"]["rotation_averaging"] = {"nodes": len(rotations)}

    with stage("translation_averaging"):
        centers = translation_averaging(graph, rotations)
        diagnostics["stages"]["translation_averaging"] = {"nodes": len(centers)}

    poses = [PoseSE3(quat_from_matrix(S.T), c) for S, c in zip(rotations, centers)]

    with stage("bundle_adjustment_init"):
        seeds = _bootstrap_points(selected, cam, poses)
        if not seeds:
            raise NoStaticTracks("no track could be seeded for bundle adjustment")
        cam_idx, pnt_idx, uv, seed_ids = _observations(selected, poses, seeds, cam)
        if not seed_ids:
            raise NoStaticTracks("no seeded track kept two clean observations")
        ba0 = bundle_adjust(
            cam, poses, np.array([seeds[tid] for tid in seed_ids]),
            cam_idx, pnt_idx, uv, config.bundle)
        poses = ba0.poses
        diagnostics["stages"]["bundle_adjustment_init"] = {
            "points": len(seed_ids),
            "iterations": ba0.iterations,
            "rms_initial_px": ba0.rms_initial_px,
            "rms_final_px": ba0.rms_final_px,
        }

    with stage("triangulation"):
        tri, discarded = triangulate_tracks(
            selected, cam, poses, config.max_reproj_px, config.min_angle_deg)
        diagnostics["stages"]["triangulation"] = {
            "points": len(tri), "discarded": discarded}
        if not tri:
            raise NoStaticTracks("no track survived triangulation")

    with stage("bundle_adjustment"):
        ids = sorted(tri)
        id_to_idx = {tid: k for k, tid in enumerate(ids)}
        points = np.array([tri[tid].point for tid in ids])
        cam_idx, pnt_idx, uv = [], [], []
        by_id = selected.by_id()
        for tid in ids:
            t = by_id[tid]
            for f in t.visible_frames():
                if f < len(poses):
                    cam_idx.append(f)
                    pnt_idx.append(id_to_idx[tid])
                    uv.append(t.point_at(f))
        ba = bundle_adjust(
            cam, poses, points,
            np.array(cam_idx), np.array(pnt_idx), np.array(uv),
            config.bundle)
        diagnostics["stages"]["bundle_adjustment"] = {
            "iterations": ba.iterations,
            "initial_cost": ba.initial_cost,
            "final_cost": ba.final_cost,
            "rms_initial_px": ba.rms_initial_px,
            "rms_final_px": ba.rms_final_px,
            "cost_history": ba.cost_history,
        }

    poses, points, scale = _normalize_gauge(ba.poses, ba.points)
    diagnostics["gauge_rescale"] = scale

    point_map = {tid: points[id_to_idx[tid]] for tid in ids}
    point_errors = {}
    for tid in ids:
        t = by_id[tid]
        errs = []
        for f in t.visible_frames():
            if f < len(poses):
                pc = poses[f].apply_inverse(point_map[tid])
                if pc[2] > 1e-9:
                    u = cam.fx * pc[0] / pc[2] + cam.cx
                    v = cam.fy * pc[1] / pc[2] + cam.cy
                    errs.append(float(np.hypot(u - t.point_at(f)[0], v - t.point_at(f)[1])))
        point_errors[tid] = max(errs) if errs else float("inf")

    diagnostics["timings"] = timings
    return SfMResult(poses=poses, points=point_map, point_errors=point_errors,
                     diagnostics=diagnostics)
