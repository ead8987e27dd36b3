"""Fuse relative-depth point clouds into the SfM reconstruction.

Per frame, the affine map z_sfm ~ a * d_rel + b between a track's relative
depth and the camera-frame depth of its triangulated point is estimated
from static anchors with Huber IRLS. Dynamic track samples are then
back-projected at the calibrated depth, one point per visible frame, and
concatenated with the triangulated static cloud.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cloud import (
    LABEL_DYNAMIC_DEPTH,
    LABEL_STATIC_DEPTH,
    LABEL_STATIC_SFM,
    ScenePointCloud,
)
from .errors import MissingCalibration, NegativeScale, TooFewAnchors
from .geometry import CameraModel, back_project
from .robust import huber_weights, mad_scale
from .tracks import TrackSet

logger = logging.getLogger(__name__)


def align_depth_frame(frame: int, tracks: TrackSet, poses: list,
                      sfm_points: dict, irls_iters: int = 10) -> tuple[float, float]:
    """Per-frame depth calibration (a, b) with z_sfm ~ a * d_rel + b.

    Anchors are static tracks visible in the frame that carry both a depth
    sample and a triangulated point. Raises TooFewAnchors (< 3) or
    NegativeScale (a <= 0).
    """
    d_rel, z_sfm = [], []
    for t in tracks:
        if t.dyn != 0 or t.depth is None or not t.visible_at(frame):
            continue
        X = sfm_points.get(t.track_id)
        if X is None:
            continue
        z = poses[frame].apply_inverse(X)[2]
        if z <= 0:
            continue
        d_rel.append(t.depth_at(frame))
        z_sfm.append(z)
    if len(d_rel) < 3:
        raise TooFewAnchors(f"frame {frame}: {len(d_rel)} anchors, need 3")

    d = np.asarray(d_rel)
    z = np.asarray(z_sfm)
    A = np.stack([d, np.ones_like(d)], axis=1)
    w = np.ones(len(d))
    for _ in range(irls_iters):
        Aw = A * w[:, None]
        coef, *_ = np.linalg.lstsq(Aw.T @ A, Aw.T @ z, rcond=None)
        r = A @ coef - z
        w = huber_weights(r, 1.345 * mad_scale(r))
    a, b = float(coef[0]), float(coef[1])
    if a <= 0:
        raise NegativeScale(f"frame {frame}: scale {a:.3e}")
    return a, b


def calibrate_frames(tracks: TrackSet, poses: list, sfm_points: dict,
                     frames=None) -> tuple[dict, dict]:
    """Calibrate every frame; returns ({frame: (a, b)}, {frame: reason})
    where the second map lists frames skipped by fusion."""
    if frames is None:
        frames = range(len(poses))
    calibrations, skipped = {}, {}
    for f in frames:
        try:
            calibrations[f] = align_depth_frame(f, tracks, poses, sfm_points)
        except (TooFewAnchors, NegativeScale) as exc:
            skipped[f] = type(exc).__name__
            logger.warning("depth calibration skipped frame %d: %s", f, exc)
    return calibrations, skipped


def fuse(tracks: TrackSet, cam: CameraModel, poses: list, sfm_points: dict,
         calibrations: dict, skipped: dict | None = None,
         include_static_depth: bool = False) -> ScenePointCloud:
    """Triangulated static points plus depth-back-projected dynamic samples.

    Dynamic geometry has no single position, so dynamic points are emitted
    once per visible frame with their frame index as provenance. Frames in
    ``skipped`` contribute nothing; a frame in neither map raises
    MissingCalibration.
    """
    skipped = skipped or {}
    pts, labels, frames = [], [], []
    for tid in sorted(sfm_points):
        pts.append(np.asarray(sfm_points[tid], dtype=np.float64))
        labels.append(LABEL_STATIC_SFM)
        frames.append(-1)

    def depth_world(track, f):
        a, b = calibrations[f]
        z = a * track.depth_at(f) + b
        if z <= 0:
            return None
        return back_project(cam, poses[f], track.point_at(f), z)

    for track in sorted(tracks, key=lambda t: t.track_id):
        if track.depth is None:
            continue
        dynamic = track.dyn == 1
        if not dynamic and not include_static_depth:
            continue
        for f in track.visible_frames():
            if f >= len(poses):
                continue
            f = int(f)
            if f not in calibrations:
                if f in skipped:
                    continue
                raise MissingCalibration(f"frame {f} has no depth calibration")
            X = depth_world(track, f)
            if X is None:
                continue
            pts.append(X)
            labels.append(LABEL_DYNAMIC_DEPTH if dynamic else LABEL_STATIC_DEPTH)
            frames.append(f)

    if not pts:
        return ScenePointCloud()
    return ScenePointCloud(np.array(pts), np.array(labels, dtype=np.uint8),
                           np.array(frames, dtype=np.int32))


@dataclass(eq=False)
class FusionResult:
    cloud: ScenePointCloud
    calibrations: dict
    skipped: dict


def fuse_scene(tracks: TrackSet, cam: CameraModel, poses: list, sfm_points: dict,
               include_static_depth: bool = False) -> FusionResult:
    """Calibrate all frames, then fuse."""
    calibrations, skipped = calibrate_frames(tracks, poses, sfm_points)
    cloud = fuse(tracks, cam, poses, sfm_points, calibrations, skipped,
                 include_static_depth=include_static_depth)
    return FusionResult(cloud, calibrations, skipped)
