"""Depth-aware trajectory motion segmentation.

Each track contributes, per sliding window, rows of
[u, v, X, Y, Z, du, dv, dX, dY, dZ]: pixel position, camera-frame
back-projection at min-max-normalized depth, and their frame-to-frame
motions. A robust per-frame-pair similarity fit of the background then
scores every track by how often its scene-flow residual sticks out of the
static population, and thresholding the score yields one static/dynamic
label per track.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    EmptyInput,
    InvalidConfig,
    MissingDepth,
    MissingGroundTruth,
    TooFewCovisible,
    WindowTooShort,
)
from .geometry import CameraModel, project, umeyama
from .errors import PointBehindCamera
from .robust import huber_weights, mad, mad_scale
from .tracks import Track, TrackSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentationConfig:
    window_length: int = 12        # L
    kappa: float = 3.0             # residual threshold, units of per-pair MAD
    theta: float = 0.5             # dynamic fraction threshold on the score
    min_covisible: int = 8
    irls_iters: int = 10
    depth_eps: float = 1e-3

    def validate(self):
        if self.window_length < 2:
            raise InvalidConfig("window length must be >= 2")
        if self.kappa <= 0:
            raise InvalidConfig("kappa must be positive")
        if not 0.0 < self.theta <= 1.0:
            raise InvalidConfig("theta must lie in (0, 1]")


def normalize_depth(values, eps: float = 1e-3) -> np.ndarray:
    """Min-max normalize to [eps, 1-eps]; constant inputs map to 0.5.

    The min-max map absorbs any per-frame positive affine disguise of the
    depth, which is what makes the classifier invariant to it.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("no depth samples to normalize")
    lo, hi = float(v.min()), float(v.max())
    return apply_depth_range(v, lo, hi, eps)


def apply_depth_range(values, lo: float, hi: float, eps: float = 1e-3) -> np.ndarray:
    """Apply a frame's min-max normalization to (a subset of) its samples."""
    v = np.asarray(values, dtype=np.float64)
    if hi - lo < 1e-12:
        return np.full_like(v, 0.5)
    return np.clip((v - lo) / (hi - lo), eps, 1.0 - eps)


def frame_depth_ranges(tracks: TrackSet) -> dict[int, tuple[float, float]]:
    """Per-frame (min, max) of the depth samples of visible tracks."""
    ranges = {}
    for f in range(tracks.num_frames):
        samples = [t.depth_at(f) for t in tracks if t.visible_at(f) and t.depth is not None]
        if samples:
            ranges[f] = (min(samples), max(samples))
    return ranges


@dataclass(eq=False)
class TrackFeatureWindow:
    track_id: int
    start: int            # frame of the first row
    values: np.ndarray    # (rows, 10); motion columns of the last row are zero

    @property
    def rows(self) -> int:
        return self.values.shape[0]


def build_window(track: Track, cam: CameraModel, frames: np.ndarray,
                 normalized_depth: np.ndarray) -> TrackFeatureWindow:
    """Feature rows for consecutive visible frames of one track."""
    m = len(frames)
    if m < 2:
        raise WindowTooShort(f"track {track.track_id}: window of {m} frame(s)")
    uv = np.array([track.point_at(f) for f in frames])
    zn = np.asarray(normalized_depth, dtype=np.float64)
    X = (uv[:, 0] - cam.cx) / cam.fx * zn
    Y = (uv[:, 1] - cam.cy) / cam.fy * zn
    feats = np.zeros((m, 10))
    feats[:, 0:2] = uv
    feats[:, 2] = X
    feats[:, 3] = Y
    feats[:, 4] = zn
    feats[:-1, 5:7] = np.diff(uv, axis=0)
    feats[:-1, 7] = np.diff(X)
    feats[:-1, 8] = np.diff(Y)
    feats[:-1, 9] = np.diff(zn)
    if not np.all(np.isfinite(feats)):
        raise InvalidConfig(f"track {track.track_id}: non-finite feature entries")
    return TrackFeatureWindow(track.track_id, int(frames[0]), feats)


def _visible_runs(track: Track):
    frames = track.visible_frames()
    if len(frames) == 0:
        return
    breaks = np.nonzero(np.diff(frames) != 1)[0]
    start = 0
    for b in breaks:
        yield frames[start:b + 1]
        start = b + 1
    yield frames[start:]


def build_features(tracks: TrackSet, cam: CameraModel,
                   config: SegmentationConfig = SegmentationConfig()) -> list[TrackFeatureWindow]:
    """Tile every visible run of every track into windows of at most L rows.

    Successive windows of a run overlap by one frame so each consecutive
    visible frame pair lands in exactly one window's motion rows. Occluded
    frames split runs rather than being interpolated.
    """
    config.validate()
    L = config.window_length
    ranges = frame_depth_ranges(tracks)
    windows = []
    for track in tracks:
        vis_count = int(track.vis.sum())
        if vis_count < 2:
            continue
        if track.depth is None:
            raise MissingDepth(f"track {track.track_id} carries no depth samples")
        for run in _visible_runs(track):
            n = len(run)
            if n < 2:
                continue
            zn = np.array([
                apply_depth_range(track.depth_at(f), *ranges[f], eps=config.depth_eps)
                for f in run
            ])
            k = 0
            while k < n - 1:
                sel = slice(k, min(k + L, n))
                windows.append(build_window(track, cam, run[sel], zn[sel]))
                k += L - 1
    return windows


def _pair_table(windows: list[TrackFeatureWindow]) -> dict[int, list]:
    """frame t -> [(track_id, X_t, X_{t+1})] from the windows' motion rows."""
    table: dict[int, list] = {}
    for w in windows:
        pts = w.values[:, 2:5]
        for r in range(w.rows - 1):
            table.setdefault(w.start + r, []).append((w.track_id, pts[r], pts[r + 1]))
    return table


def fit_pairwise_background(windows: list[TrackFeatureWindow], frame: int,
                            config: SegmentationConfig = SegmentationConfig()):
    """Robust similarity fit of the background between frames (t, t+1).

    Returns (Sim3, {track_id: residual}). The similarity absorbs the
    per-frame scale left over from min-max depth normalization. Residual
    norms of static tracks share a common geometric floor, so the Huber
    IRLS downweights by how far a residual sits above the per-pair median
    rather than by its raw size; dynamic tracks stick out of that band.
    """
    entries = _pair_table(windows).get(frame, [])
    return _fit_pair_entries(entries, frame, config)


def _fit_pair_entries(entries, frame: int, config: SegmentationConfig):
    if len(entries) < max(3, config.min_covisible):
        raise TooFewCovisible(
            f"pair ({frame}, {frame + 1}): {len(entries)} co-visible tracks, "
            f"need {config.min_covisible}")
    ids = [e[0] for e in entries]
    src = np.array([e[1] for e in entries])
    dst = np.array([e[2] for e in entries])
    w = np.ones(len(ids))
    transform = None
    for _ in range(config.irls_iters):
        transform = umeyama(src, dst, with_scale=True, weights=w)
        r = np.linalg.norm(transform.apply(src) - dst, axis=1)
        above = np.maximum(r - np.median(r), 0.0)
        w = huber_weights(above, config.kappa * mad_scale(r))
    r = np.linalg.norm(transform.apply(src) - dst, axis=1)
    return transform, dict(zip(ids, r))


def classify_tracks(tracks: TrackSet, pair_residuals: dict[int, dict[int, float]],
                    config: SegmentationConfig = SegmentationConfig()) -> TrackSet:
    """Label each track from its per-pair residuals.

    Static residual norms share a common floor (the per-pair median), so a
    track is flagged on a pair when its residual exceeds that floor by
    kappa times the pair's MAD. The score is the flagged fraction over the
    track's pairs and the label is score >= theta. Tracks with no usable
    pair default to static with score 0.
    """
    config.validate()
    flags: dict[int, list[bool]] = {}
    for frame, residuals in pair_residuals.items():
        values = np.array(list(residuals.values()))
        threshold = float(np.median(values)) + config.kappa * max(mad(values), 1e-9)
        for tid, r in residuals.items():
            flags.setdefault(tid, []).append(bool(r > threshold))
    labeled = []
    for track in tracks:
        track_flags = flags.get(track.track_id)
        if not track_flags:
            labeled.append(replace(track, dyn=0, score=0.0))
            continue
        score = float(np.mean(track_flags))
        labeled.append(replace(track, dyn=int(score >= config.theta), score=score))
    return TrackSet(labeled)


def segment_tracks(tracks: TrackSet, cam: CameraModel,
                   config: SegmentationConfig = SegmentationConfig(),
                   threads: int = 1):
    """Full segmentation pass: features, per-pair fits, classification.

    Returns (labeled TrackSet, diagnostics dict). Pairs with too few
    co-visible tracks are skipped and listed in the diagnostics.
    """
    config.validate()
    windows = build_features(tracks, cam, config)
    table = _pair_table(windows)
    frames = sorted(table)

    def fit_one(frame):
        try:
            _, residuals = _fit_pair_entries(table[frame], frame, config)
            return frame, residuals
        except TooFewCovisible:
            return frame, None

    if threads > 1 and len(frames) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fit_one, frames))
    else:
        results = [fit_one(f) for f in frames]

    pair_residuals = {f: r for f, r in results if r is not None}
    skipped = [f for f, r in results if r is None]
    if skipped:
        logger.debug("segmentation skipped %d frame pairs with too few co-visible tracks", len(skipped))
    labeled = classify_tracks(tracks, pair_residuals, config)
    n_dyn = sum(1 for t in labeled if t.dyn == 1)
    diagnostics = {
        "pairs_fitted": len(pair_residuals),
        "pairs_skipped": skipped,
        "num_dynamic": n_dyn,
        "num_static": len(labeled) - n_dyn,
    }
    return labeled, diagnostics


def gt_labels_from_flow(scene, tracks: TrackSet, pixel_threshold: float = 1.0,
                        min_fraction: float = 0.5) -> dict[int, int]:
    """Ground-truth dynamic labels from the generator's true motion.

    A track is dynamic when its true 2D motion deviates from the flow the
    rigid background would induce (the point held fixed in the world) by
    more than ``pixel_threshold`` on at least ``min_fraction`` of its frame
    pairs.
    """
    labels = {}
    for track in tracks:
        if track.track_id not in scene.gt_positions:
            raise MissingGroundTruth(f"no ground-truth trajectory for track {track.track_id}")
        traj = scene.gt_positions[track.track_id]
        deviations = []
        for f in range(track.start, track.end - 1):
            try:
                p_next = project(scene.camera, scene.poses[f + 1], traj[f + 1])
                p_rigid = project(scene.camera, scene.poses[f + 1], traj[f])
            except PointBehindCamera:
                continue
            deviations.append(np.linalg.norm(p_next - p_rigid) > pixel_threshold)
        if deviations:
            labels[track.track_id] = int(np.mean(deviations) >= min_fraction)
        else:
            labels[track.track_id] = 0
    return labels
