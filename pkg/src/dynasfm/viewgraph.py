"""View graph over frames: pairwise relative rotations and translation
directions estimated from co-visible static tracks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .epipolar import relative_pose_from_tracks
from .errors import InvalidConfig, TooFewPoints
from .geometry import CameraModel
from .tracks import TrackSet

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ViewEdge:
    i: int
    j: int
    rotation: np.ndarray    # (3,3): camera-i coords -> camera-j coords
    direction: np.ndarray   # (3,) unit: x_j = R x_i + scale * direction
    inlier_ids: list[int] = field(default_factory=list)
    parallax_px: float = 0.0  # median rotation-compensated flow of inliers

    @property
    def num_inliers(self) -> int:
        return len(self.inlier_ids)


@dataclass(eq=False)
class ViewGraph:
    num_frames: int
    edges: list[ViewEdge] = field(default_factory=list)

    def adjacency(self) -> dict[int, list[ViewEdge]]:
        adj: dict[int, list[ViewEdge]] = {i: [] for i in range(self.num_frames)}
        for e in self.edges:
            adj[e.i].append(e)
            adj[e.j].append(e)
        return adj

    def is_connected(self) -> bool:
        if self.num_frames == 0:
            return False
        adj = self.adjacency()
        seen = {0}
        stack = [0]
        while stack:
            node = stack.pop()
            for e in adj[node]:
                other = e.j if e.i == node else e.i
                if other not in seen:
                    seen.add(other)
                    stack.append(other)
        return len(seen) == self.num_frames


@dataclass(frozen=True)
class ViewGraphConfig:
    strides: tuple = (1, 2, 4, 8)
    min_covisible: int = 16
    ransac_iters: int = 2000
    epipolar_threshold_px: float = 1.0
    confidence: float = 0.9999

    def validate(self):
        if not self.strides or any(s < 1 for s in self.strides):
            raise InvalidConfig("strides must be positive")
        if self.min_covisible < 5:
            raise InvalidConfig("min co-visible must be at least 5")


def _covisible(tracks: TrackSet, i: int, j: int):
    ids, p1, p2 = [], [], []
    for t in tracks:
        if t.visible_at(i) and t.visible_at(j):
            ids.append(t.track_id)
            p1.append(t.point_at(i))
            p2.append(t.point_at(j))
    return ids, np.array(p1).reshape(-1, 2), np.array(p2).reshape(-1, 2)


def estimate_edge(tracks: TrackSet, cam: CameraModel, i: int, j: int,
                  config: ViewGraphConfig, rng: np.random.Generator) -> ViewEdge | None:
    """Relative pose for one frame pair, or None when the pair is too weak."""
    ids, p1, p2 = _covisible(tracks, i, j)
    if len(ids) < max(8, config.min_covisible):
        return None
    try:
        R, t, inliers = relative_pose_from_tracks(
            p1, p2, cam, rng,
            max_iters=config.ransac_iters,
            threshold_px=config.epipolar_threshold_px,
            confidence=config.confidence,
        )
    except (TooFewPoints, np.linalg.LinAlgError):
        return None
    if int(inliers.sum()) < config.min_covisible:
        return None
    inlier_ids = [tid for tid, ok in zip(ids, inliers) if ok]
    # residual flow once the rotation is compensated: a proxy for how much
    # parallax (hence baseline-direction information) the pair carries
    x1 = cam.normalized(p1[inliers])
    x2 = cam.normalized(p2[inliers])
    x1w = np.hstack([x1, np.ones((len(x1), 1))]) @ R.T
    x1w = x1w[:, :2] / x1w[:, 2:3]
    parallax = float(np.median(np.linalg.norm(x2 - x1w, axis=1))) * 0.5 * (cam.fx + cam.fy)
    return ViewEdge(i, j, R, t, inlier_ids, parallax)


def build_view_graph(tracks: TrackSet, cam: CameraModel,
                     config: ViewGraphConfig = ViewGraphConfig(),
                     seed: int = 0, threads: int = 1) -> ViewGraph:
    """Estimate an edge for every frame pair whose index gap is in the
    stride set. Per-pair RNG streams are derived from (seed, i, j), so the
    result is identical for any worker count.
    """
    config.validate()
    T = tracks.num_frames
    pairs = [(i, i + s) for s in sorted(set(config.strides)) for i in range(T - s)]
    pairs = sorted(set(pairs))

    def work(pair):
        i, j = pair
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, j]))
        return estimate_edge(tracks, cam, i, j, config, rng)

    if threads > 1 and len(pairs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]

    edges = [e for e in results if e is not None]
    graph = ViewGraph(T, edges)
    if not graph.is_connected():
        logger.warning("view graph is disconnected (%d edges over %d frames)", len(edges), T)
    return graph
