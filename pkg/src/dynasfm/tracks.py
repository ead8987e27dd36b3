"""Track and depth-frame containers.

A track is one point's pixel trajectory over a contiguous frame range
[start, start + len). Frames where the tracker lost the point keep a
(frozen) position but carry visibility 0. The first frame of every track
is visible by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, NonPositiveDepthValue


@dataclass(eq=False)
class Track:
    track_id: int
    start: int
    points: np.ndarray                 # (L, 2) float64 pixels
    vis: np.ndarray                    # (L,) uint8 in {0, 1}
    depth: np.ndarray | None = None    # (L,) float64 relative depth, > 0
    dyn: int | None = None             # per-track dynamic label
    score: float | None = None         # dynamic score in [0, 1]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.vis = np.asarray(self.vis, dtype=np.uint8).reshape(-1)
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float64).reshape(-1)
        self.validate()

    @property
    def length(self) -> int:
        return self.points.shape[0]

    @property
    def end(self) -> int:
        """One past the last frame."""
        return self.start + self.length

    def covers(self, frame: int) -> bool:
        return self.start <= frame < self.end

    def visible_at(self, frame: int) -> bool:
        return self.covers(frame) and bool(self.vis[frame - self.start])

    def point_at(self, frame: int) -> np.ndarray:
        return self.points[frame - self.start]

    def depth_at(self, frame: int) -> float:
        return float(self.depth[frame - self.start])

    def visible_frames(self) -> np.ndarray:
        return self.start + np.nonzero(self.vis)[0]

    def validate(self):
        L = self.length
        if L < 1:
            raise InvariantViolation(f"track {self.track_id}: empty")
        if self.vis.shape != (L,):
            raise InvariantViolation(f"track {self.track_id}: vis length != points length")
        if not np.all((self.vis == 0) | (self.vis == 1)):
            raise InvariantViolation(f"track {self.track_id}: vis entries must be 0/1")
        if self.vis[0] != 1:
            raise InvariantViolation(f"track {self.track_id}: starting point must be visible")
        if not np.all(np.isfinite(self.points)):
            raise InvariantViolation(f"track {self.track_id}: non-finite position")
        if self.depth is not None:
            if self.depth.shape != (L,):
                raise InvariantViolation(f"track {self.track_id}: depth length != points length")
            if not np.all(np.isfinite(self.depth)) or np.any(self.depth <= 0):
                raise NonPositiveDepthValue(f"track {self.track_id}: depth must be finite and > 0")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise InvariantViolation(f"track {self.track_id}: score outside [0, 1]")
        if self.dyn is not None and self.dyn not in (0, 1):
            raise InvariantViolation(f"track {self.track_id}: dyn label must be 0/1")


@dataclass(eq=False)
class TrackSet:
    tracks: list[Track] = field(default_factory=list)

    def __post_init__(self):
        ids = [t.track_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("duplicate track ids")

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    @property
    def num_frames(self) -> int:
        """Smallest T covering every track."""
        return max((t.end for t in self.tracks), default=0)

    def by_id(self) -> dict[int, Track]:
        return {t.track_id: t for t in self.tracks}

    def sorted_by_id(self) -> "TrackSet":
        return TrackSet(sorted(self.tracks, key=lambda t: t.track_id))

    def has_depth(self) -> bool:
        return all(t.depth is not None for t in self.tracks)

    def has_labels(self) -> bool:
        return all(t.dyn is not None for t in self.tracks)

    def visible_in(self, frame: int) -> list[Track]:
        return [t for t in self.tracks if t.visible_at(frame)]


@dataclass(eq=False)
class DepthFrame:
    """Dense relative-depth raster for one frame, row-major (height, width)."""

    frame: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise InvariantViolation("depth raster must be 2-D")
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise NonPositiveDepthValue(f"frame {self.frame}: depth raster must be finite and > 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def sample_depth(frame: DepthFrame, pixel) -> float:
    """Bilinear depth lookup at a sub-pixel position, clamped to the raster."""
    h, w = frame.values.shape
    u = min(max(float(pixel[0]), 0.0), w - 1.0)
    v = min(max(float(pixel[1]), 0.0), h - 1.0)
    u0, v0 = int(np.floor(u)), int(np.floor(v))
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    fu, fv = u - u0, v - v0
    vals = frame.values
    top = (1 - fu) * vals[v0, u0] + fu * vals[v0, u1]
    bot = (1 - fu) * vals[v1, u0] + fu * vals[v1, u1]
    return float((1 - fv) * top + fv * bot)
