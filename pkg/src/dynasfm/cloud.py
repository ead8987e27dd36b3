"""Labeled scene point cloud produced by triangulation and depth fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation

LABEL_STATIC_SFM = 0
LABEL_STATIC_DEPTH = 1
LABEL_DYNAMIC_DEPTH = 2

_LABELS = (LABEL_STATIC_SFM, LABEL_STATIC_DEPTH, LABEL_DYNAMIC_DEPTH)

# default colors per label: triangulated gray, static-depth blue, dynamic red
_DEFAULT_COLORS = {
    LABEL_STATIC_SFM: (200, 200, 200),
    LABEL_STATIC_DEPTH: (80, 120, 255),
    LABEL_DYNAMIC_DEPTH: (255, 60, 60),
}


@dataclass(eq=False)
class ScenePointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))
    frames: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))
    colors: np.ndarray | None = None  # (N, 3) uint8; defaulted by label when absent

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        self.frames = np.asarray(self.frames, dtype=np.int32).reshape(-1)
        n = self.points.shape[0]
        if self.labels.shape != (n,) or self.frames.shape != (n,):
            raise InvariantViolation("points/labels/frames lengths differ")
        if not np.all(np.isfinite(self.points)):
            raise InvariantViolation("cloud contains non-finite coordinates")
        if n and not np.all(np.isin(self.labels, _LABELS)):
            raise InvariantViolation("unknown point label")
        if self.colors is None:
            self.colors = np.zeros((n, 3), dtype=np.uint8)
            for lab, rgb in _DEFAULT_COLORS.items():
                self.colors[self.labels == lab] = rgb
        else:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if self.colors.shape != (n, 3):
                raise InvariantViolation("colors shape mismatch")

    def __len__(self) -> int:
        return self.points.shape[0]


def concat_clouds(clouds: list[ScenePointCloud]) -> ScenePointCloud:
    if not clouds:
        return ScenePointCloud()
    return ScenePointCloud(
        np.concatenate([c.points for c in clouds]),
        np.concatenate([c.labels for c in clouds]),
        np.concatenate([c.frames for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
    )
