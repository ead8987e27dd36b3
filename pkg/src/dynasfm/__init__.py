"""dynasfm: dynamic-aware global structure from motion.

Long-term point tracks with relative depth come in; tracks are classified
static/dynamic by depth-aware scene-flow analysis; camera poses are solved
globally from the static tracks (rotation averaging, translation
averaging, triangulation, bundle adjustment); finally the scale-aligned
depth point clouds are fused into a complete dynamic-scene reconstruction.
"""

from .cloud import LABEL_DYNAMIC_DEPTH, LABEL_STATIC_DEPTH, LABEL_STATIC_SFM, ScenePointCloud
from .geometry import (
    CameraModel,
    PoseSE3,
    Sim3,
    TriangulationResult,
    back_project,
    project,
    triangulate,
    umeyama,
)
from .metrics import MetricsReport, ate, rpe, seg_metrics, track_losses
from .segmentation import SegmentationConfig, normalize_depth, segment_tracks
from .sfm import SfMResult, SfmConfig, run_global_sfm, select_static_visible
from .fusion import align_depth_frame, fuse, fuse_scene
from .synthetic import SceneConfig, SyntheticScene, generate_scene
from .tracks import DepthFrame, Track, TrackSet, sample_depth

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "DepthFrame",
    "LABEL_DYNAMIC_DEPTH",
    "LABEL_STATIC_DEPTH",
    "LABEL_STATIC_SFM",
    "MetricsReport",
    "PoseSE3",
    "SceneConfig",
    "ScenePointCloud",
    "SegmentationConfig",
    "SfMResult",
    "SfmConfig",
    "Sim3",
    "SyntheticScene",
    "Track",
    "TrackSet",
    "TriangulationResult",
    "align_depth_frame",
    "ate",
    "back_project",
    "fuse",
    "fuse_scene",
    "generate_scene",
    "normalize_depth",
    "project",
    "rpe",
    "run_global_sfm",
    "sample_depth",
    "seg_metrics",
    "segment_tracks",
    "select_static_visible",
    "track_losses",
    "triangulate",
    "umeyama",
]
