"""Synthetic dynamic-scene generator with full ground truth.

Produces a camera arc orbiting a point box, long-term tracks (exact
projections plus optional pixel noise), per-track relative-depth samples
hidden behind a per-frame affine disguise a_t * z + b_t, and dense depth
rasters of a background plane. Everything is reproducible bit-for-bit
from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .geometry import CameraModel, PoseSE3, project_many, so3_exp
from .tracks import DepthFrame, Track, TrackSet

_Z_FLOOR = 0.05  # depth emitted for (invisible) samples that drift too close

KIND_STATIC = "static"
KIND_DYNAMIC = "dynamic"
KIND_OUTLIER = "outlier"


@dataclass(frozen=True)
class SceneConfig:
    num_frames: int = 30
    num_tracks: int = 400
    dynamic_fraction: float = 0.0
    outlier_fraction: float = 0.0
    pixel_noise: float = 0.0
    depth_noise: float = 0.0
    occlusion_rate: float = 0.0
    seed: int = 42
    # camera
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    # camera path: arc of given angular span around the scene, with a
    # vertical sine wobble so the centers are never collinear
    arc_deg: float = 8.0
    radius: float = 10.0
    height_amp: float = 0.5
    # scene
    box_half: tuple = (3.0, 2.0, 3.0)
    dynamic_speed: float = 0.25
    dynamic_objects: int = 3
    dynamic_spin: float = 0.02
    outlier_step: float = 0.15
    depth_disguise: bool = True
    plane_z: float = 4.5
    emit_depth_rasters: bool = True

    def camera(self) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def validate(self):
        if self.num_frames < 2:
            raise InvalidConfig("need at least 2 frames")
        n_dyn = int(round(self.dynamic_fraction * self.num_tracks))
        n_out = int(round(self.outlier_fraction * self.num_tracks))
        if self.num_tracks - n_dyn - n_out < 8:
            raise InvalidConfig("need at least 8 static tracks")
        if not (0.0 <= self.dynamic_fraction <= 1.0 and 0.0 <= self.outlier_fraction <= 1.0):
            raise InvalidConfig("fractions must lie in [0, 1]")
        if self.pixel_noise < 0 or self.depth_noise < 0 or not (0.0 <= self.occlusion_rate <= 1.0):
            raise InvalidConfig("noise parameters must be non-negative")
        if self.arc_deg <= 0 and self.height_amp <= 0:
            raise InvalidConfig("camera path must have a nonzero baseline")
        if self.radius <= max(self.box_half) + 1.0:
            raise InvalidConfig("camera radius must clear the scene box")


@dataclass(eq=False)
class SyntheticScene:
    config: SceneConfig
    camera: CameraModel
    poses: list                      # GT world-from-camera pose per frame
    gt_positions: dict               # track id -> (T, 3) world position per frame
    kinds: dict                      # track id -> static | dynamic | outlier
    labels: dict                     # track id -> GT dynamic label (0/1)
    disguise: np.ndarray             # (T, 2) per-frame (a_t, b_t)
    static_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    @property
    def trajectory_span(self) -> float:
        c = np.array([p.t for p in self.poses])
        return float(np.linalg.norm(np.diff(c, axis=0), axis=1).sum())


def _look_at(center: np.ndarray, target: np.ndarray) -> PoseSE3:
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    right = np.cross(np.array([0.0, 1.0, 0.0]), forward)
    right = right / np.linalg.norm(right)
    up = np.cross(forward, right)
    R = np.stack([right, up, forward], axis=1)
    return PoseSE3.from_rt(R, center)


def _camera_arc(cfg: SceneConfig) -> list:
    T = cfg.num_frames
    thetas = np.deg2rad(np.linspace(-cfg.arc_deg / 2.0, cfg.arc_deg / 2.0, T))
    poses = []
    for i, th in enumerate(thetas):
        h = cfg.height_amp * np.sin(2.0 * np.pi * i / T)
        c = np.array([cfg.radius * np.sin(th), h, -cfg.radius * np.cos(th)])
        poses.append(_look_at(c, np.zeros(3)))
    return poses


def _box_points(rng, n, half) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(n, 3)) * np.asarray(half)


def generate_scene(config: SceneConfig):
    """Build (SyntheticScene, TrackSet, [DepthFrame]) from the config."""
    config.validate()
    cam = config.camera()
    T = config.num_frames
    n_dyn = int(round(config.dynamic_fraction * config.num_tracks))
    n_out = int(round(config.outlier_fraction * config.num_tracks))
    n_static = config.num_tracks - n_dyn - n_out

    # independent streams so toggling the disguise or noise never changes
    # the underlying geometry
    ss = np.random.SeedSequence(config.seed)
    rng_scene, rng_noise, rng_disguise = [np.random.default_rng(s) for s in ss.spawn(3)]

    poses = _camera_arc(config)

    # per-frame disguise is always drawn to keep the stream stable
    ab = np.stack([rng_disguise.uniform(0.5, 2.0, size=T),
                   rng_disguise.uniform(0.1, 1.0, size=T)], axis=1)
    if not config.depth_disguise:
        ab = np.stack([np.ones(T), np.zeros(T)], axis=1)

    # dynamic objects: shared translation plus a slow spin around the
    # (moving) object center => rigid per-frame motion
    n_obj = max(1, min(config.dynamic_objects, max(n_dyn, 1)))
    obj_centers = _box_points(rng_scene, n_obj, np.asarray(config.box_half) * 0.6)
    vel_dirs = rng_scene.normal(size=(n_obj, 3))
    vel_dirs /= np.linalg.norm(vel_dirs, axis=1, keepdims=True)
    obj_vel = vel_dirs * config.dynamic_speed
    spin_axes = rng_scene.normal(size=(n_obj, 3))
    spin_axes /= np.linalg.norm(spin_axes, axis=1, keepdims=True)

    gt_positions = {}
    kinds = {}
    static_pts = []

    def static_trajectory():
        X = _box_points(rng_scene, 1, config.box_half)[0]
        return np.tile(X, (T, 1)), X

    # object centers bounce off the scene box so fast objects stay inside
    # the static depth envelope instead of flying out of view
    bounds = np.asarray(config.box_half) * 0.85
    obj_paths = np.empty((n_obj, T, 3))
    for o in range(n_obj):
        pos = obj_centers[o].copy()
        vel = obj_vel[o].copy()
        for t in range(T):
            obj_paths[o, t] = pos
            pos = pos + vel
            for ax in range(3):
                if abs(pos[ax]) > bounds[ax]:
                    pos[ax] = np.sign(pos[ax]) * (2 * bounds[ax]) - pos[ax]
                    vel[ax] = -vel[ax]

    def dynamic_trajectory(k):
        o = k % n_obj
        offset = rng_scene.uniform(-0.5, 0.5, size=3)
        traj = np.empty((T, 3))
        for t in range(T):
            Rt = so3_exp(spin_axes[o] * (config.dynamic_spin * t))
            traj[t] = obj_paths[o, t] + Rt @ offset
        return traj

    def outlier_trajectory():
        X = _box_points(rng_scene, 1, config.box_half)[0]
        steps = rng_scene.normal(scale=config.outlier_step, size=(T - 1, 3))
        return np.vstack([X, X + np.cumsum(steps, axis=0)])

    order = ([KIND_STATIC] * n_static + [KIND_DYNAMIC] * n_dyn + [KIND_OUTLIER] * n_out)
    dyn_index = 0
    for tid, kind in enumerate(order):
        for _attempt in range(50):
            if kind == KIND_STATIC:
                traj, X = static_trajectory()
            elif kind == KIND_DYNAMIC:
                traj = dynamic_trajectory(dyn_index)
            else:
                traj = outlier_trajectory()
            visible_somewhere = False
            for t in range(T):
                px, z = project_many(cam, poses[t], traj[t:t + 1])
                if z[0] > 0.2 and cam.contains(px)[0]:
                    visible_somewhere = True
                    break
            if visible_somewhere:
                break
        else:
            raise InvalidConfig(f"could not place track {tid} inside the view frustum")
        gt_positions[tid] = traj
        kinds[tid] = kind
        if kind == KIND_DYNAMIC:
            dyn_index += 1
        if kind == KIND_STATIC:
            static_pts.append(traj[0])

    labels = {tid: (0 if kinds[tid] == KIND_STATIC else 1) for tid in gt_positions}

    # project everything once per frame
    ids = sorted(gt_positions)
    all_traj = np.stack([gt_positions[tid] for tid in ids])  # (N, T, 3)
    px_all = np.empty((len(ids), T, 2))
    z_all = np.empty((len(ids), T))
    in_view = np.zeros((len(ids), T), dtype=bool)
    for t in range(T):
        px, z = project_many(cam, poses[t], all_traj[:, t, :])
        px_all[:, t] = px
        z_all[:, t] = z
        in_view[:, t] = (z > 0.2) & cam.contains(px)

    # occlusion bursts (never at the first visible frame)
    occluded = np.zeros((len(ids), T), dtype=bool)
    for i in range(len(ids)):
        if rng_noise.uniform() < config.occlusion_rate:
            start = int(np.argmax(in_view[i]))
            if start + 2 < T:
                b0 = int(rng_noise.integers(start + 1, T - 1))
                blen = int(rng_noise.integers(2, 6))
                occluded[i, b0:min(b0 + blen, T)] = True

    pixel_noise = rng_noise.normal(scale=config.pixel_noise, size=(len(ids), T, 2)) \
        if config.pixel_noise > 0 else np.zeros((len(ids), T, 2))
    depth_noise = rng_noise.normal(scale=config.depth_noise, size=(len(ids), T)) \
        if config.depth_noise > 0 else np.zeros((len(ids), T))

    tracks = []
    for i, tid in enumerate(ids):
        start = int(np.argmax(in_view[i]))
        vis = in_view[i, start:] & ~occluded[i, start:]
        vis[0] = True
        L = T - start
        pts = np.empty((L, 2))
        last = None
        for k in range(L):
            if vis[k]:
                pts[k] = px_all[i, start + k] + pixel_noise[i, start + k]
                last = pts[k]
            else:
                pts[k] = last  # tracker-style frozen position
        z = np.maximum(z_all[i, start:], _Z_FLOOR)
        z = np.maximum(z * (1.0 + depth_noise[i, start:]), _Z_FLOOR)
        d = ab[start:, 0] * z + ab[start:, 1]
        tracks.append(Track(track_id=tid, start=start, points=pts,
                            vis=vis.astype(np.uint8), depth=d))

    depth_frames = []
    if config.emit_depth_rasters:
        depth_frames = [_plane_depth_raster(cam, poses[t], config.plane_z, ab[t], t)
                        for t in range(T)]

    scene = SyntheticScene(
        config=config,
        camera=cam,
        poses=poses,
        gt_positions=gt_positions,
        kinds=kinds,
        labels=labels,
        disguise=ab,
        static_points=np.array(static_pts) if static_pts else np.zeros((0, 3)),
    )
    return scene, TrackSet(tracks), depth_frames


def _plane_depth_raster(cam: CameraModel, pose: PoseSE3, plane_z: float, ab, frame: int) -> DepthFrame:
    """Depth of the background plane z_world = plane_z, disguised by (a, b)."""
    u = np.arange(cam.width, dtype=np.float64)
    v = np.arange(cam.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    dirs = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)
    R = pose.rotation
    dirs_world = dirs @ R.T
    s = (plane_z - pose.t[2]) / dirs_world[..., 2]
    z = np.maximum(s, _Z_FLOOR)  # camera-frame depth (dir z-component is 1)
    return DepthFrame(frame, (ab[0] * z + ab[1]).astype(np.float32))


def scene_gt_record(scene: SyntheticScene) -> dict:
    """JSON-ready ground-truth summary (labels, disguise, span, seed)."""
    return {
        "seed": scene.config.seed,
        "num_frames": scene.num_frames,
        "trajectory_span": scene.trajectory_span,
        "labels": {str(tid): int(lab) for tid, lab in scene.labels.items()},
        "kinds": {str(tid): kind for tid, kind in scene.kinds.items()},
        "disguise": [[float(a), float(b)] for a, b in scene.disguise],
    }
