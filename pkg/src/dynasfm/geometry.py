"""Rigid-body and pinhole camera math used by every other module.

Conventions:
  * Poses map camera-frame points to the world frame: ``world = R @ cam + t``.
    The camera center in world coordinates is therefore the pose translation.
  * Quaternions are stored (w, x, y, z) with unit norm and w >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    DegenerateGeometry,
    NonPositiveDepth,
    PointBehindCamera,
    TooFewPoints,
)

_MIN_Z = 1e-9


# --- quaternion / so(3) helpers ----------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q scaled to unit norm with non-negative w component."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize a zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, both (w, x, y, z)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> quaternion via the Shepperd eigenvalue method."""
    Rxx, Rxy, Rxz, Ryx, Ryy, Ryz, Rzx, Rzy, Rzz = np.asarray(R, dtype=np.float64).ravel()
    K = np.array([
        [Rxx - Ryy - Rzz, Ryx + Rxy, Rzx + Rxz, Rzy - Ryz],
        [Ryx + Rxy, Ryy - Rxx - Rzz, Rzy + Ryz, Rxz - Rzx],
        [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, Ryx - Rxy],
        [Rzy - Ryz, Rxz - Rzx, Ryx - Rxy, Rxx + Ryy + Rzz],
    ]) / 3.0
    vals, vecs = np.linalg.eigh(K)
    x, y, z, w = vecs[:, np.argmax(vals)]
    return quat_normalize(np.array([w, x, y, z]))


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: axis-angle vector -> rotation matrix."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-10:
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> axis-angle vector; stable near 0 and pi."""
    tr = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(tr)
    if theta < 1e-10:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) * 0.5
    if theta > np.pi - 1e-6:
        # Near pi the off-diagonal formula loses the axis; recover it from
        # the symmetric part instead.
        A = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-12)
        axis = axis / np.linalg.norm(axis)
        sign_src = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(axis, sign_src) < 0:
            axis = -axis
        return axis * theta
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return v * theta / (2.0 * np.sin(theta))


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of R in radians."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)))


# --- domain types -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PoseSE3:
    """World-from-camera rigid transform: x_world = R @ x_cam + t."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3).copy())

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3()

    @staticmethod
    def from_rt(R: np.ndarray, t: np.ndarray) -> "PoseSE3":
        return PoseSE3(quat_from_matrix(R), t)

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (equals the translation)."""
        return self.t

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self applied after other: (self*other)(x) = self(other(x))."""
        q = quat_multiply(self.q, other.q)
        t = quat_to_matrix(self.q) @ other.t + self.t
        return PoseSE3(q, t)

    def inverse(self) -> "PoseSE3":
        qc = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        return PoseSE3(qc, -(quat_to_matrix(qc) @ self.t))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame points -> world frame. points: (3,) or (N, 3)."""
        return points @ self.rotation.T + self.t

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """World points -> camera frame."""
        return (points - self.t) @ self.rotation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.t
        return T


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole intrinsics plus image size, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalized(self, pixels: np.ndarray) -> np.ndarray:
        """Pixels (..., 2) -> unit-plane coordinates (..., 2)."""
        p = np.asarray(pixels, dtype=np.float64)
        return np.stack([(p[..., 0] - self.cx) / self.fx, (p[..., 1] - self.cy) / self.fy], axis=-1)

    def contains(self, pixels: np.ndarray) -> np.ndarray:
        p = np.asarray(pixels, dtype=np.float64)
        return (
            (p[..., 0] >= 0.0) & (p[..., 0] <= self.width - 1)
            & (p[..., 1] >= 0.0) & (p[..., 1] <= self.height - 1)
        )


@dataclass(frozen=True, eq=False)
class Sim3:
    """Similarity transform x -> s * R @ x + t with s > 0."""

    scale: float = 1.0
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "q", quat_normalize(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3).copy())

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=np.float64) @ self.rotation.T) + self.t

    def compose(self, other: "Sim3") -> "Sim3":
        q = quat_multiply(self.q, other.q)
        t = self.scale * (self.rotation @ other.t) + self.t
        return Sim3(self.scale * other.scale, q, t)

    def inverse(self) -> "Sim3":
        qc = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        Rinv = quat_to_matrix(qc)
        return Sim3(1.0 / self.scale, qc, -(Rinv @ self.t) / self.scale)

    def apply_pose(self, pose: PoseSE3) -> PoseSE3:
        """Transform a world-from-camera pose by this similarity (rotation and
        center move; the camera-frame scale change is absorbed)."""
        return PoseSE3(quat_multiply(self.q, pose.q), self.apply(pose.t))


# --- projection ----------------------------------------------------------------

def project(cam: CameraModel, pose: PoseSE3, point: np.ndarray) -> np.ndarray:
    """World point -> pixel. Raises PointBehindCamera if z <= 1e-9."""
    pc = pose.apply_inverse(np.asarray(point, dtype=np.float64))
    if pc[2] <= _MIN_Z:
        raise PointBehindCamera(f"z = {pc[2]:.3e}")
    return np.array([cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy])


def project_many(cam: CameraModel, pose: PoseSE3, points: np.ndarray):
    """Vectorized projection. Returns (pixels (N,2), z (N,)); no cheirality check."""
    pc = pose.apply_inverse(np.asarray(points, dtype=np.float64))
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.stack([cam.fx * pc[:, 0] / z + cam.cx, cam.fy * pc[:, 1] / z + cam.cy], axis=1)
    return px, z


def back_project(cam: CameraModel, pose: PoseSE3, pixel: np.ndarray, depth: float) -> np.ndarray:
    """Pixel plus camera-frame depth -> world point."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth = {depth}")
    u, v = np.asarray(pixel, dtype=np.float64)
    pc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return pose.apply(pc)


def back_project_many(cam: CameraModel, pose: PoseSE3, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(depths <= 0):
        raise NonPositiveDepth("all depths must be positive")
    n = cam.normalized(pixels)
    pc = np.concatenate([n * depths[:, None], depths[:, None]], axis=1)
    return pose.apply(pc)


# --- triangulation ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriangulationResult:
    point: np.ndarray
    max_reproj_error: float
    min_angle_deg: float
    max_angle_deg: float


def _pairwise_angles_deg(point: np.ndarray, centers: np.ndarray) -> tuple[float, float]:
    rays = point[None, :] - centers
    norms = np.linalg.norm(rays, axis=1)
    rays = rays / np.maximum(norms, 1e-300)[:, None]
    dots = np.clip(rays @ rays.T, -1.0, 1.0)
    iu = np.triu_indices(len(centers), k=1)
    ang = np.degrees(np.arccos(dots[iu]))
    return float(ang.min()), float(ang.max())


def triangulate(
    observations: list[tuple[CameraModel, PoseSE3, np.ndarray]],
    min_angle_deg: float = 1.0,
    refine_iters: int = 10,
) -> TriangulationResult:
    """Multi-view linear (DLT) triangulation refined by Gauss-Newton.

    observations: (camera, pose, pixel) per view, >= 2 views.
    Raises DegenerateGeometry when camera centers coincide or the widest
    pairwise ray angle falls below ``min_angle_deg``; BehindCamera when the
    point fails cheirality in any view.
    """
    if len(observations) < 2:
        raise TooFewPoints("triangulation needs at least two observations")

    centers = np.array([pose.t for _, pose, _ in observations])
    spread = np.linalg.norm(centers - centers[0], axis=1)
    if np.all(spread < 1e-9):
        raise DegenerateGeometry("all camera centers coincide")

    rows = []
    for cam, pose, pixel in observations:
        x, y = cam.normalized(np.asarray(pixel, dtype=np.float64))
        R = pose.rotation
        P = np.hstack([R.T, (-R.T @ pose.t)[:, None]])  # world -> camera
        rows.append(x * P[2] - P[0])
        rows.append(y * P[2] - P[1])
    A = np.array(rows)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-14:
        raise DegenerateGeometry("triangulated point at infinity")
    X = Xh[:3] / Xh[3]

    X = _refine_point(observations, X, refine_iters)

    depths = np.array([pose.apply_inverse(X)[2] for _, pose, _ in observations])
    if np.any(depths <= _MIN_Z):
        raise BehindCamera("cheirality failed in at least one view")

    min_ang, max_ang = _pairwise_angles_deg(X, centers)
    if max_ang < min_angle_deg:
        raise DegenerateGeometry(f"max triangulation angle {max_ang:.4f} deg below {min_angle_deg} deg")

    errs = [np.linalg.norm(project(cam, pose, X) - np.asarray(px, dtype=np.float64))
            for cam, pose, px in observations]
    return TriangulationResult(X, float(max(errs)), min_ang, max_ang)


def _refine_point(observations, X, iters):
    """Gauss-Newton on the summed squared reprojection error."""
    X = X.copy()
    for _ in range(iters):
        J = np.zeros((2 * len(observations), 3))
        r = np.zeros(2 * len(observations))
        ok = True
        for k, (cam, pose, pixel) in enumerate(observations):
            R = pose.rotation
            pc = pose.apply_inverse(X)
            if pc[2] <= _MIN_Z:
                ok = False
                break
            x, y, z = pc
            r[2 * k] = cam.fx * x / z + cam.cx - pixel[0]
            r[2 * k + 1] = cam.fy * y / z + cam.cy - pixel[1]
            d_uv_d_pc = np.array([
                [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
                [0.0, cam.fy / z, -cam.fy * y / (z * z)],
            ])
            J[2 * k:2 * k + 2] = d_uv_d_pc @ R.T
        if not ok:
            break
        JtJ = J.T @ J
        try:
            step = np.linalg.solve(JtJ + 1e-12 * np.eye(3), -(J.T @ r))
        except np.linalg.LinAlgError:
            break
        X = X + step
        if np.linalg.norm(step) < 1e-14:
            break
    return X


# --- similarity alignment ----------------------------------------------------------

def umeyama(
    src: np.ndarray,
    dst: np.ndarray,
    with_scale: bool = True,
    weights: np.ndarray | None = None,
) -> Sim3:
    """Closed-form least-squares similarity minimizing sum ||s R src + t - dst||^2.

    with_scale=False fixes s = 1 (rigid alignment). Optional non-negative
    weights give a weighted fit (used by the IRLS callers).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same shape")
    n = src.shape[0]
    if n < 3:
        raise TooFewPoints(f"need >= 3 point pairs, got {n}")

    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0):
            raise ValueError("weights must be non-negative with one entry per pair")
        tot = w.sum()
        if tot <= 0:
            raise ValueError("weights sum to zero")
        w = w / tot

    mu_src = w @ src
    mu_dst = w @ dst
    ds = src - mu_src
    dd = dst - mu_dst
    cov = (dd * w[:, None]).T @ ds
    U, D, Vt = np.linalg.svd(cov)
    if D[1] < 1e-12 * max(D[0], 1e-300) or D[0] == 0.0:
        raise DegenerateConfiguration("centered covariance has rank < 2")
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_src = float(np.sum(w * np.sum(ds * ds, axis=1)))
        if var_src <= 0:
            raise DegenerateConfiguration("source variance is zero")
        s = float(np.trace(np.diag(D) @ S)) / var_src
        if s <= 0:
            raise DegenerateConfiguration("similarity scale collapsed to <= 0")
    else:
        s = 1.0
    t = mu_dst - s * (R @ mu_src)
    return Sim3(s, quat_from_matrix(R), t)
