"""Two-view relative pose: normalized eight-point essential estimation
inside RANSAC with a Sampson-distance inlier test, then decomposition with
cheirality voting.

Conventions: a correspondence (x1, x2) between views i and j satisfies
x2^T E x1 = 0 on the unit plane, with E = [t]x R and x2 = R x1 + t, i.e.
(R, t) map camera-i coordinates into camera j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooFewPoints
from .geometry import CameraModel, skew


def _hartley_normalize(x: np.ndarray):
    """Shift to zero centroid and scale to RMS sqrt(2); returns (xn, T)."""
    centroid = x.mean(axis=0)
    d = x - centroid
    rms = np.sqrt(np.mean(np.sum(d * d, axis=1)))
    s = np.sqrt(2.0) / max(rms, 1e-12)
    T = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return d * s, T


def eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Essential matrix from >= 8 unit-plane correspondences."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape[0] < 8:
        raise TooFewPoints(f"eight-point needs >= 8 correspondences, got {x1.shape[0]}")
    n1, T1 = _hartley_normalize(x1)
    n2, T2 = _hartley_normalize(x2)
    a1, b1 = n1[:, 0], n1[:, 1]
    a2, b2 = n2[:, 0], n2[:, 1]
    ones = np.ones_like(a1)
    A = np.stack([a2 * a1, a2 * b1, a2, b2 * a1, b2 * b1, b2, a1, b1, ones], axis=1)
    _, _, Vt = np.linalg.svd(A)
    E = Vt[-1].reshape(3, 3)
    E = T2.T @ E @ T1
    # project onto the essential manifold: two equal singular values, third 0
    U, s, Vt = np.linalg.svd(E)
    return U @ np.diag([1.0, 1.0, 0.0]) @ Vt


def sampson_squared(F: np.ndarray, px1: np.ndarray, px2: np.ndarray) -> np.ndarray:
    """Squared Sampson distances (first-order geometric error), in the
    units of the input coordinates."""
    x1 = np.hstack([px1, np.ones((px1.shape[0], 1))])
    x2 = np.hstack([px2, np.ones((px2.shape[0], 1))])
    Fx1 = x1 @ F.T
    Ftx2 = x2 @ F
    num = np.sum(x2 * Fx1, axis=1) ** 2
    den = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    return num / np.maximum(den, 1e-300)


def decompose_essential(E: np.ndarray):
    """The four (R, t) candidates with det(R) = +1 and unit t."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def _cheirality_depths(R: np.ndarray, t: np.ndarray, x1: np.ndarray, x2: np.ndarray):
    """Least-squares depths (z1, z2) for x2*z2 = R x1*z1 + t, vectorized."""
    r1 = np.hstack([x1, np.ones((x1.shape[0], 1))]) @ R.T   # (n, 3)
    r2 = np.hstack([x2, np.ones((x2.shape[0], 1))])
    # columns of the per-point 3x2 system [r1, -r2] [z1, z2]^T = -t... solve
    # via the 2x2 normal equations in closed form
    a = np.sum(r1 * r1, axis=1)
    b = -np.sum(r1 * r2, axis=1)
    c = np.sum(r2 * r2, axis=1)
    rhs1 = -r1 @ t
    rhs2 = r2 @ t
    det = a * c - b * b
    det = np.where(np.abs(det) < 1e-300, 1e-300, det)
    z1 = (c * rhs1 - b * rhs2) / det
    z2 = (a * rhs2 - b * rhs1) / det
    return z1, z2


def recover_relative_pose(E: np.ndarray, x1: np.ndarray, x2: np.ndarray):
    """Pick the (R, t) candidate putting the most points in front of both views."""
    best, best_count = None, -1
    for R, t in decompose_essential(E):
        z1, z2 = _cheirality_depths(R, t, x1, x2)
        count = int(np.sum((z1 > 0) & (z2 > 0)))
        if count > best_count:
            best, best_count = (R, t), count
    return best[0], best[1], best_count


@dataclass(frozen=True)
class RansacResult:
    E: np.ndarray
    inliers: np.ndarray       # boolean mask
    iterations: int
    R: np.ndarray | None = None
    t: np.ndarray | None = None


def _sampson_residuals(R, t, x1h, x2h):
    E = skew(t) @ R
    Ex1 = x1h @ E.T
    Etx2 = x2h @ E
    num = np.sum(x2h * Ex1, axis=1)
    den = np.sqrt(Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2)
    return num / np.maximum(den, 1e-300)


def _sphere_basis(t):
    a = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(t, a)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(t, b1)
    return b1, b2


def refine_relative_pose(x1: np.ndarray, x2: np.ndarray, R: np.ndarray, t: np.ndarray,
                         iters: int = 15):
    """Gauss-Newton on the Sampson error over (R, unit t).

    The eight-point solution is biased by the essential-manifold projection
    once the data are noisy; a few GN steps recover the maximum-likelihood
    estimate. Coordinates are unit-plane, 5 dof (rotation tangent + sphere
    tangent of t).
    """
    from .geometry import so3_exp

    x1h = np.hstack([x1, np.ones((x1.shape[0], 1))])
    x2h = np.hstack([x2, np.ones((x2.shape[0], 1))])
    r = _sampson_residuals(R, t, x1h, x2h)
    cost = float(r @ r)
    lam = 1e-6
    h = 1e-7
    for _ in range(iters):
        b1, b2 = _sphere_basis(t)
        J = np.empty((len(r), 5))
        for k in range(3):
            w = np.zeros(3)
            w[k] = h
            J[:, k] = (_sampson_residuals(R @ so3_exp(w), t, x1h, x2h) - r) / h
        for k, b in enumerate((b1, b2)):
            tp = t + h * b
            tp /= np.linalg.norm(tp)
            J[:, 3 + k] = (_sampson_residuals(R, tp, x1h, x2h) - r) / h
        g = J.T @ r
        H = J.T @ J
        stepped = False
        for _ in range(10):
            try:
                delta = np.linalg.solve(H + lam * np.diag(np.maximum(np.diag(H), 1e-12)), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            R_t = R @ so3_exp(delta[:3])
            t_t = t + delta[3] * b1 + delta[4] * b2
            t_t /= np.linalg.norm(t_t)
            r_t = _sampson_residuals(R_t, t_t, x1h, x2h)
            cost_t = float(r_t @ r_t)
            if cost_t < cost:
                R, t, r, cost = R_t, t_t, r_t, cost_t
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                break
            lam *= 10.0
        if not stepped or float(np.max(np.abs(delta))) < 1e-14:
            break
    return R, t


def direction_given_rotation(x1: np.ndarray, x2: np.ndarray, R: np.ndarray):
    """Optimal baseline direction for a fixed rotation.

    The epipolar residual is linear in t: <t, (R x1) x x2>, so the global
    least-squares direction is the smallest singular vector, which avoids
    the local minima the joint problem has at small baselines. The sign is
    settled by cheirality.
    """
    x1h = np.hstack([x1, np.ones((x1.shape[0], 1))])
    x2h = np.hstack([x2, np.ones((x2.shape[0], 1))])
    A = np.cross(x1h @ R.T, x2h)
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    t = Vt[-1]
    z1, z2 = _cheirality_depths(R, t, x1, x2)
    if int(np.sum((z1 > 0) & (z2 > 0))) < int(np.sum((z1 < 0) & (z2 < 0))):
        t = -t
    return t


def _refined_model(x1, x2):
    """Full two-view model from a consensus set: eight-point, decomposition,
    Sampson GN, then the globally-optimal direction for the rotation."""
    E = eight_point(x1, x2)
    R, t, _ = recover_relative_pose(E, x1, x2)
    R, t = refine_relative_pose(x1, x2, R, t)
    t = direction_given_rotation(x1, x2, R)
    R, t = refine_relative_pose(x1, x2, R, t, iters=5)
    return R, t, skew(t) @ R


def ransac_essential(
    px1: np.ndarray,
    px2: np.ndarray,
    cam: CameraModel,
    rng: np.random.Generator,
    max_iters: int = 2000,
    threshold_px: float = 1.0,
    confidence: float = 0.9999,
) -> RansacResult:
    """Adaptive RANSAC around the eight-point solver with local
    optimization.

    Inliers are tested with the Sampson distance of F = K^-T E K^-1 in
    pixels. Whenever a hypothesis takes the lead, the full refined model is
    re-estimated on its consensus set and rescored: at short baselines many
    (R, t) combinations explain the data almost equally well, and only the
    refined model separates them by inlier count.
    """
    n = px1.shape[0]
    if n < 8:
        raise TooFewPoints(f"RANSAC needs >= 8 correspondences, got {n}")
    x1 = cam.normalized(px1)
    x2 = cam.normalized(px2)
    Kinv = np.linalg.inv(cam.K)
    thr_sq = threshold_px * threshold_px

    best = None  # (count, mask, E, R, t)
    needed = max_iters
    it = 0

    def count_inliers(E):
        F = Kinv.T @ E @ Kinv
        mask = sampson_squared(F, px1, px2) <= thr_sq
        return int(mask.sum()), mask

    def local_optimize(mask, count):
        best_local = None
        for _ in range(4):
            try:
                R, t, E = _refined_model(x1[mask], x2[mask])
            except (np.linalg.LinAlgError, TooFewPoints):
                break
            new_count, new_mask = count_inliers(E)
            if new_count <= count:
                break
            count, mask = new_count, new_mask
            best_local = (count, mask, E, R, t)
        return best_local

    while it < min(max_iters, needed):
        idx = rng.choice(n, size=8, replace=False)
        try:
            E = eight_point(x1[idx], x2[idx])
        except np.linalg.LinAlgError:
            it += 1
            continue
        count, mask = count_inliers(E)
        if best is None or count > best[0]:
            best = (count, mask, E, None, None)
            improved = local_optimize(mask, count)
            if improved is not None:
                best = improved
            w = max(best[0] / n, 1e-9)
            denom = np.log1p(-min(w ** 8, 1.0 - 1e-12))
            needed = int(np.ceil(np.log(max(1.0 - confidence, 1e-300)) / denom)) if denom < 0 else max_iters
        it += 1

    count, mask, E, R, t = best
    if R is None:
        try:
            R, t, E = _refined_model(x1[mask], x2[mask])
            new_count, new_mask = count_inliers(E)
            if new_count >= count:
                mask = new_mask
        except (np.linalg.LinAlgError, TooFewPoints):
            R, t, _ = recover_relative_pose(E, x1[mask], x2[mask])
    return RansacResult(E, mask, it, R, t)


def relative_pose_from_tracks(
    px1: np.ndarray,
    px2: np.ndarray,
    cam: CameraModel,
    rng: np.random.Generator,
    max_iters: int = 2000,
    threshold_px: float = 1.0,
    confidence: float = 0.9999,
):
    """RANSAC essential (with local optimization) + final refinement on the
    consensus set. Returns (R, t, inlier mask)."""
    res = ransac_essential(px1, px2, cam, rng, max_iters, threshold_px, confidence)
    x1 = cam.normalized(px1[res.inliers])
    x2 = cam.normalized(px2[res.inliers])
    if res.R is not None:
        R, t = refine_relative_pose(x1, x2, res.R, res.t, iters=10)
    else:
        R, t, _ = recover_relative_pose(res.E, x1, x2)
        R, t = refine_relative_pose(x1, x2, R, t)
        t = direction_given_rotation(x1, x2, R)
        R, t = refine_relative_pose(x1, x2, R, t, iters=5)
    return R, t, res.inliers
