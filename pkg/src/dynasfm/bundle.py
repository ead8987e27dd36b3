"""Global bundle adjustment: Levenberg-Marquardt on Huber-robustified
reprojection residuals over all poses (except the gauge-fixing first one)
and all points.

Pose increments live in the SE3 tangent space: R <- R exp(w^), t <- t + R v.
The normal equations are assembled sparse (scipy) and solved with SuperLU;
steps are only accepted when they lower the true robust cost, so the
accepted-cost sequence is non-increasing by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import InvalidConfig, NumericalFailure, SolverDiverged
from .geometry import CameraModel, PoseSE3, quat_from_matrix, so3_exp

logger = logging.getLogger(__name__)

_MIN_Z = 1e-9


@dataclass(frozen=True)
class BundleConfig:
    max_iters: int = 100
    huber_delta_px: float = 2.0
    lm_lambda0: float = 1e-4
    lm_lambda_max: float = 1e12
    cost_tol: float = 1e-10     # relative cost change
    grad_tol: float = 1e-10     # gradient infinity norm
    step_tol: float = 1e-12     # parameter step infinity norm (machine floor)


@dataclass(eq=False)
class BundleResult:
    poses: list
    points: np.ndarray
    iterations: int
    initial_cost: float
    final_cost: float
    cost_history: list = field(default_factory=list)
    rms_initial_px: float = 0.0
    rms_final_px: float = 0.0


def apply_pose_step(pose: PoseSE3, omega: np.ndarray, tau: np.ndarray) -> PoseSE3:
    """Tangent-space pose update used by the solver and its tests."""
    R = pose.rotation @ so3_exp(omega)
    t = pose.t + pose.rotation @ tau
    return PoseSE3(quat_from_matrix(R), t)


def _batched_skew(v: np.ndarray) -> np.ndarray:
    S = np.zeros((v.shape[0], 3, 3))
    S[:, 0, 1] = -v[:, 2]
    S[:, 0, 2] = v[:, 1]
    S[:, 1, 0] = v[:, 2]
    S[:, 1, 2] = -v[:, 0]
    S[:, 2, 0] = -v[:, 1]
    S[:, 2, 1] = v[:, 0]
    return S


def _residuals_jacobians(cam, R_all, t_all, points, cam_idx, pnt_idx, uv, want_jac=True):
    """Vectorized residuals r = proj - uv and their pose/point Jacobians.

    Returns (r (M,2), z (M,), Jpose (M,2,6), Jpoint (M,2,3)); the Jacobian
    entries are None when want_jac is false.
    """
    Rb = R_all[cam_idx]
    xc = np.einsum("mji,mj->mi", Rb, points[pnt_idx] - t_all[cam_idx])
    z = xc[:, 2]
    safe_z = np.where(z > _MIN_Z, z, 1.0)
    u = cam.fx * xc[:, 0] / safe_z + cam.cx
    v = cam.fy * xc[:, 1] / safe_z + cam.cy
    r = np.stack([u, v], axis=1) - uv
    if not want_jac:
        return r, z, None, None
    Jpi = np.zeros((len(z), 2, 3))
    Jpi[:, 0, 0] = cam.fx / safe_z
    Jpi[:, 0, 2] = -cam.fx * xc[:, 0] / safe_z**2
    Jpi[:, 1, 1] = cam.fy / safe_z
    Jpi[:, 1, 2] = -cam.fy * xc[:, 1] / safe_z**2
    A = np.zeros((len(z), 3, 6))
    A[:, :, :3] = _batched_skew(xc)
    A[:, 0, 3] = A[:, 1, 4] = A[:, 2, 5] = -1.0
    Jpose = np.einsum("mij,mjk->mik", Jpi, A)
    Jpoint = np.einsum("mij,mkj->mik", Jpi, Rb)
    return r, z, Jpose, Jpoint


def reprojection_residual_block(cam: CameraModel, pose: PoseSE3, point: np.ndarray, uv: np.ndarray):
    """Residual and analytic Jacobians for one observation (test surface)."""
    r, z, Jpose, Jpoint = _residuals_jacobians(
        cam,
        pose.rotation[None],
        pose.t[None],
        np.asarray(point, dtype=np.float64)[None],
        np.zeros(1, dtype=np.intp),
        np.zeros(1, dtype=np.intp),
        np.asarray(uv, dtype=np.float64)[None],
    )
    return r[0], Jpose[0], Jpoint[0]


def _robust_cost(r, z, delta):
    if np.any(z <= _MIN_Z):
        return np.inf
    s = np.linalg.norm(r, axis=1)
    inside = s <= delta
    cost = np.where(inside, 0.5 * s * s, delta * (s - 0.5 * delta))
    return float(cost.sum())


def _block_coo(blocks, row_off, col_off):
    """COO triplets for dense sub-blocks at given dof offsets."""
    _, a, b = blocks.shape
    rows = row_off[:, None, None] + np.arange(a)[None, :, None] + np.zeros((1, 1, b), dtype=np.intp)
    cols = col_off[:, None, None] + np.zeros((1, a, 1), dtype=np.intp) + np.arange(b)[None, None, :]
    return rows.ravel(), cols.ravel(), blocks.ravel()


def bundle_adjust(
    cam: CameraModel,
    poses: list,
    points: np.ndarray,
    cam_idx: np.ndarray,
    pnt_idx: np.ndarray,
    uv: np.ndarray,
    config: BundleConfig = BundleConfig(),
) -> BundleResult:
    """Joint refinement of poses[1:] and points; poses[0] is the gauge."""
    C = len(poses)
    points = np.asarray(points, dtype=np.float64).copy()
    P = points.shape[0]
    cam_idx = np.asarray(cam_idx, dtype=np.intp)
    pnt_idx = np.asarray(pnt_idx, dtype=np.intp)
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    M = uv.shape[0]
    if not (cam_idx.shape == (M,) and pnt_idx.shape == (M,)):
        raise InvalidConfig("observation arrays must have matching lengths")
    counts = np.bincount(pnt_idx, minlength=P)
    if np.any(counts < 2):
        raise InvalidConfig("every point must be observed in at least two views")

    delta_px = config.huber_delta_px
    R_all = np.stack([p.rotation for p in poses])
    t_all = np.stack([p.t for p in poses])

    r, z, _, _ = _residuals_jacobians(cam, R_all, t_all, points, cam_idx, pnt_idx, uv, want_jac=False)
    cost = _robust_cost(r, z, delta_px)
    if not np.isfinite(cost):
        raise NumericalFailure("initial state has points at or behind a camera")
    rms_initial = float(np.sqrt(np.mean(np.sum(r * r, axis=1))))

    result = BundleResult(
        poses=list(poses), points=points, iterations=0,
        initial_cost=cost, final_cost=cost, cost_history=[cost],
        rms_initial_px=rms_initial, rms_final_px=rms_initial,
    )

    lam = config.lm_lambda0
    ndof = 6 * (C - 1) + 3 * P
    mask_c = cam_idx > 0
    cam_off = (6 * (cam_idx - 1))[mask_c]
    pnt_off = 6 * (C - 1) + 3 * pnt_idx

    for it in range(config.max_iters):
        r, z, Jpose, Jpoint = _residuals_jacobians(
            cam, R_all, t_all, points, cam_idx, pnt_idx, uv)
        s = np.linalg.norm(r, axis=1)
        w = np.ones(M)
        out = s > delta_px
        w[out] = delta_px / s[out]

        Jc = Jpose * np.sqrt(w)[:, None, None]
        Jp = Jpoint * np.sqrt(w)[:, None, None]
        rw = r * w[:, None]

        g = np.zeros(ndof)
        np.add.at(g, (cam_off[:, None] + np.arange(6)[None, :]).ravel(),
                  np.einsum("mki,mk->mi", Jpose[mask_c], rw[mask_c]).ravel())
        np.add.at(g, (pnt_off[:, None] + np.arange(3)[None, :]).ravel(),
                  np.einsum("mki,mk->mi", Jpoint, rw).ravel())
        if float(np.max(np.abs(g))) < config.grad_tol:
            break

        cc = np.einsum("mki,mkj->mij", Jc[mask_c], Jc[mask_c])
        pp = np.einsum("mki,mkj->mij", Jp, Jp)
        cp = np.einsum("mki,mkj->mij", Jc[mask_c], Jp[mask_c])
        rows, cols, vals = [], [], []
        for blk, ro, co in (
            (cc, cam_off, cam_off),
            (pp, pnt_off, pnt_off),
            (cp, cam_off, pnt_off[mask_c]),
            (np.transpose(cp, (0, 2, 1)), pnt_off[mask_c], cam_off),
        ):
            rr, ccol, vv = _block_coo(blk, ro, co)
            rows.append(rr)
            cols.append(ccol)
            vals.append(vv)
        H = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(ndof, ndof)).tocsr()
        diag = H.diagonal()

        stepped = False
        while True:
            H_l = H + sparse.diags(lam * diag + lam * 1e-12)
            try:
                delta = spsolve(H_l, -g)
            except RuntimeError:
                delta = np.full(ndof, np.nan)
            if not np.all(np.isfinite(delta)):
                lam *= 10.0
                if lam > config.lm_lambda_max:
                    raise NumericalFailure("normal equations unsolvable even after damping")
                continue
            if float(np.max(np.abs(delta))) < config.step_tol:
                stepped = True
                converged = True  # at the floor of what the damping allows
                break

            trial_poses = list(result.poses)
            for c in range(1, C):
                d = delta[6 * (c - 1):6 * c]
                trial_poses[c] = apply_pose_step(result.poses[c], d[:3], d[3:])
            trial_points = points + delta[6 * (C - 1):].reshape(P, 3)
            Rt_all = np.stack([p.rotation for p in trial_poses])
            tt_all = np.stack([p.t for p in trial_poses])
            r_t, z_t, _, _ = _residuals_jacobians(
                cam, Rt_all, tt_all, trial_points, cam_idx, pnt_idx, uv, want_jac=False)
            trial_cost = _robust_cost(r_t, z_t, delta_px)

            if trial_cost < cost:
                rel_change = (cost - trial_cost) / max(cost, 1e-300)
                result.poses = trial_poses
                points = trial_points
                R_all, t_all = Rt_all, tt_all
                cost = trial_cost
                result.cost_history.append(cost)
                result.iterations = it + 1
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                converged = rel_change < config.cost_tol
                break
            lam *= 10.0
            if lam > config.lm_lambda_max:
                raise SolverDiverged(f"LM damping exceeded {config.lm_lambda_max:g}")

        if stepped and converged:
            break

    result.points = points
    result.final_cost = cost
    r, z, _, _ = _residuals_jacobians(cam, R_all, t_all, points, cam_idx, pnt_idx, uv, want_jac=False)
    result.rms_final_px = float(np.sqrt(np.mean(np.sum(r * r, axis=1))))
    return result
