"""Trajectory and segmentation evaluation: ATE, RPE, confusion metrics,
and the track-quality losses (L1 trajectory + visibility/dynamics
cross-entropies)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DeltaTooLarge,
    IdMismatch,
    LengthMismatch,
    ProbabilityOutOfRange,
)
from .geometry import umeyama
from .tracks import TrackSet

ALIGN_MODES = ("sim3", "se3", "none")


def align_trajectories(pred: list, gt: list, align: str = "sim3") -> list:
    """Return the predicted poses mapped onto the ground-truth frame."""
    if align not in ALIGN_MODES:
        raise ValueError(f"align must be one of {ALIGN_MODES}")
    if align == "none":
        return list(pred)
    centers_pred = np.array([p.t for p in pred])
    centers_gt = np.array([p.t for p in gt])
    transform = umeyama(centers_pred, centers_gt, with_scale=(align == "sim3"))
    return [transform.apply_pose(p) for p in pred]


def ate(pred: list, gt: list, align: str = "sim3") -> float:
    """RMSE of camera-center differences after the requested alignment."""
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted vs {len(gt)} ground-truth poses")
    if len(pred) < 2:
        raise LengthMismatch("need at least 2 poses")
    aligned = align_trajectories(pred, gt, align)
    d = np.array([a.t - g.t for a, g in zip(aligned, gt)])
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def rpe(pred: list, gt: list, delta: int = 1) -> tuple[float, float]:
    """Relative pose error over frame pairs (i, i+delta).

    Returns (rpe_trans, rpe_rot_degrees), both RMS over pairs.
    """
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted vs {len(gt)} ground-truth poses")
    n = len(pred)
    if delta < 1 or delta >= n:
        raise DeltaTooLarge(f"delta {delta} leaves no pairs for {n} poses")
    terr, rerr = [], []
    for i in range(n - delta):
        rel_gt = gt[i].inverse().compose(gt[i + delta])
        rel_pred = pred[i].inverse().compose(pred[i + delta])
        err = rel_gt.inverse().compose(rel_pred)
        terr.append(float(np.linalg.norm(err.t)))
        w = np.clip(abs(err.q[0]), -1.0, 1.0)
        rerr.append(np.degrees(2.0 * np.arccos(w)))
    return (float(np.sqrt(np.mean(np.square(terr)))),
            float(np.sqrt(np.mean(np.square(rerr)))))


def seg_metrics(pred_labels, gt_labels) -> dict:
    """Confusion counts plus precision/recall/F1/IoU; dynamic = positive.

    When there are no positives anywhere (tp = fp = fn = 0) the ratio
    metrics are 1 by convention.
    """
    p = np.asarray(pred_labels, dtype=int)
    g = np.asarray(gt_labels, dtype=int)
    if p.shape != g.shape:
        raise LengthMismatch(f"{p.shape} predicted vs {g.shape} ground-truth labels")
    tp = int(np.sum((p == 1) & (g == 1)))
    fp = int(np.sum((p == 1) & (g == 0)))
    fn = int(np.sum((p == 0) & (g == 1)))
    tn = int(np.sum((p == 0) & (g == 0)))
    if tp + fp + fn == 0:
        precision = recall = f1 = iou = 1.0
    else:
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        iou = tp / (tp + fp + fn)
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "precision": precision, "recall": recall, "f1": f1, "iou": iou}


def _bce(probs: np.ndarray, labels: np.ndarray, eps: float) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ProbabilityOutOfRange("probabilities must lie in [0, 1]")
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def track_losses(
    pred: TrackSet,
    gt: TrackSet,
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0),
    eps: float = 1e-7,
    vis_probs: dict | None = None,
    dyn_probs: dict | None = None,
) -> dict:
    """Summed track-quality losses of a predicted track set against truth.

    l_traj is the L1 distance of positions, l_vis / l_dyn are per-frame
    binary cross-entropies. Predicted visibilities and dynamic labels serve
    as probabilities unless explicit per-track probabilities are supplied
    via ``vis_probs`` / ``dyn_probs`` (track id -> array or scalar).
    """
    pred_by_id = pred.by_id()
    gt_by_id = gt.by_id()
    if set(pred_by_id) != set(gt_by_id):
        raise IdMismatch("predicted and ground-truth track ids differ")

    l_traj = l_vis = l_dyn = 0.0
    n_points = n_vis = n_dyn = 0
    for tid in sorted(pred_by_id):
        tp, tg = pred_by_id[tid], gt_by_id[tid]
        if tp.start != tg.start or tp.length != tg.length:
            raise IdMismatch(f"track {tid}: frame ranges differ")
        l_traj += float(np.sum(np.abs(tp.points - tg.points)))
        n_points += tp.length

        pv = vis_probs.get(tid) if vis_probs else tp.vis.astype(np.float64)
        pv = np.broadcast_to(np.asarray(pv, dtype=np.float64), (tp.length,))
        l_vis += _bce(pv, tg.vis, eps)
        n_vis += tp.length

        if dyn_probs and tid in dyn_probs:
            pd = dyn_probs[tid]
        elif tp.score is not None:
            pd = tp.score
        else:
            pd = float(tp.dyn) if tp.dyn is not None else 0.0
        pd = np.broadcast_to(np.asarray(pd, dtype=np.float64), (tp.length,))
        gd = np.full(tp.length, float(tg.dyn) if tg.dyn is not None else 0.0)
        l_dyn += _bce(pd, gd, eps)
        n_dyn += tp.length

    lt, lv, ld = lambdas
    return {
        "l_traj": l_traj,
        "l_vis": l_vis,
        "l_dyn": l_dyn,
        "l_total": lt * l_traj + lv * l_vis + ld * l_dyn,
        "lambdas": list(lambdas),
        "mean_traj": l_traj / max(n_points, 1),
        "mean_vis": l_vis / max(n_vis, 1),
        "mean_dyn": l_dyn / max(n_dyn, 1),
    }


@dataclass(eq=False)
class MetricsReport:
    ate_rmse: float | None = None
    rpe_trans: float | None = None
    rpe_rot: float | None = None
    alignment: str = "sim3"
    seg: dict | None = None
    losses: dict | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "ate_rmse": self.ate_rmse,
            "rpe_trans": self.rpe_trans,
            "rpe_rot": self.rpe_rot,
            "alignment": self.alignment,
        }
        if self.seg is not None:
            out["seg"] = self.seg
        if self.losses is not None:
            out["losses"] = self.losses
        out.update(self.extras)
        return out


def evaluate_trajectories(pred: list, gt: list, align: str = "sim3",
                          rpe_delta: int = 1) -> MetricsReport:
    """ATE + RPE in one report.

    The requested alignment is applied to the prediction before RPE too:
    with a monocular gauge the raw relative-translation magnitudes are in
    arbitrary units, and evaluating them without the scale alignment would
    just measure the gauge.
    """
    a = ate(pred, gt, align)
    aligned = align_trajectories(pred, gt, align)
    rt, rr = rpe(aligned, gt, rpe_delta)
    return MetricsReport(ate_rmse=a, rpe_trans=rt, rpe_rot=rr, alignment=align)


def per_frame_errors(pred: list, gt: list, align: str = "sim3") -> list[dict]:
    """Per-frame center errors after alignment (CSV-friendly rows)."""
    aligned = align_trajectories(pred, gt, align)
    rows = []
    for i, (a, g) in enumerate(zip(aligned, gt)):
        rows.append({"frame": i, "error": float(np.linalg.norm(a.t - g.t))})
    return rows
