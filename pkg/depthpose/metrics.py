"""
Pose error metrics (ADD, ADD-S), the 10%-of-diameter accuracy rule and the
supervision losses (focal, L1 offset, weighted sum) as plain functions.

Metrics are averaged over mesh vertices.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import spatial

from .errors import EmptyDataError, InputError
from .geometry import RigidPose, TriangleMesh, transform_points

logger = logging.getLogger("depthpose.metrics")

THRESHOLD_RATIO = 0.1
_PAIR_CHUNK = 1024


@dataclass(frozen=True)
class PoseErrorReport:
    add: float
    adds: float
    threshold: float
    correct_add: bool
    correct_adds: bool
    symmetric: bool
    rotation_error: float = 0.0
    translation_error: float = 0.0

    @property
    def selected_error(self) -> float:
        """ADD-S for symmetric objects, ADD otherwise."""
        return self.adds if self.symmetric else self.add

    def to_dict(self) -> dict:
        return asdict(self)


def add_metric(mesh: TriangleMesh, pred: RigidPose, gt: RigidPose) -> float:
    """Mean distance between index-matched model points under both poses."""
    pts = mesh.vertices
    diff = transform_points(pts, pred) - transform_points(pts, gt)
    return float(np.linalg.norm(diff, axis=1).mean())


def adds_metric(mesh: TriangleMesh, pred: RigidPose, gt: RigidPose, accelerate: bool = False) -> float:
    """
    Mean over predicted points of the distance to the closest ground-truth
    point. Brute force by default; accelerate=True uses a k-d tree.
    """
    pts = mesh.vertices
    pts_pred = transform_points(pts, pred)
    pts_gt = transform_points(pts, gt)
    if accelerate:
        nearest, _ = spatial.cKDTree(pts_gt).query(pts_pred, k=1)
        return float(nearest.mean())
    nearest = np.empty(len(pts_pred))
    for start in range(0, len(pts_pred), _PAIR_CHUNK):
        chunk = pts_pred[start:start + _PAIR_CHUNK]
        d = np.linalg.norm(chunk[:, None, :] - pts_gt[None, :, :], axis=2)
        nearest[start:start + _PAIR_CHUNK] = d.min(axis=1)
    return float(nearest.mean())


def evaluate_pose(mesh: TriangleMesh, pred: RigidPose, gt: RigidPose, symmetric: bool = False,
                  accelerate: bool = False) -> PoseErrorReport:
    add = add_metric(mesh, pred, gt)
    adds = adds_metric(mesh, pred, gt, accelerate=accelerate)
    threshold = THRESHOLD_RATIO * mesh.diameter
    return PoseErrorReport(
        add=add,
        adds=adds,
        threshold=threshold,
        correct_add=add < threshold,
        correct_adds=adds < threshold,
        symmetric=symmetric,
        rotation_error=pred.rotation_error(gt),
        translation_error=pred.translation_error(gt),
    )


def accuracy_at_threshold(reports: list[PoseErrorReport], use_adds_for_symmetric: bool = True) -> float:
    """Fraction of frames whose ADD (or ADD-S for symmetric objects) is below threshold."""
    if not reports:
        raise EmptyDataError("no pose reports to score")
    hits = 0
    for r in reports:
        error = r.selected_error if use_adds_for_symmetric else r.add
        hits += error < r.threshold
    return hits / len(reports)


def summarize_reports(object_id: str, reports: list[PoseErrorReport], use_adds_for_symmetric: bool = True) -> dict:
    """One evaluation row: object, n_frames, add_mean, adds_mean, acc@0.1d."""
    if not reports:
        raise EmptyDataError(f"no frames for object {object_id}")
    return {
        "object": object_id,
        "n_frames": len(reports),
        "add_mean": float(np.mean([r.add for r in reports])),
        "adds_mean": float(np.mean([r.adds for r in reports])),
        "acc@0.1d": accuracy_at_threshold(reports, use_adds_for_symmetric),
        "symmetric": bool(reports[0].symmetric),
        "rot_err_mean": float(np.mean([r.rotation_error for r in reports])),
        "trans_err_mean": float(np.mean([r.translation_error for r in reports])),
    }


def focal_loss(prob_true_class, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """mean(-alpha * (1 - p)^gamma * ln p)."""
    p = np.asarray(prob_true_class, dtype=np.float64).reshape(-1)
    if len(p) == 0:
        raise EmptyDataError("focal loss of an empty batch")
    if np.any(p <= 0) or np.any(p > 1):
        raise InputError("probabilities must lie in (0, 1]")
    return float(np.mean(-alpha * (1.0 - p) ** gamma * np.log(p)))


def segmentation_focal_loss(class_probs, labels, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Focal loss over per-point class probabilities (M x C) and integer labels."""
    probs = np.asarray(class_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise InputError("class_probs must be M x C with one label per row")
    return focal_loss(probs[np.arange(len(labels)), labels], alpha, gamma)


def l1_offset_loss(pred_offsets, gt_offsets, object_mask) -> float:
    """Mean absolute component error over masked points, keypoints and xyz."""
    pred = np.asarray(pred_offsets, dtype=np.float64)
    gt = np.asarray(gt_offsets, dtype=np.float64)
    mask = np.asarray(object_mask, dtype=bool).reshape(-1)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[0] != len(mask):
        raise InputError(f"offset shapes {pred.shape} / {gt.shape} and mask {mask.shape} do not align")
    if not np.any(mask):
        raise EmptyDataError("object mask selects no points")
    return float(np.abs(pred[mask] - gt[mask]).mean())


def joint_loss(seg_loss: float, kp_loss: float, w_seg: float = 1.0, w_kp: float = 1.0) -> float:
    if w_seg < 0 or w_kp < 0:
        raise InputError("loss weights must be non-negative")
    return w_seg * seg_loss + w_kp * kp_loss
