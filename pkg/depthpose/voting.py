"""
Keypoint voting, Gaussian mean-shift and least-squares rigid fitting.

Every object point votes for every keypoint with point + offset (camera
frame). Each keypoint's votes are reduced to their densest mode, and the
pose is the rigid transform best aligning model keypoints to voted ones.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import DegenerateFitError, InputError, MissingVotesError, ObjectNotFoundError
from .geometry import PointCloud, RigidPose, transform_points
from .keypoints import KeypointSet
from .seeding import STREAM_MEANSHIFT, make_rng

logger = logging.getLogger("depthpose.voting")

OBJECT_LABEL = 1
BACKGROUND_LABEL = 0

MAX_SEEDS = 500
MAX_ITERATIONS = 300
CONVERGENCE_STEP = 1e-6
DEGENERATE_RATIO = 1e-12
KERNEL_CUTOFF = 4.0
SEED_CELL = 0.25
_SEED_CHUNK = 256


@dataclass(frozen=True)
class OffsetPrediction:
    """Per-point offsets to each keypoint plus a class label (and optional confidence)."""
    points: np.ndarray             # M x 3
    offsets: np.ndarray            # M x N x 3
    labels: np.ndarray             # M
    confidences: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if offsets.ndim != 3 or offsets.shape[0] != len(pts) or offsets.shape[2] != 3:
            raise InputError(f"offsets must be M x N x 3 for M={len(pts)}, got {offsets.shape}")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(labels) != len(pts):
            raise InputError("labels length differs from points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "labels", labels)
        if self.confidences is not None:
            conf = np.asarray(self.confidences, dtype=np.float64).reshape(-1)
            if len(conf) != len(pts) or np.any((conf < 0) | (conf > 1)):
                raise InputError("confidences must be one value in [0, 1] per point")
            object.__setattr__(self, "confidences", conf)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_keypoints(self) -> int:
        return self.offsets.shape[1]

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.points, labels=self.labels)

    def take(self, index: np.ndarray) -> "OffsetPrediction":
        return OffsetPrediction(
            self.points[index],
            self.offsets[index],
            self.labels[index],
            None if self.confidences is None else self.confidences[index],
        )


@dataclass(frozen=True)
class VoteSet:
    votes: np.ndarray                 # N x m x 3, NaN rows are abstentions
    weights: np.ndarray | None = None  # m

    @property
    def n_keypoints(self) -> int:
        return self.votes.shape[0]

    def for_keypoint(self, k: int) -> tuple[np.ndarray, np.ndarray | None]:
        votes = self.votes[k]
        keep = np.all(np.isfinite(votes), axis=1)
        weights = None if self.weights is None else self.weights[keep]
        return votes[keep], weights


@dataclass(frozen=True)
class VotedKeypoints:
    positions: np.ndarray
    support_counts: np.ndarray
    inlier_fraction: np.ndarray
    vote_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    residual_rms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "residual_rms": self.residual_rms,
            "keypoints_cam": self.positions.tolist(),
            "support_counts": self.support_counts.tolist(),
            "inlier_fraction": self.inlier_fraction.tolist(),
            "vote_counts": self.vote_counts.tolist(),
            "iterations": self.iterations.tolist(),
        }


@dataclass(frozen=True)
class MeanShiftResult:
    mode: np.ndarray
    support: int
    n_votes: int
    iterations: int
    n_modes: int


def cast_votes(cloud: PointCloud, preds: OffsetPrediction, target_label: int = OBJECT_LABEL) -> VoteSet:
    """Votes point + offset_k from every point labelled target_label."""
    if len(cloud) != len(preds):
        raise InputError(f"cloud has {len(cloud)} points but predictions cover {len(preds)}")
    selected = preds.labels == target_label
    if not np.any(selected):
        raise ObjectNotFoundError(f"no points labelled {target_label}")
    pts = cloud.points[selected]
    votes = pts[None, :, :] + np.transpose(preds.offsets[selected], (1, 0, 2))
    weights = None if preds.confidences is None else preds.confidences[selected]
    logger.debug(f"cast {votes.shape[1]} votes for {votes.shape[0]} keypoints")
    return VoteSet(votes, weights)


def _shift(seeds: np.ndarray, votes: np.ndarray, weights: np.ndarray, bandwidth: float) -> np.ndarray:
    """One Gaussian mean-shift step; the kernel is cut off at KERNEL_CUTOFF bandwidths."""
    out = seeds.copy()
    for start in range(0, len(seeds), _SEED_CHUNK):
        chunk = seeds[start:start + _SEED_CHUNK]
        d2 = cdist(chunk, votes, "sqeuclidean")
        k = np.where(d2 <= (KERNEL_CUTOFF * bandwidth) ** 2, np.exp(-d2 / (2.0 * bandwidth * bandwidth)), 0.0)
        k *= weights[None, :]
        den = k.sum(axis=1)
        moved = den > 0
        out[start:start + _SEED_CHUNK][moved] = (k[moved] @ votes) / den[moved, None]
    return out


def _thin_seeds(seeds: np.ndarray, bandwidth: float) -> np.ndarray:
    """Keep the first seed per grid cell of side bandwidth * SEED_CELL."""
    cells = np.floor(seeds / (bandwidth * SEED_CELL)).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    return seeds[np.sort(first)]


def mean_shift_modes(votes, bandwidth: float, weights=None, seed: int = 0,
                     max_seeds: int = MAX_SEEDS) -> MeanShiftResult:
    """
    Gaussian-kernel mean shift. Identical votes are merged with their
    multiplicity as weight and processed in lexicographic order, so the
    result does not depend on the input order. Seeds sharing a grid cell a
    quarter bandwidth wide are started once.
    """
    v = np.asarray(votes, dtype=np.float64).reshape(-1, 3)
    if len(v) == 0:
        raise InputError("mean shift needs at least one vote")
    if bandwidth <= 0:
        raise InputError(f"bandwidth must be positive, got {bandwidth}")
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)

    unique, inverse = np.unique(v, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse, minlength=len(unique))
    uw = np.bincount(inverse, weights=w, minlength=len(unique))
    if not np.any(uw > 0):
        uw = counts.astype(np.float64)

    if len(unique) > max_seeds:
        rng = make_rng(seed, STREAM_MEANSHIFT)
        seeds = unique[np.sort(rng.choice(len(unique), size=max_seeds, replace=False))]
    else:
        seeds = unique.copy()
    seeds = _thin_seeds(seeds, bandwidth)

    tree = cKDTree(unique)
    active = np.ones(len(seeds), dtype=bool)
    iterations = 0
    while iterations < MAX_ITERATIONS and np.any(active):
        iterations += 1
        moved = _shift(seeds[active], unique, uw, bandwidth)
        step = np.linalg.norm(moved - seeds[active], axis=1)
        seeds[active] = moved
        still = np.flatnonzero(active)[step >= CONVERGENCE_STEP]
        active[:] = False
        active[still] = True

    support = np.array([int(counts[idx].sum()) for idx in tree.query_ball_point(seeds, bandwidth)])
    order = np.argsort(-support, kind="stable")
    kept: list[int] = []
    for i in order:
        if all(np.linalg.norm(seeds[i] - seeds[j]) >= bandwidth / 2.0 for j in kept):
            kept.append(int(i))
    best = kept[0]
    return MeanShiftResult(seeds[best].copy(), int(support[best]), int(len(v)), iterations, len(kept))


def mean_shift(votes, bandwidth: float, weights=None, seed: int = 0) -> tuple[np.ndarray, int]:
    """Densest mode of the votes and the number of votes within bandwidth of it."""
    result = mean_shift_modes(votes, bandwidth, weights=weights, seed=seed)
    return result.mode, result.support


def arun_fit(model_pts, camera_pts) -> RigidPose:
    """
    Least-squares R, T with c_i ~ R p_i + T (SVD of the cross-covariance).
    A reflection is repaired by flipping the smallest singular direction.
    """
    P = np.asarray(model_pts, dtype=np.float64).reshape(-1, 3)
    C = np.asarray(camera_pts, dtype=np.float64).reshape(-1, 3)
    if len(P) != len(C):
        raise InputError(f"{len(P)} model points vs {len(C)} camera points")
    if len(P) < 3:
        raise DegenerateFitError(f"need at least 3 correspondences, got {len(P)}")

    p_mean = P.mean(axis=0)
    c_mean = C.mean(axis=0)
    H = (P - p_mean).T @ (C - c_mean)
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 0 or (S[1] < DEGENERATE_RATIO * S[0] and S[2] < DEGENERATE_RATIO * S[0]):
        raise DegenerateFitError("correspondences are collinear; rotation is ambiguous")

    R = Vt.T @ U.T
    if np.linalg.det(R) < 0:
        Vt[2, :] *= -1
        R = Vt.T @ U.T
    T = c_mean - R @ p_mean
    return RigidPose(R, T)


def fit_residual(model_pts, camera_pts, pose: RigidPose) -> float:
    """Squared loss sum_i |c_i - (R p_i + T)|^2."""
    diff = np.asarray(camera_pts, dtype=np.float64).reshape(-1, 3) - transform_points(model_pts, pose)
    return float(np.sum(diff * diff))


def estimate_pose(cloud: PointCloud, preds: OffsetPrediction, keypoints: KeypointSet,
                  target_label: int = OBJECT_LABEL, bandwidth: float = 0.005,
                  seed: int = 0) -> tuple[RigidPose, VotedKeypoints]:
    if preds.n_keypoints != len(keypoints):
        raise InputError(f"predictions cover {preds.n_keypoints} keypoints, keypoint set has {len(keypoints)}")
    vote_set = cast_votes(cloud, preds, target_label)

    positions = np.zeros((len(keypoints), 3))
    support = np.zeros(len(keypoints), dtype=np.int64)
    counts = np.zeros(len(keypoints), dtype=np.int64)
    iterations = np.zeros(len(keypoints), dtype=np.int64)
    missing = []
    for k in range(len(keypoints)):
        votes, weights = vote_set.for_keypoint(k)
        if len(votes) == 0:
            missing.append(k)
            continue
        result = mean_shift_modes(votes, bandwidth, weights=weights, seed=seed + k)
        positions[k] = result.mode
        support[k] = result.support
        counts[k] = result.n_votes
        iterations[k] = result.iterations
    if missing:
        raise MissingVotesError(missing)

    pose = arun_fit(keypoints.points, positions)
    rms = float(np.sqrt(fit_residual(keypoints.points, positions, pose) / len(keypoints)))
    voted = VotedKeypoints(
        positions=positions,
        support_counts=support,
        inlier_fraction=support / np.maximum(counts, 1),
        vote_counts=counts,
        iterations=iterations,
        residual_rms=rms,
    )
    logger.debug(f"pose fitted from {len(keypoints)} keypoints, residual rms={rms:.3e} m")
    return pose, voted
