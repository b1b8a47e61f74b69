import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .errors import EmptyDataError, InputError
from .geometry import TriangleMesh

logger = logging.getLogger("depthpose.keypoints")

DEFAULT_N_KEYPOINTS = 8


@dataclass(frozen=True)
class KeypointSet:
    """Voting targets in the object frame; the centroid, if any, comes last."""
    points: np.ndarray
    includes_center: bool = False
    object_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(pts) > 1 and pdist(pts).min() <= 0:
            raise InputError("keypoints must be pairwise distinct")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "n": len(self.points),
            "points": self.points.tolist(),
            "includes_center": self.includes_center,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "KeypointSet":
        try:
            points = np.asarray(payload["points"], dtype=np.float64).reshape(-1, 3)
            kps = cls(points, bool(payload.get("includes_center", False)), str(payload.get("object_id", "")))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed keypoint record: {e}") from e
        if "n" in payload and int(payload["n"]) != len(kps):
            raise InputError(f"keypoint count {len(kps)} does not match n={payload['n']}")
        return kps


def farthest_point_indices(candidates: np.ndarray, n: int) -> np.ndarray:
    """
    Greedy FPS starting from the candidate farthest from the centroid.
    Ties go to the smallest index (argmax returns the first maximum).
    """
    pts = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyDataError("no candidates for farthest point sampling")
    if n <= 0:
        raise InputError(f"keypoint count must be positive, got {n}")
    if n > len(pts):
        raise InputError(f"cannot pick {n} keypoints from {len(pts)} candidates")

    first = int(np.argmax(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
    chosen = [first]
    min_dist = np.linalg.norm(pts - pts[first], axis=1)
    while len(chosen) < n:
        idx = int(np.argmax(min_dist))
        if min_dist[idx] <= 0:
            raise InputError(f"only {len(chosen)} distinct candidates, cannot pick {n} keypoints")
        chosen.append(idx)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[idx], axis=1))
    return np.asarray(chosen, dtype=np.int64)


def farthest_point_sampling(candidates, n: int) -> KeypointSet:
    pts = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    return KeypointSet(pts[farthest_point_indices(pts, n)])


def select_keypoints(mesh: TriangleMesh, n: int = DEFAULT_N_KEYPOINTS, add_center: bool = True) -> KeypointSet:
    """FPS over mesh vertices, optionally followed by the vertex centroid."""
    kps = farthest_point_sampling(mesh.vertices, n)
    points = kps.points
    if add_center:
        points = np.vstack([points, mesh.centroid])
    logger.info(f"Selected {len(points)} keypoints on {mesh.name} (center={add_center})")
    return KeypointSet(points, includes_center=add_center, object_id=mesh.name)
