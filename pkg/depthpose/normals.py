"""
Surface normals from organized depth and the normal-vector-angles image.

Each valid pixel of the angle image holds the angles between its surface
normal and the camera X, Y and Z axes, mapped linearly from [0, pi] to
[0, 255]. Normals are estimated on raw depth (no hole filling or smoothing).
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import DepthImage, lift_depth_to_grid

logger = logging.getLogger("depthpose.normals")

DISCONTINUITY_RATIO = 0.02
UNIT_TOL = 1e-4


@dataclass(frozen=True)
class NormalMap:
    normals: np.ndarray  # H x W x 3, zero where invalid
    valid: np.ndarray    # H x W bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass(frozen=True)
class AngleImage:
    channels: np.ndarray  # H x W x 3 uint8, (0, 0, 0) where invalid
    valid: np.ndarray

    @property
    def mask(self) -> np.ndarray:
        """8-bit mask, 255 = valid."""
        return np.where(self.valid, 255, 0).astype(np.uint8)


def compute_normals(depth: DepthImage, discontinuity: float = DISCONTINUITY_RATIO) -> NormalMap:
    """
    Central-difference normals: N = (P(u+1)-P(u-1)) x (P(v+1)-P(v-1)),
    normalized and flipped to face the camera. A pixel needs its own depth,
    all four axis neighbours, and no neighbour deviating from its depth by
    more than `discontinuity` of it.
    """
    h, w = depth.data.shape
    normals = np.zeros((h, w, 3))
    valid = np.zeros((h, w), dtype=bool)
    if h < 3 or w < 3:
        return NormalMap(normals, valid)

    grid = lift_depth_to_grid(depth)
    z = grid[..., 2]
    center = grid[1:-1, 1:-1]
    zc = z[1:-1, 1:-1]
    neighbours = (z[1:-1, 2:], z[1:-1, :-2], z[2:, 1:-1], z[:-2, 1:-1])

    with np.errstate(invalid="ignore"):
        ok = np.isfinite(zc)
        for zn in neighbours:
            ok &= np.isfinite(zn) & (np.abs(zn - zc) <= discontinuity * zc)

        du = grid[1:-1, 2:] - grid[1:-1, :-2]
        dv = grid[2:, 1:-1] - grid[:-2, 1:-1]
        n = np.cross(du, dv)
        norm = np.linalg.norm(n, axis=2)
        ok &= np.isfinite(norm) & (norm > 0)

    n = np.where(ok[..., None], n, 0.0)
    n[ok] /= norm[ok][:, None]
    facing_away = np.einsum("ijk,ijk->ij", n, np.nan_to_num(center)) > 0
    n[facing_away] *= -1.0

    normals[1:-1, 1:-1] = n
    valid[1:-1, 1:-1] = ok
    logger.debug(f"normals: {int(valid.sum())}/{h * w} valid pixels")
    return NormalMap(normals, valid)


def angles_from_normals(normals: np.ndarray) -> np.ndarray:
    """(a_x, a_y, a_z) = arccos of N against each camera axis, in [0, pi]."""
    return np.arccos(np.clip(np.asarray(normals, dtype=np.float64), -1.0, 1.0))


def quantize_angles(angles: np.ndarray) -> np.ndarray:
    """round(a * 255 / pi), halves away from zero, clamped to [0, 255]."""
    levels = np.floor(np.asarray(angles) / np.pi * 255.0 + 0.5)
    return np.clip(levels, 0, 255).astype(np.uint8)


def generate_angle_image(normals: NormalMap) -> AngleImage:
    valid = normals.valid
    n = normals.normals[valid]
    if len(n):
        deviation = np.abs(np.linalg.norm(n, axis=1) - 1.0).max()
        if deviation > UNIT_TOL:
            raise DomainError(f"non-unit normal (|N| off by {deviation:.2e})")
    channels = np.zeros(valid.shape + (3,), dtype=np.uint8)
    channels[valid] = quantize_angles(angles_from_normals(n))
    return AngleImage(channels, valid.copy())


def depth_to_angle_image(depth: DepthImage) -> AngleImage:
    return generate_angle_image(compute_normals(depth))


def normals_to_image(normals: NormalMap) -> np.ndarray:
    """RGB visualization, (N + 1) / 2 mapped to 0..255; invalid pixels black."""
    img = np.floor((normals.normals + 1.0) * 0.5 * 255.0 + 0.5)
    img[~normals.valid] = 0
    return np.clip(img, 0, 255).astype(np.uint8)


def plane_normal_by_covariance(points: np.ndarray) -> np.ndarray:
    """Least-squares plane normal (smallest-eigenvalue eigenvector), camera facing."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, 0]
    if np.dot(n, centroid) > 0:
        n = -n
    return n / np.linalg.norm(n)
