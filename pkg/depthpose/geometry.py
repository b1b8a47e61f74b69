"""
Camera model, rigid transforms and depth -> point cloud lifting.

Conventions: the camera looks down +z with x to the right and y down. An
integer pixel (u, v) samples the ray through (u - cx, v - cy); there is no
half-pixel offset.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from .errors import DomainError, EmptyDataError, InputError
from .seeding import STREAM_SUBSAMPLE, make_rng

logger = logging.getLogger("depthpose.geometry")

ORTHONORMAL_TOL = 1e-9

# LineMod's published Kinect intrinsics at 640x480.
LINEMOD_K = (572.4114, 573.57043, 325.2611, 242.04899)


class CameraIntrinsics(BaseModel):
    model_config = ConfigDict(frozen=True)

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 0.001

    @model_validator(mode="after")
    def _check(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")
        return self

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def linemod_intrinsics(scale: float = 0.25, depth_scale: float = 0.001) -> CameraIntrinsics:
    """LineMod camera, optionally downscaled (0.25 -> 160x120, 0.5 -> 320x240)."""
    fx, fy, cx, cy = LINEMOD_K
    return CameraIntrinsics(
        fx=fx * scale, fy=fy * scale, cx=cx * scale, cy=cy * scale,
        width=int(round(640 * scale)), height=int(round(480 * scale)),
        depth_scale=depth_scale,
    )


@dataclass(frozen=True)
class DepthImage:
    """Raw 16-bit depth; 0 marks a missing measurement."""
    data: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InputError(f"depth must be a 2D grid, got shape {data.shape}")
        if data.shape != (self.intrinsics.height, self.intrinsics.width):
            raise InputError(
                f"depth shape {data.shape} does not match intrinsics "
                f"{self.intrinsics.height}x{self.intrinsics.width}"
            )
        if np.any(data < 0) or np.any(data > np.iinfo(np.uint16).max):
            raise InputError("depth values outside the unsigned 16-bit range")
        object.__setattr__(self, "data", data.astype(np.uint16, copy=False))

    @property
    def valid(self) -> np.ndarray:
        return self.data > 0

    def meters(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.intrinsics.depth_scale


@dataclass(frozen=True)
class RigidPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        T = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(T))):
            raise InputError("pose contains non-finite values")
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL:
            raise InputError("rotation is a reflection (det != +1)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix, orthonormalize: bool = False) -> "RigidPose":
        """Build from a 4x4 (or 3x4) [R|t]; orthonormalize snaps R onto SO(3)."""
        m = np.asarray(matrix, dtype=np.float64)
        R, t = m[:3, :3], m[:3, 3]
        if orthonormalize:
            R = nearest_rotation(R)
        return cls(R, t)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self ∘ other: apply other first, then self."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidPose":
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def rotation_error(self, other: "RigidPose") -> float:
        """Geodesic angle in radians between the two rotations."""
        delta = self.rotation @ other.rotation.T
        return float(Rotation.from_matrix(delta).magnitude())

    def translation_error(self, other: "RigidPose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def to_dict(self) -> dict:
        return {"R": self.rotation.tolist(), "T": self.translation.tolist()}

    @classmethod
    def from_dict(cls, payload: dict, orthonormalize: bool = False) -> "RigidPose":
        try:
            R = np.asarray(payload["R"], dtype=np.float64).reshape(3, 3)
            T = np.asarray(payload["T"], dtype=np.float64).reshape(3)
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed pose record: {e}") from e
        if orthonormalize:
            R = nearest_rotation(R)
        return cls(R, T)


def nearest_rotation(matrix: np.ndarray) -> np.ndarray:
    """Closest proper rotation in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def random_pose(rng: np.random.Generator, z_range=(0.45, 0.6), xy_extent: float = 0.03) -> RigidPose:
    """Uniform random rotation; translation keeps the object near the optical axis."""
    R = Rotation.random(random_state=rng).as_matrix()
    t = np.array([
        rng.uniform(-xy_extent, xy_extent),
        rng.uniform(-xy_extent, xy_extent),
        rng.uniform(*z_range),
    ])
    return RigidPose(R, t)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    source_pixels: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.source_pixels is not None:
            px = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)
            if len(px) != len(pts):
                raise InputError("source_pixels length differs from points")
            object.__setattr__(self, "source_pixels", px)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(labels) != len(pts):
                raise InputError("labels length differs from points")
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.points)

    def take(self, index: np.ndarray) -> "PointCloud":
        return PointCloud(
            self.points[index],
            None if self.source_pixels is None else self.source_pixels[index],
            None if self.labels is None else self.labels[index],
        )


def mesh_diameter(vertices: np.ndarray) -> float:
    """Exact maximum pairwise distance; the farthest pair always lies on the hull."""
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        return 0.0
    candidates = pts
    if len(pts) > 64:
        try:
            candidates = pts[ConvexHull(pts).vertices]
        except Exception:
            # flat or degenerate input: fall back to all points
            candidates = pts
    return float(pdist(candidates).max())


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    diameter: float = -1.0
    name: str = "mesh"

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(verts)):
            raise InputError("mesh has non-finite vertices")
        if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
            raise InputError("face index out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        true_diameter = mesh_diameter(verts)
        if true_diameter <= 0:
            raise EmptyDataError(f"mesh {self.name} needs at least two distinct vertices")
        if self.diameter < 0:
            object.__setattr__(self, "diameter", true_diameter)
        elif abs(self.diameter - true_diameter) > 1e-9:
            raise InputError(f"mesh {self.name}: diameter {self.diameter} differs from vertex extent {true_diameter}")

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def triangles(self) -> np.ndarray:
        """(F, 3, 3) vertex coordinates per face."""
        return self.vertices[self.faces]


def lift_depth_to_points(depth: DepthImage) -> PointCloud:
    """Back-project every valid pixel, row-major scan order."""
    k = depth.intrinsics
    v, u = np.nonzero(depth.data > 0)
    z = depth.data[v, u].astype(np.float64) * k.depth_scale
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    points = np.stack([x, y, z], axis=1) if len(z) else np.zeros((0, 3))
    return PointCloud(points, source_pixels=np.stack([u, v], axis=1).reshape(-1, 2))


def lift_depth_to_grid(depth: DepthImage) -> np.ndarray:
    """Organized H x W x 3 cloud, NaN where depth is missing."""
    k = depth.intrinsics
    z = depth.meters()
    z[depth.data == 0] = np.nan
    u = np.arange(k.width, dtype=np.float64)[None, :]
    v = np.arange(k.height, dtype=np.float64)[:, None]
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    return np.stack([x, y, z], axis=2)


def project_point(p, k: CameraIntrinsics) -> tuple[float, float]:
    x, y, z = (float(c) for c in np.asarray(p, dtype=np.float64).reshape(3))
    if z <= 0:
        raise DomainError(f"cannot project point with z={z} <= 0")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy


def project_points(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if np.any(pts[:, 2] <= 0):
        raise DomainError("cannot project points with z <= 0")
    u = k.fx * pts[:, 0] / pts[:, 2] + k.cx
    v = k.fy * pts[:, 1] / pts[:, 2] + k.cy
    return np.stack([u, v], axis=1)


def transform_points(points, pose: RigidPose) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ pose.rotation.T + pose.translation


def subsample_indices(m: int, n: int, seed: int) -> np.ndarray:
    """
    Exactly n row indices into m rows: uniform without replacement when
    m >= n, otherwise every row once plus seeded repeats.
    """
    if n <= 0:
        raise InputError(f"sample size must be positive, got {n}")
    if m == 0:
        raise EmptyDataError("cannot subsample an empty point cloud")
    rng = make_rng(seed, STREAM_SUBSAMPLE)
    if m >= n:
        return rng.choice(m, size=n, replace=False)
    return np.concatenate([np.arange(m), rng.choice(m, size=n - m, replace=True)])


def subsample_points(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    index = subsample_indices(len(cloud), n, seed)
    logger.debug(f"subsampled {len(cloud)} -> {n} points")
    return cloud.take(index)
