"""
Synthetic scenes and an oracle predictor standing in for trained networks.

render_depth ray-casts a posed mesh through every pixel center, occlude_scene
cuts a seeded strip out of the object silhouette, and the oracle turns the
ground truth into noisy per-point offsets and flippable labels.
"""
import logging
from dataclasses import dataclass, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import EmptyDataError, InputError
from .geometry import (
    CameraIntrinsics,
    DepthImage,
    PointCloud,
    RigidPose,
    TriangleMesh,
    lift_depth_to_points,
    project_points,
    subsample_indices,
    transform_points,
)
from .keypoints import KeypointSet
from .seeding import STREAM_FLIP, STREAM_NOISE, STREAM_OCCLUSION, make_rng
from .voting import BACKGROUND_LABEL, OBJECT_LABEL, OffsetPrediction

logger = logging.getLogger("depthpose.synth")

_RAY_FACE_BUDGET = 2_000_000
_PARALLEL_EPS = 1e-12
_UINT16_MAX = np.iinfo(np.uint16).max


class OracleConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    offset_noise_sigma: float = Field(0.0, ge=0.0)
    label_flip_rate: float = Field(0.0, ge=0.0, le=1.0)
    occlusion_fraction: float = Field(0.0, ge=0.0, lt=1.0)
    seed: int = Field(0, ge=0)


@dataclass(frozen=True)
class SyntheticScene:
    depth: DepthImage
    gt_pose: RigidPose
    gt_mask: np.ndarray
    gt_keypoints_cam: np.ndarray
    mesh_id: str = "mesh"
    seed: int = 0

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.depth.intrinsics

    @property
    def object_pixels(self) -> int:
        return int(self.gt_mask.sum())


def _pixel_rays(k: CameraIntrinsics, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Ray directions with unit z through the given pixel centers."""
    return np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones(len(us))], axis=1)


def _silhouette_window(vertices: np.ndarray, k: CameraIntrinsics) -> tuple[int, int, int, int]:
    """Pixel bounds that can contain hits; whole image if any vertex is behind the camera."""
    if np.any(vertices[:, 2] <= 0):
        return 0, k.width, 0, k.height
    uv = project_points(vertices, k)
    u0 = int(np.clip(np.floor(uv[:, 0].min()) - 1, 0, k.width))
    u1 = int(np.clip(np.ceil(uv[:, 0].max()) + 2, 0, k.width))
    v0 = int(np.clip(np.floor(uv[:, 1].min()) - 1, 0, k.height))
    v1 = int(np.clip(np.ceil(uv[:, 1].max()) + 2, 0, k.height))
    return u0, u1, v0, v1


def ray_cast_depth(triangles: np.ndarray, rays: np.ndarray) -> np.ndarray:
    """
    Nearest hit z per ray (rays from the origin with unit z), inf on miss.
    Möller-Trumbore over all ray/triangle pairs, chunked over rays.
    """
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    tvec = -v0
    q = np.cross(tvec, e1)              # F x 3, ray independent
    t_num = np.einsum("fk,fk->f", e2, q)

    depth = np.full(len(rays), np.inf)
    chunk = max(1, _RAY_FACE_BUDGET // max(1, len(triangles)))
    for start in range(0, len(rays), chunk):
        d = rays[start:start + chunk]
        p = np.cross(d[:, None, :], e2[None, :, :])                 # R x F x 3
        det = np.einsum("fk,rfk->rf", e1, p)
        ok = np.abs(det) > _PARALLEL_EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        bu = np.einsum("fk,rfk->rf", tvec, p) * inv
        bv = np.einsum("rk,fk->rf", d, q) * inv
        t = t_num[None, :] * inv
        hit = ok & (bu >= 0) & (bv >= 0) & (bu + bv <= 1) & (t > 0)
        depth[start:start + chunk] = np.where(hit, t, np.inf).min(axis=1)
    return depth


def render_depth(mesh: TriangleMesh, pose: RigidPose, k: CameraIntrinsics,
                 keypoints: KeypointSet | None = None, background_z: float | None = None,
                 seed: int = 0) -> SyntheticScene:
    """
    Depth render of the posed mesh; z is quantized to raw sensor units.
    With background_z a fronto-parallel wall fills the pixels the object misses.
    """
    if len(mesh.faces) == 0:
        raise EmptyDataError(f"mesh {mesh.name} has no faces")
    verts = transform_points(mesh.vertices, pose)
    if not np.any(verts[:, 2] > 0):
        raise EmptyDataError("mesh lies entirely behind the camera")

    u0, u1, v0, v1 = _silhouette_window(verts, k)
    vs, us = np.mgrid[v0:v1, u0:u1]
    us, vs = us.reshape(-1), vs.reshape(-1)
    z = ray_cast_depth(verts[mesh.faces], _pixel_rays(k, us.astype(np.float64), vs.astype(np.float64)))

    raw_obj = np.floor(z / k.depth_scale + 0.5)
    hit = np.isfinite(z) & (raw_obj >= 1) & (raw_obj <= _UINT16_MAX)
    if background_z is not None:
        hit &= z < background_z
    if not np.any(hit):
        raise EmptyDataError("object does not cover any pixel (out of frame)")

    data = np.zeros((k.height, k.width), dtype=np.uint16)
    mask = np.zeros((k.height, k.width), dtype=bool)
    if background_z is not None:
        data[:, :] = int(np.clip(np.floor(background_z / k.depth_scale + 0.5), 0, _UINT16_MAX))
    data[vs[hit], us[hit]] = raw_obj[hit].astype(np.uint16)
    mask[vs[hit], us[hit]] = True

    kps_cam = np.zeros((0, 3)) if keypoints is None else transform_points(keypoints.points, pose)
    logger.debug(f"rendered {mesh.name}: {int(mask.sum())} object pixels")
    return SyntheticScene(DepthImage(data, k), pose, mask, kps_cam, mesh.name, seed)


def occlude_scene(scene: SyntheticScene, fraction: float, seed: int) -> SyntheticScene:
    """
    Remove round(fraction * n) object pixels as an axis-aligned strip swept in
    from a seeded side of the silhouette. Removed pixels lose their depth.
    The side choice does not depend on fraction, so larger fractions remove
    supersets of smaller ones.
    """
    if not 0.0 <= fraction < 1.0:
        raise InputError(f"occlusion fraction must be in [0, 1), got {fraction}")
    rng = make_rng(seed, STREAM_OCCLUSION)
    axis = int(rng.integers(2))
    from_far_side = bool(rng.integers(2))
    if fraction == 0.0:
        return scene

    vs, us = np.nonzero(scene.gt_mask)
    n_remove = int(np.floor(fraction * len(vs) + 0.5))
    if n_remove >= len(vs):
        raise EmptyDataError("occlusion removes every object pixel")
    primary, secondary = (us, vs) if axis == 0 else (vs, us)
    if from_far_side:
        primary, secondary = -primary, -secondary
    order = np.lexsort((secondary, primary))
    gone = order[:n_remove]

    data = scene.depth.data.copy()
    mask = scene.gt_mask.copy()
    data[vs[gone], us[gone]] = 0
    mask[vs[gone], us[gone]] = False
    return replace(scene, depth=DepthImage(data, scene.intrinsics), gt_mask=mask)


def label_cloud(scene: SyntheticScene, cloud: PointCloud) -> PointCloud:
    """Attach ground-truth labels (object/background) from the scene mask."""
    u, v = cloud.source_pixels[:, 0], cloud.source_pixels[:, 1]
    labels = np.where(scene.gt_mask[v, u], OBJECT_LABEL, BACKGROUND_LABEL)
    return PointCloud(cloud.points, cloud.source_pixels, labels)


def predict_offsets(scene: SyntheticScene, cloud: PointCloud, keypoints: KeypointSet,
                    cfg: OracleConfig) -> OffsetPrediction:
    """Ground-truth offsets plus Gaussian noise; object labels flipped at the configured rate."""
    if cloud.labels is None:
        cloud = label_cloud(scene, cloud)
    kps_cam = transform_points(keypoints.points, scene.gt_pose)
    offsets = kps_cam[None, :, :] - cloud.points[:, None, :]
    if cfg.offset_noise_sigma > 0:
        noise_rng = make_rng(cfg.seed, STREAM_NOISE)
        offsets = offsets + noise_rng.normal(0.0, cfg.offset_noise_sigma, size=offsets.shape)

    labels = cloud.labels.copy()
    if cfg.label_flip_rate > 0:
        flip_rng = make_rng(cfg.seed, STREAM_FLIP)
        flips = flip_rng.random(len(labels)) < cfg.label_flip_rate
        labels[flips & (labels == OBJECT_LABEL)] = BACKGROUND_LABEL
    return OffsetPrediction(cloud.points, offsets, labels)


def oracle_predict(scene: SyntheticScene, keypoints: KeypointSet, cfg: OracleConfig,
                   n_points: int | None = None) -> OffsetPrediction:
    """
    Occlude, lift and predict once per surviving pixel. With n_points the
    predictions are resampled afterwards, so repeated pixels share their
    noise and flips.
    """
    occluded = occlude_scene(scene, cfg.occlusion_fraction, cfg.seed)
    cloud = label_cloud(occluded, lift_depth_to_points(occluded.depth))
    preds = predict_offsets(occluded, cloud, keypoints, cfg)
    if n_points is None:
        return preds
    return preds.take(subsample_indices(len(preds), n_points, cfg.seed))
