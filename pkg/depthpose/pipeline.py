"""
End-to-end runs: render -> occlude -> lift -> oracle offsets -> resample ->
voting + fit -> ADD/ADD-S, with the angle image and a pose overlay as side
artifacts, plus seeded batches of such runs and the noise x occlusion
robustness sweep.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from tqdm import tqdm

from . import formats, report
from .config import RunConfig
from .geometry import CameraIntrinsics, PointCloud, RigidPose, TriangleMesh, random_pose
from .keypoints import KeypointSet, select_keypoints
from .logs import stage
from .meshes import resolve_mesh
from .metrics import PoseErrorReport, evaluate_pose
from .normals import AngleImage, depth_to_angle_image
from .seeding import STREAM_POSE, STREAM_SCENES, make_rng
from .synth import OracleConfig, SyntheticScene, occlude_scene, oracle_predict, render_depth
from .voting import OBJECT_LABEL, OffsetPrediction, estimate_pose

logger = logging.getLogger("depthpose.pipeline")

DEFAULT_SIGMAS = (0.001, 0.005, 0.01)
DEFAULT_OCCLUSIONS = (0.0, 0.3)


@dataclass(frozen=True)
class Frame:
    """One simulated observation: the occluded scene, its angle image and the oracle output."""
    scene: SyntheticScene
    angles: AngleImage
    preds: OffsetPrediction

    @property
    def cloud(self) -> PointCloud:
        return self.preds.cloud


def simulate_frame(mesh: TriangleMesh, gt_pose: RigidPose, keypoints: KeypointSet, cfg: OracleConfig,
                   intrinsics: CameraIntrinsics, n_points: int = 12288,
                   background_z: float | None = None) -> Frame:
    with stage("render", mesh=mesh.name, seed=cfg.seed) as info:
        scene = render_depth(mesh, gt_pose, intrinsics, keypoints, background_z, seed=cfg.seed)
        info["object_pixels"] = scene.object_pixels
    with stage("predict", sigma=cfg.offset_noise_sigma, flips=cfg.label_flip_rate,
               occlusion=cfg.occlusion_fraction) as info:
        preds = oracle_predict(scene, keypoints, cfg, n_points)
        info["points"] = len(preds)
    # same seeded cut the oracle applied, kept for the artifacts
    scene = occlude_scene(scene, cfg.occlusion_fraction, cfg.seed)
    with stage("angles") as info:
        angles = depth_to_angle_image(scene.depth)
        info["valid"] = int(angles.valid.sum())
    return Frame(scene, angles, preds)


def write_frame(out_dir: str | Path, frame: Frame, keypoints: KeypointSet):
    """Scene bundle plus the angle image and its validity mask."""
    out = Path(out_dir)
    formats.write_bundle(out, frame.scene, keypoints, frame.preds)
    formats.write_rgb(out / "angles.png", frame.angles.channels)
    formats.write_mask(formats.mask_path_for(out / "angles.png"), frame.angles.valid)


def run_e2e(mesh: TriangleMesh, gt_pose: RigidPose, keypoints: KeypointSet, cfg: OracleConfig,
            bandwidth: float, intrinsics: CameraIntrinsics, n_points: int = 12288,
            symmetric: bool = False, background_z: float | None = None,
            artifact_dir: str | Path | None = None, accelerate: bool = False) -> PoseErrorReport:
    frame = simulate_frame(mesh, gt_pose, keypoints, cfg, intrinsics, n_points, background_z)
    with stage("estimate", bandwidth=bandwidth) as info:
        pose, voted = estimate_pose(frame.cloud, frame.preds, keypoints, OBJECT_LABEL, bandwidth, seed=cfg.seed)
        info["min_support"] = int(voted.support_counts.min())
    with stage("metrics") as info:
        result = evaluate_pose(mesh, pose, gt_pose, symmetric=symmetric, accelerate=accelerate)
        info["add"] = result.add
        info["adds"] = result.adds

    if artifact_dir is not None:
        out = Path(artifact_dir)
        write_frame(out, frame, keypoints)
        formats.write_pose(out / "pose.json", pose, {"voting": voted.to_dict(), "report": result.to_dict()})
        overlay = report.draw_pose_overlay(frame.angles.channels, intrinsics, mesh.vertices, pose, voted.positions)
        formats.write_rgb(out / "overlay.png", overlay)
    return result


@dataclass(frozen=True)
class Trial:
    mesh: str
    seed: int
    sigma_rel: float
    occlusion: float


@lru_cache(maxsize=16)
def _object_model(mesh_source: str, size: float, scale: float, n_keypoints: int,
                  add_center: bool) -> tuple[TriangleMesh, KeypointSet]:
    mesh = resolve_mesh(mesh_source, size, scale)
    return mesh, select_keypoints(mesh, n_keypoints, add_center)


def trial_pose(seed: int, z_range=(0.45, 0.6)) -> RigidPose:
    return random_pose(make_rng(seed, STREAM_POSE), z_range=tuple(z_range))


def run_trial(cfg: RunConfig, trial: Trial, artifact_dir: str | Path | None = None) -> dict:
    """One seeded e2e run; returns a flat result row."""
    mesh, keypoints = object_model(cfg.model_copy(update={"mesh": trial.mesh}))
    gt_pose = trial_pose(trial.seed, cfg.z_range)
    oracle = OracleConfig(
        offset_noise_sigma=trial.sigma_rel * mesh.diameter,
        label_flip_rate=cfg.label_flip_rate,
        occlusion_fraction=trial.occlusion,
        seed=trial.seed,
    )
    symmetric = cfg.symmetric or trial.mesh in cfg.symmetric_objects
    result = run_e2e(
        mesh, gt_pose, keypoints, oracle,
        bandwidth=cfg.bandwidth_rel * mesh.diameter,
        intrinsics=cfg.intrinsics(),
        n_points=cfg.n_points,
        symmetric=symmetric,
        background_z=cfg.background_z,
        artifact_dir=artifact_dir,
        accelerate=cfg.adds_accelerate,
    )
    return {
        "mesh": trial.mesh,
        "seed": trial.seed,
        "sigma_rel": trial.sigma_rel,
        "occlusion": trial.occlusion,
        "diameter": mesh.diameter,
        **result.to_dict(),
    }


def _run_trial_job(job: tuple[dict, Trial]) -> dict:
    cfg_payload, trial = job
    return run_trial(RunConfig.model_validate(cfg_payload), trial)


def run_trials(cfg: RunConfig, trials: list[Trial], workers: int = 1, progress: bool = False) -> list[dict]:
    """Run trials, fanned out over processes when workers > 1; rows keep trial order."""
    jobs = [(cfg.model_dump(), t) for t in trials]
    if workers <= 1:
        rows = [_run_trial_job(job) for job in tqdm(jobs, disable=not progress, desc="trials")]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(tqdm(pool.map(_run_trial_job, jobs), total=len(jobs), disable=not progress, desc="trials"))
    return rows


def summarize_cell(rows: list[dict]) -> dict:
    errors = np.array([r["adds"] if r["symmetric"] else r["add"] for r in rows])
    diam = np.array([r["diameter"] for r in rows])
    hits = np.array([e < r["threshold"] for e, r in zip(errors, rows)])
    return {
        "n": len(rows),
        "acc@0.1d": float(hits.mean()),
        "err_rel_mean": float(np.mean(errors / diam)),
        "err_rel_median": float(np.median(errors / diam)),
        "err_rel_p90": float(np.percentile(errors / diam, 90)),
        "err_rel_max": float(np.max(errors / diam)),
    }


def sweep_robustness(cfg: RunConfig, meshes=("lbracket",), sigmas=DEFAULT_SIGMAS,
                     occlusions=DEFAULT_OCCLUSIONS, n_seeds: int = 50, workers: int = 1,
                     progress: bool = False) -> list[dict]:
    """
    acc@0.1d per (mesh, sigma, occlusion) cell over n_seeds seeded poses.
    Every cell reuses the same seeds, so cells differ only in noise and occlusion.
    """
    seeds = [cfg.seed + i for i in range(n_seeds)]
    cells = [(m, s, o) for m in meshes for s in sigmas for o in occlusions]
    trials = [Trial(m, seed, s, o) for (m, s, o) in cells for seed in seeds]
    rows = run_trials(cfg, trials, workers=workers, progress=progress)

    table = []
    for i, (m, s, o) in enumerate(cells):
        cell_rows = rows[i * n_seeds:(i + 1) * n_seeds]
        table.append({"mesh": m, "sigma_rel": s, "occlusion": o, **summarize_cell(cell_rows)})
        logger.info(f"sweep cell mesh={m} sigma_rel={s} occlusion={o} acc={table[-1]['acc@0.1d']:.3f}")
    return table


def object_model(cfg: RunConfig) -> tuple[TriangleMesh, KeypointSet]:
    """Mesh and keypoints named by the config (cached per process)."""
    return _object_model(cfg.mesh, cfg.mesh_size, cfg.mesh_scale, cfg.n_keypoints, cfg.add_center)


def scene_seeds(master_seed: int, n: int) -> list[int]:
    """n distinct per-scene seeds derived from one master seed."""
    rng = make_rng(master_seed, STREAM_SCENES)
    return [int(s) for s in rng.choice(2**31 - 1, size=n, replace=False)]


def oracle_config(cfg: RunConfig, diameter: float, seed: int) -> OracleConfig:
    return OracleConfig(
        offset_noise_sigma=cfg.offset_noise_sigma_rel * diameter,
        label_flip_rate=cfg.label_flip_rate,
        occlusion_fraction=cfg.occlusion_fraction,
        seed=seed,
    )
