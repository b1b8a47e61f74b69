"""
Command-line front end.

Exit codes: 0 success, 2 input/parse error, 3 empty or degenerate data,
4 pipeline failure (object not found, keypoints without votes), 1 anything
unexpected. Results go to files or stdout; logs go to stderr.
"""
import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import formats, pipeline, report
from .config import RunConfig, load_config, save_config
from .errors import DepthPoseError, EmptyDataError, InputError
from .geometry import CameraIntrinsics, RigidPose, TriangleMesh, lift_depth_to_points
from .keypoints import select_keypoints
from .logs import setup_logging, stage
from .meshes import resolve_mesh
from .metrics import evaluate_pose, summarize_reports
from .normals import compute_normals, generate_angle_image, normals_to_image
from .synth import render_depth
from .voting import OBJECT_LABEL, estimate_pose

logger = logging.getLogger("depthpose.cli")


def _emit(payload):
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def _config(args, **overrides) -> RunConfig:
    overrides.setdefault("seed", getattr(args, "seed", None))
    overrides.setdefault("workers", getattr(args, "workers", None))
    overrides.setdefault("log_level", getattr(args, "log_level", None))
    overrides.setdefault("log_file", getattr(args, "log_file", None))
    cfg = load_config(getattr(args, "config", None), overrides)
    setup_logging(cfg.log_level, cfg.log_file)
    return cfg


def _depth_input(args):
    k = formats.read_intrinsics(args.intrinsics)
    return formats.read_depth(args.depth, k)


# ---------------- commands ----------------

def cmd_lift(args) -> int:
    depth = _depth_input(args)
    with stage("lift", depth=args.depth) as info:
        cloud = lift_depth_to_points(depth)
        info["points"] = len(cloud)
    if len(cloud) == 0:
        raise EmptyDataError(f"{args.depth} has no valid depth pixels")
    formats.write_ply(args.out, cloud)
    _emit({"points": len(cloud), "out": str(args.out)})
    return 0


def cmd_normals(args) -> int:
    depth = _depth_input(args)
    with stage("normals") as info:
        normals = compute_normals(depth)
        info["valid"] = int(normals.valid.sum())
    formats.write_rgb(args.out, normals_to_image(normals))
    formats.write_mask(formats.mask_path_for(args.out), normals.valid)
    _emit({"valid": int(normals.valid.sum()), "pixels": int(normals.valid.size), "out": str(args.out)})
    return 0


def cmd_angles(args) -> int:
    depth = _depth_input(args)
    with stage("angles") as info:
        angles = generate_angle_image(compute_normals(depth))
        info["valid"] = int(angles.valid.sum())
    formats.write_rgb(args.out, angles.channels)
    formats.write_mask(formats.mask_path_for(args.out), angles.valid)
    _emit({"valid": int(angles.valid.sum()), "pixels": int(angles.valid.size), "out": str(args.out)})
    return 0


def cmd_keypoints(args) -> int:
    cfg = _config(args, mesh=args.mesh, n_keypoints=args.n)
    add_center = cfg.add_center and not args.no_center
    mesh = resolve_mesh(cfg.mesh, cfg.mesh_size, cfg.mesh_scale)
    kps = select_keypoints(mesh, cfg.n_keypoints, add_center)
    kps = type(kps)(kps.points, kps.includes_center, args.object_id or mesh.name)
    formats.write_keypoints(args.out, kps)
    _emit({"n": len(kps), "out": str(args.out)})
    return 0


def cmd_render(args) -> int:
    cfg = _config(args, mesh=args.mesh)
    mesh = resolve_mesh(cfg.mesh, cfg.mesh_size, cfg.mesh_scale)
    k = formats.read_intrinsics(args.intrinsics) if args.intrinsics else cfg.intrinsics()
    if args.pose:
        pose, _ = formats.read_pose(args.pose, orthonormalize=True)
    else:
        pose = pipeline.trial_pose(cfg.seed, cfg.z_range)
    with stage("render", mesh=mesh.name) as info:
        scene = render_depth(mesh, pose, k, background_z=cfg.background_z, seed=cfg.seed)
        info["object_pixels"] = scene.object_pixels
    out = Path(args.out)
    formats.write_depth(out / "depth.png", scene.depth)
    formats.write_mask(out / "mask.png", scene.gt_mask)
    formats.write_intrinsics(out / "intrinsics.json", k)
    formats.write_pose(out / "gt_pose.json", pose, {"mesh_id": mesh.name, "seed": cfg.seed})
    _emit({"object_pixels": scene.object_pixels, "out": str(out)})
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args, mesh=args.mesh)
    mesh, keypoints = pipeline.object_model(cfg)
    k = cfg.intrinsics()
    out = Path(args.out or cfg.output_dir)
    seeds = pipeline.scene_seeds(cfg.seed, args.n_scenes)
    for i, seed in enumerate(seeds):
        frame = pipeline.simulate_frame(
            mesh, pipeline.trial_pose(seed, cfg.z_range), keypoints,
            pipeline.oracle_config(cfg, mesh.diameter, seed), k, cfg.n_points, cfg.background_z,
        )
        pipeline.write_frame(out / f"scene_{i:04d}", frame, keypoints)
    formats.write_json(out / "seeds.json", {"master_seed": cfg.seed, "seeds": seeds})
    save_config(out / "config.json", cfg)
    _emit({"scenes": len(seeds), "out": str(out)})
    return 0


def _scene_dirs(root: Path) -> list[Path]:
    if (root / "preds.jsonl").is_file() or (root / "keypoints.json").is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "preds.jsonl").is_file())
    if not dirs:
        raise InputError(f"{root} is neither a scene bundle nor a directory of bundles")
    return dirs


def _estimate_one(cfg: RunConfig, scene_dir: Path, mesh: TriangleMesh):
    bundle = formats.read_bundle(scene_dir)
    bandwidth = cfg.bandwidth_rel * mesh.diameter
    with stage("estimate", scene=scene_dir.name, points=len(bundle.preds)):
        pose, voted = estimate_pose(bundle.preds.cloud, bundle.preds, bundle.keypoints, OBJECT_LABEL,
                                    bandwidth, seed=cfg.seed)
    diagnostics = {
        "bandwidth": bandwidth,
        "points": len(bundle.preds),
        "rot_err": pose.rotation_error(bundle.gt_pose),
        "trans_err": pose.translation_error(bundle.gt_pose),
        "voting": voted.to_dict(),
    }
    angles = scene_dir / "angles.png"
    base = formats.read_rgb(angles) if angles.is_file() else report.depth_preview(bundle.depth)
    overlay = report.draw_pose_overlay(base, bundle.depth.intrinsics, mesh.vertices, pose, voted.positions)
    return pose, voted, diagnostics, overlay


def cmd_estimate(args) -> int:
    cfg = _config(args, mesh=args.mesh)
    scene = args.scene or cfg.input_path
    if not scene:
        raise InputError("no scene given (--scene or input_path in the config)")
    root = Path(scene)
    if not root.is_dir():
        raise InputError(f"scene directory not found: {root}")
    mesh = resolve_mesh(cfg.mesh, cfg.mesh_size, cfg.mesh_scale)
    scenes = _scene_dirs(root)

    if len(scenes) == 1 and scenes[0] == root:
        pose, _, diagnostics, overlay = _estimate_one(cfg, root, mesh)
        out = Path(args.out) if args.out else root / "pose.json"
        formats.write_pose(out, pose, diagnostics)
        formats.write_rgb(out.with_name("overlay.png"), overlay)
        _emit({"out": str(out), **pose.to_dict()})
        return 0

    out_dir = Path(args.out) if args.out else root / "poses"
    rows = []
    for scene_dir in scenes:
        pose, voted, diagnostics, overlay = _estimate_one(cfg, scene_dir, mesh)
        formats.write_pose(out_dir / f"{scene_dir.name}.json", pose, diagnostics)
        formats.write_rgb(out_dir / f"{scene_dir.name}.png", overlay)
        rows.append({
            "scene": scene_dir.name,
            "points": diagnostics["points"],
            "min_support": int(voted.support_counts.min()),
            "mean_inlier_fraction": float(np.mean(voted.inlier_fraction)),
            "rot_err": diagnostics["rot_err"],
            "trans_err": diagnostics["trans_err"],
        })
    report.write_csv(out_dir / "summary.csv", rows,
                     ["scene", "points", "min_support", "mean_inlier_fraction", "rot_err", "trans_err"])
    _emit({"poses": len(rows), "out": str(out_dir)})
    return 0


def _is_pose_record(path: Path) -> bool:
    payload = formats.read_json(path)
    if isinstance(payload, dict) and "R" in payload and "T" in payload:
        return True
    logger.debug(f"skipping {path}: not a pose record")
    return False


def _pred_files(pred_dir: Path) -> dict[str, Path]:
    """Pose files by frame name: <name>.json, poses/<name>.json or <name>/pose.json."""
    found = {}
    candidates = [(p.name.removesuffix(".json").removesuffix(".pose"), p) for p in sorted(pred_dir.glob("*.json"))]
    candidates += [(p.stem, p) for p in sorted(pred_dir.glob("poses/*.json"))]
    candidates += [(p.parent.name, p) for p in sorted(pred_dir.glob("*/pose.json"))]
    for name, path in candidates:
        if name not in found and _is_pose_record(path):
            found[name] = path
    return found


def _gt_file(gt_dir: Path, name: str) -> Path:
    for candidate in (gt_dir / f"{name}.json", gt_dir / name / "gt_pose.json"):
        if candidate.is_file():
            return candidate
    raise InputError(f"no ground-truth pose for '{name}' under {gt_dir}")


def cmd_eval(args) -> int:
    cfg = _config(args, mesh=args.mesh, object_id=args.object_id or args.mesh)
    mesh = resolve_mesh(cfg.mesh, cfg.mesh_size, cfg.mesh_scale)
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    if not pred_dir.is_dir() or not gt_dir.is_dir():
        raise InputError(f"prediction or ground-truth directory missing: {pred_dir}, {gt_dir}")
    preds = _pred_files(pred_dir)
    if not preds:
        raise EmptyDataError(f"no pose files in {pred_dir}")

    reports, frames = [], []
    for name, path in preds.items():
        pred, _ = formats.read_pose(path)
        gt, _ = formats.read_pose(_gt_file(gt_dir, name), orthonormalize=True)
        r = evaluate_pose(mesh, pred, gt, symmetric=cfg.is_symmetric, accelerate=cfg.adds_accelerate)
        reports.append(r)
        frames.append({"frame": name, **r.to_dict()})

    summary = summarize_reports(cfg.object_id, reports)
    out = Path(args.out or cfg.output_dir)
    report.write_csv(out / "report.csv", [summary], report.EVAL_COLUMNS)
    report.write_report_json(out / "report.json", [summary], frames=frames, diameter=mesh.diameter)
    if args.pdf:
        report.write_pdf(out / "report.pdf", f"ADD(S) evaluation: {cfg.object_id}", [summary], report.EVAL_COLUMNS)
    _emit(summary)
    return 0


def cmd_e2e(args) -> int:
    cfg = _config(args, mesh=args.mesh, offset_noise_sigma_rel=args.sigma, occlusion_fraction=args.occlusion)
    out = Path(args.out or cfg.output_dir)
    seeds = [cfg.seed + i for i in range(args.n_seeds)]
    trials = [pipeline.Trial(cfg.mesh, s, cfg.offset_noise_sigma_rel, cfg.occlusion_fraction) for s in seeds]
    if args.save_artifacts:
        rows = [pipeline.run_trial(cfg, t, artifact_dir=out / f"trial_{t.seed:06d}") for t in trials]
    else:
        rows = pipeline.run_trials(cfg, trials, workers=cfg.workers, progress=args.progress)
    columns = ["mesh", "seed", "sigma_rel", "occlusion", "diameter", "add", "adds", "threshold",
               "correct_add", "correct_adds", "symmetric", "rotation_error", "translation_error"]
    report.write_csv(out / "trials.csv", rows, columns)
    summary = {"mesh": cfg.mesh, "sigma_rel": cfg.offset_noise_sigma_rel,
               "occlusion": cfg.occlusion_fraction, **pipeline.summarize_cell(rows)}
    report.write_report_json(out / "summary.json", [summary], config=cfg.model_dump())
    _emit(summary)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    table = pipeline.sweep_robustness(
        cfg,
        meshes=tuple(args.meshes),
        sigmas=tuple(args.sigmas),
        occlusions=tuple(args.occlusions),
        n_seeds=args.n_seeds,
        workers=cfg.workers,
        progress=args.progress,
    )
    out = Path(args.out or cfg.output_dir)
    report.write_csv(out / "robustness.csv", table, report.SWEEP_COLUMNS)
    report.write_report_json(out / "robustness.json", table, config=cfg.model_dump(), n_seeds=args.n_seeds)
    report.write_pdf(out / "robustness.pdf", "Oracle robustness: acc@0.1d", table, report.SWEEP_COLUMNS,
                     notes=[f"{args.n_seeds} seeds per cell, master seed {cfg.seed}"])
    _emit({"cells": len(table), "out": str(out)})
    return 0


def cmd_ingest(args) -> int:
    """BOP/LineMod scene_camera.json + scene_gt.json -> one directory per frame."""
    cameras = formats.read_json(args.scene_camera)
    gts = formats.read_json(args.scene_gt)
    out = Path(args.out)
    count = 0
    for frame_id in sorted(cameras, key=int):
        cam = cameras[frame_id]
        objects = [g for g in gts.get(frame_id, []) if int(g["obj_id"]) == args.obj_id]
        if not objects:
            continue
        try:
            K = np.asarray(cam["cam_K"], dtype=np.float64).reshape(3, 3)
            k = CameraIntrinsics(
                fx=K[0, 0], fy=K[1, 1], cx=K[0, 2], cy=K[1, 2],
                width=args.width, height=args.height,
                depth_scale=float(cam.get("depth_scale", 1.0)) * 0.001,
            )
            R = np.asarray(objects[0]["cam_R_m2c"], dtype=np.float64).reshape(3, 3)
            t = np.asarray(objects[0]["cam_t_m2c"], dtype=np.float64).reshape(3) * 0.001
        except (KeyError, ValueError) as e:
            raise InputError(f"frame {frame_id}: malformed BOP record ({e})") from e
        pose = RigidPose.from_matrix(np.column_stack([R, t]), orthonormalize=True)
        frame_dir = out / f"{int(frame_id):06d}"
        formats.write_intrinsics(frame_dir / "intrinsics.json", k)
        formats.write_pose(frame_dir / "gt_pose.json", pose, {"obj_id": args.obj_id})
        if args.depth_dir:
            src = Path(args.depth_dir) / f"{int(frame_id):06d}.png"
            if src.is_file():
                shutil.copyfile(src, frame_dir / "depth.png")
        count += 1
    if count == 0:
        raise EmptyDataError(f"no frames contain object {args.obj_id}")
    _emit({"frames": count, "out": str(out)})
    return 0


# ---------------- parser ----------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--workers", type=int, help="processes for batch trials")
    common.add_argument("--log-level", default=None)
    common.add_argument("--log-file", default=None)

    parser = argparse.ArgumentParser(prog="depthpose", description="Depth-only 6DoF pose estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def depth_cmd(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--depth", required=True)
        p.add_argument("--intrinsics", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
        return p

    depth_cmd("lift", cmd_lift, "depth image -> ASCII PLY point cloud")
    depth_cmd("normals", cmd_normals, "depth image -> normal map visualization + mask")
    depth_cmd("angles", cmd_angles, "depth image -> normal-vector-angles image + mask")

    p = sub.add_parser("keypoints", parents=[common], help="FPS keypoints on a mesh")
    p.add_argument("--mesh")
    p.add_argument("--n", type=int)
    p.add_argument("--object-id")
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keypoints)

    p = sub.add_parser("render", parents=[common], help="ray-cast a depth image of a posed mesh")
    p.add_argument("--mesh")
    p.add_argument("--pose", help="pose JSON; a seeded random pose when omitted")
    p.add_argument("--intrinsics")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", parents=[common], help="write seeded scene bundles")
    p.add_argument("--mesh")
    p.add_argument("--n-scenes", type=int, default=1)
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", parents=[common], help="pose from a scene bundle (or a directory of them)")
    p.add_argument("--scene", help="bundle or directory of bundles (default: input_path from the config)")
    p.add_argument("--mesh")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", parents=[common], help="ADD/ADD-S report for predicted vs ground-truth poses")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--mesh")
    p.add_argument("--object-id")
    p.add_argument("--pdf", action="store_true")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("e2e", parents=[common], help="seeded end-to-end oracle runs")
    p.add_argument("--mesh")
    p.add_argument("--sigma", type=float, help="offset noise as a fraction of the diameter")
    p.add_argument("--occlusion", type=float)
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--save-artifacts", action="store_true")
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_e2e)

    p = sub.add_parser("sweep", parents=[common], help="noise x occlusion robustness table")
    p.add_argument("--meshes", nargs="+", default=["cube", "icosphere", "lbracket"])
    p.add_argument("--sigmas", nargs="+", type=float, default=list(pipeline.DEFAULT_SIGMAS))
    p.add_argument("--occlusions", nargs="+", type=float, default=list(pipeline.DEFAULT_OCCLUSIONS))
    p.add_argument("--n-seeds", type=int, default=50)
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ingest", parents=[common], help="convert BOP/LineMod camera + GT files")
    p.add_argument("--scene-camera", required=True)
    p.add_argument("--scene-gt", required=True)
    p.add_argument("--obj-id", type=int, required=True)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--depth-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or "INFO", args.log_file)
    try:
        return args.func(args)
    except DepthPoseError as e:
        logger.error(f"{args.command}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command}: unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
