"""
File formats: depth/mask/angle images, intrinsics and pose JSON, keypoint
JSON, offset-prediction JSON-lines, ASCII PLY clouds and scene bundles.
Every write is atomic (temp file + rename).
"""
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from pydantic import ValidationError

from .errors import InputError
from .geometry import CameraIntrinsics, DepthImage, PointCloud, RigidPose
from .keypoints import KeypointSet
from .voting import OffsetPrediction

logger = logging.getLogger("depthpose.formats")

BUNDLE_FILES = ("depth.png", "mask.png", "intrinsics.json", "gt_pose.json", "keypoints.json", "preds.jsonl")
_PXM = (".pgm", ".ppm", ".pnm")


def atomic_write(path: str | Path, data: bytes | str):
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(path: str | Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    return path


def read_json(path: str | Path):
    path = _require(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InputError(f"cannot parse JSON {path}: {e}") from e


def write_json(path: str | Path, payload):
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------- images ----------------

def _encode(path: Path, img: np.ndarray) -> bytes:
    ext = path.suffix.lower()
    params = [cv2.IMWRITE_PXM_BINARY, 0] if ext in _PXM else []
    ok, buf = cv2.imencode(ext, img, params)
    if not ok:
        raise InputError(f"cannot encode image as {ext}")
    return buf.tobytes()


def _decode(path: str | Path, flags: int) -> np.ndarray:
    path = _require(path)
    img = cv2.imdecode(np.frombuffer(path.read_bytes(), dtype=np.uint8), flags)
    if img is None:
        raise InputError(f"cannot decode image {path}")
    return img


def read_depth(path: str | Path, intrinsics: CameraIntrinsics) -> DepthImage:
    """16-bit single-channel PNG or PGM in raw sensor units."""
    img = _decode(path, cv2.IMREAD_UNCHANGED | cv2.IMREAD_ANYDEPTH)
    if img.ndim != 2:
        raise InputError(f"depth image {path} must have one channel, got shape {img.shape}")
    return DepthImage(img.astype(np.uint16), intrinsics)


def write_depth(path: str | Path, depth: DepthImage):
    atomic_write(path, _encode(Path(path), depth.data.astype(np.uint16)))


def read_mask(path: str | Path) -> np.ndarray:
    img = _decode(path, cv2.IMREAD_GRAYSCALE)
    return img > 0


def write_mask(path: str | Path, mask: np.ndarray):
    atomic_write(path, _encode(Path(path), np.where(mask, 255, 0).astype(np.uint8)))


def write_rgb(path: str | Path, rgb: np.ndarray):
    """3-channel 8-bit image; channel 0 is stored as red."""
    atomic_write(path, _encode(Path(path), cv2.cvtColor(np.ascontiguousarray(rgb), cv2.COLOR_RGB2BGR)))


def read_rgb(path: str | Path) -> np.ndarray:
    return cv2.cvtColor(_decode(path, cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)


def mask_path_for(image_path: str | Path) -> Path:
    """Sidecar mask shares the basename: angles.png -> angles_mask.png."""
    p = Path(image_path)
    return p.with_name(f"{p.stem}_mask.png")


# ---------------- intrinsics / pose / keypoints ----------------

def read_intrinsics(path: str | Path) -> CameraIntrinsics:
    payload = read_json(path)
    try:
        return CameraIntrinsics.model_validate(payload)
    except ValidationError as e:
        raise InputError(f"invalid intrinsics in {path}: {e}") from e


def write_intrinsics(path: str | Path, k: CameraIntrinsics):
    write_json(path, k.model_dump())


def read_pose(path: str | Path, orthonormalize: bool = False) -> tuple[RigidPose, dict]:
    payload = read_json(path)
    return RigidPose.from_dict(payload, orthonormalize=orthonormalize), payload.get("diagnostics", {})


def write_pose(path: str | Path, pose: RigidPose, diagnostics: dict | None = None):
    payload = pose.to_dict()
    if diagnostics is not None:
        payload["diagnostics"] = diagnostics
    write_json(path, payload)


def read_keypoints(path: str | Path) -> KeypointSet:
    return KeypointSet.from_dict(read_json(path))


def write_keypoints(path: str | Path, keypoints: KeypointSet):
    write_json(path, keypoints.to_dict())


# ---------------- predictions ----------------

def write_predictions(path: str | Path, preds: OffsetPrediction):
    """One JSON record per point: {"p", "label", "offsets", "conf"?}."""
    lines = []
    for i in range(len(preds)):
        record = {
            "p": preds.points[i].tolist(),
            "label": int(preds.labels[i]),
            "offsets": preds.offsets[i].tolist(),
        }
        if preds.confidences is not None:
            record["conf"] = float(preds.confidences[i])
        lines.append(json.dumps(record))
    atomic_write(path, "\n".join(lines) + ("\n" if lines else ""))


def read_predictions(path: str | Path) -> OffsetPrediction:
    path = _require(path)
    points, labels, offsets, conf = [], [], [], []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                points.append(record["p"])
                labels.append(int(record["label"]))
                offsets.append(record["offsets"])
                conf.append(record.get("conf"))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise InputError(f"{path}:{lineno}: malformed prediction record ({e})") from e
    if not points:
        raise InputError(f"{path} holds no predictions")
    if any(c is None for c in conf) and not all(c is None for c in conf):
        raise InputError(f"{path}: confidence given for some points only")
    try:
        return OffsetPrediction(
            np.asarray(points, dtype=np.float64),
            np.asarray(offsets, dtype=np.float64),
            np.asarray(labels),
            None if conf[0] is None else np.asarray(conf, dtype=np.float64),
        )
    except ValueError as e:
        raise InputError(f"{path}: inconsistent prediction records ({e})") from e


# ---------------- point clouds ----------------

def write_ply(path: str | Path, cloud: PointCloud):
    """ASCII PLY with x y z and, when present, an integer label."""
    with_labels = cloud.labels is not None
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property double x", "property double y", "property double z"]
    if with_labels:
        header.append("property int label")
    header.append("end_header")
    rows = [" ".join(repr(float(c)) for c in p) for p in cloud.points]
    if with_labels:
        rows = [f"{row} {int(label)}" for row, label in zip(rows, cloud.labels)]
    atomic_write(path, "\n".join(header + rows) + "\n")


def read_ply(path: str | Path) -> PointCloud:
    path = _require(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    try:
        end = lines.index("end_header")
    except ValueError as e:
        raise InputError(f"{path}: missing end_header") from e
    if not lines or lines[0] != "ply" or "format ascii 1.0" not in lines[:end]:
        raise InputError(f"{path}: not an ASCII PLY file")
    try:
        count = next(int(l.split()[2]) for l in lines[:end] if l.startswith("element vertex"))
    except (StopIteration, IndexError, ValueError) as e:
        raise InputError(f"{path}: missing or malformed 'element vertex' line") from e
    props = [l.split()[-1] for l in lines[:end] if l.startswith("property")]
    body = lines[end + 1:end + 1 + count]
    if len(body) != count:
        raise InputError(f"{path}: expected {count} vertices, found {len(body)}")
    try:
        table = np.array([[float(v) for v in row.split()] for row in body]).reshape(count, len(props))
    except ValueError as e:
        raise InputError(f"{path}: malformed vertex rows ({e})") from e
    labels = table[:, props.index("label")].astype(np.int64) if "label" in props else None
    return PointCloud(table[:, :3], labels=labels)


# ---------------- scene bundles ----------------

def write_bundle(out_dir: str | Path, scene, keypoints: KeypointSet, preds: OffsetPrediction):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_depth(out / "depth.png", scene.depth)
    write_mask(out / "mask.png", scene.gt_mask)
    write_intrinsics(out / "intrinsics.json", scene.intrinsics)
    write_pose(out / "gt_pose.json", scene.gt_pose, {"mesh_id": scene.mesh_id, "seed": scene.seed})
    write_keypoints(out / "keypoints.json", keypoints)
    write_predictions(out / "preds.jsonl", preds)


def missing_bundle_files(scene_dir: str | Path) -> list[str]:
    return [name for name in BUNDLE_FILES if not (Path(scene_dir) / name).is_file()]


@dataclass(frozen=True)
class SceneBundle:
    depth: DepthImage
    mask: np.ndarray
    gt_pose: RigidPose
    keypoints: KeypointSet
    preds: OffsetPrediction
    meta: dict


def read_bundle(scene_dir: str | Path) -> SceneBundle:
    scene_dir = Path(scene_dir)
    missing = missing_bundle_files(scene_dir)
    if missing:
        raise InputError(f"scene bundle {scene_dir} lacks {', '.join(missing)}")
    k = read_intrinsics(scene_dir / "intrinsics.json")
    gt_pose, meta = read_pose(scene_dir / "gt_pose.json", orthonormalize=True)
    return SceneBundle(
        depth=read_depth(scene_dir / "depth.png", k),
        mask=read_mask(scene_dir / "mask.png"),
        gt_pose=gt_pose,
        keypoints=read_keypoints(scene_dir / "keypoints.json"),
        preds=read_predictions(scene_dir / "preds.jsonl"),
        meta=meta,
    )
