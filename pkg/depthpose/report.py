import csv
import io
import json
import logging
from datetime import datetime, timezone
from pathlib import Path

import cv2
import numpy as np
from reportlab.lib.pagesizes import landscape, letter
from reportlab.pdfgen import canvas

from .formats import atomic_write
from .geometry import CameraIntrinsics, DepthImage, RigidPose, project_points, transform_points

logger = logging.getLogger("depthpose.report")

EVAL_COLUMNS = ["object", "n_frames", "add_mean", "adds_mean", "acc@0.1d"]
SWEEP_COLUMNS = ["mesh", "sigma_rel", "occlusion", "n", "acc@0.1d", "err_rel_mean", "err_rel_median",
                 "err_rel_p90", "err_rel_max"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_csv(path: str | Path, rows: list[dict], columns: list[str]):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    atomic_write(path, buf.getvalue())


def write_report_json(path: str | Path, rows: list[dict], **extra):
    atomic_write(path, json.dumps({"rows": rows, **extra}, indent=2, sort_keys=True) + "\n")


def write_pdf(path: str | Path, title: str, rows: list[dict], columns: list[str], notes: list[str] | None = None,
              stamp: bool = False):
    """
    Table in the layout of the results CSV, continued on new pages as
    needed. stamp=False keeps the output byte-identical across runs (no
    creation date).
    """
    buf = io.BytesIO()
    width, height = landscape(letter)
    c = canvas.Canvas(buf, pagesize=(width, height), invariant=not stamp)

    c.setFont("Helvetica-Bold", 16)
    c.drawString(50, height - 50, title)
    c.setFont("Helvetica", 9)
    if stamp:
        c.drawString(50, height - 66, datetime.now(timezone.utc).strftime("Generated %Y-%m-%d %H:%M UTC"))

    col_w = (width - 100) / max(1, len(columns))
    y = height - 95
    c.setFont("Helvetica-Bold", 9)
    for i, col in enumerate(columns):
        c.drawString(50 + i * col_w, y, col)
    c.line(50, y - 4, width - 50, y - 4)

    c.setFont("Helvetica", 9)
    for row in rows:
        y -= 14
        if y < 60:
            c.showPage()
            c.setFont("Helvetica", 9)
            y = height - 50
        for i, col in enumerate(columns):
            c.drawString(50 + i * col_w, y, _fmt(row.get(col, "")))

    for note in notes or []:
        y -= 16
        if y < 60:
            c.showPage()
            c.setFont("Helvetica", 9)
            y = height - 50
        c.drawString(50, y, note)

    c.save()
    atomic_write(path, buf.getvalue())
    logger.info(f"PDF report written to {path}")


def _visible_pixels(points: np.ndarray, k: CameraIntrinsics, width: int, height: int) -> list[tuple[int, int]]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pts = pts[pts[:, 2] > 0]
    if len(pts) == 0:
        return []
    uv = np.floor(project_points(pts, k) + 0.5).astype(np.int64)
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < width) & (uv[:, 1] >= 0) & (uv[:, 1] < height)
    return [(int(u), int(v)) for u, v in uv[inside]]


def depth_preview(depth: DepthImage) -> np.ndarray:
    """RGB gray-scale depth, near surfaces bright, missing depth black."""
    gray = np.zeros(depth.data.shape, dtype=np.uint8)
    valid = depth.data > 0
    if np.any(valid):
        z = depth.data[valid].astype(np.float64)
        span = z.max() - z.min()
        scaled = 255.0 - 200.0 * (z - z.min()) / span if span > 0 else np.full(len(z), 255.0)
        gray[valid] = np.floor(scaled + 0.5).astype(np.uint8)
    return cv2.cvtColor(gray, cv2.COLOR_GRAY2RGB)


def draw_pose_overlay(image: np.ndarray, k: CameraIntrinsics, model_points: np.ndarray, pose: RigidPose,
                      keypoints_cam: np.ndarray | None = None) -> np.ndarray:
    """
    Copy of an RGB image with the model points under pose drawn as green dots
    and the voted keypoints as red crosses.
    """
    out = np.ascontiguousarray(image, dtype=np.uint8).copy()
    if out.ndim == 2:
        out = cv2.cvtColor(out, cv2.COLOR_GRAY2RGB)
    height, width = out.shape[:2]
    for u, v in _visible_pixels(transform_points(model_points, pose), k, width, height):
        cv2.circle(out, (u, v), 1, (0, 255, 0), -1)
    if keypoints_cam is not None:
        for u, v in _visible_pixels(keypoints_cam, k, width, height):
            cv2.drawMarker(out, (u, v), (255, 0, 0), cv2.MARKER_CROSS, 7, 1)
    return out
