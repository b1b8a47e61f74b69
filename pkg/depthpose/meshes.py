import logging
from pathlib import Path

import numpy as np
import trimesh

from .errors import InputError
from .geometry import TriangleMesh

logger = logging.getLogger("depthpose.meshes")

BUILTIN_MESHES = ("cube", "icosphere", "lbracket")


def _from_trimesh(tm: trimesh.Trimesh, name: str) -> TriangleMesh:
    return TriangleMesh(np.asarray(tm.vertices), np.asarray(tm.faces), name=name)


def make_cube(size: float = 1.0, centered: bool = False) -> TriangleMesh:
    """Axis-aligned cube; corner-anchored at the origin unless centered."""
    tm = trimesh.creation.box(extents=(size, size, size))
    if not centered:
        tm.apply_translation((size / 2.0, size / 2.0, size / 2.0))
    return _from_trimesh(tm, "cube")


def make_icosphere(radius: float = 1.0, subdivisions: int = 2) -> TriangleMesh:
    return _from_trimesh(trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius), "icosphere")


def make_lbracket(size: float = 1.0) -> TriangleMesh:
    """
    L-shaped bracket with unequal arm lengths and thickness, so no rotation
    maps it onto itself. Centered on its vertex centroid.
    """
    long_arm = trimesh.creation.box(extents=(1.0, 0.25, 0.4))
    long_arm.apply_translation((0.5, 0.125, 0.2))
    short_arm = trimesh.creation.box(extents=(0.25, 0.6, 0.4))
    short_arm.apply_translation((0.125, 0.25 + 0.3, 0.2))
    tab = trimesh.creation.box(extents=(0.25, 0.25, 0.15))
    tab.apply_translation((0.875, 0.375, 0.075))
    tm = trimesh.util.concatenate([long_arm, short_arm, tab])
    tm.apply_scale(size)
    tm.apply_translation(-tm.vertices.mean(axis=0))
    return _from_trimesh(tm, "lbracket")


def builtin_mesh(name: str, size: float = 0.1) -> TriangleMesh:
    """Procedural test objects at desk scale (size in meters)."""
    if name == "cube":
        return make_cube(size, centered=True)
    if name == "icosphere":
        return make_icosphere(size / 2.0, subdivisions=2)
    if name == "lbracket":
        return make_lbracket(size)
    raise InputError(f"unknown built-in mesh '{name}' (expected one of {BUILTIN_MESHES})")


def load_mesh(path: str | Path, scale: float = 1.0) -> TriangleMesh:
    """
    Load a PLY/OBJ/STL model. LineMod/BOP models are in millimeters, so pass
    scale=0.001 for them.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"mesh file not found: {path}")
    try:
        tm = trimesh.load(path, force="mesh", process=False)
    except Exception as e:
        raise InputError(f"cannot parse mesh {path}: {e}") from e
    if not isinstance(tm, trimesh.Trimesh) or len(tm.vertices) == 0:
        raise InputError(f"no triangle mesh in {path}")
    mesh = TriangleMesh(np.asarray(tm.vertices) * scale, np.asarray(tm.faces), name=path.stem)
    logger.info(f"Loaded mesh {path}: {len(mesh.vertices)} vertices, diameter={mesh.diameter:.4f} m")
    return mesh


def resolve_mesh(source: str, size: float = 0.1, scale: float = 1.0) -> TriangleMesh:
    """A built-in name or a path on disk."""
    if source in BUILTIN_MESHES:
        return builtin_mesh(source, size)
    return load_mesh(source, scale)


def save_mesh(mesh: TriangleMesh, path: str | Path):
    tm = trimesh.Trimesh(mesh.vertices, mesh.faces, process=False)
    Path(path).write_bytes(trimesh.exchange.ply.export_ply(tm, encoding="ascii"))
