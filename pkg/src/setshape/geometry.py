"""Triangle meshes: loading, normalization, augmentation, surface sampling.

Meshes are plain indexed triangle soups.  All preprocessing assumes
watertight input; nothing here repairs geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateMeshError, EmptyMeshError, MeshFormatError

DEGENERATE_AREA_EPS = 1e-12


@dataclass
class TriangleMesh:
    """Indexed triangle soup. vertices: (V, 3) float64, triangles: (T, 3) int64."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if len(self.triangles) and self.triangles.min() < 0:
            raise ValueError("negative triangle index")

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def triangle_corners(self):
        """Corner coordinates, shape (T, 3, 3)."""
        return self.vertices[self.triangles]

    def copy(self):
        return TriangleMesh(self.vertices.copy(), self.triangles.copy())


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    c = mesh.triangle_corners()
    cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def degenerate_triangle_mask(mesh: TriangleMesh) -> np.ndarray:
    """True for zero-area triangles (kept in the mesh, flagged for diagnostics)."""
    return triangle_areas(mesh) <= DEGENERATE_AREA_EPS


def surface_area(mesh: TriangleMesh) -> float:
    return float(triangle_areas(mesh).sum())


def _parse_obj(path: Path) -> TriangleMesh:
    vertices = []
    faces = []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(path, line_no, "vertex needs 3 coordinates")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(path, line_no, "bad vertex coordinate")
            elif tag == "f":
                idx = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshFormatError(path, line_no, f"bad face index {token!r}")
                    if i == 0:
                        raise MeshFormatError(path, line_no, "face index 0 (OBJ is 1-based)")
                    # negative indices are relative to the current vertex count
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) < 3:
                    raise MeshFormatError(path, line_no, "face needs at least 3 vertices")
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
            # other tags (vn, vt, o, g, s, usemtl, ...) are ignored
    if not vertices or not faces:
        raise EmptyMeshError(f"{path}: no geometry")
    mesh = TriangleMesh(np.array(vertices), np.array(faces))
    if mesh.triangles.max() >= mesh.num_vertices:
        raise MeshFormatError(path, 0, "face references missing vertex")
    return mesh


def _parse_off(path: Path) -> TriangleMesh:
    with open(path) as fh:
        lines = [
            (no, ln.strip())
            for no, ln in enumerate(fh, start=1)
            if ln.strip() and not ln.strip().startswith("#")
        ]
    if not lines:
        raise EmptyMeshError(f"{path}: empty file")
    pos = 0
    no, header = lines[pos]
    if header.startswith("OFF"):
        rest = header[3:].strip()
        pos += 1
        if rest:  # counts on the same line as the keyword
            lines.insert(pos, (no, rest))
    try:
        no, counts = lines[pos]
        nv, nf, _ = (int(x) for x in counts.split()[:3])
    except (ValueError, IndexError):
        raise MeshFormatError(path, lines[pos][0], "bad OFF counts line")
    pos += 1
    vertices = []
    for k in range(nv):
        no, ln = lines[pos + k]
        try:
            vertices.append([float(x) for x in ln.split()[:3]])
        except (ValueError, IndexError):
            raise MeshFormatError(path, no, "bad OFF vertex")
    pos += nv
    faces = []
    for k in range(nf):
        no, ln = lines[pos + k]
        parts = ln.split()
        try:
            cnt = int(parts[0])
            idx = [int(x) for x in parts[1 : 1 + cnt]]
        except (ValueError, IndexError):
            raise MeshFormatError(path, no, "bad OFF face")
        if cnt < 3 or len(idx) != cnt:
            raise MeshFormatError(path, no, "OFF face count mismatch")
        if any(i < 0 or i >= nv for i in idx):
            raise MeshFormatError(path, no, "OFF face index out of range")
        for k2 in range(1, cnt - 1):
            faces.append([idx[0], idx[k2], idx[k2 + 1]])
    if not vertices or not faces:
        raise EmptyMeshError(f"{path}: no geometry")
    return TriangleMesh(np.array(vertices), np.array(faces))


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or OFF file (by extension, falling back to content sniffing)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _parse_obj(path)
    if suffix == ".off":
        return _parse_off(path)
    with open(path) as fh:
        head = fh.read(16)
    if head.lstrip().startswith("OFF"):
        return _parse_off(path)
    return _parse_obj(path)


def save_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def normalization_params(mesh: TriangleMesh):
    """Center (bounding-box midpoint) and scale taking the mesh to max norm 1."""
    if mesh.num_vertices == 0:
        raise EmptyMeshError("cannot normalize empty mesh")
    v = mesh.vertices
    center = (v.max(axis=0) + v.min(axis=0)) / 2.0
    radii = np.linalg.norm(v - center, axis=1)
    rmax = radii.max()
    if rmax <= 0.0:
        raise DegenerateMeshError("all vertices identical; scale undefined")
    return center, 1.0 / rmax


def normalize_unit_sphere(mesh: TriangleMesh) -> TriangleMesh:
    """Zero-center at the bounding-box midpoint and scale so max vertex norm is 1."""
    center, scale = normalization_params(mesh)
    return TriangleMesh((mesh.vertices - center) * scale, mesh.triangles.copy())


@dataclass(frozen=True)
class AugmentationParams:
    """Per-axis scales in [0.75, 1.25] and yaw/pitch/roll angles in radians."""

    axis_scales: tuple = (1.0, 1.0, 1.0)
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        if len(self.axis_scales) != 3:
            raise ValueError("need exactly 3 axis scales")
        for s in self.axis_scales:
            if not (0.75 <= s <= 1.25):
                raise ValueError(f"axis scale {s} outside [0.75, 1.25]")

    @staticmethod
    def random(rng) -> "AugmentationParams":
        return AugmentationParams(
            axis_scales=tuple(rng.uniform(0.75, 1.25, size=3)),
            yaw=rng.uniform(0.0, 2.0 * math.pi),
            pitch=rng.uniform(0.0, 2.0 * math.pi),
            roll=rng.uniform(0.0, 2.0 * math.pi),
        )


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    ca, sa = math.cos(yaw), math.sin(yaw)
    cb, sb = math.cos(pitch), math.sin(pitch)
    cg, sg = math.cos(roll), math.sin(roll)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return rz @ ry @ rx


def apply_augmentation(mesh: TriangleMesh, params: AugmentationParams) -> TriangleMesh:
    """Scale each axis, rotate, then re-normalize back into the unit sphere."""
    s = np.asarray(params.axis_scales, dtype=np.float64)
    rot = rotation_matrix(params.yaw, params.pitch, params.roll)
    v = (mesh.vertices * s) @ rot.T
    return normalize_unit_sphere(TriangleMesh(v, mesh.triangles.copy()))


def sample_surface_points(mesh: TriangleMesh, count: int, rng) -> np.ndarray:
    """Area-weighted uniform surface samples, shape (count, 3)."""
    if count <= 0:
        raise ValueError("count must be positive")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise DegenerateMeshError("mesh has zero surface area")
    tri_idx = rng.choice(len(areas), size=count, p=areas / total)
    corners = mesh.triangle_corners()[tri_idx]  # (count, 3, 3)
    # uniform barycentric coordinates via the square-root trick
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return (
        corners[:, 0] * w0[:, None]
        + corners[:, 1] * w1[:, None]
        + corners[:, 2] * w2[:, None]
    )
