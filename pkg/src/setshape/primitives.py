"""Procedural watertight primitive meshes used as fixtures and toy datasets."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh, normalize_unit_sphere


def box(half_extents=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    hx, hy, hz = half_extents
    cx, cy, cz = center
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    ) + np.array([cx, cy, cz])
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],  # front
            [1, 2, 6], [1, 6, 5],  # right
            [2, 3, 7], [2, 7, 6],  # back
            [3, 0, 4], [3, 4, 7],  # left
        ]
    )
    return TriangleMesh(v, f)


def sphere(radius=0.8, rings=32, segments=64) -> TriangleMesh:
    """UV sphere with pole fans; watertight."""
    verts = [(0.0, 0.0, radius)]
    for i in range(1, rings):
        phi = np.pi * i / rings
        for j in range(segments):
            theta = 2 * np.pi * j / segments
            verts.append(
                (
                    radius * np.sin(phi) * np.cos(theta),
                    radius * np.sin(phi) * np.sin(theta),
                    radius * np.cos(phi),
                )
            )
    verts.append((0.0, 0.0, -radius))
    south = len(verts) - 1

    def ring_vert(i, j):
        return 1 + (i - 1) * segments + (j % segments)

    faces = []
    for j in range(segments):  # north cap
        faces.append([0, ring_vert(1, j), ring_vert(1, j + 1)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring_vert(i, j), ring_vert(i, j + 1)
            c, d = ring_vert(i + 1, j), ring_vert(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(segments):  # south cap
        faces.append([south, ring_vert(rings - 1, j + 1), ring_vert(rings - 1, j)])
    return TriangleMesh(np.array(verts), np.array(faces))


def torus(major=0.6, minor=0.25, major_segments=48, minor_segments=24) -> TriangleMesh:
    verts = []
    for i in range(major_segments):
        u = 2 * np.pi * i / major_segments
        for j in range(minor_segments):
            v = 2 * np.pi * j / minor_segments
            r = major + minor * np.cos(v)
            verts.append((r * np.cos(u), r * np.sin(u), minor * np.sin(v)))

    def vid(i, j):
        return (i % major_segments) * minor_segments + (j % minor_segments)

    faces = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            faces.append([a, b, c])
            faces.append([a, c, d])
    return TriangleMesh(np.array(verts), np.array(faces))


def _closed_revolution(profile, segments):
    """Revolve a z-profile polyline (r_k, z_k) around z; endpoints must have r=0."""
    profile = [(0.0 if abs(r) < 1e-12 else r, z) for r, z in profile]
    rs, zs = zip(*profile)
    assert rs[0] == 0.0 and rs[-1] == 0.0
    verts = [(0.0, 0.0, zs[0])]
    inner = [k for k in range(1, len(profile) - 1)]
    for k in inner:
        for j in range(segments):
            th = 2 * np.pi * j / segments
            verts.append((rs[k] * np.cos(th), rs[k] * np.sin(th), zs[k]))
    verts.append((0.0, 0.0, zs[-1]))
    last = len(verts) - 1

    def vid(row, j):
        return 1 + row * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append([0, vid(0, j), vid(0, j + 1)])
    for row in range(len(inner) - 1):
        for j in range(segments):
            a, b = vid(row, j), vid(row, j + 1)
            c, d = vid(row + 1, j), vid(row + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(segments):
        faces.append([last, vid(len(inner) - 1, j + 1), vid(len(inner) - 1, j)])
    return TriangleMesh(np.array(verts), np.array(faces))


def cylinder(radius=0.45, height=1.4, segments=48) -> TriangleMesh:
    h = height / 2
    profile = [(0.0, h), (radius, h), (radius, -h), (0.0, -h)]
    return _closed_revolution(profile, segments)


def cone(radius=0.6, height=1.3, segments=48) -> TriangleMesh:
    h = height / 2
    profile = [(0.0, h), (radius, -h), (0.0, -h)]
    return _closed_revolution(profile, segments)


def capsule(radius=0.35, height=0.9, rings=12, segments=32) -> TriangleMesh:
    """Cylinder of the given body height with hemispherical caps."""
    h = height / 2
    profile = [(0.0, h + radius)]
    for i in range(1, rings + 1):
        phi = (np.pi / 2) * i / rings
        profile.append((radius * np.sin(phi), h + radius * np.cos(phi)))
    for i in range(rings + 1):
        phi = (np.pi / 2) * i / rings
        profile.append((radius * np.cos(phi), -h - radius * np.sin(phi)))
    profile.append((0.0, -h - radius))
    # drop the duplicated equator row between the two loops
    dedup = [profile[0]]
    for p in profile[1:]:
        if abs(p[0] - dedup[-1][0]) > 1e-12 or abs(p[1] - dedup[-1][1]) > 1e-12:
            dedup.append(p)
    return _closed_revolution(dedup, segments)


def l_shape(size=1.0, thickness=0.45, depth=0.5) -> TriangleMesh:
    """L-shaped prism extruded along z."""
    s, t, d = size, thickness, depth / 2
    poly = [(0, 0), (s, 0), (s, t), (t, t), (t, s), (0, s)]  # ccw hexagon
    poly = [(x - s / 2, y - s / 2) for x, y in poly]
    n = len(poly)
    bottom = [(x, y, -d) for x, y in poly]
    top = [(x, y, d) for x, y in poly]
    verts = np.array(bottom + top)
    # fan triangulation of the L works from corner (t, t) (index 3), which sees
    # the whole polygon
    faces = []
    for k in range(n - 2):
        a, b, c = 3, (4 + k) % n, (5 + k) % n
        faces.append([a, c, b])          # bottom, wound downward
        faces.append([a + n, b + n, c + n])  # top
    for k in range(n):
        a, b = k, (k + 1) % n
        faces.append([a, b, b + n])
        faces.append([a, b + n, a + n])
    return TriangleMesh(verts, np.array(faces))


def thin_plate(width=1.6, depth=1.2, thickness=0.08) -> TriangleMesh:
    return box(half_extents=(width / 2, depth / 2, thickness / 2))


def primitive_suite() -> dict:
    """The eight-primitive fixture set, each normalized to the unit sphere."""
    shapes = {
        "sphere": sphere(),
        "box": box(half_extents=(0.55, 0.45, 0.35)),
        "torus": torus(),
        "cylinder": cylinder(),
        "cone": cone(),
        "capsule": capsule(),
        "l_shape": l_shape(),
        "thin_plate": thin_plate(),
    }
    return {name: normalize_unit_sphere(m) for name, m in shapes.items()}
