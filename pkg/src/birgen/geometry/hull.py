"""Hole closing: convex-hull union plus small boundary-loop filling."""

from __future__ import annotations

import logging
from collections import defaultdict

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .mesh import AnnotatedMesh, MeshError, edge_face_counts, triangle_areas

log = logging.getLogger(__name__)

SMALL_HOLE_PERIMETER = 0.5


def _facet_groups(hull, scale):
    """Group hull simplices lying on the same supporting plane."""
    groups = []
    eq = hull.equations
    for i, row in enumerate(eq):
        for g in groups:
            ref = eq[g[0]]
            if (np.abs(ref[:3] - row[:3]).max() < 1e-7
                    and abs(ref[3] - row[3]) < 1e-7 * scale):
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


def _outward(vertices, simplices, equations):
    tri = simplices.copy()
    a, b, c = (vertices[tri[:, k]] for k in range(3))
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), equations[:, :3]) < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _boundary_fan(v, corners, n, tol):
    """Fan from the facet centroid through every vertex on the facet outline.

    Returns ``(centroid, faces)`` with the centroid indexed as ``len(v)``, or
    ``None`` when only the corners lie on the outline.
    """
    c = v[corners].mean(axis=0)
    u = v[corners[0]] - c
    u /= np.linalg.norm(u)
    w = np.cross(n, u)
    ang = np.arctan2((v[corners] - c) @ w, (v[corners] - c) @ u)
    ring = np.asarray(corners)[np.argsort(ang)]
    on_plane = np.flatnonzero(np.abs((v - c) @ n) < tol)
    pts = v[on_plane]
    on_edge = np.zeros(len(on_plane), dtype=bool)
    for a, b in zip(ring, np.roll(ring, -1)):
        ab = v[b] - v[a]
        t = np.clip((pts - v[a]) @ ab / (ab @ ab), 0.0, 1.0)
        on_edge |= np.linalg.norm(pts - v[a] - t[:, None] * ab, axis=1) < tol
    outline = on_plane[on_edge]
    if len(outline) <= len(corners):
        return None
    ang = np.arctan2((v[outline] - c) @ w, (v[outline] - c) @ u)
    outline = outline[np.argsort(ang)]
    k = len(v)
    faces = np.array([[k, a, b] for a, b in zip(outline, np.roll(outline, -1))], dtype=np.int64)
    # counter-clockwise about w x u = -n would face inward; flip to match the outward normal
    if np.cross(v[outline[0]] - c, v[outline[1]] - c) @ n < 0:
        faces = faces[:, [0, 2, 1]]
    return c, faces


def hull_closure(mesh: AnnotatedMesh):
    """Watertight hull as ``(new_vertices, faces)``; face indices past ``n_vertices`` are new.

    A hull facet tiled by original faces (all on its plane, same total area)
    keeps that tiling, so a closed convex input is reproduced exactly. An
    uncovered facet whose outline carries extra vertices from neighbouring
    tilings is fanned from a new centroid vertex so no T-junctions appear.
    """
    v = mesh.vertices
    centered = v - v.mean(axis=0)
    if len(v) < 4 or np.linalg.matrix_rank(centered, tol=1e-9 * max(1.0, np.abs(centered).max())) < 3:
        raise MeshError("degenerate hull: vertices are coplanar")
    try:
        hull = ConvexHull(v)
    except QhullError as exc:
        raise MeshError(f"degenerate hull: {exc}") from None
    scale = float(np.ptp(v, axis=0).max())
    tol = 1e-7 * max(scale, 1.0)
    tri = _outward(v, hull.simplices, hull.equations)
    out, extra = [], []
    for group in _facet_groups(hull, scale):
        n, d = hull.equations[group[0], :3], hull.equations[group[0], 3]
        on_plane = np.abs(v @ n + d) < tol
        cand = mesh.faces[np.all(on_plane[mesh.faces], axis=1)]
        facet_area = triangle_areas(v, tri[group]).sum()
        if len(cand) and abs(triangle_areas(v, cand).sum() - facet_area) < 1e-9 * max(facet_area, 1.0):
            out.append(cand)
            continue
        fan = _boundary_fan(v, sorted(set(tri[group].ravel().tolist())), n, tol)
        if fan is None:
            out.append(tri[group])
        else:
            c, faces = fan
            faces[:, 0] += len(extra)
            extra.append(c)
            out.append(faces)
    return np.asarray(extra, dtype=np.float64).reshape(-1, 3), np.concatenate(out)


def convex_hull_faces(mesh: AnnotatedMesh) -> np.ndarray:
    """Faces of :func:`hull_closure`; indices past ``n_vertices`` refer to its new vertices."""
    return hull_closure(mesh)[1]


def boundary_loops(faces) -> list[list[int]]:
    """Boundary loops, each oriented so a fan over it continues the surface."""
    counts = edge_face_counts(faces)
    nxt = defaultdict(list)
    for f in np.asarray(faces):
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            if counts[(min(a, b), max(a, b))] == 1:
                nxt[int(b)].append(int(a))
    loops = []
    for start in sorted(nxt):
        while nxt[start]:
            loop = [start]
            cur = nxt[start].pop(0)
            while cur != start and nxt.get(cur):
                loop.append(cur)
                cur = nxt[cur].pop(0)
            if cur == start and len(loop) >= 3:
                loops.append(loop)
    return loops


def fill_small_holes(vertices, faces, max_perimeter=SMALL_HOLE_PERIMETER):
    """Fan-triangulate boundary loops shorter than ``max_perimeter``."""
    new = []
    for loop in boundary_loops(faces):
        pts = vertices[loop]
        perim = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum()
        if perim < max_perimeter:
            for k in range(1, len(loop) - 1):
                new.append([loop[0], loop[k], loop[k + 1]])
    if not new:
        return faces, 0
    new = np.asarray(new, dtype=np.int64)
    new = new[triangle_areas(vertices, new) > 1e-14]
    return np.concatenate([faces, new]), len(new)


def close_mesh(mesh: AnnotatedMesh, *, return_hull=False, max_hole_perimeter=SMALL_HOLE_PERIMETER):
    """Close a scanned scene by merging it with its convex hull.

    Hull vertices are input vertices plus one centroid per fanned facet;
    each takes the label of its nearest original vertex. Hull faces that
    duplicate existing faces are not added twice. Interior
    boundary loops shorter than ``max_hole_perimeter`` meters are then fanned
    shut using the loop's own vertices.

    Returns the closed mesh, and the hull sub-mesh faces when ``return_hull``.
    """
    new_verts, hull_faces = hull_closure(mesh)
    verts = np.concatenate([mesh.vertices, new_verts])
    labels = np.concatenate([mesh.vertex_labels, np.empty(len(new_verts), dtype=mesh.vertex_labels.dtype)])
    hull_verts = np.unique(hull_faces)
    # hull vertices take the label of the nearest original vertex; identity for
    # original ones, a real lookup for facet centroids
    _, nearest = cKDTree(mesh.vertices).query(verts[hull_verts])
    labels[hull_verts] = mesh.vertex_labels[nearest]

    existing = {tuple(sorted(f)) for f in mesh.faces.tolist()}
    extra = [f for f in hull_faces.tolist() if tuple(sorted(f)) not in existing]
    faces = mesh.faces if not extra else np.concatenate([mesh.faces, np.asarray(extra, dtype=np.int64)])
    faces, n_filled = fill_small_holes(verts, faces, max_hole_perimeter)
    if extra or n_filled:
        log.info("close_mesh: +%d hull faces, +%d hole faces", len(extra), n_filled)
    closed = AnnotatedMesh(verts, faces, labels)
    return (closed, hull_faces) if return_hull else closed
