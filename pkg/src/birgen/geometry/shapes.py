"""Synthetic labeled meshes: shoebox rooms, open rooms and spheres."""

from __future__ import annotations

import numpy as np

from .io import clean_mesh
from .mesh import AnnotatedMesh


def _grid_quad(origin, u, v, nu, nv):
    """Triangulated (nu x nv) grid spanning origin + [0,1]u + [0,1]v."""
    s = np.linspace(0.0, 1.0, nu + 1)
    t = np.linspace(0.0, 1.0, nv + 1)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    pts = origin + ss[..., None] * u + tt[..., None] * v
    idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return pts.reshape(-1, 3), faces


def box_mesh(size=(5.0, 4.0, 3.0), origin=(0.0, 0.0, 0.0), subdivisions=1,
             open_faces=(), labels=None) -> AnnotatedMesh:
    """Axis-aligned shoebox with inward-facing triangles.

    ``open_faces`` names sides to omit (``"ceiling"``, ``"floor"``, ``"x0"``,
    ``"x1"``, ``"y0"``, ``"y1"``). Vertex labels come from ``labels`` (side
    name -> label); defaults are floor / ceiling / wall, with floor and
    ceiling winning on shared edges.
    """
    sx, sy, sz = size
    o = np.asarray(origin, dtype=np.float64)
    n = subdivisions
    ex, ey, ez = np.array([sx, 0, 0.]), np.array([0, sy, 0.]), np.array([0, 0, sz])
    # (name, origin, u, v) with u x v pointing into the room
    sides = [
        ("floor", o, ey, ex), ("ceiling", o + ez, ex, ey),
        ("y0", o, ex, ez), ("y1", o + ey, ez, ex),
        ("x0", o, ez, ey), ("x1", o + ex, ey, ez),
    ]
    names = {"floor": "floor", "ceiling": "ceiling", "x0": "wall", "x1": "wall",
             "y0": "wall", "y1": "wall"}
    if labels:
        names.update(labels)
    verts, faces, labs, prio = [], [], [], []
    offset = 0
    rank = {"floor": 0, "ceiling": 1}
    for name, org, u, v in sides:
        if name in open_faces:
            continue
        p, f = _grid_quad(org, u, v, n, n)
        verts.append(p)
        faces.append(f + offset)
        labs += [names[name]] * len(p)
        prio += [rank.get(name, 2)] * len(p)
        offset += len(p)
    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    labs = np.asarray(labs)
    # sort so the preferred label is first within each duplicate cluster
    order = np.lexsort((np.arange(len(verts)), np.asarray(prio)))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    v, f, lab, _ = clean_mesh(verts[order], inv[faces], labs[order])
    return AnnotatedMesh(v, f, lab)


def open_box_mesh(size=(5.0, 4.0, 3.0), origin=(0.0, 0.0, 0.0), subdivisions=1,
                  missing=("ceiling",)) -> AnnotatedMesh:
    return box_mesh(size, origin, subdivisions, open_faces=missing)


def uv_sphere(n_lat=20, n_lon=40, radius=1.0, center=(0.0, 0.0, 0.0),
              split_labels=("wall", "floor")) -> AnnotatedMesh:
    """Closed UV sphere; upper hemisphere gets the first label, lower the second."""
    c = np.asarray(center, dtype=np.float64)
    theta = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    phi = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], -1)
    verts = np.concatenate([[[0, 0, 1.0]], ring.reshape(-1, 3), [[0, 0, -1.0]]])
    top, bottom = 0, len(verts) - 1
    faces = []
    ridx = lambda i, j: 1 + i * n_lon + (j % n_lon)  # noqa: E731
    for j in range(n_lon):
        faces.append([top, ridx(0, j), ridx(0, j + 1)])
        faces.append([bottom, ridx(n_lat - 2, j + 1), ridx(n_lat - 2, j)])
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b = ridx(i, j), ridx(i + 1, j)
            cc, d = ridx(i + 1, j + 1), ridx(i, j + 1)
            faces.append([a, b, cc])
            faces.append([a, cc, d])
    labels = np.where(verts[:, 2] >= 0, split_labels[0], split_labels[1])
    return AnnotatedMesh(c + radius * verts, np.asarray(faces), labels)
