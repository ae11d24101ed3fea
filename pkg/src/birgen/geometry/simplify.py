"""Quadric-error edge collapse that carries vertex labels through collapses.

The collapse loop has a compiled implementation in ``birgen._kernels.qem``
and a pure-Python twin here; both follow the same arithmetic and heap
ordering.
"""

from __future__ import annotations

import heapq
import logging
import math

import numpy as np

from .. import _kernels
from .mesh import AnnotatedMesh, MeshError, edge_face_counts

log = logging.getLogger(__name__)

BOUNDARY_PENALTY = 1e3
SEAM_PENALTY = 1e2
# prefers short edges among equal-error candidates (flat regions)
LENGTH_TIEBREAK = 1e-12


def _qerr(q, x, y, z):
    return (q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + q[3] * y * y
            + 2 * q[4] * y * z + q[5] * z * z
            + 2 * (q[6] * x + q[7] * y + q[8] * z) + q[9])


def _optimal(q, pa, pb):
    a11, a12, a13, a22, a23, a33, b1, b2, b3 = q[:9]
    det = (a11 * (a22 * a33 - a23 * a23) - a12 * (a12 * a33 - a23 * a13)
           + a13 * (a12 * a23 - a22 * a13))
    scale = max(abs(a11), abs(a22), abs(a33), 1e-300)
    mx, my, mz = (pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5, (pa[2] + pb[2]) * 0.5
    if abs(det) > 1e-10 * scale * scale * scale:
        r1, r2, r3 = -b1, -b2, -b3
        x = (r1 * (a22 * a33 - a23 * a23) - a12 * (r2 * a33 - a23 * r3)
             + a13 * (r2 * a23 - a22 * r3)) / det
        y = (a11 * (r2 * a33 - a23 * r3) - r1 * (a12 * a33 - a23 * a13)
             + a13 * (a12 * r3 - r2 * a13)) / det
        z = (a11 * (a22 * r3 - r2 * a23) - a12 * (a12 * r3 - r2 * a13)
             + r1 * (a12 * a23 - a22 * a13)) / det
        dx, dy, dz = pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]
        span2 = dx * dx + dy * dy + dz * dz
        ox, oy, oz = x - mx, y - my, z - mz
        # reject solutions far from the edge (ill-conditioned flats)
        if ox * ox + oy * oy + oz * oz <= 4.0 * span2:
            return x, y, z, _qerr(q, x, y, z)
    best = None
    for p in ((mx, my, mz), pa, pb):
        e = _qerr(q, p[0], p[1], p[2])
        if best is None or e < best[3] - 1e-15:
            best = (p[0], p[1], p[2], e)
    return best


def _cross(p0, p1, p2):
    ux, uy, uz = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    vx, vy, vz = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    return (uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx)


def initial_quadrics(verts, faces, labels):
    """Area-weighted plane quadrics plus constraint planes on boundaries and label seams.

    Rows hold the 10 unique coefficients ``a11 a12 a13 a22 a23 a33 b1 b2 b3 c``.
    """
    V = len(verts)
    Q = np.zeros((V, 10))
    p0, p1, p2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    cr = np.cross(p1 - p0, p2 - p0)
    dbl_area = np.linalg.norm(cr, axis=1)
    n = cr / np.maximum(dbl_area, 1e-300)[:, None]
    d = -np.einsum("ij,ij->i", n, p0)
    w = 0.5 * dbl_area
    for k in range(3):
        np.add.at(Q, faces[:, k], _plane_terms(n, d, w))
    counts = edge_face_counts(faces)
    labels = np.asarray(labels)
    ea = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    fidx = np.repeat(np.arange(len(faces)), 3)
    key = np.sort(ea, axis=1)
    boundary = np.array([counts[(a, b)] == 1 for a, b in key.tolist()], dtype=bool)
    seam = labels[ea[:, 0]] != labels[ea[:, 1]]
    sel = boundary | seam
    if sel.any():
        a, b, fi = ea[sel, 0], ea[sel, 1], fidx[sel]
        e = verts[b] - verts[a]
        pn = np.cross(e, n[fi])
        nn = np.linalg.norm(pn, axis=1)
        ok = nn > 1e-300
        a, b, e, pn, nn = a[ok], b[ok], e[ok], pn[ok], nn[ok]
        pn /= nn[:, None]
        pen = np.where(boundary[sel][ok], BOUNDARY_PENALTY, SEAM_PENALTY)
        terms = _plane_terms(pn, -np.einsum("ij,ij->i", pn, verts[a]),
                             pen * np.einsum("ij,ij->i", e, e))
        np.add.at(Q, a, terms)
        np.add.at(Q, b, terms)
    return Q


def _plane_terms(n, d, w):
    return np.stack([n[:, 0] ** 2, n[:, 0] * n[:, 1], n[:, 0] * n[:, 2], n[:, 1] ** 2,
                     n[:, 1] * n[:, 2], n[:, 2] ** 2, n[:, 0] * d, n[:, 1] * d,
                     n[:, 2] * d, d * d], axis=1) * w[:, None]


def collapse_loop_py(verts, faces, Q, label_ids, target):
    """Reference collapse loop. Returns ``(positions, faces, face_alive, label_ids)``."""
    Q = [list(map(float, row)) for row in Q]
    pos = [tuple(map(float, p)) for p in verts]
    faces = [list(map(int, f)) for f in faces]
    labels = [int(x) for x in label_ids]
    face_alive = [True] * len(faces)
    vfaces = [set() for _ in range(len(pos))]
    for fi, f in enumerate(faces):
        for v in f:
            vfaces[v].add(fi)
    alive = [True] * len(pos)
    version = [0] * len(pos)
    n_alive = len(faces)
    heap = []

    def neighbors(v):
        out = set()
        for fi in vfaces[v]:
            out.update(faces[fi])
        out.discard(v)
        return out

    def push(a, b):
        if a > b:
            a, b = b, a
        qa, qb = Q[a], Q[b]
        q = [qa[k] + qb[k] for k in range(10)]
        x, y, z, err = _optimal(q, pos[a], pos[b])
        pa, pb = pos[a], pos[b]
        len2 = (pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2 + (pa[2] - pb[2]) ** 2
        cost = (err if err > 0.0 else 0.0) + LENGTH_TIEBREAK * len2
        heapq.heappush(heap, (cost, a, b, version[a], version[b], x, y, z))

    edges = set()
    for f in faces:
        for x, y in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            edges.add((x, y) if x < y else (y, x))
    for a, b in sorted(edges):
        push(a, b)

    def collapse_ok(a, b, p):
        shared = vfaces[a] & vfaces[b]
        if len(neighbors(a) & neighbors(b)) != len(shared):  # link condition
            return False
        for v in (a, b):
            for fi in vfaces[v]:
                if fi in shared:
                    continue
                f = faces[fi]
                old = _cross(pos[f[0]], pos[f[1]], pos[f[2]])
                pts = [p if u == a or u == b else pos[u] for u in f]
                new = _cross(pts[0], pts[1], pts[2])
                dot = old[0] * new[0] + old[1] * new[1] + old[2] * new[2]
                nn = new[0] * new[0] + new[1] * new[1] + new[2] * new[2]
                no = old[0] * old[0] + old[1] * old[1] + old[2] * old[2]
                if nn <= 1e-28 * no or dot <= 0.0:
                    return False
        return True

    while n_alive > target and heap:
        _, a, b, va, vb, x, y, z = heapq.heappop(heap)
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        p = (x, y, z)
        if not collapse_ok(a, b, p):
            continue
        ea, eb = _qerr(Q[a], x, y, z), _qerr(Q[b], x, y, z)
        # a < b, so ties keep a's label
        lab = labels[a] if ea <= eb else labels[b]
        shared = vfaces[a] & vfaces[b]
        for fi in shared:
            face_alive[fi] = False
            n_alive -= 1
            for u in faces[fi]:
                vfaces[u].discard(fi)
        for fi in vfaces[b]:
            faces[fi] = [a if u == b else u for u in faces[fi]]
            vfaces[a].add(fi)
        vfaces[b] = set()
        alive[b] = False
        pos[a] = p
        labels[a] = lab
        Q[a] = [Q[a][k] + Q[b][k] for k in range(10)]
        version[a] += 1
        version[b] += 1
        for u in sorted(neighbors(a)):
            push(a, u)
    return (np.asarray(pos, dtype=np.float64), np.asarray(faces, dtype=np.int64),
            np.asarray(face_alive, dtype=bool), np.asarray(labels, dtype=np.int64))


def simplify(mesh: AnnotatedMesh, target_ratio: float, backend: str | None = None) -> AnnotatedMesh:
    """Collapse edges by quadric error until ``ceil(ratio * F)`` faces remain.

    At each collapse the survivor takes the label of whichever endpoint has
    the smaller quadric error at the new position (ties go to the lower
    index), so the output label set is a subset of the input's.

    Parameters
    ----------
    mesh : AnnotatedMesh
    target_ratio : float
        Fraction of faces to keep, in (0, 1].
    backend : {"compiled", "python"}, optional
        Defaults to the compiled kernel when it is importable.
    """
    if not 0 < target_ratio <= 1:
        raise ValueError("target_ratio must be in (0, 1]")
    F0 = mesh.n_faces
    if F0 < 8:
        raise MeshError("simplify needs at least 8 faces")
    target = math.ceil(target_ratio * F0)
    if target < 4:
        log.warning("target of %d faces clamped to 4", target)
        target = 4
    if target >= F0:
        return mesh

    names, label_ids = np.unique(mesh.vertex_labels, return_inverse=True)
    Q = initial_quadrics(mesh.vertices, mesh.faces, mesh.vertex_labels)
    loop = _kernels.pick("qem", backend)
    if loop is None:
        loop = collapse_loop_py
    else:
        loop = loop.collapse_loop
    pos, faces, face_alive, lab = loop(mesh.vertices, mesh.faces, Q,
                                       label_ids.astype(np.int64), int(target))
    keep_f = faces[face_alive]
    if len(keep_f) > target:
        log.warning("simplify stopped at %d faces (target %d): no legal collapses left",
                    len(keep_f), target)
    used = np.unique(keep_f)
    remap = np.full(len(pos), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return AnnotatedMesh(pos[used], remap[keep_f], names[lab[used]])
