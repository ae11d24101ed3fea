"""Ray-triangle queries shared by the tracer and the position sampler."""

from __future__ import annotations

import numpy as np

# barycentric slack so rays through shared edges cannot slip between triangles
BARY_EPS = 1e-9
DET_EPS = 1e-12
T_MIN = 1e-9
SURFACE_OFFSET = 1e-6
BVH_LEAF = 4


def triangle_table(vertices, faces) -> np.ndarray:
    """Rows ``v0, e1, e2, unit normal`` (12 doubles) per face."""
    v = np.asarray(vertices, dtype=np.float64)[np.asarray(faces)]
    v0, e1, e2 = v[:, 0], v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    n = np.cross(e1, e2)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    return np.ascontiguousarray(np.hstack([v0, e1, e2, n]))


def intersect(tri, origins, dirs, t_max=None, chunk_elems=4_000_000):
    """Nearest hit of each ray against every triangle (brute force).

    Returns ``(t, face)``; misses give ``t = inf`` and ``face = -1``. Equal
    distances resolve to the lower face index.
    """
    o = np.atleast_2d(origins)
    d = np.atleast_2d(dirs)
    R, F = len(o), len(tri)
    best_t = np.full(R, np.inf)
    best_f = np.full(R, -1, dtype=np.int64)
    if R == 0 or F == 0:
        return best_t, best_f
    step = max(1, chunk_elems // F)
    v0x, v0y, v0z = tri[:, 0], tri[:, 1], tri[:, 2]
    e1x, e1y, e1z = tri[:, 3], tri[:, 4], tri[:, 5]
    e2x, e2y, e2z = tri[:, 6], tri[:, 7], tri[:, 8]
    for lo in range(0, R, step):
        sl = slice(lo, lo + step)
        ox, oy, oz = (o[sl, k:k + 1] for k in range(3))
        dx, dy, dz = (d[sl, k:k + 1] for k in range(3))
        px = dy * e2z - dz * e2y
        py = dz * e2x - dx * e2z
        pz = dx * e2y - dy * e2x
        det = e1x * px + e1y * py + e1z * pz
        ok = np.abs(det) > DET_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            sx, sy, sz = ox - v0x, oy - v0y, oz - v0z
            u = (sx * px + sy * py + sz * pz) * inv
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            ok &= (u >= -BARY_EPS) & (u <= 1 + BARY_EPS) & (v >= -BARY_EPS)
            ok &= (u + v <= 1 + BARY_EPS) & (t > T_MIN)
        if t_max is not None:
            ok &= t < np.atleast_1d(t_max)[sl, None]
        t = np.where(ok, t, np.inf)
        f = np.argmin(t, axis=1)  # first minimum, i.e. lowest index on ties
        tt = t[np.arange(len(f)), f]
        hit = np.isfinite(tt)
        best_t[sl] = tt
        best_f[sl] = np.where(hit, f, -1)
    return best_t, best_f


def count_crossings(tri, origins, direction):
    """Number of triangle crossings along a fixed direction from each origin."""
    o = np.atleast_2d(origins)
    d = np.broadcast_to(np.asarray(direction, dtype=np.float64), o.shape)
    counts = np.zeros(len(o), dtype=np.int64)
    v0, e1, e2 = tri[:, 0:3], tri[:, 3:6], tri[:, 6:9]
    p = np.cross(d[:, None, :], e2[None])
    det = np.einsum("fk,rfk->rf", e1, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = o[:, None, :] - v0[None]
        u = np.einsum("rfk,rfk->rf", s, p) * inv
        q = np.cross(s, e1[None])
        v = np.einsum("rk,rfk->rf", d, q) * inv
        t = np.einsum("fk,rfk->rf", e2, q) * inv
    ok = (np.abs(det) > DET_EPS) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
    counts += ok.sum(axis=1)
    return counts


# an irrational-ish direction avoids grazing axis-aligned edges
_PARITY_DIR = np.array([0.5773502691896258, 0.5773502691896257, 0.5773502691896259])
_PARITY_DIR = _PARITY_DIR + np.array([0.0123, -0.0071, 0.0031])
_PARITY_DIR /= np.linalg.norm(_PARITY_DIR)


def points_inside(tri, points) -> np.ndarray:
    """Ray-parity point-in-mesh test (mesh assumed closed)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return count_crossings(tri, pts, _PARITY_DIR) % 2 == 1


def point_triangle_distance(points, tri) -> np.ndarray:
    """Unsigned distance from each point to the nearest triangle, shape (P,)."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = tri[:, 0:3]
    b = a + tri[:, 3:6]
    c = a + tri[:, 6:9]
    best = np.full(len(P), np.inf)
    step = max(1, 2_000_000 // max(len(tri), 1))
    for lo in range(0, len(P), step):
        p = P[lo:lo + step, None, :]
        best[lo:lo + step] = np.sqrt(_sq_dist_tri(p, a[None], b[None], c[None]).min(axis=1))
    return best


def _sq_dist_tri(p, a, b, c):
    """Squared point-triangle distance (Ericson, Real-Time Collision Detection 5.1.5)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    # start with the interior projection and overwrite by Voronoi region
    q = a + ab * v_in[..., None] + ac * w_in[..., None]
    r_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    q = np.where(r_bc[..., None], b + (c - b) * t_bc[..., None], q)
    r_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    q = np.where(r_ac[..., None], a + ac * t_ac[..., None], q)
    q = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, q)
    r_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    q = np.where(r_ab[..., None], a + ab * t_ab[..., None], q)
    q = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, q)
    q = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, q)
    diff = p - q
    return np.sum(diff * diff, -1)


def build_bvh(tri, leaf_size=BVH_LEAF):
    """Median-split BVH over triangle centroids.

    Returns a dict of flat arrays: ``bmin``/``bmax`` (M, 3), ``left``/``right``
    child indices (-1 for leaves), ``start``/``count`` into ``order``.
    """
    v0 = tri[:, 0:3]
    verts = np.stack([v0, v0 + tri[:, 3:6], v0 + tri[:, 6:9]], axis=1)
    lo_t, hi_t = verts.min(axis=1), verts.max(axis=1)
    cent = verts.mean(axis=1)
    order = np.arange(len(tri))
    bmin, bmax, left, right, start, count = [], [], [], [], [], []

    def node(s, e):
        i = len(bmin)
        idx = order[s:e]
        bmin.append(lo_t[idx].min(axis=0))
        bmax.append(hi_t[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return i

    root = node(0, len(tri))
    stack = [(root, 0, len(tri))]
    while stack:
        i, s, e = stack.pop()
        if e - s <= leaf_size:
            continue
        c = cent[order[s:e]]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        srt = np.argsort(c[:, axis], kind="stable")
        order[s:e] = order[s:e][srt]
        m = (s + e) // 2
        li, ri = node(s, m), node(m, e)
        left[i], right[i], count[i] = li, ri, 0
        stack += [(li, s, m), (ri, m, e)]
    return {
        "bmin": np.ascontiguousarray(bmin, dtype=np.float64),
        "bmax": np.ascontiguousarray(bmax, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "start": np.asarray(start, dtype=np.int64),
        "count": np.asarray(count, dtype=np.int64),
        "order": order.astype(np.int64),
    }
