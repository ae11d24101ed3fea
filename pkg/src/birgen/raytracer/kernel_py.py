"""Reference ray loop, vectorized across rays; twin of ``birgen._kernels.trace``.

All live rays advance one bounce per iteration. Random numbers are keyed on
(seed, ray, bounce, slot), so each ray follows the same path it would in the
compiled per-ray loop.
"""

from __future__ import annotations

import numpy as np

from . import rng
from .geom import SURFACE_OFFSET, intersect

TWO_PI = 2.0 * np.pi


def uniform_sphere(u1, u2):
    z = 1.0 - 2.0 * u1
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = TWO_PI * u2
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def cosine_hemisphere(n, u1, u2):
    """Cosine-weighted directions about unit normals ``n`` (branchless orthonormal basis)."""
    nx, ny, nz = n[:, 0], n[:, 1], n[:, 2]
    sign = np.where(nz >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + nz)
    b = nx * ny * a
    t1 = np.stack([1.0 + sign * nx * nx * a, sign * b, -sign * nx], axis=-1)
    t2 = np.stack([b, sign + ny * ny * a, -ny], axis=-1)
    r = np.sqrt(u1)
    phi = TWO_PI * u2
    x, y = r * np.cos(phi), r * np.sin(phi)
    z = np.sqrt(np.maximum(0.0, 1.0 - u1))
    return x[:, None] * t1 + y[:, None] * t2 + z[:, None] * n


def trace_rays(tri, alpha, scatter, bvh, source, listener, radius, n_rays, max_depth,
               threshold, seed, ray_start=0):
    """Trace ``n_rays`` rays; return reflected detector crossings.

    Returns ``(path_length, direction, energy, ray_id)`` with energy per band
    before detector normalization, ordered by ray then by bounce.
    """
    key = rng.seed_key(seed)
    n_bands = alpha.shape[1]
    e0 = 1.0 / n_rays
    thr = threshold * e0
    src = np.asarray(source, dtype=np.float64)
    lst = np.asarray(listener, dtype=np.float64)
    r2 = radius * radius

    ids = np.arange(ray_start, ray_start + n_rays, dtype=np.int64)
    o = np.tile(src, (n_rays, 1))
    d = uniform_sphere(rng.uniform(key, ids, 0, 1), rng.uniform(key, ids, 0, 2))
    energy = np.full((n_rays, n_bands), e0)
    dist = np.zeros(n_rays)
    bounce = 0
    rec_len, rec_dir, rec_e, rec_ray, rec_b = [], [], [], [], []

    while len(ids):
        t, f = intersect(tri, o, d)
        if bounce >= 1:
            w = lst - o
            b = w[:, 0] * d[:, 0] + w[:, 1] * d[:, 1] + w[:, 2] * d[:, 2]
            ww = w[:, 0] * w[:, 0] + w[:, 1] * w[:, 1] + w[:, 2] * w[:, 2]
            det = (b >= 0.0) & (b <= t) & (ww - b * b <= r2)
            if det.any():
                rec_len.append(dist[det] + b[det])
                rec_dir.append(d[det])
                rec_e.append(energy[det])
                rec_ray.append(ids[det])
                rec_b.append(np.full(int(det.sum()), bounce))
        hit = f >= 0
        ids, o, d, energy, dist, t, f = (a[hit] for a in (ids, o, d, energy, dist, t, f))
        if not len(ids):
            break
        p = o + t[:, None] * d
        dist = dist + t
        bounce += 1
        energy = energy * (1.0 - alpha[f])
        if bounce >= max_depth:
            break
        alive = energy.max(axis=1) >= thr
        ids, d, energy, dist, f, p = (a[alive] for a in (ids, d, energy, dist, f, p))
        if not len(ids):
            break
        n = tri[f, 9:12]
        dn = d[:, 0] * n[:, 0] + d[:, 1] * n[:, 1] + d[:, 2] * n[:, 2]
        side = np.where(dn < 0.0, 1.0, -1.0)[:, None] * n  # normal facing the incoming ray
        diffuse = rng.uniform(key, ids, bounce, 0) < scatter[f]
        spec = d - (2.0 * dn)[:, None] * n
        new_d = spec
        if diffuse.any():
            u1 = rng.uniform(key, ids[diffuse], bounce, 1)
            u2 = rng.uniform(key, ids[diffuse], bounce, 2)
            new_d = spec.copy()
            new_d[diffuse] = cosine_hemisphere(side[diffuse], u1, u2)
        nrm = np.sqrt(new_d[:, 0] ** 2 + new_d[:, 1] ** 2 + new_d[:, 2] ** 2)
        d = new_d / nrm[:, None]
        o = p + SURFACE_OFFSET * side

    if not rec_len:
        return (np.zeros(0), np.zeros((0, 3)), np.zeros((0, n_bands)), np.zeros(0, dtype=np.int64))
    length = np.concatenate(rec_len)
    direc = np.concatenate(rec_dir)
    en = np.concatenate(rec_e)
    ray = np.concatenate(rec_ray)
    order = np.lexsort((np.concatenate(rec_b), ray))
    return length[order], direc[order], en[order], ray[order]


def occluded(tri, a, b) -> bool:
    """True if a triangle lies strictly between points ``a`` and ``b``."""
    seg = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    length = float(np.linalg.norm(seg))
    t, _ = intersect(tri, np.asarray(a, dtype=np.float64)[None], (seg / length)[None],
                     t_max=np.array([length]))
    return bool(np.isfinite(t[0]))
