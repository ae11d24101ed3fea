# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled ray loop with BVH traversal; mirrors ``raytracer.kernel_py.trace_rays``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, fabs, INFINITY, M_PI
from libc.stdint cimport uint64_t
from libcpp.vector cimport vector

cdef double BARY_EPS = 1e-9
cdef double DET_EPS = 1e-12
cdef double T_MIN = 1e-9
cdef double SURFACE_OFFSET = 1e-6
cdef double TWO_PI = 2.0 * M_PI


cdef inline uint64_t splitmix64(uint64_t x) noexcept nogil:
    cdef uint64_t z = x + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t key, long ray, long bounce, int slot) noexcept nogil:
    cdef uint64_t bs = ((<uint64_t>bounce) << 3) | (<uint64_t>slot)
    cdef uint64_t z = splitmix64(splitmix64(key ^ (<uint64_t>ray)) ^ bs)
    return <double>(z >> 11) * (1.0 / 9007199254740992.0)


cdef struct Hit:
    double t
    long f


cdef inline void tri_test(const double* tr, long fi, double ox, double oy, double oz,
                          double dx, double dy, double dz, Hit* best) noexcept nogil:
    cdef double v0x = tr[0], v0y = tr[1], v0z = tr[2]
    cdef double e1x = tr[3], e1y = tr[4], e1z = tr[5]
    cdef double e2x = tr[6], e2y = tr[7], e2z = tr[8]
    cdef double px = dy * e2z - dz * e2y
    cdef double py = dz * e2x - dx * e2z
    cdef double pz = dx * e2y - dy * e2x
    cdef double det = e1x * px + e1y * py + e1z * pz
    if not fabs(det) > DET_EPS:
        return
    cdef double inv = 1.0 / det
    cdef double sx = ox - v0x, sy = oy - v0y, sz = oz - v0z
    cdef double u = (sx * px + sy * py + sz * pz) * inv
    if not (u >= -BARY_EPS and u <= 1 + BARY_EPS):
        return
    cdef double qx = sy * e1z - sz * e1y
    cdef double qy = sz * e1x - sx * e1z
    cdef double qz = sx * e1y - sy * e1x
    cdef double v = (dx * qx + dy * qy + dz * qz) * inv
    if not (v >= -BARY_EPS and u + v <= 1 + BARY_EPS):
        return
    cdef double t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if not t > T_MIN:
        return
    if t < best.t or (t == best.t and fi < best.f):
        best.t = t
        best.f = fi


cdef inline double box_entry(const double* lo, const double* hi, double ox, double oy, double oz,
                             double ix, double iy, double iz) noexcept nogil:
    """Entry distance of the ray into the box, or INFINITY if it misses."""
    cdef double t0, t1, tmin = -INFINITY, tmax = INFINITY, a, b
    a = (lo[0] - ox) * ix; b = (hi[0] - ox) * ix
    if a > b: a, b = b, a
    if a > tmin: tmin = a
    if b < tmax: tmax = b
    a = (lo[1] - oy) * iy; b = (hi[1] - oy) * iy
    if a > b: a, b = b, a
    if a > tmin: tmin = a
    if b < tmax: tmax = b
    a = (lo[2] - oz) * iz; b = (hi[2] - oz) * iz
    if a > b: a, b = b, a
    if a > tmin: tmin = a
    if b < tmax: tmax = b
    # NaN from 0 * inf (ray in a box face plane) falls through as "overlap"
    if tmax < tmin or tmax < 0:
        return INFINITY
    return tmin


cdef void nearest(const double[:, ::1] tri, const double[:, ::1] bmin, const double[:, ::1] bmax,
                  const long[::1] left, const long[::1] right, const long[::1] start,
                  const long[::1] count, const long[::1] order,
                  double ox, double oy, double oz, double dx, double dy, double dz,
                  vector[long]& stack, Hit* best) noexcept nogil:
    cdef double ix = 1.0 / dx, iy = 1.0 / dy, iz = 1.0 / dz
    cdef long node, k, l, r
    cdef double tl, tr_
    best.t = INFINITY
    best.f = -1
    stack.clear()
    if box_entry(&bmin[0, 0], &bmax[0, 0], ox, oy, oz, ix, iy, iz) == INFINITY:
        return
    stack.push_back(0)
    while stack.size():
        node = stack.back()
        stack.pop_back()
        if left[node] < 0:
            for k in range(start[node], start[node] + count[node]):
                tri_test(&tri[order[k], 0], order[k], ox, oy, oz, dx, dy, dz, best)
            continue
        l = left[node]
        r = right[node]
        tl = box_entry(&bmin[l, 0], &bmax[l, 0], ox, oy, oz, ix, iy, iz)
        tr_ = box_entry(&bmin[r, 0], &bmax[r, 0], ox, oy, oz, ix, iy, iz)
        # push the farther child first; prune boxes beyond the current best
        if tl <= tr_:
            if tr_ <= best.t:
                stack.push_back(r)
            if tl <= best.t:
                stack.push_back(l)
        else:
            if tl <= best.t:
                stack.push_back(l)
            if tr_ <= best.t:
                stack.push_back(r)


def trace_rays(double[:, ::1] tri, double[:, ::1] alpha, double[::1] scatter, dict bvh,
               source, listener, double radius, long n_rays, long max_depth,
               double threshold, seed, long ray_start=0):
    cdef const double[:, ::1] bmin = bvh["bmin"]
    cdef const double[:, ::1] bmax = bvh["bmax"]
    cdef const long[::1] left = bvh["left"]
    cdef const long[::1] right = bvh["right"]
    cdef const long[::1] start = bvh["start"]
    cdef const long[::1] count = bvh["count"]
    cdef const long[::1] order = bvh["order"]
    cdef int nb = alpha.shape[1]
    cdef uint64_t key = splitmix64(<uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF))
    cdef double e0 = 1.0 / n_rays
    cdef double thr = threshold * e0
    cdef double sx = source[0], sy = source[1], sz = source[2]
    cdef double lx = listener[0], ly = listener[1], lz = listener[2]
    cdef double r2 = radius * radius

    cdef vector[double] out_len, out_dir, out_e
    cdef vector[long] out_ray
    cdef vector[long] stack
    cdef double E[64]
    cdef double ox, oy, oz, dx, dy, dz, dist, t, wx, wy, wz, b, ww, px, py, pz
    cdef double nx, ny, nz, dn, sgn, hx, hy, hz, u1, u2, z, rr, phi, emax, nrm
    cdef double a_, b_, t1x, t1y, t1z, t2x, t2y, t2z, cx, cy
    cdef long i, ray, bounce, f, k
    cdef Hit hit
    if nb > 64:
        raise ValueError("at most 64 bands")
    if tri.shape[0] == 0:
        raise ValueError("empty triangle table")

    with nogil:
        for i in range(n_rays):
            ray = ray_start + i
            ox = sx; oy = sy; oz = sz
            u1 = uniform(key, ray, 0, 1)
            u2 = uniform(key, ray, 0, 2)
            z = 1.0 - 2.0 * u1
            rr = 1.0 - z * z
            rr = sqrt(rr if rr > 0.0 else 0.0)
            phi = TWO_PI * u2
            dx = rr * cos(phi); dy = rr * sin(phi); dz = z
            for k in range(nb):
                E[k] = e0
            dist = 0.0
            bounce = 0
            while True:
                nearest(tri, bmin, bmax, left, right, start, count, order,
                        ox, oy, oz, dx, dy, dz, stack, &hit)
                t = hit.t
                f = hit.f
                if bounce >= 1:
                    wx = lx - ox; wy = ly - oy; wz = lz - oz
                    b = wx * dx + wy * dy + wz * dz
                    ww = wx * wx + wy * wy + wz * wz
                    if b >= 0.0 and b <= t and ww - b * b <= r2:
                        out_len.push_back(dist + b)
                        out_dir.push_back(dx); out_dir.push_back(dy); out_dir.push_back(dz)
                        for k in range(nb):
                            out_e.push_back(E[k])
                        out_ray.push_back(ray)
                if f < 0:
                    break
                px = ox + t * dx; py = oy + t * dy; pz = oz + t * dz
                dist = dist + t
                bounce += 1
                emax = -INFINITY
                for k in range(nb):
                    E[k] = E[k] * (1.0 - alpha[f, k])
                    if E[k] > emax:
                        emax = E[k]
                if bounce >= max_depth:
                    break
                if not emax >= thr:
                    break
                nx = tri[f, 9]; ny = tri[f, 10]; nz = tri[f, 11]
                dn = dx * nx + dy * ny + dz * nz
                sgn = 1.0 if dn < 0.0 else -1.0
                hx = sgn * nx; hy = sgn * ny; hz = sgn * nz
                dx = dx - (2.0 * dn) * nx
                dy = dy - (2.0 * dn) * ny
                dz = dz - (2.0 * dn) * nz
                if uniform(key, ray, bounce, 0) < scatter[f]:
                    u1 = uniform(key, ray, bounce, 1)
                    u2 = uniform(key, ray, bounce, 2)
                    sgn = 1.0 if hz >= 0.0 else -1.0
                    a_ = -1.0 / (sgn + hz)
                    b_ = hx * hy * a_
                    t1x = 1.0 + sgn * hx * hx * a_; t1y = sgn * b_; t1z = -sgn * hx
                    t2x = b_; t2y = sgn + hy * hy * a_; t2z = -hy
                    rr = sqrt(u1)
                    phi = TWO_PI * u2
                    cx = rr * cos(phi); cy = rr * sin(phi)
                    z = 1.0 - u1
                    z = sqrt(z if z > 0.0 else 0.0)
                    dx = cx * t1x + cy * t2x + z * hx
                    dy = cx * t1y + cy * t2y + z * hy
                    dz = cx * t1z + cy * t2z + z * hz
                nrm = sqrt(dx * dx + dy * dy + dz * dz)
                dx = dx / nrm; dy = dy / nrm; dz = dz / nrm
                ox = px + SURFACE_OFFSET * hx
                oy = py + SURFACE_OFFSET * hy
                oz = pz + SURFACE_OFFSET * hz

    cdef long n = out_len.size()
    length = np.empty(n, dtype=np.float64)
    direc = np.empty((n, 3), dtype=np.float64)
    energy = np.empty((n, nb), dtype=np.float64)
    rays = np.empty(n, dtype=np.int64)
    cdef double[::1] lv = length
    cdef double[:, ::1] dv = direc
    cdef double[:, ::1] ev = energy
    cdef long[::1] rv = rays
    for i in range(n):
        lv[i] = out_len[i]
        rv[i] = out_ray[i]
        for k in range(3):
            dv[i, k] = out_dir[3 * i + k]
        for k in range(nb):
            ev[i, k] = out_e[nb * i + k]
    return length, direc, energy, rays
