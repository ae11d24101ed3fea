# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled edge-collapse loop; mirrors ``geometry.simplify.collapse_loop_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libcpp.vector cimport vector
from libcpp.algorithm cimport sort as csort, unique as cunique

cdef double LENGTH_TIEBREAK = 1e-12

cdef extern from *:
    """
    #include <queue>
    #include <vector>
    struct Cand { double cost; long a, b, va, vb; double x, y, z; };
    // max-heap comparator inverted: smallest (cost, a, b, va, vb) pops first,
    // matching the Python heap's tuple order
    struct CandLess {
        bool operator()(const Cand& l, const Cand& r) const {
            if (l.cost != r.cost) return l.cost > r.cost;
            if (l.a != r.a) return l.a > r.a;
            if (l.b != r.b) return l.b > r.b;
            if (l.va != r.va) return l.va > r.va;
            return l.vb > r.vb;
        }
    };
    typedef std::priority_queue<Cand, std::vector<Cand>, CandLess> CandQueue;
    """
    ctypedef struct Cand:
        double cost
        long a
        long b
        long va
        long vb
        double x
        double y
        double z

    cdef cppclass cand_queue "CandQueue":
        cand_queue() except +
        bint empty() nogil
        void push(Cand&) nogil
        Cand& top() nogil
        void pop() nogil


cdef inline double qerr(double* q, double x, double y, double z) noexcept nogil:
    return (q[0] * x * x + 2 * q[1] * x * y + 2 * q[2] * x * z + q[3] * y * y
            + 2 * q[4] * y * z + q[5] * z * z
            + 2 * (q[6] * x + q[7] * y + q[8] * z) + q[9])


cdef inline void optimal(double* q, double* pa, double* pb, double* out) noexcept nogil:
    cdef double a11 = q[0], a12 = q[1], a13 = q[2], a22 = q[3], a23 = q[4], a33 = q[5]
    cdef double b1 = q[6], b2 = q[7], b3 = q[8]
    cdef double det = (a11 * (a22 * a33 - a23 * a23) - a12 * (a12 * a33 - a23 * a13)
                       + a13 * (a12 * a23 - a22 * a13))
    cdef double scale = fabs(a11)
    if fabs(a22) > scale: scale = fabs(a22)
    if fabs(a33) > scale: scale = fabs(a33)
    if 1e-300 > scale: scale = 1e-300
    cdef double mx = (pa[0] + pb[0]) * 0.5, my = (pa[1] + pb[1]) * 0.5, mz = (pa[2] + pb[2]) * 0.5
    cdef double r1, r2, r3, x, y, z, dx, dy, dz, span2, ox, oy, oz, e, best
    cdef int k
    cdef double cand[9]
    if fabs(det) > 1e-10 * scale * scale * scale:
        r1 = -b1; r2 = -b2; r3 = -b3
        x = (r1 * (a22 * a33 - a23 * a23) - a12 * (r2 * a33 - a23 * r3)
             + a13 * (r2 * a23 - a22 * r3)) / det
        y = (a11 * (r2 * a33 - a23 * r3) - r1 * (a12 * a33 - a23 * a13)
             + a13 * (a12 * r3 - r2 * a13)) / det
        z = (a11 * (a22 * r3 - r2 * a23) - a12 * (a12 * r3 - r2 * a13)
             + r1 * (a12 * a23 - a22 * a13)) / det
        dx = pb[0] - pa[0]; dy = pb[1] - pa[1]; dz = pb[2] - pa[2]
        span2 = dx * dx + dy * dy + dz * dz
        ox = x - mx; oy = y - my; oz = z - mz
        if ox * ox + oy * oy + oz * oz <= 4.0 * span2:
            out[0] = x; out[1] = y; out[2] = z; out[3] = qerr(q, x, y, z)
            return
    cand[0] = mx; cand[1] = my; cand[2] = mz
    cand[3] = pa[0]; cand[4] = pa[1]; cand[5] = pa[2]
    cand[6] = pb[0]; cand[7] = pb[1]; cand[8] = pb[2]
    for k in range(3):
        e = qerr(q, cand[3 * k], cand[3 * k + 1], cand[3 * k + 2])
        if k == 0 or e < best - 1e-15:
            best = e
            out[0] = cand[3 * k]; out[1] = cand[3 * k + 1]; out[2] = cand[3 * k + 2]; out[3] = e


cdef inline void cross3(double* p0, double* p1, double* p2, double* o) noexcept nogil:
    cdef double ux = p1[0] - p0[0], uy = p1[1] - p0[1], uz = p1[2] - p0[2]
    cdef double vx = p2[0] - p0[0], vy = p2[1] - p0[1], vz = p2[2] - p0[2]
    o[0] = uy * vz - uz * vy
    o[1] = uz * vx - ux * vz
    o[2] = ux * vy - uy * vx


cdef inline void erase_value(vector[long]& v, long x) noexcept nogil:
    cdef size_t i
    for i in range(v.size()):
        if v[i] == x:
            v[i] = v.back()
            v.pop_back()
            return


cdef inline bint contains(vector[long]& v, long x) noexcept nogil:
    cdef size_t i
    for i in range(v.size()):
        if v[i] == x:
            return True
    return False


cdef void neighbors(vector[vector[long]]& vfaces, long[:, ::1] faces, long v,
                    vector[long]& out) noexcept nogil:
    out.clear()
    cdef size_t i
    cdef int k
    cdef long fi, u
    for i in range(vfaces[v].size()):
        fi = vfaces[v][i]
        for k in range(3):
            u = faces[fi, k]
            if u != v:
                out.push_back(u)
    csort(out.begin(), out.end())
    out.erase(cunique(out.begin(), out.end()), out.end())


def collapse_loop(double[:, ::1] verts, faces_in, double[:, ::1] Q_in,
                  label_ids_in, long target):
    cdef long V = verts.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pos_arr = np.array(verts, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] Q_arr = np.array(Q_in, dtype=np.float64, copy=True)
    cdef cnp.ndarray[long, ndim=2] faces_arr = np.ascontiguousarray(faces_in, dtype=np.int64).copy()
    cdef cnp.ndarray[long, ndim=1] labels_arr = np.ascontiguousarray(label_ids_in, dtype=np.int64).copy()
    cdef long F = faces_arr.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] falive_arr = np.ones(F, dtype=np.uint8)
    cdef double[:, ::1] pos = pos_arr
    cdef double[:, ::1] Q = Q_arr
    cdef long[:, ::1] faces = faces_arr
    cdef long[::1] labels = labels_arr
    cdef cnp.uint8_t[::1] face_alive = falive_arr

    cdef vector[vector[long]] vfaces
    vfaces.resize(V)
    cdef vector[char] alive
    alive.assign(V, 1)
    cdef vector[long] version
    version.assign(V, 0)
    cdef cand_queue heap
    cdef long n_alive = F
    cdef long fi, a, b, u, i, j, k, v
    cdef Cand c
    cdef double q[10]
    cdef double res[4]
    cdef double p[3]
    cdef double oldn[3]
    cdef double newn[3]
    cdef double* pts[3]
    cdef double* pp = p
    cdef double len2, ea, eb, dot, nn, no, err
    cdef vector[long] na, nb, shared
    cdef bint ok
    cdef size_t s, t

    for fi in range(F):
        for k in range(3):
            vfaces[faces[fi, k]].push_back(fi)

    # sorted unique edges, same push order as the Python loop
    e_all = np.sort(faces_arr[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    cdef long[:, ::1] edge_arr = np.ascontiguousarray(np.unique(e_all, axis=0))

    with nogil:
        for i in range(edge_arr.shape[0]):
            _push(heap, Q, pos, version, edge_arr[i, 0], edge_arr[i, 1])

        while n_alive > target and not heap.empty():
            c = heap.top()
            heap.pop()
            a = c.a; b = c.b
            if not (alive[a] and alive[b]) or version[a] != c.va or version[b] != c.vb:
                continue
            p[0] = c.x; p[1] = c.y; p[2] = c.z
            # shared faces
            shared.clear()
            for s in range(vfaces[a].size()):
                if contains(vfaces[b], vfaces[a][s]):
                    shared.push_back(vfaces[a][s])
            # link condition
            neighbors(vfaces, faces, a, na)
            neighbors(vfaces, faces, b, nb)
            j = 0
            for s in range(na.size()):
                if contains(nb, na[s]):
                    j += 1
            if j != <long>shared.size():
                continue
            ok = True
            for j in range(2):
                v = a if j == 0 else b
                for s in range(vfaces[v].size()):
                    fi = vfaces[v][s]
                    if contains(shared, fi):
                        continue
                    cross3(&pos[faces[fi, 0], 0], &pos[faces[fi, 1], 0], &pos[faces[fi, 2], 0], oldn)
                    for k in range(3):
                        u = faces[fi, k]
                        pts[k] = pp if (u == a or u == b) else &pos[u, 0]
                    cross3(pts[0], pts[1], pts[2], newn)
                    dot = oldn[0] * newn[0] + oldn[1] * newn[1] + oldn[2] * newn[2]
                    nn = newn[0] * newn[0] + newn[1] * newn[1] + newn[2] * newn[2]
                    no = oldn[0] * oldn[0] + oldn[1] * oldn[1] + oldn[2] * oldn[2]
                    if nn <= 1e-28 * no or dot <= 0.0:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                continue
            ea = qerr(&Q[a, 0], p[0], p[1], p[2])
            eb = qerr(&Q[b, 0], p[0], p[1], p[2])
            if not ea <= eb:
                labels[a] = labels[b]
            for s in range(shared.size()):
                fi = shared[s]
                face_alive[fi] = 0
                n_alive -= 1
                for k in range(3):
                    erase_value(vfaces[faces[fi, k]], fi)
            for s in range(vfaces[b].size()):
                fi = vfaces[b][s]
                for k in range(3):
                    if faces[fi, k] == b:
                        faces[fi, k] = a
                vfaces[a].push_back(fi)
            vfaces[b].clear()
            alive[b] = 0
            pos[a, 0] = p[0]; pos[a, 1] = p[1]; pos[a, 2] = p[2]
            for k in range(10):
                Q[a, k] = Q[a, k] + Q[b, k]
            version[a] += 1
            version[b] += 1
            neighbors(vfaces, faces, a, na)
            for s in range(na.size()):
                _push(heap, Q, pos, version, a, na[s])

    return pos_arr, faces_arr, falive_arr.astype(bool), labels_arr


cdef void _push(cand_queue& heap, double[:, ::1] Q, double[:, ::1] pos,
                vector[long]& version, long a, long b) noexcept nogil:
    cdef long t
    cdef double q[10]
    cdef double res[4]
    cdef int k
    cdef Cand c
    cdef double len2, err
    if a > b:
        t = a; a = b; b = t
    for k in range(10):
        q[k] = Q[a, k] + Q[b, k]
    optimal(q, &pos[a, 0], &pos[b, 0], res)
    len2 = ((pos[a, 0] - pos[b, 0]) ** 2 + (pos[a, 1] - pos[b, 1]) ** 2
            + (pos[a, 2] - pos[b, 2]) ** 2)
    err = res[3]
    c.cost = (err if err > 0.0 else 0.0) + LENGTH_TIEBREAK * len2
    c.a = a; c.b = b; c.va = version[a]; c.vb = version[b]
    c.x = res[0]; c.y = res[1]; c.z = res[2]
    heap.push(c)
