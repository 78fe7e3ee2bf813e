# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-face assembly kernels.

Loop-fused versions of spheredem._kernels._numpy_backend. These run on every
iteration of the mapping flows (operators are rebuilt from the current vertex
positions), so they are worth compiling; see benchmarks/bench_kernels.py.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def face_geometry(const double[:, ::1] verts, const cnp.int64_t[:, ::1] faces):
    cdef Py_ssize_t m = faces.shape[0]
    cdef cnp.ndarray[double, ndim=1] areas = np.empty(m, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] normals = np.zeros((m, 3), dtype=np.float64)
    cdef double[:] av = areas
    cdef double[:, ::1] nv = normals
    cdef Py_ssize_t t, i0, i1, i2
    cdef double e1x, e1y, e1z, e2x, e2y, e2z, cx, cy, cz, twice
    for t in range(m):
        i0 = faces[t, 0]; i1 = faces[t, 1]; i2 = faces[t, 2]
        e1x = verts[i1, 0] - verts[i0, 0]
        e1y = verts[i1, 1] - verts[i0, 1]
        e1z = verts[i1, 2] - verts[i0, 2]
        e2x = verts[i2, 0] - verts[i0, 0]
        e2y = verts[i2, 1] - verts[i0, 1]
        e2z = verts[i2, 2] - verts[i0, 2]
        cx = e1y * e2z - e1z * e2y
        cy = e1z * e2x - e1x * e2z
        cz = e1x * e2y - e1y * e2x
        twice = (cx * cx + cy * cy + cz * cz) ** 0.5
        av[t] = 0.5 * twice
        if twice > 0.0:
            nv[t, 0] = cx / twice
            nv[t, 1] = cy / twice
            nv[t, 2] = cz / twice
    return areas, normals


def cotan_entries(const double[:, ::1] verts, const cnp.int64_t[:, ::1] faces):
    cdef Py_ssize_t m = faces.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rows = np.empty(12 * m, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cols = np.empty(12 * m, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] vals = np.empty(12 * m, dtype=np.float64)
    cdef cnp.int64_t[:] rv = rows
    cdef cnp.int64_t[:] cv = cols
    cdef double[:] vv = vals
    cdef Py_ssize_t t, corner, base
    cdef cnp.int64_t a, b, c
    cdef double ux, uy, uz, vx, vy, vz, cx, cy, cz, sin_area, w
    for t in range(m):
        for corner in range(3):
            a = faces[t, corner]
            b = faces[t, (corner + 1) % 3]
            c = faces[t, (corner + 2) % 3]
            ux = verts[b, 0] - verts[a, 0]
            uy = verts[b, 1] - verts[a, 1]
            uz = verts[b, 2] - verts[a, 2]
            vx = verts[c, 0] - verts[a, 0]
            vy = verts[c, 1] - verts[a, 1]
            vz = verts[c, 2] - verts[a, 2]
            cx = uy * vz - uz * vy
            cy = uz * vx - ux * vz
            cz = ux * vy - uy * vx
            sin_area = (cx * cx + cy * cy + cz * cz) ** 0.5
            w = 0.5 * (ux * vx + uy * vy + uz * vz) / sin_area
            base = 12 * t + 4 * corner
            rv[base] = b; cv[base] = c; vv[base] = -w
            rv[base + 1] = c; cv[base + 1] = b; vv[base + 1] = -w
            rv[base + 2] = b; cv[base + 2] = b; vv[base + 2] = w
            rv[base + 3] = c; cv[base + 3] = c; vv[base + 3] = w
    return rows, cols, vals


def vertex_area_sums(const cnp.int64_t[:, ::1] faces, const double[:] areas, Py_ssize_t num_vertices):
    cdef Py_ssize_t m = faces.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(num_vertices, dtype=np.float64)
    cdef double[:] ov = out
    cdef Py_ssize_t t
    for t in range(m):
        ov[faces[t, 0]] += areas[t]
        ov[faces[t, 1]] += areas[t]
        ov[faces[t, 2]] += areas[t]
    return out


def face_gradient(const double[:, ::1] verts, const cnp.int64_t[:, ::1] faces, const double[:] u,
                  const double[:] areas, const double[:, ::1] normals):
    cdef Py_ssize_t m = faces.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((m, 3), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t t, i0, i1, i2
    cdef double u0, u1, u2, sx, sy, sz, inv
    for t in range(m):
        i0 = faces[t, 0]; i1 = faces[t, 1]; i2 = faces[t, 2]
        u0 = u[i0]; u1 = u[i1]; u2 = u[i2]
        sx = u0 * (verts[i2, 0] - verts[i1, 0]) \
            + u1 * (verts[i0, 0] - verts[i2, 0]) \
            + u2 * (verts[i1, 0] - verts[i0, 0])
        sy = u0 * (verts[i2, 1] - verts[i1, 1]) \
            + u1 * (verts[i0, 1] - verts[i2, 1]) \
            + u2 * (verts[i1, 1] - verts[i0, 1])
        sz = u0 * (verts[i2, 2] - verts[i1, 2]) \
            + u1 * (verts[i0, 2] - verts[i2, 2]) \
            + u2 * (verts[i1, 2] - verts[i0, 2])
        inv = 1.0 / (2.0 * areas[t])
        ov[t, 0] = (normals[t, 1] * sz - normals[t, 2] * sy) * inv
        ov[t, 1] = (normals[t, 2] * sx - normals[t, 0] * sz) * inv
        ov[t, 2] = (normals[t, 0] * sy - normals[t, 1] * sx) * inv
    return out


def signed_origin_volumes(const double[:, ::1] verts, const cnp.int64_t[:, ::1] faces):
    cdef Py_ssize_t m = faces.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(m, dtype=np.float64)
    cdef double[:] ov = out
    cdef Py_ssize_t t, i0, i1, i2
    cdef double cx, cy, cz
    for t in range(m):
        i0 = faces[t, 0]; i1 = faces[t, 1]; i2 = faces[t, 2]
        cx = verts[i1, 1] * verts[i2, 2] - verts[i1, 2] * verts[i2, 1]
        cy = verts[i1, 2] * verts[i2, 0] - verts[i1, 0] * verts[i2, 2]
        cz = verts[i1, 0] * verts[i2, 1] - verts[i1, 1] * verts[i2, 0]
        ov[t] = verts[i0, 0] * cx + verts[i0, 1] * cy + verts[i0, 2] * cz
    return out
