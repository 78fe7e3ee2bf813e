"""Vectorized numpy implementations of the per-face assembly kernels.

This is the fallback backend; `spheredem._kernels._speedups` provides the
same functions as a compiled extension. Both backends must return identical
values (up to floating-point evaluation order) and be deterministic.
"""

import numpy as np


def face_geometry(verts, faces):
    """Per-face areas and unit normals.

    Degenerate faces get area 0 and a zero normal; callers decide whether
    that is an error.
    """
    p0 = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - p0
    e2 = verts[faces[:, 2]] - p0
    cross = np.cross(e1, e2)
    twice = np.sqrt(np.einsum("ij,ij->i", cross, cross))
    areas = 0.5 * twice
    safe = np.where(twice > 0.0, twice, 1.0)
    normals = cross / safe[:, None]
    normals[twice == 0.0] = 0.0
    return areas, normals


def cotan_entries(verts, faces):
    """COO triplets of the cotangent stiffness matrix.

    For each corner with opposite edge (j, k), weight w = cot(angle)/2 is
    scattered as -w to (j,k),(k,j) and +w to (j,j),(k,k). Duplicate indices
    are left for the sparse constructor to sum.
    """
    i0, i1, i2 = faces[:, 0], faces[:, 1], faces[:, 2]
    rows, cols, vals = [], [], []
    for a, b, c in ((i0, i1, i2), (i1, i2, i0), (i2, i0, i1)):
        u = verts[b] - verts[a]
        v = verts[c] - verts[a]
        cr = np.cross(u, v)
        sin_area = np.sqrt(np.einsum("ij,ij->i", cr, cr))
        w = 0.5 * np.einsum("ij,ij->i", u, v) / sin_area
        rows += [b, c, b, c]
        cols += [c, b, b, c]
        vals += [-w, -w, w, w]
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def vertex_area_sums(faces, areas, num_vertices):
    """Sum of incident face areas per vertex."""
    return np.bincount(
        faces.ravel(), weights=np.repeat(areas, 3), minlength=num_vertices
    )


def face_gradient(verts, faces, u, areas, normals):
    """Per-face gradient of a vertex scalar field.

    grad(T) = n x (u_i e_jk + u_j e_ki + u_k e_ij) / (2 Area(T)), which is
    exact for functions linear on the face plane.
    """
    p0 = verts[faces[:, 0]]
    p1 = verts[faces[:, 1]]
    p2 = verts[faces[:, 2]]
    s = (
        u[faces[:, 0], None] * (p2 - p1)
        + u[faces[:, 1], None] * (p0 - p2)
        + u[faces[:, 2], None] * (p1 - p0)
    )
    return np.cross(normals, s) / (2.0 * areas[:, None])


def signed_origin_volumes(verts, faces):
    """det[x_i, x_j, x_k] per face (6x the signed tetra volume with the origin)."""
    p0 = verts[faces[:, 0]]
    p1 = verts[faces[:, 1]]
    p2 = verts[faces[:, 2]]
    return np.einsum("ij,ij->i", p0, np.cross(p1, p2))
