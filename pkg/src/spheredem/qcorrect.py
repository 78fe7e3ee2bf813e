"""Beltrami coefficients, the linear Beltrami solver, and overlap repair.

A face of a spherical map is flipped when its signed volume against the
origin opposes the mesh orientation; equivalently its per-face Beltrami
coefficient in a stereographic chart has |mu| >= 1. The north-south repair
scheme truncates |mu| below 1 on the central faces of a chart, rebuilds the
map with the outermost region fixed, and repeats in the opposite chart so
the two passes cover the whole sphere.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import meshkit
from .meshkit import SolverError
from .sphereconf import PlanarMap, SphericalMap, inverse_stereographic
from ._kernels import signed_origin_volumes


class OverlapStallError(RuntimeError):
    """Overlap repair could not restore bijectivity; carries the last valid map."""

    def __init__(self, last_valid):
        super().__init__("overlap correction stalled after all step halvings")
        self.last_valid = last_valid


@dataclass(frozen=True)
class CorrectionConfig:
    """Parameters of the overlap repair scheme."""

    delta: float = 0.1
    fixed_region_quantile: float = 0.02
    max_halvings: int = 5

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not 0.0 < self.fixed_region_quantile < 0.5:
            raise ValueError("fixed_region_quantile must lie in (0, 0.5)")
        if self.max_halvings < 1:
            raise ValueError("max_halvings must be at least 1")


def _faces_of(mesh_or_faces):
    faces = getattr(mesh_or_faces, "faces", mesh_or_faces)
    return np.asarray(faces, dtype=np.int64)


def _complex_values(obj):
    if isinstance(obj, PlanarMap):
        return obj.values
    return np.asarray(obj)


def _derivative_operators(z, faces):
    """Per-face P1 derivative matrices Dx, Dy for a planar layout."""
    nf = len(faces)
    e0 = z[faces[:, 2]] - z[faces[:, 1]]
    e1 = z[faces[:, 0]] - z[faces[:, 2]]
    e2 = z[faces[:, 1]] - z[faces[:, 0]]
    signed = 0.5 * (e0.real * e1.imag - e0.imag * e1.real)
    rows = np.repeat(np.arange(nf), 3)
    cols = faces.ravel()
    gx = np.column_stack([e0.imag, e1.imag, e2.imag]) / (2.0 * signed[:, None])
    gy = -np.column_stack([e0.real, e1.real, e2.real]) / (2.0 * signed[:, None])
    n = int(faces.max()) + 1
    dx = sparse.coo_matrix((gx.ravel(), (rows, cols)), shape=(nf, n)).tocsr()
    dy = sparse.coo_matrix((gy.ravel(), (rows, cols)), shape=(nf, n)).tocsr()
    return dx, dy


def beltrami_coefficient(source, target, mesh):
    """Per-face Beltrami coefficient of the map from a planar layout.

    Parameters
    ----------
    source : PlanarMap or complex array
        Planar coordinates of the source layout.
    target : PlanarMap, complex array, or (n, 3) array
        Planar target gives mu = f_zbar / f_z of the induced affine map per
        face; a 3-D target measures the distortion of the layout-to-surface
        map through its first fundamental form.
    mesh : TriMesh or (m, 3) int array
        Connectivity shared by both layouts.
    """
    faces = _faces_of(mesh)
    z = _complex_values(source).astype(np.complex128)
    dx, dy = _derivative_operators(z, faces)
    t = target.positions if isinstance(target, SphericalMap) else _complex_values(target)
    t = np.asarray(t)

    if t.ndim == 2:
        du = np.column_stack([dx @ t[:, k] for k in range(3)])
        dv = np.column_stack([dy @ t[:, k] for k in range(3)])
        e = np.einsum("ij,ij->i", du, du)
        g = np.einsum("ij,ij->i", dv, dv)
        f = np.einsum("ij,ij->i", du, dv)
        root = np.sqrt(np.maximum(e * g - f * f, 0.0))
        denom = e + g + 2.0 * root
        denom = np.where(denom == 0.0, 1e-16, denom)
        return (e - g + 2j * f) / denom

    w = t.astype(np.complex128)
    fz = 0.5 * (dx @ w - 1j * (dy @ w))
    fzbar = 0.5 * (dx @ w + 1j * (dy @ w))
    if np.any(np.abs(fz) < 1e-14):
        i = int(np.argmin(np.abs(fz)))
        raise SolverError(f"conformal factor collapse on face {i} (|f_z| < 1e-14)")
    return fzbar / fz


def truncate_mu(mu, delta=0.1, active=None):
    """Clamp |mu| >= 1 down to magnitude 1 - delta, preserving the argument.

    Values with |mu| < 1 pass through, as do all faces outside `active`.
    Idempotent.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    mu = np.array(mu, dtype=np.complex128, copy=True)
    mag = np.abs(mu)
    bad = mag >= 1.0
    if active is not None:
        bad &= np.asarray(active, dtype=bool)
    if np.any(bad):
        mu[bad] *= (1.0 - delta) / mag[bad]
    return mu


def lbs_reconstruct(mesh, layout, mu, fixed_vertices, fixed_values):
    """Rebuild a planar map with prescribed Beltrami coefficient.

    Solves the generalized Laplace system div(P(mu) grad u) = 0 for both
    coordinates at once, with
        a11 = ((1 - Re mu)^2 + (Im mu)^2) / (1 - |mu|^2)
        a12 = -2 Im mu / (1 - |mu|^2)
        a22 = ((1 + Re mu)^2 + (Im mu)^2) / (1 - |mu|^2)
    per face of the source layout, and the fixed vertices pinned exactly.
    """
    faces = _faces_of(mesh)
    z = _complex_values(layout).astype(np.complex128)
    mu = np.asarray(mu, dtype=np.complex128)
    fixed_vertices = np.asarray(fixed_vertices, dtype=np.int64)
    fixed_values = np.asarray(fixed_values, dtype=np.complex128)
    if fixed_vertices.size == 0:
        raise ValueError("fixed vertex set must be nonempty")
    if np.any(np.abs(mu) >= 1.0):
        raise ValueError("lbs_reconstruct requires |mu| < 1 on every face")

    stiffness = _generalized_stiffness(z, faces, mu)
    a, b = meshkit.apply_dirichlet(stiffness, fixed_vertices, fixed_values)
    sol = meshkit.solve_linear(a, b)
    return PlanarMap(sol)


def _generalized_stiffness(z, faces, mu):
    abs2 = np.abs(mu) ** 2
    denom = 1.0 - abs2
    a11 = ((1.0 - mu.real) ** 2 + mu.imag**2) / denom
    a12 = -2.0 * mu.imag / denom
    a22 = ((1.0 + mu.real) ** 2 + mu.imag**2) / denom

    # Counterclockwise-rotated edge vectors: grad of the P1 basis is
    # rot(e_opposite) / (2 area).
    p = np.column_stack([z.real, z.imag])
    rot = []
    for corner in range(3):
        j = faces[:, (corner + 1) % 3]
        k = faces[:, (corner + 2) % 3]
        e = p[k] - p[j]
        rot.append(np.column_stack([-e[:, 1], e[:, 0]]))
    e1 = p[faces[:, 1]] - p[faces[:, 0]]
    e2 = p[faces[:, 2]] - p[faces[:, 0]]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    n = int(faces.max()) + 1
    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            q = (
                a11 * rot[i][:, 0] * rot[j][:, 0]
                + a12 * (rot[i][:, 0] * rot[j][:, 1] + rot[i][:, 1] * rot[j][:, 0])
                + a22 * rot[i][:, 1] * rot[j][:, 1]
            ) / (4.0 * area)
            rows.append(faces[:, i])
            cols.append(faces[:, j])
            vals.append(q)
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def count_flips(mesh, smap):
    """Number of faces whose orientation opposes the mesh orientation."""
    pos = smap.positions if isinstance(smap, SphericalMap) else np.asarray(smap)
    vols = signed_origin_volumes(np.ascontiguousarray(pos), mesh.faces)
    return int(np.count_nonzero(vols * mesh.orientation_sign <= 0))


def _rotation_to_pole(direction):
    """Rotation matrix sending a unit direction to (0, 0, 1)."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    if d[2] > 1.0 - 1e-12:
        return np.eye(3)
    if d[2] < -1.0 + 1e-12:
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(d, [0.0, 0.0, 1.0])
    axis /= np.linalg.norm(axis)
    angle = np.arccos(np.clip(d[2], -1.0, 1.0))
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def regular_pole_rotation(mesh, positions):
    """Rotation placing the most regular face's center at the north pole."""
    _, _, _, best = meshkit.regularity_scores(mesh, positions)
    center = positions[mesh.faces[best]].mean(axis=0)
    return _rotation_to_pole(center)


def correct_overlaps(mesh, prev, curr, cfg=None):
    """Repair flipped faces of `curr`, using flip-free `prev` as the anchor.

    Already-bijective maps pass through unchanged. Otherwise both maps are
    rotated so the most regular face of `prev` sits at the north pole, the
    Beltrami coefficient between their charts is truncated on the central
    faces and the map rebuilt with the outermost region fixed, once per
    projection pole. If flips persist, the displacement prev -> curr is
    halved and the repair retried, up to cfg.max_halvings times.

    Raises
    ------
    OverlapStallError
        When flips remain after all halvings; carries `prev` as the last
        valid map.
    """
    cfg = cfg or CorrectionConfig()
    if count_flips(mesh, prev) != 0:
        raise ValueError("prev must be flip-free")
    if count_flips(mesh, curr) == 0:
        return curr

    rot = regular_pole_rotation(mesh, prev.positions)
    prev_r = prev.positions @ rot.T
    delta = curr.positions - prev.positions

    for halving in range(cfg.max_halvings + 1):
        cand = prev.positions + delta / (2.0**halving)
        norms = np.linalg.norm(cand, axis=1)
        if norms.min() < 1e-9:
            continue  # displacement passes through the origin; halve further
        work = cand / norms[:, None] @ rot.T
        try:
            for pole in ("north", "south"):
                work = _chart_repair(mesh, prev_r, work, pole, cfg)
        except (SolverError, ValueError):
            continue  # unrepairable at this step size; halve further
        restored = work @ rot
        if count_flips(mesh, restored) == 0:
            return SphericalMap.project(restored)
    raise OverlapStallError(prev)


def _chart_repair(mesh, prev_pos, curr_pos, pole, cfg):
    """One repair pass in a single stereographic chart."""
    zp = _safe_chart(prev_pos, pole)
    zc = _safe_chart(curr_pos, pole)
    from .sphereconf import _chart_orientation

    if _chart_orientation(zp, mesh.faces) < 0:
        zp, zc = np.conj(zp), np.conj(zc)
        flip_back = True
    else:
        flip_back = False

    mu = beltrami_coefficient(zp, zc, mesh)

    limit = np.quantile(np.abs(zp), 1.0 - cfg.fixed_region_quantile)
    central = np.all(np.abs(zp[mesh.faces]) < limit, axis=1)
    mu = truncate_mu(mu, cfg.delta, active=central)
    # The solver needs finite coefficients everywhere; clamp stray outer
    # values too (their faces are pinned, so the prescription is inert).
    mu = truncate_mu(mu, cfg.delta)

    fixed = np.unique(mesh.faces[~central])
    if len(fixed) < 3:
        far = int(np.argmax(np.abs(zp[mesh.faces]).max(axis=1)))
        fixed = np.unique(mesh.faces[far])
    rebuilt = lbs_reconstruct(mesh, zp, mu, fixed, zc[fixed]).values
    if flip_back:
        rebuilt = np.conj(rebuilt)
    return inverse_stereographic(rebuilt, pole=pole).positions


def _safe_chart(positions, pole):
    """Stereographic chart with the pole denominator floored (no vertex NaNs)."""
    p = positions
    denom = 1.0 - p[:, 2] if pole == "north" else 1.0 + p[:, 2]
    denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    return (p[:, 0] + 1j * p[:, 1]) / denom
