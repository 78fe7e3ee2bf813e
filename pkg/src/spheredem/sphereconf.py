"""Initial spherical conformal parameterization and stereographic machinery.

The conformal map is built in five stages: puncture the most regular face,
flatten the punctured mesh harmonically onto a big triangle in the plane,
lift to the sphere through the north-pole inverse stereographic projection,
repair the conformality distortion near the north pole through a quasi-
conformal reconstruction in the south-pole chart, and finally balance the
area distribution with an optimal Mobius transformation.
"""

import warnings

import numpy as np

from . import meshkit
from .meshkit import SolverError

BIG_TRIANGLE_RADIUS = 1e3
CAP_QUANTILE = 0.98
UNIT_NORM_TOL = 1e-12


class SphericalMap:
    """Per-vertex positions on the unit sphere for a given mesh.

    Positions are validated to unit norm (within 1e-12) and frozen.
    """

    def __init__(self, positions):
        p = np.ascontiguousarray(positions, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"positions must be (n, 3), got {p.shape}")
        norms = np.linalg.norm(p, axis=1)
        if not np.all(np.isfinite(norms)):
            raise ValueError("non-finite spherical positions")
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            i = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(
                f"vertex {i} is off the unit sphere (|x| = {norms[i]:.15f})"
            )
        p.setflags(write=False)
        self.positions = p

    @classmethod
    def project(cls, positions):
        """Normalize positions onto the sphere and wrap them."""
        p = np.asarray(positions, dtype=np.float64)
        norms = np.linalg.norm(p, axis=1)
        if np.any(norms < 1e-300):
            raise ValueError("cannot project a zero vector onto the sphere")
        return cls(p / norms[:, None])

    def __len__(self):
        return len(self.positions)


class PlanarMap:
    """Per-vertex complex coordinates, with puncture bookkeeping."""

    def __init__(self, values, punctured_face=None):
        z = np.ascontiguousarray(values, dtype=np.complex128)
        if z.ndim != 1:
            raise ValueError("planar map values must be a 1-D complex array")
        if not np.all(np.isfinite(z)):
            raise ValueError("non-finite planar coordinates")
        z.setflags(write=False)
        self.values = z
        self.punctured_face = punctured_face

    def __len__(self):
        return len(self.values)


def _as_positions(map_or_positions):
    if isinstance(map_or_positions, SphericalMap):
        return map_or_positions.positions
    return np.asarray(map_or_positions, dtype=np.float64)


def _as_complex(map_or_values):
    if isinstance(map_or_values, PlanarMap):
        return map_or_values.values
    return np.asarray(map_or_values, dtype=np.complex128)


def stereographic(smap, pole="north"):
    """Project sphere points to the complex plane from the given pole.

    north: (x, y, z) -> (x + iy)/(1 - z); south: (x + iy)/(1 + z). The chosen
    pole is the singular point and must stay clear of all vertices.
    """
    p = _as_positions(smap)
    if pole == "north":
        denom = 1.0 - p[:, 2]
    elif pole == "south":
        denom = 1.0 + p[:, 2]
    else:
        raise ValueError(f"pole must be 'north' or 'south', got {pole!r}")
    if np.any(np.abs(denom) <= 1e-9):
        i = int(np.argmin(np.abs(denom)))
        raise ValueError(f"vertex {i} coincides with the {pole} projection pole")
    return PlanarMap((p[:, 0] + 1j * p[:, 1]) / denom)


def inverse_stereographic(plane, pole="north"):
    """Lift plane points back onto the unit sphere (inverse of stereographic)."""
    z = _as_complex(plane)
    u, v = z.real, z.imag
    r2 = u * u + v * v
    denom = 1.0 + r2
    x = 2.0 * u / denom
    y = 2.0 * v / denom
    if pole == "north":
        w = (r2 - 1.0) / denom
    elif pole == "south":
        w = (1.0 - r2) / denom
    else:
        raise ValueError(f"pole must be 'north' or 'south', got {pole!r}")
    return SphericalMap.project(np.column_stack([x, y, w]))


def _homogeneous(p):
    """Pole-safe homogeneous coordinates (num, den) with z = num/den (north chart)."""
    north = p[:, 2] > 0.0
    num = np.where(north, 1.0 + p[:, 2], p[:, 0] + 1j * p[:, 1])
    den = np.where(north, p[:, 0] - 1j * p[:, 1], 1.0 - p[:, 2])
    return num.astype(np.complex128), den.astype(np.complex128)


def _mobius_transform(positions, a, s):
    """Apply z -> exp(s) * (z - a) / (1 + conj(a) z) in the north chart.

    Computed projectively so vertices at either pole stay finite.
    """
    num, den = _homogeneous(positions)
    scale = np.exp(s)
    pn = scale * (num - a * den)
    qn = np.conj(a) * num + den
    norm2 = np.abs(pn) ** 2 + np.abs(qn) ** 2
    pq = pn * np.conj(qn)
    return np.column_stack(
        [
            2.0 * pq.real / norm2,
            2.0 * pq.imag / norm2,
            (np.abs(pn) ** 2 - np.abs(qn) ** 2) / norm2,
        ]
    )


def initial_conformal_map(mesh):
    """Spherical conformal parameterization of a genus-0 closed mesh.

    Returns a flip-free SphericalMap whose mean conformality distortion
    against the input metric is small on well-conditioned meshes.
    """
    from . import qcorrect  # deferred: qcorrect uses this module's projections

    nv = mesh.num_vertices
    faces = mesh.faces
    _, _, _, big = meshkit.regularity_scores(mesh)
    keep = np.ones(mesh.num_faces, dtype=bool)
    keep[big] = False

    # Harmonic flattening of the punctured mesh, its three puncture vertices
    # pinned to an equilateral triangle far from the bulk.
    sub = _submesh_laplacian(mesh, keep)
    p1, p2, p3 = faces[big]
    angles = np.pi / 2.0 + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
    targets = BIG_TRIANGLE_RADIUS * np.exp(1j * angles)
    a, b = meshkit.apply_dirichlet(sub, [p1, p2, p3], targets)
    z = meshkit.solve_linear(a, b)

    # Conformal normalization: center the bulk and put its median radius at 1
    # so the two hemispheres are balanced after the lift.
    free = np.ones(nv, dtype=bool)
    free[[p1, p2, p3]] = False
    z = z - z[free].mean()
    med = np.median(np.abs(z[free]))
    if med > 0:
        z = z / med
    # Keep every point clear of the south pole (z = 0 lifts onto it).
    tiny = np.abs(z) < 1e-9
    if np.any(tiny):
        z = z + 1e-6

    sphere = inverse_stereographic(z, pole="north")
    pos = _fix_global_orientation(mesh, sphere.positions)

    pos = _north_cap_repair(mesh, pos)

    smap = mobius_area_correction(mesh, SphericalMap(pos))
    flips = qcorrect.count_flips(mesh, smap)
    if flips:
        raise SolverError(
            f"conformal parameterization kept {flips} flipped faces after all corrections"
        )
    return smap


def _submesh_laplacian(mesh, face_mask):
    """Cotangent stiffness assembled over a subset of the faces."""
    from ._kernels import cotan_entries

    rows, cols, vals = cotan_entries(mesh.vertices, mesh.faces[face_mask])
    from scipy import sparse

    n = mesh.num_vertices
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _fix_global_orientation(mesh, pos):
    from . import qcorrect

    flips = qcorrect.count_flips(mesh, SphericalMap(pos))
    if flips > mesh.num_faces // 2:
        pos = pos * np.array([1.0, -1.0, 1.0])
    return pos


def _north_cap_repair(mesh, pos):
    """Cancel the conformality distortion near the north pole.

    Works in the south-pole chart where the distorted cap is central: the
    Beltrami coefficient of the chart-to-surface map is reproduced by a
    linear Beltrami solve with the outermost (south) cap fixed, which leaves
    the composed parameterization conformal where the coefficient is met.
    """
    from . import qcorrect

    w = stereographic(pos, pole="south").values
    conj_chart = _chart_orientation(w, mesh.faces) < 0
    if conj_chart:
        w = np.conj(w)
    nu = qcorrect.beltrami_coefficient(w, mesh.vertices, mesh)

    radius = np.abs(_circumcenters(w, mesh.faces))
    radius[~np.isfinite(radius)] = np.inf
    finite = radius[np.isfinite(radius)]
    cutoff = np.quantile(finite, CAP_QUANTILE) if finite.size else 0.0
    cap = ~(radius < cutoff)
    nu[cap] = 0.0
    nu = qcorrect.truncate_mu(nu, 0.1)

    fixed = np.unique(mesh.faces[cap])
    if len(fixed) < 3:
        far = int(np.argmax(np.where(np.isfinite(radius), radius, -1.0)))
        fixed = np.unique(mesh.faces[far])
    new_w = qcorrect.lbs_reconstruct(mesh, w, nu, fixed, w[fixed]).values
    if conj_chart:
        new_w = np.conj(new_w)
    repaired = inverse_stereographic(new_w, pole="south").positions

    old_flips = qcorrect.count_flips(mesh, SphericalMap(pos))
    new_flips = qcorrect.count_flips(mesh, SphericalMap(repaired))
    return repaired if new_flips <= old_flips else pos


def _chart_orientation(z, faces):
    """Sign of the dominant signed area across a planar layout."""
    e1 = z[faces[:, 1]] - z[faces[:, 0]]
    e2 = z[faces[:, 2]] - z[faces[:, 0]]
    signed = e1.real * e2.imag - e1.imag * e2.real
    total = np.sign(signed).sum()
    return 1.0 if total >= 0 else -1.0


def _circumcenters(z, faces):
    z1, z2, z3 = z[faces[:, 0]], z[faces[:, 1]], z[faces[:, 2]]
    num = (
        np.abs(z1) ** 2 * (z2 - z3)
        + np.abs(z2) ** 2 * (z3 - z1)
        + np.abs(z3) ** 2 * (z1 - z2)
    )
    den = (
        np.conj(z1) * (z2 - z3)
        + np.conj(z2) * (z3 - z1)
        + np.conj(z3) * (z1 - z2)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / den


def mobius_area_correction(mesh, smap, max_iter=200, grad_tol=1e-9):
    """Reduce area distortion with an optimal Mobius transformation.

    Searches z -> exp(s) (z - a)/(1 + conj(a) z) over (Re a, Im a, s) in the
    north-pole chart, minimizing the area-weighted squared logged area ratio
    by finite-difference gradient descent with step halving. Conformality is
    untouched up to discretization since the transform is applied exactly to
    the vertices.
    """
    mesh_areas = mesh._face_areas
    weights = mesh_areas / mesh_areas.sum()
    pos = smap.positions

    def objective(params):
        a = params[0] + 1j * params[1]
        moved = _mobius_transform(pos, a, params[2])
        areas = meshkit.face_areas(mesh, _normalize_rows(moved))
        if np.any(areas <= 0):
            return np.inf
        ratio = (areas / areas.sum()) / weights
        return float(np.sum(mesh_areas * np.log(ratio) ** 2))

    params = np.zeros(3)
    value = objective(params)
    h = 1e-5
    for _ in range(max_iter):
        grad = np.zeros(3)
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = h
            grad[k] = (objective(params + dp) - objective(params - dp)) / (2 * h)
        gnorm = np.linalg.norm(grad)
        if gnorm <= grad_tol:
            break
        step = 1.0 / max(gnorm, 1.0)
        improved = False
        while step > 1e-14:
            cand = params - step * grad
            cval = objective(cand)
            if cval < value:
                params, value, improved = cand, cval, True
                break
            step /= 2.0
        if not improved:
            break

    if not np.any(params):
        return smap
    final = objective(params)
    if not np.isfinite(final) or final > objective(np.zeros(3)):
        warnings.warn("Mobius area correction diverged; returning the input map")
        return smap
    a = params[0] + 1j * params[1]
    return SphericalMap.project(_mobius_transform(pos, a, params[2]))


def _normalize_rows(p):
    return p / np.linalg.norm(p, axis=1)[:, None]
