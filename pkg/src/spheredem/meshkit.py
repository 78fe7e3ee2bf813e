"""Triangle mesh container, file IO, and discrete differential operators.

Everything here is pure and deterministic: operators rebuilt from identical
positions are identical, and all types are immutable after construction.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from ._kernels import (
    cotan_entries,
    face_geometry,
    signed_origin_volumes,
    vertex_area_sums,
)
from ._kernels import face_gradient as _face_gradient_kernel

DUPLICATE_VERTEX_TOL = 1e-12
DEGENERATE_AREA_FACTOR = 1e-14
SOLVE_RTOL = 1e-10


class MeshError(ValueError):
    """Unusable input: bad file, bad topology, or malformed auxiliary data."""


class SolverError(RuntimeError):
    """A linear solve failed or could not reach the required residual."""


class TriMesh:
    """Immutable genus-0 closed triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex coordinates; order is preserved.
    faces : (m, 3) array_like
        Vertex index triples, consistently oriented.

    Raises
    ------
    MeshError
        If the mesh is not a closed, consistently oriented genus-0 manifold,
        has duplicate vertices (within 1e-12), or has (near-)degenerate faces.
    """

    def __init__(self, vertices, faces):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        f = np.ascontiguousarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (m, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])):
            raise MeshError("face with repeated vertex index")

        self.vertices = v
        self.faces = f
        self._check_duplicates()
        self._edges = self._check_manifold()
        self._check_genus()

        areas, normals = face_geometry(v, f)
        avg = areas.sum() / len(f)
        bad = np.nonzero(areas < DEGENERATE_AREA_FACTOR * avg)[0]
        if bad.size:
            raise MeshError(f"degenerate face {bad[0]} (area {areas[bad[0]]:.3e})")
        self._face_areas = areas
        self._face_normals = normals
        self.orientation_sign = 1.0 if signed_origin_volumes(v, f).sum() >= 0 else -1.0

        for a in (self.vertices, self.faces, self._face_areas, self._face_normals):
            a.setflags(write=False)

    def _check_duplicates(self):
        v = self.vertices
        order = np.lexsort((v[:, 2], v[:, 1], v[:, 0]))
        sv = v[order]
        close = np.linalg.norm(np.diff(sv, axis=0), axis=1) < DUPLICATE_VERTEX_TOL
        if np.any(close):
            i = int(np.nonzero(close)[0][0])
            raise MeshError(
                f"duplicate vertices {order[i]} and {order[i + 1]} "
                f"(within {DUPLICATE_VERTEX_TOL})"
            )

    def _check_manifold(self):
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        und = np.sort(directed, axis=1)
        und_view, counts = np.unique(und, axis=0, return_counts=True)
        if np.any(counts != 2):
            i = int(np.nonzero(counts != 2)[0][0])
            raise MeshError(
                f"non-manifold: edge {tuple(und_view[i])} shared by "
                f"{counts[i]} faces (need exactly 2)"
            )
        # With every undirected edge on exactly 2 faces, consistent orientation
        # means no directed edge repeats.
        if len(np.unique(directed, axis=0)) != len(directed):
            raise MeshError("inconsistent face orientation (repeated directed edge)")
        return und_view

    def _check_genus(self):
        chi = self.euler_characteristic
        if chi != 2:
            raise MeshError(
                f"mesh is not genus-0: Euler characteristic {chi} "
                f"(|V|={self.num_vertices}, |E|={self.num_edges}, "
                f"|F|={self.num_faces})"
            )

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_faces(self):
        return len(self.faces)

    @property
    def num_edges(self):
        return len(self._edges)

    @property
    def edges(self):
        """Undirected edges as a sorted (|E|, 2) index array."""
        return self._edges

    @property
    def euler_characteristic(self):
        return self.num_vertices - self.num_edges + self.num_faces

    @property
    def total_area(self):
        return float(self._face_areas.sum())

    def __repr__(self):
        return f"TriMesh(|V|={self.num_vertices}, |F|={self.num_faces})"


@dataclass(frozen=True)
class DensityField:
    """Per-face population and the densities it induces.

    face_density = population / face area, vertex_density = M face_density
    with M the face-to-vertex conversion matrix.
    """

    population: np.ndarray
    face_density: np.ndarray
    vertex_density: np.ndarray

    def __post_init__(self):
        for name in ("population", "face_density", "vertex_density"):
            a = getattr(self, name)
            if not np.all(np.isfinite(a)) or np.any(a <= 0):
                raise MeshError(f"{name} must be strictly positive and finite")


def _positions(mesh, positions):
    if positions is None:
        return mesh.vertices
    p = np.ascontiguousarray(positions, dtype=np.float64)
    if p.shape != (mesh.num_vertices, 3):
        raise MeshError(f"positions must be {(mesh.num_vertices, 3)}, got {p.shape}")
    return p


def face_areas(mesh, positions=None):
    """Face areas, for mesh.vertices or an alternative embedding."""
    areas, _ = face_geometry(_positions(mesh, positions), mesh.faces)
    return areas


def face_normals(mesh, positions=None):
    """Unit face normals (right-hand rule on the stored orientation)."""
    _, normals = face_geometry(_positions(mesh, positions), mesh.faces)
    return normals


def vertex_normals(mesh, positions=None):
    """Angle-weighted unit vertex normals.

    Each incident face normal is weighted by the corner angle at the vertex;
    outward for consistently outward-oriented meshes.
    """
    pos = _positions(mesh, positions)
    f = mesh.faces
    _, fn = face_geometry(pos, f)
    acc = np.zeros((mesh.num_vertices, 3))
    for corner in range(3):
        a = f[:, corner]
        b = f[:, (corner + 1) % 3]
        c = f[:, (corner + 2) % 3]
        u = pos[b] - pos[a]
        w = pos[c] - pos[a]
        cosang = np.einsum("ij,ij->i", u, w)
        cosang /= np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(acc, a, ang[:, None] * fn)
    norms = np.linalg.norm(acc, axis=1)
    if np.any(norms < 1e-300):
        i = int(np.argmin(norms))
        raise MeshError(f"zero-length normal at vertex {i} (degenerate umbrella)")
    return acc / norms[:, None]


def cotangent_laplacian(mesh, positions=None):
    """Cotangent stiffness matrix L (|V| x |V|, CSR).

    Off-diagonal (i, j) = -(cot a_ij + cot b_ij)/2 for the two angles
    opposite edge (i, j); diagonal = negative row sum, so L @ 1 = 0. L is
    symmetric and invariant to uniform scaling of the positions.
    """
    pos = _positions(mesh, positions)
    areas, _ = face_geometry(pos, mesh.faces)
    if np.any(areas <= 0):
        i = int(np.argmin(areas))
        raise MeshError(f"degenerate face {i} while assembling the Laplacian")
    rows, cols, vals = cotan_entries(pos, mesh.faces)
    n = mesh.num_vertices
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def lumped_mass(mesh, positions=None):
    """Diagonal lumped mass matrix: (A)_ii = (1/3) sum of incident face areas."""
    pos = _positions(mesh, positions)
    areas, _ = face_geometry(pos, mesh.faces)
    diag = vertex_area_sums(mesh.faces, areas, mesh.num_vertices) / 3.0
    return sparse.diags(diag, format="csr")


def face_to_vertex_matrix(mesh, positions=None):
    """Row-stochastic |V| x |F| conversion matrix M.

    M_ij = Area(T_j) / (sum of areas of faces incident to vertex i) when T_j
    is incident to vertex i, else 0.
    """
    pos = _positions(mesh, positions)
    f = mesh.faces
    areas, _ = face_geometry(pos, f)
    sums = vertex_area_sums(f, areas, mesh.num_vertices)
    rows = f.ravel()
    cols = np.repeat(np.arange(mesh.num_faces, dtype=np.int64), 3)
    vals = np.repeat(areas, 3).reshape(-1, 3).ravel() / sums[rows]
    m = sparse.coo_matrix(
        (vals, (rows, cols)), shape=(mesh.num_vertices, mesh.num_faces)
    )
    return m.tocsr()


def face_gradient(mesh, u, positions=None):
    """Per-face gradient of a vertex scalar field; lies in each face plane."""
    pos = _positions(mesh, positions)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if u.shape != (mesh.num_vertices,):
        raise MeshError(f"scalar field must be ({mesh.num_vertices},), got {u.shape}")
    areas, normals = face_geometry(pos, mesh.faces)
    return _face_gradient_kernel(pos, mesh.faces, u, areas, normals)


def regularity_scores(mesh, positions=None):
    """Edge-length regularity of faces, vertices, and 1-ring neighborhoods.

    Returns
    -------
    r_face : (|F|,) array
        sum_j |e_j / perimeter - 1/3| over the three edges; 0 for equilateral.
    r_vertex : (|V|,) array
        (1/3) * sum of r_face over the incident faces.
    r_ring : (|F|,) array
        Mean of r_vertex over each face's three vertices.
    best_face : int
        argmin of r_ring, ties broken by lowest index.
    """
    pos = _positions(mesh, positions)
    f = mesh.faces
    e0 = np.linalg.norm(pos[f[:, 1]] - pos[f[:, 2]], axis=1)
    e1 = np.linalg.norm(pos[f[:, 2]] - pos[f[:, 0]], axis=1)
    e2 = np.linalg.norm(pos[f[:, 0]] - pos[f[:, 1]], axis=1)
    perim = e0 + e1 + e2
    r_face = (
        np.abs(e0 / perim - 1.0 / 3.0)
        + np.abs(e1 / perim - 1.0 / 3.0)
        + np.abs(e2 / perim - 1.0 / 3.0)
    )
    r_vertex = (
        np.bincount(f.ravel(), np.repeat(r_face, 3), minlength=mesh.num_vertices)
        / 3.0
    )
    r_ring = r_vertex[f].mean(axis=1)
    return r_face, r_vertex, r_ring, int(np.argmin(r_ring))


def solve_linear(matrix, rhs):
    """Solve matrix @ x = rhs by sparse direct factorization.

    Falls back to an iterative least-squares refinement if the factorization
    produces a poor solution, and raises SolverError when the relative
    residual stays above 1e-10. Deterministic for fixed input.
    """
    import warnings

    a = sparse.csc_matrix(matrix)
    b = np.asarray(rhs)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            x = spla.spsolve(a, b)
    except Exception as exc:  # singular factorization
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise SolverError("sparse solve produced non-finite values")

    def rel_residual(x):
        r = a @ x - b
        denom = max(np.linalg.norm(b.ravel()), 1e-300)
        return np.linalg.norm(np.asarray(r).ravel()) / denom

    res = rel_residual(x)
    if res > SOLVE_RTOL:
        x = x + _lsqr_refine(a, b - a @ x)
        res = rel_residual(x)
    if res > SOLVE_RTOL:
        raise SolverError(f"linear solve did not converge: relative residual {res:.3e}")
    return x


def _lsqr_refine(a, r):
    """One least-squares correction pass; handles multi-column and complex r."""
    r = np.asarray(r)
    if r.ndim == 1:
        cols = [r]
    else:
        cols = [r[:, j] for j in range(r.shape[1])]
    out = []
    for c in cols:
        if np.iscomplexobj(c):
            d = spla.lsqr(a, c.real, atol=1e-14, btol=1e-14)[0].astype(complex)
            d += 1j * spla.lsqr(a, c.imag, atol=1e-14, btol=1e-14)[0]
        else:
            d = spla.lsqr(a, c, atol=1e-14, btol=1e-14)[0]
        out.append(d)
    return out[0] if r.ndim == 1 else np.column_stack(out)


def apply_dirichlet(matrix, fixed, values, rhs=None):
    """Pin `fixed` indices to `values` in the system matrix @ x = rhs.

    Known contributions are moved to the right-hand side, fixed rows and
    columns are zeroed (keeping symmetry), and identity rows are installed.
    Returns the modified (matrix, rhs) pair.
    """
    a = sparse.csr_matrix(matrix, copy=True)
    n = a.shape[0]
    fixed = np.asarray(fixed, dtype=np.int64)
    values = np.asarray(values)
    dtype = np.promote_types(a.dtype, values.dtype)
    if rhs is None:
        b = np.zeros(n, dtype=dtype)
    else:
        b = np.array(rhs, dtype=dtype, copy=True)
    b = b - a[:, fixed] @ values
    keep = np.ones(n, dtype=bool)
    keep[fixed] = False
    mask = sparse.diags(keep.astype(float), format="csr")
    a = mask @ a @ mask
    a = a + sparse.coo_matrix(
        (np.ones(len(fixed)), (fixed, fixed)), shape=a.shape
    ).tocsr()
    b[fixed] = values
    return a, b


# ---------------------------------------------------------------------------
# File IO (OBJ / OFF / PLY readers, OBJ writer)
# ---------------------------------------------------------------------------

def load_mesh(path, fmt=None):
    """Load a closed genus-0 triangle mesh from an OBJ, OFF, or PLY file.

    The format is inferred from the extension unless `fmt` is given. Indices
    are converted to 0-based internally; vertex order is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise MeshError(f"no such file: {path}")
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        v, f = _read_obj(path)
    elif fmt == "off":
        v, f = _read_off(path)
    elif fmt == "ply":
        v, f = _read_ply(path)
    else:
        raise MeshError(f"unsupported mesh format: {fmt!r}")
    if len(v) == 0 or len(f) == 0:
        raise MeshError(f"{path}: no vertices or no faces")
    return TriMesh(v, f)


def save_obj(path, vertices, faces):
    """Write an ASCII OBJ preserving vertex order (full float64 precision)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    with open(path, "w") as fh:
        for x, y, z in vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in faces + 1:
            fh.write(f"f {a} {b} {c}\n")


def _read_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex record")
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                idx = [p.split("/")[0] for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(
                        f"{path}:{lineno}: only triangle faces are supported"
                    )
                faces.append([_obj_index(int(t), len(verts)) for t in idx])
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def _obj_index(i, nv):
    # OBJ is 1-based; negative indices are relative to the vertices seen so far.
    return i - 1 if i > 0 else nv + i


def _read_off(path):
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens:
        raise MeshError(f"{path}: empty OFF file")
    if tokens[0].upper() == "OFF":
        tokens = tokens[1:]
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
        pos = 3  # skip edge count
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise MeshError(f"{path}: only triangle faces are supported")
            faces.append([int(t) for t in tokens[pos + 1 : pos + 4]])
            pos += 1 + k
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}: malformed OFF file: {exc}") from exc
    return verts, np.array(faces, dtype=np.int64)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _read_ply(path):
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshError(f"{path}: not a PLY file")
    end = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end:]

    fmt = None
    elements = []  # (name, count, [(prop_name, type, list_count_type|None)])
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append((parts[4], parts[3], parts[2]))
            else:
                elements[-1][2].append((parts[2], parts[1], None))
    if fmt == "ascii":
        return _read_ply_ascii(path, body, elements)
    if fmt in ("binary_little_endian", "binary_big_endian"):
        bo = "<" if fmt == "binary_little_endian" else ">"
        return _read_ply_binary(path, body, elements, bo)
    raise MeshError(f"{path}: unsupported PLY format {fmt!r}")


def _read_ply_ascii(path, body, elements):
    tokens = body.decode("ascii", errors="replace").split()
    pos = 0
    verts = faces = None
    for name, count, props in elements:
        if name == "vertex":
            width = len(props)
            cols = {p[0]: i for i, p in enumerate(props)}
            block = tokens[pos : pos + count * width]
            arr = np.array(block, dtype=np.float64).reshape(count, width)
            verts = arr[:, [cols["x"], cols["y"], cols["z"]]]
            pos += count * width
        elif name == "face":
            rows = []
            for _ in range(count):
                k = int(tokens[pos])
                if k != 3:
                    raise MeshError(f"{path}: only triangle faces are supported")
                rows.append([int(t) for t in tokens[pos + 1 : pos + 4]])
                pos += 1 + k
            faces = np.array(rows, dtype=np.int64)
        else:
            for _ in range(count):  # skip unknown fixed-width elements
                pos += len(props)
    if verts is None or faces is None:
        raise MeshError(f"{path}: PLY file lacks vertex or face element")
    return verts, faces


def _read_ply_binary(path, body, elements, bo):
    offset = 0
    verts = faces = None
    for name, count, props in elements:
        if any(p[2] is not None for p in props):
            if name != "face" or len(props) != 1:
                raise MeshError(f"{path}: unsupported PLY list layout in {name!r}")
            _, idx_type, cnt_type = props[0]
            cnt_fmt = bo + _PLY_TYPES[cnt_type]
            idx_size = np.dtype(_PLY_TYPES[idx_type]).itemsize
            cnt_size = np.dtype(_PLY_TYPES[cnt_type]).itemsize
            k = int(np.frombuffer(body, cnt_fmt, 1, offset)[0])
            if k != 3:
                raise MeshError(f"{path}: only triangle faces are supported")
            stride = cnt_size + 3 * idx_size
            raw = body[offset : offset + count * stride]
            if len(raw) < count * stride:
                raise MeshError(f"{path}: truncated PLY face data")
            rec = np.dtype([("n", bo + _PLY_TYPES[cnt_type]),
                            ("idx", bo + _PLY_TYPES[idx_type], (3,))])
            arr = np.frombuffer(raw, dtype=rec, count=count)
            if np.any(arr["n"] != 3):
                raise MeshError(f"{path}: only triangle faces are supported")
            out = arr["idx"].astype(np.int64)
            if name == "face":
                faces = out
            offset += count * stride
        else:
            rec = np.dtype([(p[0], bo + _PLY_TYPES[p[1]]) for p in props])
            arr = np.frombuffer(body, dtype=rec, count=count, offset=offset)
            if name == "vertex":
                verts = np.column_stack(
                    [arr["x"], arr["y"], arr["z"]]
                ).astype(np.float64)
            offset += count * rec.itemsize
    if verts is None or faces is None:
        raise MeshError(f"{path}: PLY file lacks vertex or face element")
    return verts, faces
