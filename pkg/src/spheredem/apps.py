"""Applications: surface registration, remeshing, and spherical cartograms."""

import csv
import heapq
from dataclasses import dataclass

import numpy as np

from . import meshkit
from .meshkit import MeshError, TriMesh

SEA_REGION_ID = 0
_EDGE_TOL = 1e-10


# ---------------------------------------------------------------------------
# Uniform sphere meshes
# ---------------------------------------------------------------------------

def icosphere(level):
    """Subdivided icosahedron with 10 * 4^level + 2 unit-norm vertices."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    return TriMesh(verts, faces)


def _subdivide(verts, faces):
    verts = list(map(tuple, verts))
    midpoint = {}

    def mid(i, j):
        key = (i, j) if i < j else (j, i)
        if key not in midpoint:
            p = np.array(verts[i]) + np.array(verts[j])
            p /= np.linalg.norm(p)
            midpoint[key] = len(verts)
            verts.append(tuple(p))
        return midpoint[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts, dtype=np.float64), np.array(out, dtype=np.int64)


def uniform_sphere_mesh(target_vertices):
    """Near-uniform sphere mesh with vertex count within 10% of the target.

    Uses the subdivision level closest to the target when one is within 10%;
    otherwise the next level up is trimmed down by collapsing shortest edges.
    """
    if target_vertices < 12:
        raise MeshError("target vertex count must be at least 12")
    levels = [(lvl, 10 * 4**lvl + 2) for lvl in range(9)]
    best = min(levels, key=lambda lv: abs(lv[1] - target_vertices))
    if abs(best[1] - target_vertices) <= 0.1 * target_vertices:
        return icosphere(best[0])
    lvl = next(lv for lv, n in levels if n >= target_vertices)
    return _collapse_to_count(icosphere(lvl), target_vertices)


def _collapse_to_count(mesh, target):
    """Trim a sphere mesh to exactly `target` vertices by edge collapses."""
    verts = [np.array(p) for p in mesh.vertices]
    faces = [list(f) for f in mesh.faces]
    face_alive = [True] * len(faces)
    vert_alive = [True] * len(verts)
    incident = [set() for _ in verts]
    for t, f in enumerate(faces):
        for v in f:
            incident[v].add(t)

    def neighbors(v):
        out = set()
        for t in incident[v]:
            out.update(faces[t])
        out.discard(v)
        return out

    heap = []
    for a, b in mesh.edges:
        heapq.heappush(heap, (np.linalg.norm(verts[a] - verts[b]), int(a), int(b)))

    alive = len(verts)
    while alive > target and heap:
        _, a, b = heapq.heappop(heap)
        if not (vert_alive[a] and vert_alive[b]):
            continue
        shared = incident[a] & incident[b]
        if len(shared) != 2 or len(neighbors(a) & neighbors(b)) != 2:
            continue  # stale entry or collapse would pinch the surface
        keep, gone = (a, b) if a < b else (b, a)
        mid = verts[a] + verts[b]
        verts[keep] = mid / np.linalg.norm(mid)
        for t in shared:
            face_alive[t] = False
            for v in faces[t]:
                incident[v].discard(t)
        for t in list(incident[gone]):
            faces[t] = [keep if v == gone else v for v in faces[t]]
            incident[gone].discard(t)
            incident[keep].add(t)
        vert_alive[gone] = False
        alive -= 1
        for nb in neighbors(keep):
            heapq.heappush(
                heap, (np.linalg.norm(verts[keep] - verts[nb]), keep, int(nb))
            )

    if alive != target:
        raise MeshError(f"edge collapse stalled at {alive} vertices (target {target})")
    remap = -np.ones(len(verts), dtype=np.int64)
    kept = [i for i, ok in enumerate(vert_alive) if ok]
    remap[kept] = np.arange(len(kept))
    new_faces = [
        [remap[v] for v in f] for f, ok in zip(faces, face_alive) if ok
    ]
    return TriMesh(np.array([verts[i] for i in kept]), np.array(new_faces))


# ---------------------------------------------------------------------------
# Point location on a mapped sphere
# ---------------------------------------------------------------------------

class SpherePointLocator:
    """Locates unit vectors inside the spherical triangles of a flip-free map.

    A face contains a query when the query's gnomonic (central) projection
    lands inside the face plane triangle, tested through signed volumes. A
    per-face bounding cone index prunes the candidates; the index is built
    once and shared read-only.
    """

    def __init__(self, mesh, smap):
        self.mesh = mesh
        self.positions = smap.positions
        corners = self.positions[mesh.faces]
        axes = corners.mean(axis=1)
        axes /= np.linalg.norm(axes, axis=1)[:, None]
        cos_spread = np.einsum("tij,tj->ti", corners, axes).min(axis=1)
        self.axes = axes
        self.cos_bound = cos_spread - 1e-9
        self.sign = mesh.orientation_sign

    def locate(self, query):
        """Containing face index and planar barycentric coordinates."""
        q = np.asarray(query, dtype=np.float64)
        cand = np.nonzero(self.axes @ q >= self.cos_bound)[0]
        if cand.size == 0:
            cand = np.arange(self.mesh.num_faces)
        face = self._containing_face(q, cand)
        if face is None:
            face = self._containing_face(q, np.arange(self.mesh.num_faces))
        if face is None:
            raise MeshError("point location failed: the map does not cover the query")
        corners = self.positions[self.mesh.faces[face]]
        bary = np.linalg.solve(corners.T, q)
        return int(face), bary / bary.sum()

    def _containing_face(self, q, cand):
        corners = self.positions[self.mesh.faces[cand]]
        a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
        d0 = np.cross(a, b) @ q
        d1 = np.cross(b, c) @ q
        d2 = np.cross(c, a) @ q
        inside = (
            (self.sign * d0 >= -_EDGE_TOL)
            & (self.sign * d1 >= -_EDGE_TOL)
            & (self.sign * d2 >= -_EDGE_TOL)
        )
        hits = cand[inside]
        if hits.size:
            return int(hits.min())  # ties on shared edges go to the lowest index
        return None

    def locate_many(self, queries):
        faces = np.empty(len(queries), dtype=np.int64)
        bary = np.empty((len(queries), 3))
        for i, q in enumerate(np.asarray(queries, dtype=np.float64)):
            faces[i], bary[i] = self.locate(q)
        return faces, bary


def sphere_point_locate(mesh, smap, query):
    """One-shot point location; build a SpherePointLocator for many queries."""
    return SpherePointLocator(mesh, smap).locate(query)


# ---------------------------------------------------------------------------
# Registration and remeshing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceCorrespondence:
    """For each source vertex: containing face on the target sphere image and
    barycentric coordinates within it."""

    face_indices: np.ndarray
    barycentric: np.ndarray

    def __post_init__(self):
        sums = self.barycentric.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-10):
            raise ValueError("barycentric coordinates must sum to 1")


def register(mesh_a, mesh_b, map_a, map_b):
    """Vertex-to-surface correspondence from mesh A onto mesh B.

    Every A-vertex is carried to the sphere by map_a, located on B's
    spherical image, and expressed barycentrically there; landmark alignment
    is assumed to have happened upstream.
    """
    locator = SpherePointLocator(mesh_b, map_b)
    faces, bary = locator.locate_many(map_a.positions)
    return SurfaceCorrespondence(faces, bary)


def apply_correspondence(correspondence, mesh_b):
    """Pull-back positions: barycentric combinations of B's surface vertices."""
    corners = mesh_b.vertices[mesh_b.faces[correspondence.face_indices]]
    return np.einsum("ij,ijk->ik", correspondence.barycentric, corners)


def remesh(mesh, smap, target_vertices):
    """Remesh a surface through its spherical parameterization.

    Generates a near-uniform sphere mesh (vertex count within 10% of the
    target), locates its vertices on the mapped sphere, and pulls them back
    onto the input surface. With an area-preserving map the result is
    uniform on the surface as well.
    """
    sphere = uniform_sphere_mesh(target_vertices)
    locator = SpherePointLocator(mesh, smap)
    faces, bary = locator.locate_many(sphere.vertices)
    corners = mesh.vertices[mesh.faces[faces]]
    pulled = np.einsum("ij,ijk->ik", bary, corners)
    return TriMesh(pulled, sphere.faces)


# ---------------------------------------------------------------------------
# Cartogram population fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionLabeling:
    """Per-face region ids plus per-region populations; id 0 is the sea."""

    face_region: np.ndarray
    region_population: dict

    def __post_init__(self):
        for rid, pop in self.region_population.items():
            if rid == SEA_REGION_ID:
                raise MeshError("the sea region does not take a population")
            if pop <= 0:
                raise MeshError(f"region {rid} population must be positive")

    @classmethod
    def from_csvs(cls, labels_path, populations_path, num_faces):
        """Read `face_index,region_id` and `region_id,population` tables."""
        face_region = np.full(num_faces, -1, dtype=np.int64)
        with open(labels_path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    idx, rid = int(row[0]), int(row[1])
                except (ValueError, IndexError) as exc:
                    raise MeshError(
                        f"{labels_path}: malformed label row {row!r}"
                    ) from exc
                if not 0 <= idx < num_faces:
                    raise MeshError(f"{labels_path}: face index {idx} out of range")
                face_region[idx] = rid
        if np.any(face_region < 0):
            missing = int(np.nonzero(face_region < 0)[0][0])
            raise MeshError(f"{labels_path}: face {missing} has no region label")

        populations = {}
        with open(populations_path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    populations[int(row[0])] = float(row[1])
                except (ValueError, IndexError) as exc:
                    raise MeshError(
                        f"{populations_path}: malformed population row {row!r}"
                    ) from exc
        return cls(face_region, populations)


def cartogram_population(mesh, labeling):
    """Per-face population implementing the cartogram density convention.

    Land faces split their region's population proportionally to face area,
    so the region total is conserved exactly; sea faces get the area-weighted
    mean land density converted back to a population.
    """
    regions = np.asarray(labeling.face_region)
    if regions.shape != (mesh.num_faces,):
        raise MeshError("labeling does not match the mesh face count")
    areas = mesh._face_areas
    population = np.zeros(mesh.num_faces)

    land_pop_total = 0.0
    land_area_total = 0.0
    for rid, pop in sorted(labeling.region_population.items()):
        sel = regions == rid
        region_area = areas[sel].sum()
        if region_area <= 0:
            raise MeshError(f"region {rid} has zero total area")
        population[sel] = pop * areas[sel] / region_area
        land_pop_total += pop
        land_area_total += region_area

    sea = regions == SEA_REGION_ID
    if np.any(sea):
        if land_area_total <= 0:
            raise MeshError("cartogram needs at least one land region")
        sea_density = land_pop_total / land_area_total
        population[sea] = sea_density * areas[sea]

    labeled = sea | np.isin(regions, list(labeling.region_population))
    if not np.all(labeled):
        bad = int(np.nonzero(~labeled)[0][0])
        raise MeshError(
            f"face {bad} is labeled region {regions[bad]} which has no population"
        )
    return population
