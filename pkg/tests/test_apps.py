import numpy as np
import pytest

from spheredem import (
    MeshError,
    RegionLabeling,
    SpherePointLocator,
    SphericalMap,
    apply_correspondence,
    area_preserving_param,
    cartogram_population,
    icosphere,
    register,
    remesh,
    sphere_point_locate,
    uniform_sphere_mesh,
)
from spheredem import meshkit
from spheredem.apps import SEA_REGION_ID


# ---------------------------------------------------------------------------
# Sphere mesh generation
# ---------------------------------------------------------------------------

def test_icosphere_counts():
    for level in range(4):
        mesh = icosphere(level)
        assert mesh.num_vertices == 10 * 4**level + 2
        assert mesh.euler_characteristic == 2
        assert mesh.orientation_sign == 1.0
        assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0).max() < 1e-12


def test_uniform_sphere_mesh_exact_level():
    mesh = uniform_sphere_mesh(642)
    assert mesh.num_vertices == 642


def test_uniform_sphere_mesh_trimmed():
    mesh = uniform_sphere_mesh(500)
    assert mesh.num_vertices == 500
    assert mesh.euler_characteristic == 2
    assert np.abs(np.linalg.norm(mesh.vertices, axis=1) - 1.0).max() < 1e-12


def test_uniform_sphere_mesh_within_tolerance():
    mesh = uniform_sphere_mesh(700)  # within 10% of level 3 (642)
    assert abs(mesh.num_vertices - 700) <= 70


# ---------------------------------------------------------------------------
# Point location
# ---------------------------------------------------------------------------

def test_locate_mapped_vertex(ico3):
    smap = SphericalMap(ico3.vertices)
    face, bary = sphere_point_locate(ico3, smap, ico3.vertices[37])
    assert 37 in set(ico3.faces[face])
    corner = list(ico3.faces[face]).index(37)
    assert bary[corner] == pytest.approx(1.0, abs=1e-10)
    assert bary.sum() == pytest.approx(1.0, abs=1e-12)


def test_locate_face_centroid(ico3):
    smap = SphericalMap(ico3.vertices)
    locator = SpherePointLocator(ico3, smap)
    centroid = ico3.vertices[ico3.faces[101]].mean(axis=0)
    face, bary = locator.locate(centroid / np.linalg.norm(centroid))
    assert face == 101
    assert np.abs(bary - 1.0 / 3.0).max() < 1e-2  # near-equilateral faces


def test_locate_covers_sphere(ico3, ico3_conformal):
    locator = SpherePointLocator(ico3, ico3_conformal)
    rng = np.random.default_rng(15)
    queries = rng.normal(size=(2000, 3))
    queries /= np.linalg.norm(queries, axis=1)[:, None]
    faces, bary = locator.locate_many(queries)
    assert np.all(faces >= 0)
    assert np.abs(bary.sum(axis=1) - 1.0).max() < 1e-10
    assert bary.min() > -1e-9


def test_locate_deterministic_on_edges(ico3):
    smap = SphericalMap(ico3.vertices)
    locator = SpherePointLocator(ico3, smap)
    a, b = ico3.edges[10]
    mid = ico3.vertices[a] + ico3.vertices[b]
    mid /= np.linalg.norm(mid)
    hits = {locator.locate(mid)[0] for _ in range(3)}
    assert len(hits) == 1  # lowest-index incident face, reproducibly


# ---------------------------------------------------------------------------
# Registration
# ---------------------------------------------------------------------------

def test_register_identity(ico3, ico3_conformal):
    corr = register(ico3, ico3, ico3_conformal, ico3_conformal)
    pulled = apply_correspondence(corr, ico3)
    disp = np.linalg.norm(pulled - ico3.vertices, axis=1)
    assert disp.mean() <= 1e-8


def test_register_roundtrip(ico3, blob3, blob3_conformal, ico3_conformal):
    corr_ab = register(ico3, blob3, ico3_conformal, blob3_conformal)
    pulled = apply_correspondence(corr_ab, blob3)
    # The registered surface keeps A's connectivity and lands on B's surface.
    out = meshkit.TriMesh(pulled, ico3.faces)
    assert out.euler_characteristic == 2
    radii = np.linalg.norm(pulled, axis=1)
    b_radii = np.linalg.norm(blob3.vertices, axis=1)
    assert radii.min() > 0.8 * b_radii.min()
    assert radii.max() < 1.2 * b_radii.max()


# ---------------------------------------------------------------------------
# Remeshing
# ---------------------------------------------------------------------------

def test_remesh_sphere_identity(ico4):
    smap = SphericalMap(ico4.vertices)
    out = remesh(ico4, smap, 642)
    assert out.euler_characteristic == 2
    assert abs(out.num_vertices - 642) <= 64
    # Pulled-back points lie on the piecewise-linear input surface, whose
    # deviation from the unit sphere is bounded by the face sagitta.
    edge_len = np.linalg.norm(
        ico4.vertices[ico4.edges[:, 0]] - ico4.vertices[ico4.edges[:, 1]], axis=1
    ).max()
    sagitta = edge_len**2 / 4.0
    radii = np.linalg.norm(out.vertices, axis=1)
    assert np.abs(radii - 1.0).max() <= sagitta


def test_remesh_improves_uniformity(blob3, blob3_conformal):
    final, _ = area_preserving_param(blob3, blob3_conformal)
    out = remesh(blob3, final, 642)
    areas_in = meshkit.face_areas(blob3)
    areas_out = meshkit.face_areas(out)
    cv_in = areas_in.std() / areas_in.mean()
    cv_out = areas_out.std() / areas_out.mean()
    assert out.euler_characteristic == 2
    assert cv_out < cv_in


# ---------------------------------------------------------------------------
# Cartogram populations
# ---------------------------------------------------------------------------

def test_cartogram_single_region_uniform(ico3):
    # One land region covering half the sphere, sea on the other half with
    # matching area: the sea inherits the land density exactly.
    north = ico3.vertices[ico3.faces].mean(axis=1)[:, 2] >= 0
    labels = np.where(north, 1, SEA_REGION_ID)
    labeling = RegionLabeling(labels, {1: 5.0})
    pop = cartogram_population(ico3, labeling)
    density = pop / meshkit.face_areas(ico3)
    assert np.abs(density - density[0]).max() < 1e-9


def test_cartogram_proportionality(ico3):
    centroids = ico3.vertices[ico3.faces].mean(axis=1)
    labels = np.where(centroids[:, 2] > 0.3, 1, np.where(centroids[:, 2] < -0.3, 2, SEA_REGION_ID))
    areas = meshkit.face_areas(ico3)
    a1 = areas[labels == 1].sum()
    a2 = areas[labels == 2].sum()
    labeling = RegionLabeling(labels, {1: 2.0 * a1, 2: 1.0 * a2})
    pop = cartogram_population(ico3, labeling)
    density = pop / areas
    assert np.allclose(density[labels == 1], 2.0)
    assert np.allclose(density[labels == 2], 1.0)
    # Region totals are conserved exactly.
    assert pop[labels == 1].sum() == pytest.approx(2.0 * a1)
    assert pop[labels == 2].sum() == pytest.approx(1.0 * a2)


def test_cartogram_population_scaling(ico3):
    centroids = ico3.vertices[ico3.faces].mean(axis=1)
    labels = np.where(centroids[:, 0] > 0.0, 1, 2)
    labeling = RegionLabeling(labels, {1: 4.0, 2: 3.0})
    base = cartogram_population(ico3, labeling)
    tripled = cartogram_population(ico3, RegionLabeling(labels, {1: 12.0, 2: 3.0}))
    sel = labels == 1
    assert np.allclose(tripled[sel], 3.0 * base[sel])
    assert np.allclose(tripled[~sel], base[~sel])


def test_cartogram_errors(ico3):
    labels = np.full(ico3.num_faces, 3)
    with pytest.raises(MeshError, match="positive"):
        RegionLabeling(labels, {3: -1.0})
    with pytest.raises(MeshError, match="zero total area"):
        cartogram_population(ico3, RegionLabeling(labels, {3: 1.0, 4: 1.0}))
    with pytest.raises(MeshError, match="no population"):
        half = np.where(np.arange(ico3.num_faces) % 2 == 0, 3, 9)
        cartogram_population(ico3, RegionLabeling(half, {3: 1.0}))
    with pytest.raises(MeshError, match="sea"):
        RegionLabeling(labels, {SEA_REGION_ID: 1.0})


def test_region_csv_loading(tmp_path, tetra):
    labels = tmp_path / "labels.csv"
    labels.write_text("0,1\n1,1\n2,0\n3,2\n")
    pops = tmp_path / "pops.csv"
    pops.write_text("1,10.0\n2,5.0\n")
    labeling = RegionLabeling.from_csvs(labels, pops, 4)
    assert list(labeling.face_region) == [1, 1, 0, 2]
    assert labeling.region_population == {1: 10.0, 2: 5.0}
    pop = cartogram_population(tetra, labeling)
    assert pop[0] + pop[1] == pytest.approx(10.0)
    assert pop[3] == pytest.approx(5.0)
