"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The expensive shared artifacts (desk meshes, conformal maps,
area-preserving runs) are module-scoped fixtures.
"""

import time

import numpy as np
import pytest

from spheredem import (
    EnergyWeights,
    LandmarkSet,
    SphericalMap,
    area_preserving_param,
    beltrami_coefficient,
    beltrami_stats,
    correct_overlaps,
    count_flips,
    diffusion_step,
    icosphere,
    initial_conformal_map,
    lbs_reconstruct,
    lsdem_run,
    normalized_density_variance,
    optimal_rotation,
    register,
    apply_correspondence,
    remesh,
    sdem_run,
    truncate_mu,
)
from spheredem import meshkit, metrics
from spheredem.lsdem import _landmark_loss_grad, _rx, _ry, _rz
from spheredem.sdem import recouple_density

from conftest import warped_blob
from test_qcorrect import grid_boundary, push_vertex_over_edge, square_grid


def ok(criterion, text):
    print(f"\nACCEPTANCE {criterion}: PASS - {text}")


@pytest.fixture(scope="module")
def desk_sphere():
    mesh = icosphere(4)  # 5120 faces
    return mesh, initial_conformal_map(mesh)


@pytest.fixture(scope="module")
def blobs():
    out = []
    for variant in range(3):
        mesh = warped_blob(5, variant)  # 20480 faces
        f0 = initial_conformal_map(mesh)
        final, trace = area_preserving_param(mesh, f0)
        out.append((mesh, f0, final, trace))
    return out


@pytest.fixture(scope="module")
def desk_lsdem(desk_sphere):
    mesh, f0 = desk_sphere
    rng = np.random.default_rng(42)
    idx = rng.choice(mesh.num_vertices, size=5, replace=False)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    targets = f0.positions[idx] @ q.T
    noise = 0.15 * rng.normal(size=targets.shape)
    noise -= np.einsum("ij,ij->i", noise, targets)[:, None] * targets
    targets += noise
    targets /= np.linalg.norm(targets, axis=1)[:, None]
    landmarks = LandmarkSet(idx, targets)
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    population = (1.0 + 0.8 * centroids[:, 2] ** 2) * meshkit.face_areas(mesh)
    return mesh, f0, landmarks, population


def test_criterion_1_density_equalization(desk_sphere):
    mesh, f0 = desk_sphere
    assert mesh.num_faces == 5120
    areas = meshkit.face_areas(mesh)
    north = mesh.vertices[mesh.faces].mean(axis=1)[:, 2] >= 0
    population = np.where(
        north, 3.0 / areas[north].sum(), 1.0 / areas[~north].sum()
    ) * areas
    assert population[north].sum() / population[~north].sum() == pytest.approx(3.0)

    start = time.perf_counter()
    final, trace = sdem_run(mesh, population, f0)
    elapsed = time.perf_counter() - start

    assert trace.converged and trace.iterations <= 200
    assert trace.density_ratio[-1] < 1e-3
    mapped = meshkit.face_areas(mesh, final.positions)
    ratio = mapped[north].sum() / mapped[~north].sum()
    assert abs(ratio - 3.0) <= 0.06  # within 2% of 3:1
    assert count_flips(mesh, final) == 0
    assert elapsed < 30.0
    ok(1, f"two-cap 3:1 equalized in {trace.iterations} iterations "
          f"({elapsed:.1f}s), area ratio {ratio:.3f}, 0 flips")


def test_criterion_2_area_preserving(blobs):
    reductions = []
    for mesh, f0, final, trace in blobs:
        d0 = np.abs(metrics.logged_area_ratio(mesh, f0)).mean()
        d1 = np.abs(metrics.logged_area_ratio(mesh, final)).mean()
        assert mesh.num_faces >= 10_000
        assert d1 <= 0.1 * d0
        assert count_flips(mesh, final) == 0
        reductions.append(1.0 - d1 / d0)
    ok(2, "area distortion cut by "
          + ", ".join(f"{100 * r:.1f}%" for r in reductions)
          + " on three 20480-face blobs, 0 flips")


def test_criterion_3_diffusion_conservation(desk_sphere):
    mesh, f0 = desk_sphere
    rng = np.random.default_rng(23)
    rho = rng.uniform(0.2, 5.0, mesh.num_vertices)
    mass = meshkit.lumped_mass(mesh, f0.positions)
    initial = (mass @ rho).sum()
    for _ in range(100):
        rho = diffusion_step(mesh, f0.positions, rho, 0.1)
    drift = abs((mass @ rho).sum() - initial) / initial
    assert drift <= 1e-9
    ok(3, f"total mass drift over 100 diffusion steps: {drift:.2e}")


def test_criterion_4_beltrami_correctness():
    # 17 x 17 vertices: binary-exact spacing 1/16, so the identity map's
    # coefficient cancels exactly in floating point.
    z, faces = square_grid(17)
    assert np.abs(beltrami_coefficient(z, z, faces)).max() == 0.0
    for k in (0.1, 0.3, 0.5):
        mu = beltrami_coefficient(z, z + k * np.conj(z), faces)
        assert np.abs(mu - k).max() < 1e-12
    rng = np.random.default_rng(24)
    raw = rng.normal(size=200) + 1j * rng.normal(size=200)
    once = truncate_mu(raw, 0.1)
    assert np.array_equal(once, truncate_mu(once, 0.1))
    ok(4, "identity mu exactly 0; antiholomorphic pushes recovered to 1e-12; "
          "truncation idempotent")


def test_criterion_5_lbs_oracle():
    z, faces = square_grid(33)  # 32 x 32 cells
    boundary = grid_boundary(33)
    target = z + 0.3 * np.conj(z)
    out = lbs_reconstruct(
        faces, z, np.full(len(faces), 0.3 + 0.0j), boundary, target[boundary]
    )
    err_affine = np.abs(out.values - target).max()
    assert err_affine < 1e-8

    ident = lbs_reconstruct(
        faces, z, np.zeros(len(faces), dtype=complex), boundary, z[boundary]
    )
    err_ident = np.abs(ident.values - z).max()
    assert err_ident < 1e-10
    ok(5, f"constant-mu affine oracle {err_affine:.1e}, "
          f"harmonic identity oracle {err_ident:.1e}")


def test_criterion_6_overlap_correction():
    mesh = icosphere(3)
    prev = SphericalMap(mesh.vertices)
    folded = push_vertex_over_edge(mesh)
    flips_before = count_flips(mesh, folded)
    assert flips_before >= 1
    repaired = correct_overlaps(mesh, prev, folded)
    assert count_flips(mesh, repaired) == 0

    clean = initial_conformal_map(mesh)
    passthrough = correct_overlaps(mesh, prev, clean)
    assert passthrough is clean  # bit-unchanged
    ok(6, f"{flips_before} synthetic flips repaired to 0; "
          "bijective map passed through untouched")


def test_criterion_7_rotation_invariance(desk_lsdem):
    mesh, f0, landmarks, population = desk_lsdem
    density = recouple_density(mesh, f0.positions, population)
    weights = EnergyWeights(1.0, 2.0, 5.0)
    lap = meshkit.cotangent_laplacian(mesh)
    from spheredem import combined_energy

    _, e1, e2, _ = combined_energy(mesh, f0, density, landmarks, weights, lap)
    rng = np.random.default_rng(25)
    worst = 0.0
    for _ in range(20):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        rotated = SphericalMap.project(f0.positions @ q.T)
        density_r = recouple_density(mesh, rotated.positions, population)
        _, r1, r2, _ = combined_energy(
            mesh, rotated, density_r, landmarks, weights, lap
        )
        worst = max(worst, abs(r1 - e1) / abs(e1), abs(r2 - e2) / abs(e2))
    assert worst <= 1e-10
    ok(7, f"E1, E2 invariant under 20 random rotations (worst rel dev {worst:.1e})")


def test_criterion_8_optimal_rotation():
    rng = np.random.default_rng(26)
    worst = 0.0
    for degrees in (10.0, 45.0, 80.0, 95.0, 120.0, 170.0):
        for axis, rot_fn, comp in (("x", _rx, 0), ("y", _ry, 1), ("z", _rz, 2)):
            p = rng.normal(size=(5, 3))
            p /= np.linalg.norm(p, axis=1)[:, None]
            theta = np.deg2rad(degrees)
            q = p @ rot_fn(theta).T
            angles = optimal_rotation(p, q)
            got = (angles.phi, angles.psi, angles.theta)
            err = abs(got[comp] - theta)
            others = max(abs(got[(comp + 1) % 3]), abs(got[(comp + 2) % 3]))
            assert err < 1e-4, (degrees, axis, got)
            assert others < 1e-4, (degrees, axis, got)
            worst = max(worst, err, others)

    for _ in range(100):
        k = int(rng.integers(1, 9))
        p = rng.normal(size=(k, 3))
        p /= np.linalg.norm(p, axis=1)[:, None]
        q = rng.normal(size=(k, 3))
        q /= np.linalg.norm(q, axis=1)[:, None]
        angles = optimal_rotation(p, q)
        result = _landmark_loss_grad(
            np.array([angles.phi, angles.psi, angles.theta]), p, q
        )[0]
        assert result <= np.sum((p - q) ** 2) + 1e-12
    ok(8, f"single-axis recovery 10-170 degrees within {worst:.1e} rad; "
          "loss never above the identity on 100 random sets")


def test_criterion_9_lsdem_alignment(desk_lsdem):
    mesh, f0, landmarks, population = desk_lsdem
    final, trace = lsdem_run(
        mesh, population, f0, landmarks, EnergyWeights(1.0, 2.0, 5.0)
    )
    le0 = metrics.landmark_error(f0, landmarks)
    le1 = metrics.landmark_error(final, landmarks)
    mu = beltrami_stats(mesh, final, reference=f0).mean
    assert le1 <= 0.05 * le0
    assert count_flips(mesh, final) == 0
    assert mu < 0.2
    ok(9, f"landmark error {le0:.4f} -> {le1:.4f} "
          f"({100 * le1 / le0:.1f}%), mean|mu| {mu:.3f}, 0 flips")


def test_criterion_10_parameter_monotonicity(desk_lsdem):
    mesh, f0, landmarks, population = desk_lsdem
    variances = []
    for alpha in (1.0, 3.0, 5.0):
        final, _ = lsdem_run(
            mesh, population, f0, landmarks, EnergyWeights(alpha, 1.0, 1.0)
        )
        rho = recouple_density(mesh, final.positions, population).vertex_density
        variances.append(normalized_density_variance(rho))
    for a, b in zip(variances, variances[1:]):
        assert b <= 1.1 * a  # non-increasing within 10% slack

    mus = []
    for beta in (1.0, 3.0, 5.0):
        final, _ = lsdem_run(
            mesh, population, f0, landmarks, EnergyWeights(1.0, beta, 1.0)
        )
        mus.append(beltrami_stats(mesh, final, reference=f0).mean)
    for a, b in zip(mus, mus[1:]):
        assert b <= 1.1 * a
    ok(10, "alpha 1/3/5 -> Var " + "/".join(f"{v:.1e}" for v in variances)
           + "; beta 1/3/5 -> mean|mu| " + "/".join(f"{m:.4f}" for m in mus))


def test_criterion_11_remesh_quality(blobs):
    mesh, _, final, _ = blobs[0]
    out = remesh(mesh, final, 2562)
    areas_in = meshkit.face_areas(mesh)
    areas_out = meshkit.face_areas(out)
    cv_in = areas_in.std() / areas_in.mean()
    cv_out = areas_out.std() / areas_out.mean()
    assert cv_out < cv_in
    assert out.euler_characteristic == 2
    ok(11, f"face-area CV {cv_in:.3f} -> {cv_out:.3f}, Euler characteristic 2")


def test_criterion_12_registration_identity(desk_sphere):
    mesh, f0 = desk_sphere
    corr = register(mesh, mesh, f0, f0)
    pulled = apply_correspondence(corr, mesh)
    disp = np.linalg.norm(pulled - mesh.vertices, axis=1).mean()
    assert disp <= 1e-6
    ok(12, f"self-registration mean displacement {disp:.2e}")
