"""Spherical density-equalizing map: the diffusion-driven deformation loop.

Each iteration diffuses the vertex density implicitly, converts the density
gradient into a tangential vertex velocity, displaces and renormalizes the
vertices, repairs any overlaps, and re-couples the density to the deformed
geometry so that per-face population / area drives the next step. The loop
stops once sd(rho_V) / mean(rho_V) falls below the stopping ratio.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import meshkit, qcorrect
from .meshkit import DensityField, MeshError, SolverError
from .qcorrect import CorrectionConfig, OverlapStallError
from .sphereconf import SphericalMap

MAX_DT_HALVINGS = 30


class DensityStepError(RuntimeError):
    """Diffusion produced a nonpositive density (time step too large)."""


@dataclass
class SdemConfig:
    """Time step, stopping ratio, and iteration cap of the flow."""

    dt: float = 0.1
    eps: float = 1e-3
    max_iter: int = 200

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class SdemTrace:
    """Per-iteration diagnostics of a density-equalizing run."""

    density_ratio: list = field(default_factory=list)
    flip_count: list = field(default_factory=list)
    max_displacement: list = field(default_factory=list)
    dt_halvings: int = 0
    converged: bool = False
    stalled: bool = False

    @property
    def iterations(self):
        return max(len(self.density_ratio) - 1, 0)

    def record(self, ratio, flips, displacement):
        self.density_ratio.append(float(ratio))
        self.flip_count.append(int(flips))
        self.max_displacement.append(float(displacement))

    def rows(self):
        """Iteration records as dicts, one per JSON line."""
        return [
            {
                "iteration": i,
                "densityRatio": r,
                "flipCount": f,
                "maxDisplacement": d,
            }
            for i, (r, f, d) in enumerate(
                zip(self.density_ratio, self.flip_count, self.max_displacement)
            )
        ]


def diffusion_step(mesh, positions, rho_v, dt):
    """One implicit diffusion step: solve (A + dt L) rho' = A rho.

    Total mass 1^T A rho is conserved exactly up to the solver residual
    because the Laplacian rows sum to zero.
    """
    rho_v = np.asarray(rho_v, dtype=np.float64)
    if np.any(rho_v <= 0):
        raise MeshError("vertex density must be strictly positive")
    a = meshkit.lumped_mass(mesh, positions)
    lap = meshkit.cotangent_laplacian(mesh, positions)
    rho_new = meshkit.solve_linear(a + dt * lap, a @ rho_v)
    if np.any(rho_new <= 0):
        raise DensityStepError(
            f"diffusion step produced min density {rho_new.min():.3e}; "
            "time step too large"
        )
    return rho_new


def velocity_field(mesh, positions, rho_v):
    """Vertex velocity -grad(rho)/rho from the face gradient of the density."""
    rho_v = np.asarray(rho_v, dtype=np.float64)
    grad_f = meshkit.face_gradient(mesh, rho_v, positions)
    conv = meshkit.face_to_vertex_matrix(mesh, positions)
    return -(conv @ grad_f) / rho_v[:, None]


def project_velocity(velocity, normals):
    """Remove the normal component: v - (v . n) n."""
    velocity = np.asarray(velocity, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    return velocity - np.einsum("ij,ij->i", velocity, normals)[:, None] * normals


def displace_and_renormalize(positions, velocity, dt):
    """Advance positions by dt along the tangential velocity and re-project.

    The continuous flow integrates the projected velocity, so the update is
    x <- (x + dt v~) / |x + dt v~|.
    """
    moved = np.asarray(positions, dtype=np.float64) + dt * np.asarray(velocity)
    norms = np.linalg.norm(moved, axis=1)
    if np.any(norms < 1e-300):
        raise SolverError("displacement collapsed a vertex to the origin")
    return moved / norms[:, None]


def recouple_density(mesh, positions, population):
    """Density induced by the population on the current mapped geometry."""
    population = np.asarray(population, dtype=np.float64)
    areas = meshkit.face_areas(mesh, positions)
    if np.any(areas <= 0):
        raise MeshError("zero mapped face area while re-coupling the density")
    face_density = population / areas
    conv = meshkit.face_to_vertex_matrix(mesh, positions)
    return DensityField(population, face_density, conv @ face_density)


def population_from_vertex_density(mesh, smap, rho_v):
    """Convert a prescribed vertex density into per-face populations.

    Face population = (mean of the three corner densities) * mapped area, so
    the canonical per-face pipeline reproduces the prescribed field.
    """
    rho_v = np.asarray(rho_v, dtype=np.float64)
    if np.any(rho_v <= 0):
        raise MeshError("vertex density must be strictly positive")
    areas = meshkit.face_areas(mesh, smap.positions)
    return rho_v[mesh.faces].mean(axis=1) * areas


def _validated_population(mesh, population):
    population = np.asarray(population, dtype=np.float64)
    if population.shape != (mesh.num_faces,):
        raise MeshError(
            f"population must be ({mesh.num_faces},), got {population.shape}"
        )
    if not np.all(np.isfinite(population)) or np.any(population <= 0):
        raise MeshError("population must be strictly positive and finite")
    return population


def sdem_run(mesh, population, f0, cfg=None, correction=None):
    """Run the density-equalizing flow from a flip-free initial map.

    The stopping statistic is sd/mean of the most recently computed vertex
    density: the converted density before the first step, the diffused
    density after each step (the re-coupled face density feeds the next
    iteration). Returns the final SphericalMap together with an SdemTrace;
    on an overlap stall the last valid map is returned with trace.stalled
    set.
    """
    cfg = cfg or SdemConfig()
    correction = correction or CorrectionConfig()
    population = _validated_population(mesh, population)
    if qcorrect.count_flips(mesh, f0) != 0:
        raise ValueError("initial map must be flip-free")

    pos = np.array(f0.positions)
    density = recouple_density(mesh, pos, population)
    trace = SdemTrace()

    rho_v = density.vertex_density
    ratio = rho_v.std() / rho_v.mean()
    trace.record(ratio, qcorrect.count_flips(mesh, pos), 0.0)
    if ratio < cfg.eps:
        trace.converged = True
        return SphericalMap.project(pos), trace

    for _ in range(cfg.max_iter):
        rho_next, halvings = _robust_diffusion(mesh, pos, rho_v, cfg.dt)
        trace.dt_halvings += halvings
        ratio = rho_next.std() / rho_next.mean()
        velocity = velocity_field(mesh, pos, rho_next)
        tangential = project_velocity(velocity, pos)
        moved = displace_and_renormalize(pos, tangential, cfg.dt)
        try:
            corrected = qcorrect.correct_overlaps(
                mesh, SphericalMap(pos), SphericalMap.project(moved), correction
            )
        except OverlapStallError:
            trace.stalled = True
            break
        disp = float(np.linalg.norm(corrected.positions - pos, axis=1).max())
        pos = np.array(corrected.positions)
        density = recouple_density(mesh, pos, population)
        rho_v = density.vertex_density
        trace.record(ratio, qcorrect.count_flips(mesh, pos), disp)
        if ratio < cfg.eps:
            trace.converged = True
            break

    return SphericalMap.project(pos), trace


def _robust_diffusion(mesh, positions, rho_v, dt):
    """Diffusion step with automatic time-step halving on nonpositive output."""
    halvings = 0
    while True:
        try:
            return diffusion_step(mesh, positions, rho_v, dt), halvings
        except DensityStepError:
            dt /= 2.0
            halvings += 1
            if halvings > MAX_DT_HALVINGS:
                raise SolverError(
                    "diffusion could not keep the density positive even with "
                    f"{MAX_DT_HALVINGS} time-step halvings"
                )


def area_preserving_param(mesh, f0, cfg=None, correction=None):
    """Area-preserving spherical parameterization.

    Runs the density-equalizing flow with the original face areas as the
    population, so mapped areas converge toward the input area distribution.
    """
    return sdem_run(mesh, mesh._face_areas.copy(), f0, cfg, correction)


def load_population_csv(path, num_faces):
    """Read `face_index,population` rows (0-based, one row per face)."""
    values = np.full(num_faces, np.nan)
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                idx = int(row[0])
                pop = float(row[1])
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}: malformed population row {row!r}") from exc
            if not 0 <= idx < num_faces:
                raise MeshError(f"{path}: face index {idx} out of range")
            if pop <= 0 or not np.isfinite(pop):
                raise MeshError(f"{path}: population for face {idx} must be positive")
            values[idx] = pop
    if np.any(np.isnan(values)):
        missing = int(np.nonzero(np.isnan(values))[0][0])
        raise MeshError(f"{path}: no population given for face {missing}")
    return values
