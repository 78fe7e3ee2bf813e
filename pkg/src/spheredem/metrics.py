"""Quantitative quality measures: area distortion, density variance,
Beltrami statistics, landmark error, and the serialized run report."""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import meshkit, qcorrect
from .meshkit import MeshError
from .sphereconf import SphericalMap


def logged_area_ratio(mesh, smap):
    """Per-face logged area ratio d_area.

    d_area(T) = log[(Area(f(T)) / total mapped area) / (Area(T) / total
    area)]; identically zero for a perfectly area-preserving map.
    """
    mapped = meshkit.face_areas(mesh, smap.positions)
    original = mesh._face_areas
    if np.any(mapped <= 0):
        raise MeshError("zero mapped face area in logged_area_ratio")
    return np.log((mapped / mapped.sum()) / (original / original.sum()))


def normalized_density_variance(rho_v):
    """Variance of rho / mean(rho); scale invariant, zero for uniform fields."""
    rho_v = np.asarray(rho_v, dtype=np.float64)
    if np.any(rho_v <= 0):
        raise MeshError("density must be strictly positive")
    normalized = rho_v / rho_v.mean()
    return float(np.var(normalized))


@dataclass(frozen=True)
class BeltramiStats:
    mean: float
    max: float
    histogram: np.ndarray
    bin_edges: np.ndarray


def beltrami_stats(mesh, smap, reference=None, bins=50):
    """Face-wise |mu| statistics of a spherical map.

    mu is measured between stereographic layouts of `reference` and `smap`
    (or against the input surface metric when `reference` is None). Each map
    is first rotated so its most regular face sits at the north pole, which
    cancels rotations exactly. Both projection poles are evaluated and each
    face takes the value from the chart that keeps it central in every
    layout involved, so no pole-wrapping face is measured in its singular
    chart.
    """
    pos = smap.positions @ qcorrect.regular_pole_rotation(mesh, smap.positions).T
    if isinstance(reference, SphericalMap):
        ref = reference.positions @ qcorrect.regular_pole_rotation(
            mesh, reference.positions
        ).T
    else:
        ref = None

    mu_abs = {}
    for pole in ("north", "south"):
        z_map = qcorrect._safe_chart(pos, pole)
        if ref is not None:
            source = qcorrect._safe_chart(ref, pole)
            target = z_map
        else:
            source = z_map
            target = mesh.vertices
        mu_abs[pole] = np.abs(qcorrect.beltrami_coefficient(source, target, mesh))

    # A chart is bad for a face that sits near its projection pole in any
    # layout; pick per face the chart farther from both.
    z_top = pos[mesh.faces, 2].mean(axis=1)
    z_bottom = z_top
    if ref is not None:
        ref_height = ref[mesh.faces, 2].mean(axis=1)
        z_top = np.maximum(z_top, ref_height)
        z_bottom = np.minimum(z_bottom, ref_height)
    values = np.where(z_top < -z_bottom, mu_abs["north"], mu_abs["south"])
    hist, edges = np.histogram(np.clip(values, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return BeltramiStats(float(values.mean()), float(values.max()), hist, edges)


def landmark_error(smap, landmarks):
    """2-norm of the stacked landmark residual sqrt(sum |f(p_i) - q_i|^2)."""
    if len(landmarks) == 0:
        return 0.0
    diff = smap.positions[landmarks.indices] - landmarks.targets
    return float(np.sqrt(np.sum(diff * diff)))


@dataclass
class MetricsReport:
    """Single-document JSON report of one mapping run."""

    meshName: str
    faceCount: int
    wallTime: float
    varInitial: float | None = None
    varFinal: float | None = None
    dAreaMeanInitial: float | None = None
    dAreaSDInitial: float | None = None
    dAreaMeanFinal: float | None = None
    dAreaSDFinal: float | None = None
    muMean: float | None = None
    landmarkErrorInitial: float | None = None
    landmarkErrorFinal: float | None = None
    flipCount: int = 0

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))
