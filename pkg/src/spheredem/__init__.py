"""Density-equalizing spherical parameterization of genus-0 closed meshes.

Maps a closed triangle mesh of sphere topology onto the unit sphere so that
the final face areas are proportional to a prescribed per-face population,
with bijectivity enforced through quasi-conformal overlap repair. Variants
balance density equalization against conformality and landmark alignment,
with applications to area-preserving parameterization, registration,
remeshing, and cartogram-style data visualization.
"""

from ._kernels import BACKEND
from .meshkit import DensityField, MeshError, SolverError, TriMesh, load_mesh, save_obj
from .qcorrect import (
    CorrectionConfig,
    OverlapStallError,
    beltrami_coefficient,
    correct_overlaps,
    count_flips,
    lbs_reconstruct,
    truncate_mu,
)
from .sphereconf import (
    PlanarMap,
    SphericalMap,
    initial_conformal_map,
    inverse_stereographic,
    mobius_area_correction,
    stereographic,
)
from .sdem import (
    SdemConfig,
    SdemTrace,
    area_preserving_param,
    diffusion_step,
    displace_and_renormalize,
    project_velocity,
    recouple_density,
    sdem_run,
    velocity_field,
)
from .lsdem import (
    EnergyWeights,
    LandmarkSet,
    LsdemConfig,
    RotationAngles,
    apply_rotation,
    combined_energy,
    descent_direction,
    lsdem_run,
    optimal_rotation,
)
from .metrics import (
    BeltramiStats,
    MetricsReport,
    beltrami_stats,
    landmark_error,
    logged_area_ratio,
    normalized_density_variance,
)
from .apps import (
    RegionLabeling,
    SpherePointLocator,
    SurfaceCorrespondence,
    apply_correspondence,
    cartogram_population,
    icosphere,
    register,
    remesh,
    sphere_point_locate,
    uniform_sphere_mesh,
)

__version__ = "0.1.0"
