"""Point Integral Method with volume constraint on point clouds.

Solves the Poisson equation and the Laplace-Beltrami eigenproblem on sampled
manifolds, imposing Dirichlet data on a boundary collar of width ``2 sqrt(t)``.
"""

from .errors import (
    ConvergenceError,
    CoverageError,
    DegenerateGeometryError,
    FormatError,
    IndefiniteError,
    ParameterError,
    PimError,
    StageError,
)
from .geometry import boundary_measure_weights, estimate_tangent_frame, voronoi_volume_weights
from .kernel import KernelSpec, eval_rbart, eval_rt, profile_r, profile_rbar, select_bandwidth
from .operator import (
    DomainPartition,
    SolveReport,
    SourceField,
    SparseOperator,
    assemble_load,
    assemble_mass,
    assemble_robin,
    assemble_stiffness,
    coercivity_probe,
    interpolate,
    partition_domain,
)
from .pointcloud import (
    NeighborIndex,
    PointCloud,
    SamplingStats,
    build_index,
    estimate_fill_distance,
    load_cloud,
    sample_unit_disk,
    save_cloud,
)
from .solvers import CgConfig, cg_solve, smallest_eigenpairs

__version__ = "0.1.0"
