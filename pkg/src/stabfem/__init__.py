"""Stabilized equal-order finite elements for Stokes, Oseen and Navier-Stokes on triangles."""
from .assembly import OperatorBlocks, SaddleState, assemble_stokes_blocks, convection
from .coercivity import (
    ConstantSet,
    CoercivityReport,
    ThetaMap,
    apply_theta,
    check_mapped_coercivity,
    check_sign_condition,
    compute_tau,
    estimate_alpha,
    estimate_cN,
    estimate_infsup,
    residual_map,
)
from .fe_space import ConfigurationError, PressureSpace, ScalarSpace, VelocitySpace, build_spaces
from .harness import ConvergenceTable, lid_driven_cavity, manufactured_solution, run_convergence
from .mesh import Mesh, MeshError, MeshFormatError, build_unit_square_mesh, parse_mesh, refine_uniform
from .solver import (
    DiscreteProblem,
    ProblemSpec,
    SolveLog,
    SolverError,
    discretize,
    riesz_dual_norm,
    solve_linear_saddle,
    solve_nonlinear,
)
from .stabilization import StabilizationConfig, assemble_pressure_stab, velocity_stab

__version__ = "0.1.0"
