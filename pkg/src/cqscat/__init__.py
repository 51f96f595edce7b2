"""Transient acoustic scattering by penetrable anisotropic obstacles.

Symmetric BEM-FEM coupling in space with trapezoidal-rule convolution
quadrature in time, solvable by marching on in time or by the parallel
all-steps-at-once reduction to the boundary.
"""

from .meshing import (
    Mesh,
    BoundaryMesh,
    MeshError,
    generate_square_mesh,
    refine_uniform,
    extract_boundary,
    load_mesh,
    save_mesh,
    boxes_mesh,
)
from .spaces import BoundarySpacePair, make_pair
from .fem import (
    CoefficientField,
    FemSystem,
    assemble_mass,
    assemble_stiffness,
    assemble_coupling,
    assemble_load,
    assemble_fem_system,
    elliptic_projection,
)
from .bem import (
    fundamental_solution,
    LaplaceBlock,
    assemble_V,
    assemble_K,
    assemble_W,
    assemble_blocks,
    evaluate_potentials,
    project_boundary_data,
    calderon_defect,
)
from .cq import (
    TimeGrid,
    TransferFunction,
    ScalarTransfer,
    MatrixTransfer,
    SparseTransfer,
    BlockTransfer,
    CQWeights,
    trapezoidal_delta,
    default_radius,
    cq_weights,
    forward_convolution,
    solve_convolution_equation_marching,
    all_steps_at_once,
)

__version__ = "0.1.0"
