"""Grid-based Bohmian quantum potentials for a few identical particles."""

from .eikonal import (
    EikonalConvergenceError,
    EikonalProblem,
    PhaseField,
    Source,
    integrate_trajectory,
    solve_eikonal,
    solve_equation_k,
    velocity_field,
)
from .fieldio import read_binary, read_csv, write_binary, write_csv
from .grid_field import AxisSpec, GridError, GridSpec, ScalarField, VectorField, eval_on_grid
from .potentials import (
    PhysicalConstants,
    bohm_potential,
    conditional_potential,
    hartree_potential,
    per_particle_rhs,
    split_potential,
)
from .scf import (
    ScfConfig,
    ScfError,
    ScfState,
    SeparableProblem,
    reduce_potential,
    scf_init,
    scf_run,
    scf_solve_stage,
    separable_solve,
)
from .symmetry import ParticlePermutation, check_antisymmetry, permute_field, symmetrize
from .wavefunction import (
    DensityModel,
    Orbital,
    conditional_function,
    m_particle_density,
    marginal_function,
    one_particle_density,
)

__version__ = "0.1.0"

__all__ = [
    "AxisSpec",
    "DensityModel",
    "EikonalConvergenceError",
    "EikonalProblem",
    "GridError",
    "GridSpec",
    "Orbital",
    "ParticlePermutation",
    "PhaseField",
    "PhysicalConstants",
    "ScalarField",
    "ScfConfig",
    "ScfError",
    "ScfState",
    "SeparableProblem",
    "Source",
    "VectorField",
    "bohm_potential",
    "check_antisymmetry",
    "conditional_function",
    "conditional_potential",
    "eval_on_grid",
    "hartree_potential",
    "integrate_trajectory",
    "m_particle_density",
    "marginal_function",
    "one_particle_density",
    "per_particle_rhs",
    "permute_field",
    "read_binary",
    "read_csv",
    "reduce_potential",
    "scf_init",
    "scf_run",
    "scf_solve_stage",
    "separable_solve",
    "solve_eikonal",
    "solve_equation_k",
    "split_potential",
    "symmetrize",
    "velocity_field",
    "write_binary",
    "write_csv",
]
