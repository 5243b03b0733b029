"""Numerical laboratory for super-Coulombic Riesz gases in d = 1, 2."""

from .kernel import (Grid1D, KernelConstants, PowerTail, RieszParams,
                     SampledFunction, alpha_harmonic_extension, cs_extension,
                     frac_laplacian_pv, kernel_constants, riesz_g,
                     sobolev_seminorm)
from .equilibrium import (BoundaryFit, EquilibriumResult, Grid2D, Potential,
                          boundary_exponent_fit, effective_potential,
                          el_residual, solve_equilibrium)
from .energy import (Configuration, ElectricField1D, LocalEnergyReport,
                     TruncationVector, commutator_An, electric_next_order,
                     hamiltonian, local_electric_energy, minimal_distances,
                     next_order_energy, splitting_residual, truncation_f)
from .sampler import (ChainState, Ensemble, free_energy_curve, gelman_rubin,
                      metropolis_step, run_chain, sample_ensemble)

__version__ = "0.1.0"

__all__ = [
    "Grid1D",
    "Grid2D",
    "KernelConstants",
    "PowerTail",
    "RieszParams",
    "SampledFunction",
    "Potential",
    "EquilibriumResult",
    "BoundaryFit",
    "Configuration",
    "ChainState",
    "ElectricField1D",
    "Ensemble",
    "LocalEnergyReport",
    "TruncationVector",
    "alpha_harmonic_extension",
    "boundary_exponent_fit",
    "commutator_An",
    "electric_next_order",
    "hamiltonian",
    "local_electric_energy",
    "minimal_distances",
    "next_order_energy",
    "splitting_residual",
    "truncation_f",
    "cs_extension",
    "effective_potential",
    "el_residual",
    "frac_laplacian_pv",
    "free_energy_curve",
    "gelman_rubin",
    "kernel_constants",
    "metropolis_step",
    "riesz_g",
    "run_chain",
    "sample_ensemble",
    "sobolev_seminorm",
    "solve_equilibrium",
    "__version__",
]
