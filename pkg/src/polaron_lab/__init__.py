"""Numerical laboratory for the Pekar problem, Polaron path measures and the Pekar diffusion."""

__version__ = "0.1.0"

from .diagnostics import (IncrementSample, assemble_report, energy_distance,
                          localization_functional, msd_curve, scaling_identity_check,
                          two_sample_distance)
from . import exceptions
from .path_gibbs import (FreeEnergyEstimator, PathLattice, PolaronSampler, SamplerConfig,
                         clt_variance, sample_polaron, thermo_integrate)
from .pekar import (PekarSolution, PekarSolver, drift_field, energy, ground_state_radial,
                    hartree_potential, laplace_log_psi, scf_step, solve_pekar)
from .pekar_sde import (DiffusionConfig, IncrementExtractor, PekarDiffusion,
                        TrajectorySample, girsanov_log_density, increments, simulate_pekar)
from .radial import RadialFunction, RadialGrid, WaveFunction, normalize

__all__ = [
    "DiffusionConfig",
    "FreeEnergyEstimator",
    "IncrementExtractor",
    "IncrementSample",
    "PathLattice",
    "PekarDiffusion",
    "PekarSolution",
    "PekarSolver",
    "PolaronSampler",
    "RadialFunction",
    "RadialGrid",
    "SamplerConfig",
    "TrajectorySample",
    "WaveFunction",
    "assemble_report",
    "clt_variance",
    "drift_field",
    "energy",
    "energy_distance",
    "girsanov_log_density",
    "ground_state_radial",
    "hartree_potential",
    "increments",
    "laplace_log_psi",
    "localization_functional",
    "msd_curve",
    "normalize",
    "sample_polaron",
    "scaling_identity_check",
    "scf_step",
    "simulate_pekar",
    "solve_pekar",
    "thermo_integrate",
    "two_sample_distance",
    "exceptions",
]
