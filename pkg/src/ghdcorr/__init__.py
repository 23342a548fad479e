"""Euler-scale correlation functions from generalized hydrodynamics."""

__version__ = "0.1.0"

from .errors import GhdError
from .models import (BUILTIN, ModelSpec, constant_kernel_model, free_fermion_ising,
                     free_nonrel_fermion, hard_rods, lieb_liniger, sinh_gordon, tabulated_model)
from .spectral import (KernelOperator, Parity, ParticleType, SpectralFunction, SpectralGrid,
                       Statistics, build_grid, integrate, kernel_matrix)
from .tba import (DrivingTerm, GgeState, average_current, average_density, dress,
                  effective_acceleration, solve_gge, star_dress, state_derivative_check)
from .characteristics import FluidState, evolve
from .propagator import PropagatorContext, apply_propagator
from .correlators import ObservableSpec, homogeneous_two_point, two_point, two_point_parts, two_point_profile
from .free_exact import FreeScenario, free_n_point, free_two_point
from .partitioning import RaySolution, ray_correlator, solve_rays
from .asymptotics import AsymptoticContext, richardson
