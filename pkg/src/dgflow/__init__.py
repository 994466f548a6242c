"""Interior-penalty DG solver for incompressible three-phase porous-media flow."""

from .mesh import Mesh, Face, Element, build_uniform_mesh, refine
from .dg_core import (DGField, QuadratureRule, jump, weighted_average,
                      l2_project, l2_error, coercivity_norm, star_norm)
from .physics import (FluidProperties, SaturationPair, clamp, mobilities,
                      relative_permeabilities, capillary_pressure_a,
                      capillary_pressure_v)
from .manufactured import (ManufacturedCase, constant_densities_case,
                           gravity_case, case_by_name)
from .assembly import (SchemeConfig, LinearSystem, RTField, harmonic_penalty,
                       assemble_pressure, assemble_aqueous, assemble_vapor,
                       rt0_project, upwind_value, apply_dirichlet,
                       check_coercivity_threshold)
from .solver import (PhaseState, TimeConfig, ErrorReport, solve_linear,
                     initialize, advance, run)
from .harness import (RunConfig, ConvergenceReport, convergence_study,
                      emit_report, cli_main)

__version__ = "0.1.0"
