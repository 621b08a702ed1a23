"""Heat transfer through a thin periodic grain layer between a fluid and a
solid: resolved simulation, homogenized limit models, and the studies tying
them together."""

from .cells import (CellProblem, CellProblemState, EffectiveConductivity,
                    boundary_exchange_integrals, build_cell_problem,
                    cell_heat_step, effective_conductivity)
from .effective import (CellBank, CoupledState, EffectiveConfig, EffectiveRun,
                        InterfaceLayer, IterationReport, MacroProblem,
                        compute_E, coupled_time_step, run_effective,
                        sink_coefficient)
from .geometry import (Disc, FullCell, GeometryMeasures, NoGrain, RasterMask,
                       Slab, Sphere, SphereWithConnectors,
                       build_layered_domain, build_perforated_domain,
                       exact_measures, rasterize, shape_from_config)
from .grid import (DomainLabels, FaceSet, Field, Grid, Label, PerfectContact,
                   Robin, TransmissionSpec, assemble_advection,
                   assemble_diffusion, backward_euler_step, norm_jump,
                   norm_l2, norm_linf, solve_stationary, uniform_labels)
from .linalg import SolverConfig, SolverError, SparseSystem, combine, solve_linear
from .micro import (CONNECTED, DISCONNECTED, MicroConfig, MicroRun,
                    PhysicalParams, VelocitySpec, build_micro_system,
                    epsilon_estimate_check, run, solve_micro_stationary)

__version__ = "0.1.0"
