"""Optimal supply-temperature control for district heating networks.

The package simulates thermal transport on a supply/return pipe graph
with fixed mass flows (sparse backward Euler, first-order upwinding)
and optimizes the plant supply-temperature trajectories against static
or time-varying energy prices under consumer temperature constraints,
using quadratic-penalty continuation and projected L-BFGS driven by
exact discrete-adjoint gradients.
"""

from .errors import DhnError, ParseError, SolverError, ValidationError
from .network import (ControlVolumes, FlowField, NetworkGraph, PipeParams,
                      control_volumes, load_flow_field, parse_network,
                      subdivide_pipes, velocity, write_flow_field,
                      write_network)
from .objective import (ConstraintSet, ObjectiveConfig, PriceModel,
                        constraint_violations, loss_energy, loss_energy_steps,
                        max_violation,
                        penalty, price_weight, project_control, tikhonov,
                        total_objective)
from .optimizer import (LbfgsResult, ObjectiveEvaluator, OptimizationReport,
                        OptimizerConfig, RoundStats, gradient, lbfgs_minimize,
                        optimize)
from .scenario import (DemandSet, LoadSeries, PriceSeries, Scenario,
                       build_scenario, lowpass, read_demand_set,
                       read_load_series, read_price_series, resample_to_grid,
                       synthesize_variations, write_demand_set,
                       write_load_series, write_price_series)
from .thermal import (BoundarySpec, PhysicalConstants, StateTrajectory,
                      SystemMatrices, TimeGrid, assemble, demand_to_delta,
                      energy_balance, simulate, solve_steady, step,
                      stored_energy)

__version__ = "0.1.0"
