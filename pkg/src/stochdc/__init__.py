"""Stochastic DC microgrid with distributed current-sharing control.

Model, Euler-Maruyama simulation, steady-state and Lyapunov analysis,
scenario files and a command-line interface.
"""
from .analysis import (Equilibrium, EquilibriumError, LyapunovWeights, steady_state_residuals,
                       fixed_point_equilibrium, goal_metrics, ito_derivative_direct,
                       ito_derivative_expanded, omega_diagonal, omega_matrix, solve_equilibrium, storage)
from .controller import CommGraph, ControllerParams, ControllerState, comm_laplacian, controller_update
from .engine import (BACKEND, EnsembleResult, IntegrationSettings, SimulationError, Trajectory,
                     euler_maruyama_step, run_ensemble, simulate, simulate_deviations, stream,
                     wiener_increments)
from .grid import (ElectricalParams, LoadStep, ModelError, NetworkState, Topology, VoltageGuardError,
                   ZipLoadConstants, build_incidence, diffusion, drift, load_current)
from .loads import StochasticParams, analytic_moments, check_assumptions, exact_samples
from .scenario import Scenario, ScenarioError, bundled_scenarios, load_scenario, parse_scenario
from .system import Plant

__version__ = "0.1.0"
