"""Iterative FBSDE solver for stochastic optimal control with importance-sampled LSMC."""

from .basis import ChebyshevBasis, basis_size, design_matrix, eval_basis, eval_basis_gradient, fit_scaling, ridge_solve
from .config import ExperimentConfig, load_config, load_preset, parse_config
from .dynamics import (
    CostSpec,
    DynamicsModel,
    cartpole_model,
    check_decomposition,
    lq_model,
    pendulum_model,
    riccati_oracle,
    wrapped_quadratic_cost,
)
from .estimator import FBSDEController
from .exceptions import (
    ConfigError,
    DecompositionError,
    FBSDEError,
    ModelError,
    RegressionError,
    SimulationDivergenceError,
)
from .fbsde import ValueApprox, backward_pass, driver_h, driver_h_tilde, terminal_init
from .policy import Policy, SolverConfig, drift_modification, estimate_cost, learn, optimal_control, stats_csv
from .sampling import TimeGrid, TrajectoryBatch, euler_step, make_time_grid, sample_brownian, simulate_batch

__version__ = "0.1.0"
