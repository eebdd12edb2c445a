"""Feedback policies from value approximations and the importance-sampled learning loop."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .exceptions import ConfigError, FBSDEError
from .fbsde import ValueApprox, backward_pass
from .sampling import (
    _EXPLORATION_TAG,
    TimeGrid,
    TrajectoryBatch,
    make_time_grid,
    simulate_batch,
    standard_normals,
)

logger = logging.getLogger(__name__)

ZERO_CONTROL = "zero-control"
VALUE_FEEDBACK = "value-feedback"

_SAMPLE_STREAM = 0
_EVAL_STREAM = 1


@dataclass
class Policy:
    model: object
    cost: object
    value: Optional[ValueApprox] = None
    explore_std: float = 0.0
    mode: str = ZERO_CONTROL

    def __post_init__(self):
        if self.mode not in (ZERO_CONTROL, VALUE_FEEDBACK):
            raise ConfigError(f"unknown policy mode {self.mode!r}")
        if self.mode == VALUE_FEEDBACK and self.value is None:
            raise ConfigError("value-feedback policy needs a value function")

    def with_exploration(self, std):
        return Policy(self.model, self.cost, self.value, float(std), self.mode)


def value_at(value: ValueApprox, i, x):
    return value.value(i, x)


def value_gradient(value: ValueApprox, i, x):
    return value.gradient(i, x)


def optimal_control(policy: Policy, i, x):
    """u = -R^-1 G(t_i, x)' grad v(t_i, x)."""
    if policy.mode != VALUE_FEEDBACK:
        raise ConfigError("optimal_control requires a value-feedback policy")
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    t = policy.value.grid.knots[i]
    gv = policy.value.gradient(i, X)
    Gt_gv = np.einsum("mnk,mn->mk", policy.model.G(t, X), gv)
    u = -Gt_gv @ policy.cost.R_inv.T
    return u[0] if x.ndim == 1 else u


def drift_modification(policy: Policy, i, x, xi=None, t=None):
    """Nominal control ubar = u* (or 0) + explore_std * xi and K = Gamma ubar.

    ``xi`` holds pre-drawn standard normals of shape ``(M, nu)``; omit it
    (or set ``explore_std = 0``) for noise-free control.
    """
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    model = policy.model
    if policy.mode == VALUE_FEEDBACK:
        u = optimal_control(policy, i, X)
        t = policy.value.grid.knots[i]
    else:
        u = np.zeros((X.shape[0], model.nu))
        t = 0.0 if t is None else t
    if policy.explore_std and xi is not None:
        u = u + policy.explore_std * np.atleast_2d(xi)
    K = np.einsum("mpk,mk->mp", model.Gamma(t, X), u)
    return (K[0], u[0]) if x.ndim == 1 else (K, u)


def estimate_cost(batch: TrajectoryBatch, cost):
    """Left-point quadrature of g(X_N) + sum_i [q(t_i, X_i) + 1/2 u_i' R u_i] dt_i.

    Returns ``(mean, std, per_trajectory)``.
    """
    knots, dt = batch.grid.knots, batch.grid.dt
    X, U = batch.states, batch.controls
    total = cost.g(X[:, -1]).astype(float)
    for i in range(batch.grid.N):
        ctrl = 0.5 * np.einsum("mk,kl,ml->m", U[:, i], cost.R, U[:, i])
        total = total + (cost.q(knots[i], X[:, i]) + ctrl) * dt[i]
    return float(np.mean(total)), float(np.std(total)), total


# ---------------------------------------------------------------------------
# learning loop


@dataclass
class SolverConfig:
    x0: np.ndarray
    t0: float = 0.0
    T: float = 1.0
    N: int = 100
    M: int = 1000
    n_iter: int = 1
    seed: int = 0
    ridge: float = 1e-6
    explore_std: float = 0.5
    degree: int = 2
    n_eval: Optional[int] = None

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}")
        if self.n_iter < 1:
            raise ConfigError(f"n_iter must be >= 1, got {self.n_iter}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if self.explore_std < 0:
            raise ConfigError(f"explore_std must be >= 0, got {self.explore_std}")
        make_time_grid(self.t0, self.T, self.N)

    @property
    def grid(self) -> TimeGrid:
        return make_time_grid(self.t0, self.T, self.N)


@dataclass
class IterationStats:
    iteration: int
    cost_mean: float
    cost_std: float
    terminal_mean: np.ndarray
    value_estimate: float
    value_stderr: float
    divergences: int = 0
    extrapolations: int = 0
    n_samples: int = 0


class LearningAborted(FBSDEError):
    """Raised by :func:`learn`; carries the statistics gathered before the failure."""

    def __init__(self, iteration, stats, cause):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.stats = stats


def _source(policy: Policy, xi):
    def k_source(i, t, X):
        return drift_modification(policy, i, X, None if xi is None else xi[:, i], t=t)

    return k_source


def learn(config: SolverConfig, model, cost, callback: Optional[Callable] = None):
    """Alternate importance-sampled forward passes and backward regressions.

    Iteration 0 samples with zero nominal control plus exploration noise;
    iteration j > 0 samples under the policy of iteration j-1. Row j of the
    returned statistics evaluates the nominal policy of iteration j (zero
    control for j = 0) on fresh rollouts without exploration noise, and
    carries the value estimate of that iteration's backward pass.
    ``callback(j, policy, sample_batch, eval_batch)`` is invoked after every
    iteration with the newly fitted policy.
    """
    grid = config.grid
    if config.x0.shape != (model.n,):
        raise ConfigError(f"x0 must have {model.n} entries, got {config.x0.shape[0]}")
    n_eval = config.n_eval or config.M
    nominal = Policy(model, cost, explore_std=config.explore_std, mode=ZERO_CONTROL)
    stats: List[IterationStats] = []
    policy = None
    for j in range(config.n_iter):
        try:
            ev = simulate_batch(model, config.x0, grid, n_eval, config.seed,
                                k_source=_source(nominal, None), stream=(j, _EVAL_STREAM))
            xi = standard_normals(config.seed, config.M, grid.N, model.nu, _EXPLORATION_TAG, j)
            batch = simulate_batch(model, config.x0, grid, config.M, config.seed,
                                   k_source=_source(nominal, xi), stream=(j, _SAMPLE_STREAM))
            value = backward_pass(batch, model, cost, degree=config.degree, ridge=config.ridge)
        except FBSDEError as exc:
            raise LearningAborted(j, stats, exc) from exc
        policy = Policy(model, cost, value, 0.0, VALUE_FEEDBACK)
        mean, std, _ = estimate_cost(ev, cost)
        st = IterationStats(
            iteration=j,
            cost_mean=mean,
            cost_std=std,
            terminal_mean=ev.states[:, -1].mean(axis=0),
            value_estimate=value.initial_value,
            value_stderr=value.initial_stderr,
            extrapolations=0 if nominal.value is None else nominal.value.extrapolations,
            n_samples=n_eval,
        )
        stats.append(st)
        logger.info("iter %d: cost %.6g +- %.3g, v0 %.6g", j, mean, std, value.initial_value)
        if callback is not None:
            callback(j, policy, batch, ev)
        nominal = policy.with_exploration(config.explore_std)
    return policy, stats


def stats_csv(stats: List[IterationStats]) -> str:
    if not stats:
        return "iter,cost_mean,cost_std,divergences\n"
    n = len(stats[0].terminal_mean)
    buf = io.StringIO()
    buf.write(",".join(["iter", "cost_mean", "cost_std"] + [f"term_state_{j}" for j in range(n)] + ["divergences"]))
    buf.write("\n")
    for s in stats:
        vals = [repr(float(s.cost_mean)), repr(float(s.cost_std))] + [repr(float(v)) for v in s.terminal_mean]
        buf.write(",".join([str(s.iteration)] + vals + [str(s.divergences)]) + "\n")
    return buf.getvalue()
