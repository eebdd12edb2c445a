"""Time grids, seeded Brownian increments and Euler-Maruyama batch simulation."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigError, SimulationDivergenceError

DIVERGENCE_BOUND = 1e8

_BROWNIAN_TAG = 0
_EXPLORATION_TAG = 1


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    N: int

    @property
    def knots(self) -> np.ndarray:
        k = self.t0 + (self.T - self.t0) * np.arange(self.N + 1) / self.N
        k[-1] = self.T
        return k

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.knots)


def make_time_grid(t0, T, N) -> TimeGrid:
    if int(N) != N or N < 1:
        raise ConfigError(f"number of steps N must be a positive integer, got {N}")
    if not (np.isfinite(t0) and np.isfinite(T)) or T <= t0:
        raise ConfigError(f"need T > t0, got t0={t0}, T={T}")
    return TimeGrid(float(t0), float(T), int(N))


def trajectory_generators(seed, M, *key):
    """One independent counter-based generator per trajectory.

    The m-th generator depends only on ``(seed, key, m)``, so draws do not
    depend on how trajectories are partitioned across workers.
    """
    root = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return [np.random.Generator(np.random.Philox(s)) for s in root.spawn(int(M))]


def standard_normals(seed, M, N, d, *key) -> np.ndarray:
    out = np.empty((M, N, d))
    for m, rng in enumerate(trajectory_generators(seed, M, *key)):
        out[m] = rng.standard_normal((N, d))
    return out


@dataclass(frozen=True)
class BrownianBatch:
    increments: np.ndarray  # (M, N, p)
    seed: int
    stream: tuple = ()


def sample_brownian(M, grid, p, seed, stream=()) -> BrownianBatch:
    """dW_i^m = sqrt(dt_i) * xi with xi ~ N(0, I_p).

    ``grid`` is a TimeGrid or an explicit array of step sizes.
    """
    dt = grid.dt if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    xi = standard_normals(seed, M, len(dt), p, _BROWNIAN_TAG, *stream)
    return BrownianBatch(np.sqrt(dt)[None, :, None] * xi, int(seed), tuple(stream))


def _check_finite(x, step=None):
    bad = ~np.all(np.isfinite(x) & (np.abs(x) <= DIVERGENCE_BOUND), axis=-1)
    if np.any(bad):
        m = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise SimulationDivergenceError(
            f"trajectory {m} diverged at step {step}", trajectory=m, step=step
        )


def euler_step(model, t, x, dt, dW, K=None, step=None):
    """x + [f + Sigma K] dt + Sigma dW, for a single state or a batch."""
    x = np.asarray(x, dtype=float)
    S = model.Sigma(t, x)
    dW = np.asarray(dW, dtype=float)
    noise = dW if K is None else np.asarray(K, dtype=float) * dt + dW
    if x.ndim == 1:
        out = x + model.f(t, x) * dt + S @ noise
    else:
        out = x + model.f(t, x) * dt + np.einsum("mij,mj->mi", S, np.broadcast_to(noise, (x.shape[0], model.p)))
    _check_finite(out, step)
    return out


@dataclass(frozen=True)
class TrajectoryBatch:
    grid: TimeGrid
    states: np.ndarray  # (M, N+1, n)
    brownian: BrownianBatch
    K: np.ndarray  # (M, N, p)
    controls: np.ndarray  # (M, N, nu)

    @property
    def M(self):
        return self.states.shape[0]

    @property
    def increments(self):
        return self.brownian.increments


def zero_source(model):
    def source(i, t, X):
        M = X.shape[0]
        return np.zeros((M, model.p)), np.zeros((M, model.nu))

    return source


def simulate_batch(
    model,
    x0,
    grid: TimeGrid,
    M: int,
    seed: int,
    k_source: Optional[Callable] = None,
    stream=(),
    brownian: Optional[BrownianBatch] = None,
) -> TrajectoryBatch:
    """Simulate M Euler-Maruyama paths of dX = [f + Sigma K] dt + Sigma dW.

    ``k_source(i, t_i, X_i)`` returns ``(K_i, ubar_i)`` of shapes ``(M, p)`` and
    ``(M, nu)``; the default applies no drift modification.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n,):
        raise ConfigError(f"x0 must have shape ({model.n},), got {x0.shape}")
    if brownian is None:
        brownian = sample_brownian(M, grid, model.p, seed, stream)
    k_source = k_source or zero_source(model)
    knots, dt = grid.knots, grid.dt
    X = np.empty((M, grid.N + 1, model.n))
    K = np.zeros((M, grid.N, model.p))
    U = np.zeros((M, grid.N, model.nu))
    X[:, 0] = x0
    for i in range(grid.N):
        Ki, Ui = k_source(i, knots[i], X[:, i])
        K[:, i], U[:, i] = Ki, Ui
        X[:, i + 1] = euler_step(model, knots[i], X[:, i], dt[i], brownian.increments[:, i], K[:, i], step=i)
    return TrajectoryBatch(grid, X, brownian, K, U)


def trajectories_csv(batch: TrajectoryBatch) -> str:
    """Rows ``m,i,t,x0..x{n-1}`` in round-trip precision."""
    M, N1, n = batch.states.shape
    m_idx, i_idx = np.meshgrid(np.arange(M), np.arange(N1), indexing="ij")
    t = np.broadcast_to(batch.grid.knots, (M, N1))
    table = np.column_stack([m_idx.ravel(), i_idx.ravel(), t.ravel(), batch.states.reshape(-1, n)])
    buf = io.StringIO()
    header = ",".join(["m", "i", "t"] + [f"x{j}" for j in range(n)])
    fmt = ["%d", "%d"] + ["%.17g"] * (n + 1)
    np.savetxt(buf, table, fmt=fmt, delimiter=",", header=header, comments="")
    return buf.getvalue()
