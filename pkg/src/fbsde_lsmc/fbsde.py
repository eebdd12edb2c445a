"""BSDE driver, terminal condition and the backward least-squares Monte Carlo pass."""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .basis import ChebyshevBasis, SCALE_EPS, basis_size, ridge_solve
from .exceptions import ConfigError, RegressionError, SimulationDivergenceError
from .sampling import TimeGrid, TrajectoryBatch

logger = logging.getLogger(__name__)

EXTRAPOLATION_LIMIT = 1.5


def driver_h(model, cost, t, x, z):
    """q(t,x) - 1/2 z' Gamma R^-1 Gamma' z, vectorized over a leading batch axis."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    Z = np.atleast_2d(z)
    w = np.einsum("mpk,mp->mk", model.Gamma(t, X), Z)
    out = cost.q(t, X) - 0.5 * np.einsum("mk,kl,ml->m", w, cost.R_inv, w)
    return out[0] if single else out


def driver_h_tilde(model, cost, t, x, z, k):
    """Girsanov-compensated driver h - z'k."""
    zk = np.sum(np.atleast_2d(z) * np.atleast_2d(k), axis=-1)
    h = driver_h(model, cost, t, x, z)
    return h - (zk[0] if np.ndim(h) == 0 else zk)


@dataclass
class BackwardState:
    Y: np.ndarray  # (M,)
    Z: np.ndarray  # (M, p)


def terminal_init(model, cost, X_N, T=None) -> BackwardState:
    """Y = g(X_N), Z = Sigma(T, X_N)' grad g(X_N)."""
    X_N = np.atleast_2d(np.asarray(X_N, dtype=float))
    S = model.Sigma(T, X_N)
    return BackwardState(cost.g(X_N), np.einsum("mnp,mn->mp", S, cost.grad_g(X_N)))


@dataclass
class ValueApprox:
    """v(t_i, x) ~ phi_i(x) alpha_i on each grid step i = 0..N-1."""

    grid: TimeGrid
    coef: np.ndarray  # (N, k)
    centers: np.ndarray  # (N, n)
    half_widths: np.ndarray  # (N, n)
    degree: int = 2
    initial_value: float = np.nan
    initial_stderr: float = np.nan
    extrapolations: int = 0
    _bases: List[ChebyshevBasis] = field(default=None, repr=False)

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        self.centers = np.asarray(self.centers, dtype=float)
        self.half_widths = np.asarray(self.half_widths, dtype=float)
        self._bases = [
            ChebyshevBasis(degree=self.degree).set_scaling(c, h)
            for c, h in zip(self.centers, self.half_widths)
        ]

    @property
    def n(self):
        return self.centers.shape[1]

    @property
    def k(self):
        return self.coef.shape[1]

    def _basis(self, i, X):
        if not 0 <= i < self.grid.N:
            raise IndexError(f"time index {i} outside [0, {self.grid.N})")
        b = self._bases[i]
        u = np.abs(b.scale(X))
        n_out = int(np.count_nonzero(np.any(u > EXTRAPOLATION_LIMIT, axis=-1)))
        if n_out:
            self.extrapolations += n_out
        return b

    def value(self, i, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._basis(i, X).transform(X) @ self.coef[i]
        return out[0] if np.ndim(x) == 1 else out

    def gradient(self, i, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.einsum("mkn,k->mn", self._basis(i, X).gradient(X), self.coef[i])
        return out[0] if np.ndim(x) == 1 else out

    # serialization ---------------------------------------------------------

    def to_text(self) -> str:
        n, k, N = self.n, self.k, self.grid.N
        buf = io.StringIO()
        buf.write("n,k,N,t0,T,degree\n")
        buf.write(f"{n},{k},{N},{self.grid.t0!r},{self.grid.T!r},{self.degree}\n")
        cols = ["i", "t"] + [f"c{j}" for j in range(n)] + [f"h{j}" for j in range(n)] + [f"a{j}" for j in range(k)]
        buf.write(",".join(cols) + "\n")
        knots = self.grid.knots
        for i in range(N):
            vals = [knots[i], *self.centers[i], *self.half_widths[i], *self.coef[i]]
            buf.write(f"{i}," + ",".join(repr(float(v)) for v in vals) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "ValueApprox":
        lines = text.strip().splitlines()
        n, k, N, t0, T, degree = lines[1].split(",")
        n, k, N, degree = int(n), int(k), int(N), int(degree)
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[3:]])
        if rows.shape != (N, 2 + 2 * n + k):
            raise ConfigError(f"value file has {rows.shape} body, expected {(N, 2 + 2 * n + k)}")
        return cls(
            grid=TimeGrid(float(t0), float(T), N),
            centers=rows[:, 2:2 + n],
            half_widths=rows[:, 2 + n:2 + 2 * n],
            coef=rows[:, 2 + 2 * n:],
            degree=degree,
        )


def _degenerate_dims(X, eps):
    return np.ptp(X, axis=0) <= 2.0 * eps


def backward_pass(
    batch: TrajectoryBatch,
    model,
    cost,
    degree: int = 2,
    ridge: float = 1e-6,
    compensate: bool = True,
) -> ValueApprox:
    """Regress Y_{i+1} + dt_i * h~(t_{i+1}, X_{i+1}, Z_{i+1}, K_i) on phi(X_i), from i = N-1 down to 0.

    Dimensions that are constant across the batch at step i carry no
    information, so basis functions depending on them are dropped for that
    step. When the whole cloud is a single point (always the case at i = 0
    with a fixed x0) the conditional expectation is the sample mean; the
    coefficients of step i+1 are reused with a shifted constant so that the
    gradient at that step stays informative.
    """
    grid = batch.grid
    X, K = batch.states, batch.K
    M, N = X.shape[0], grid.N
    n = model.n
    k = basis_size(n, degree)
    if M < k:
        raise ConfigError(f"need at least k={k} trajectories for the regression, got M={M}")
    if M < 10 * k:
        warnings.warn(f"only {M} trajectories for {k} basis functions", RuntimeWarning)

    knots, dt = grid.knots, grid.dt
    state = terminal_init(model, cost, X[:, N], T=knots[N])
    Y, Z = state.Y, state.Z
    coef = np.zeros((N, k))
    centers = np.zeros((N, n))
    widths = np.full((N, n), SCALE_EPS)
    v0 = stderr0 = np.nan

    for i in range(N - 1, -1, -1):
        if compensate:
            h = driver_h_tilde(model, cost, knots[i + 1], X[:, i + 1], Z, K[:, i])
        else:
            h = driver_h(model, cost, knots[i + 1], X[:, i + 1], Z)
        target = Y + dt[i] * h
        Xi = X[:, i]
        bad = ~(np.isfinite(target) & np.all(np.isfinite(Xi), axis=1))
        if np.any(bad):
            m = int(np.flatnonzero(bad)[0])
            raise SimulationDivergenceError(f"non-finite regression data for trajectory {m} at step {i}",
                                            trajectory=m, step=i)
        basis = ChebyshevBasis(degree=degree).fit(Xi)
        const_dims = _degenerate_dims(Xi, basis.eps)

        if np.all(const_dims):
            mean = float(np.mean(target))
            if i + 1 < N:
                coef[i], centers[i], widths[i] = coef[i + 1], centers[i + 1], widths[i + 1]
            else:
                centers[i] = Xi[0]
            basis.set_scaling(centers[i], widths[i])
            coef[i, 0] += mean - float((basis.transform(Xi[:1]) @ coef[i])[0])
            Y = np.full(M, mean)
            grad = np.einsum("mkn,k->mn", basis.gradient(Xi), coef[i])
            Z = np.einsum("mnp,mn->mp", model.Sigma(knots[i], Xi), grad)
            if i == 0:
                v0 = mean
                stderr0 = float(np.std(target, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
            continue

        active = ~np.any(basis.indices_[:, const_dims] > 0, axis=1)
        Phi = basis.transform(Xi)
        try:
            res = ridge_solve(Phi[:, active], target, ridge)
        except RegressionError as exc:
            raise RegressionError(f"step {i}: {exc}") from exc
        coef[i, active] = res.coef
        centers[i], widths[i] = basis.center_, basis.half_width_
        Y = Phi @ coef[i]
        grad = np.einsum("mkn,k->mn", basis.gradient(Xi), coef[i])
        Z = np.einsum("mnp,mn->mp", model.Sigma(knots[i], Xi), grad)
        if i == 0:
            v0 = float(np.mean(Y))
            stderr0 = float(np.std(target, ddof=1) / np.sqrt(M))

    return ValueApprox(grid, coef, centers, widths, degree=degree,
                       initial_value=v0, initial_stderr=stderr0)
