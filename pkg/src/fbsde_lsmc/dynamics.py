"""Control-affine stochastic models, quadratic-in-control costs and the LQ Riccati oracle.

Every callable on a model or cost is vectorized over a batch of states:
``X`` has shape ``(M, n)`` and the returned arrays carry a leading ``M`` axis.
The convenience methods (``model.f``, ``model.G`` ...) also accept a single
state of shape ``(n,)`` and drop the batch axis again.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import linalg

from .exceptions import DecompositionError, ModelError

DECOMPOSITION_RTOL = 1e-10


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ModelError(f"state must be 1-D or 2-D, got shape {x.shape}")
    return x, False


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def gamma_from_lstsq(sigma, g):
    """Batched least-squares solution of ``sigma @ gamma = g``."""
    return np.linalg.pinv(sigma) @ g


@dataclass(frozen=True)
class DynamicsModel:
    """dx = [f + G u] dt + Sigma dW with G = Sigma Gamma.

    ``gamma`` may be omitted, in which case it is obtained pointwise by least
    squares against ``diffusion``. ``angle_indices`` lists state components
    that are angles; it only affects cost evaluation, never the simulation.
    """

    n: int
    nu: int
    p: int
    drift: Callable
    control_matrix: Callable
    diffusion: Callable
    gamma: Optional[Callable] = None
    name: str = "model"
    angle_indices: tuple = ()
    params: dict = field(default_factory=dict)

    def _eval(self, fn, t, x, shape):
        X, single = _as_batch(x)
        out = np.asarray(fn(t, X), dtype=float)
        out = np.broadcast_to(out, (X.shape[0],) + shape)
        return out[0] if single else out

    def f(self, t, x):
        return self._eval(self.drift, t, x, (self.n,))

    def G(self, t, x):
        return self._eval(self.control_matrix, t, x, (self.n, self.nu))

    def Sigma(self, t, x):
        return self._eval(self.diffusion, t, x, (self.n, self.p))

    def Gamma(self, t, x):
        if self.gamma is None:
            X, single = _as_batch(x)
            out = gamma_from_lstsq(self.Sigma(t, X), self.G(t, X))
            return out[0] if single else out
        return self._eval(self.gamma, t, x, (self.p, self.nu))


@dataclass
class DecompositionReport:
    max_residual: float
    worst_point: tuple
    ok: bool


def check_decomposition(model: DynamicsModel, points: Iterable) -> DecompositionReport:
    """Evaluate ||Sigma Gamma - G||_F over ``points`` (pairs ``(t, x)``)."""
    worst, worst_pt, ok = 0.0, None, True
    for t, x in points:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)) or not np.isfinite(t):
            raise ModelError(f"non-finite evaluation point t={t}, x={x}")
        G = model.G(t, x)
        S = model.Sigma(t, x)
        Gam = model.Gamma(t, x)
        for nm, arr in (("G", G), ("Sigma", S), ("Gamma", Gam)):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{model.name}: non-finite {nm} at t={t}, x={x.tolist()}")
        res = float(np.linalg.norm(S @ Gam - G))
        if res > DECOMPOSITION_RTOL * (1.0 + np.linalg.norm(G)):
            ok = False
        if worst_pt is None or res > worst:
            worst, worst_pt = res, (t, x.copy())
    return DecompositionReport(worst, worst_pt, ok)


def require_decomposition(model: DynamicsModel, points: Iterable) -> DecompositionReport:
    report = check_decomposition(model, points)
    if not report.ok:
        t, x = report.worst_point
        raise DecompositionError(
            f"{model.name}: control enters a channel without noise; "
            f"||Sigma Gamma - G||_F = {report.max_residual:.3e} at t={t}, x={np.asarray(x).tolist()}"
        )
    return report


# ---------------------------------------------------------------------------
# costs


@dataclass(frozen=True)
class CostSpec:
    """Running cost q(t, x) + 1/2 u^T R u and terminal cost g(x)."""

    running: Callable
    R: np.ndarray
    terminal: Callable
    terminal_gradient: Callable

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise ModelError("control weight R must be a symmetric square matrix")
        try:
            chol = linalg.cho_factor(R)
        except linalg.LinAlgError as exc:
            raise ModelError("control weight R must be positive definite") from exc
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "R_inv", linalg.cho_solve(chol, np.eye(R.shape[0])))

    def q(self, t, x):
        X, single = _as_batch(x)
        out = np.broadcast_to(np.asarray(self.running(t, X), dtype=float), (X.shape[0],))
        return out[0] if single else out

    def g(self, x):
        X, single = _as_batch(x)
        out = np.broadcast_to(np.asarray(self.terminal(X), dtype=float), (X.shape[0],))
        return out[0] if single else out

    def grad_g(self, x):
        X, single = _as_batch(x)
        out = np.broadcast_to(np.asarray(self.terminal_gradient(X), dtype=float), X.shape)
        return out[0] if single else out


def wrapped_quadratic_cost(goal, q_diag, R, terminal_weight=1.0, angle_indices=()) -> CostSpec:
    """q = d^T diag(q_diag) d, g = terminal_weight * q, with d = x - goal.

    Components listed in ``angle_indices`` are wrapped to (-pi, pi] after
    differencing, so the cost is periodic in those coordinates.
    """
    goal = np.asarray(goal, dtype=float)
    Q = np.asarray(q_diag, dtype=float)
    idx = list(angle_indices)

    def deviation(X):
        d = X - goal
        if idx:
            d[:, idx] = wrap_angle(d[:, idx])
        return d

    def running(t, X):
        d = deviation(X)
        return np.einsum("mi,i,mi->m", d, Q, d)

    def terminal(X):
        return terminal_weight * running(None, X)

    def terminal_gradient(X):
        return 2.0 * terminal_weight * deviation(X) * Q

    return CostSpec(running, np.atleast_2d(R), terminal, terminal_gradient)


def constant_cost(c, nu=1, R=None) -> CostSpec:
    """q = c everywhere, g = 0."""
    R = np.eye(nu) if R is None else R
    return CostSpec(
        running=lambda t, X: np.full(X.shape[0], float(c)),
        R=R,
        terminal=lambda X: np.zeros(X.shape[0]),
        terminal_gradient=lambda X: np.zeros_like(X),
    )


# ---------------------------------------------------------------------------
# benchmark models


def _positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ModelError(f"{k} must be positive, got {v}")


def pendulum_model(mass=1.0, length=0.5, damping=0.1, gravity=9.81, sigma=0.1) -> DynamicsModel:
    """m l^2 th'' + b th' - m g l sin(th) = u, noise entering th'' with intensity sigma."""
    _positive(mass=mass, length=length, sigma=sigma)
    inertia = mass * length**2

    def drift(t, X):
        th, om = X[:, 0], X[:, 1]
        return np.stack([om, (mass * gravity * length * np.sin(th) - damping * om) / inertia], axis=1)

    G = np.array([[0.0], [1.0 / inertia]])
    S = np.array([[0.0], [sigma]])
    Gam = np.array([[1.0 / (sigma * inertia)]])
    return DynamicsModel(
        n=2, nu=1, p=1,
        drift=drift,
        control_matrix=lambda t, X: G,
        diffusion=lambda t, X: S,
        gamma=lambda t, X: Gam,
        name="pendulum",
        angle_indices=(0,),
        params=dict(mass=mass, length=length, damping=damping, gravity=gravity, sigma=sigma),
    )


def cartpole_model(cart_mass=1.0, pole_mass=0.1, length=0.5, gravity=9.81, sigma=1.0) -> DynamicsModel:
    """Cart-pole with state (x, theta, x', theta'); noise enters through the force channel.

    Sigma is sigma times the force column of G, hence Gamma = 1/sigma.
    """
    _positive(cart_mass=cart_mass, pole_mass=pole_mass, length=length, sigma=sigma)
    mc, mp, l, g = cart_mass, pole_mass, length, gravity

    def drift(t, X):
        th, om = X[:, 1], X[:, 3]
        s, c = np.sin(th), np.cos(th)
        den = mc + mp * s**2
        xdd = -mp * s * (l * om**2 + g * c) / den
        thdd = (-mp * l * om**2 * c * s + (mc + mp) * g * s) / (l * den)
        return np.stack([X[:, 2], om, xdd, thdd], axis=1)

    def force_column(t, X):
        th = X[:, 1]
        den = mc + mp * np.sin(th) ** 2
        col = np.zeros((X.shape[0], 4, 1))
        col[:, 2, 0] = 1.0 / den
        col[:, 3, 0] = np.cos(th) / (l * den)
        return col

    Gam = np.array([[1.0 / sigma]])
    return DynamicsModel(
        n=4, nu=1, p=1,
        drift=drift,
        control_matrix=force_column,
        diffusion=lambda t, X: sigma * force_column(t, X),
        gamma=lambda t, X: Gam,
        name="cartpole",
        angle_indices=(1,),
        params=dict(cart_mass=mc, pole_mass=mp, length=l, gravity=g, sigma=sigma),
    )


@dataclass(frozen=True)
class LQProblem:
    """Matrices of dx = (a x + b u) dt + sigma dW with cost 1/2 x'Qx + 1/2 u'Ru and 1/2 x'G_T x."""

    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    q_w: np.ndarray
    r_w: np.ndarray
    g_T: np.ndarray


def lq_model(a, b, sigma, q_w, r_w, g_T):
    """Linear-quadratic instance; returns ``(model, cost)``.

    Raises DecompositionError when ``b`` is not in the range of ``sigma``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    b = np.asarray(b, dtype=float).reshape(n, -1)
    sigma = np.asarray(sigma, dtype=float).reshape(n, -1)
    q_w = np.asarray(q_w, dtype=float).reshape(n, n)
    g_T = np.asarray(g_T, dtype=float).reshape(n, n)
    nu, p = b.shape[1], sigma.shape[1]
    r_w = np.asarray(r_w, dtype=float).reshape(nu, nu)
    if a.shape != (n, n):
        raise ModelError(f"a must be square, got {a.shape}")

    gam, *_ = np.linalg.lstsq(sigma, b, rcond=None)
    prob = LQProblem(a, b, sigma, q_w, r_w, g_T)
    model = DynamicsModel(
        n=n, nu=nu, p=p,
        drift=lambda t, X: X @ a.T,
        control_matrix=lambda t, X: b,
        diffusion=lambda t, X: sigma,
        gamma=lambda t, X: gam,
        name="lq",
        params=dict(lq=prob),
    )
    require_decomposition(model, [(0.0, np.zeros(n))])
    cost = CostSpec(
        running=lambda t, X: 0.5 * np.einsum("mi,ij,mj->m", X, q_w, X),
        R=r_w,
        terminal=lambda X: 0.5 * np.einsum("mi,ij,mj->m", X, g_T, X),
        terminal_gradient=lambda X: X @ g_T.T,
    )
    return model, cost


# ---------------------------------------------------------------------------
# Riccati oracle


@dataclass
class RiccatiSolution:
    t: np.ndarray
    P: np.ndarray  # (N+1, n, n)
    c: np.ndarray  # (N+1,)

    def value(self, i, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x @ self.P[i] @ x + self.c[i]

    def gradient(self, i, x):
        return self.P[i] @ np.asarray(x, dtype=float)


def riccati_oracle(problem, grid, substeps: int = 1) -> RiccatiSolution:
    """Integrate -P' = A'P + PA + Q - P B R^-1 B' P and -c' = tr(P Sigma Sigma')/2 backward with RK4.

    ``problem`` is an :class:`LQProblem` or a model built by :func:`lq_model`.
    """
    if isinstance(problem, DynamicsModel):
        problem = problem.params["lq"]
    A, B, S = problem.a, problem.b, problem.sigma
    Q, G_T = problem.q_w, problem.g_T
    BRB = B @ np.linalg.solve(problem.r_w, B.T)
    SS = S @ S.T

    def rhs(P):
        # derivative with respect to time-to-go
        dP = A.T @ P + P @ A + Q - P @ BRB @ P
        return 0.5 * (dP + dP.T), 0.5 * np.trace(P @ SS)

    knots = np.asarray(grid.knots if hasattr(grid, "knots") else grid, dtype=float)
    N = len(knots) - 1
    P = np.empty((N + 1,) + G_T.shape)
    c = np.empty(N + 1)
    P[N], c[N] = G_T, 0.0
    for i in range(N - 1, -1, -1):
        h = (knots[i + 1] - knots[i]) / substeps
        Pi, ci = P[i + 1].copy(), c[i + 1]
        for _ in range(substeps):
            k1, l1 = rhs(Pi)
            k2, l2 = rhs(Pi + 0.5 * h * k1)
            k3, l3 = rhs(Pi + 0.5 * h * k2)
            k4, l4 = rhs(Pi + h * k3)
            Pi = Pi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            ci = ci + h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
        P[i], c[i] = 0.5 * (Pi + Pi.T), ci
    return RiccatiSolution(knots, P, c)
