"""Total-degree Chebyshev tensor basis on an affinely rescaled box, and ridge LSMC regression.

Basis ordering (documented, stable): multi-indices grouped by total degree;
within one degree, pure powers come first, then mixed terms, each group in
descending lexicographic order. For n = 2 and degree 2 this gives
``1, T1(x1), T1(x2), T2(x1), T2(x2), T1(x1) T1(x2)``.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import RegressionError

SCALE_EPS = 1e-6
RIDGE_FALLBACK = 1e-8


def multi_indices(n, degree=2):
    """Exponent tuples with total degree <= ``degree`` in the documented order."""
    out = []
    for d in range(degree + 1):
        level = [a for a in itertools.product(range(d + 1), repeat=n) if sum(a) == d]
        level.sort(key=lambda a: (sum(1 for e in a if e), tuple(-e for e in a)))
        out.extend(level)
    return np.array(out, dtype=int).reshape(-1, n)


def basis_size(n, degree=2):
    return comb(n + degree, degree)


def chebyshev_table(u, degree):
    """T_d(u) and T_d'(u) for d = 0..degree; arrays of shape u.shape + (degree+1,)."""
    T = np.empty(u.shape + (degree + 1,))
    dT = np.empty_like(T)
    T[..., 0], dT[..., 0] = 1.0, 0.0
    if degree >= 1:
        T[..., 1], dT[..., 1] = u, 1.0
    for d in range(1, degree):
        T[..., d + 1] = 2.0 * u * T[..., d] - T[..., d - 1]
        dT[..., d + 1] = 2.0 * T[..., d] + 2.0 * u * dT[..., d] - dT[..., d - 1]
    return T, dT


class ChebyshevBasis(TransformerMixin, BaseEstimator):
    """Chebyshev polynomials of the first kind, tensorized up to total degree ``degree``.

    ``fit`` chooses a per-dimension center and half-width so that the
    training cloud maps into [-1, 1]^n; ``transform`` returns the design
    matrix and ``gradient`` the analytic Jacobian of each basis function.
    """

    def __init__(self, degree=2, eps=SCALE_EPS):
        self.degree = degree
        self.eps = eps

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        lo, hi = X.min(axis=0), X.max(axis=0)
        self.center_ = 0.5 * (lo + hi)
        self.half_width_ = np.maximum(0.5 * (hi - lo), self.eps)
        self.n_features_in_ = X.shape[1]
        self.indices_ = multi_indices(X.shape[1], self.degree)
        return self

    def set_scaling(self, center, half_width):
        """Install a known scaling without looking at data."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        self.center_ = center
        self.half_width_ = np.atleast_1d(np.asarray(half_width, dtype=float))
        self.n_features_in_ = center.shape[0]
        self.indices_ = multi_indices(center.shape[0], self.degree)
        return self

    @property
    def n_basis(self):
        return basis_size(self.n_features_in_, self.degree)

    def scale(self, X):
        return (X - self.center_) / self.half_width_

    def _tables(self, X):
        check_is_fitted(self, "indices_")
        X = check_array(X, ensure_min_samples=1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        T, dT = chebyshev_table(self.scale(X), self.degree)
        cols = np.arange(self.n_features_in_)
        # (M, k, n): T_{alpha_kj}(u_j)
        return T[:, cols, self.indices_], dT[:, cols, self.indices_]

    def transform(self, X):
        Tsel, _ = self._tables(X)
        return Tsel.prod(axis=2)

    def gradient(self, X):
        """d phi_k / d x_j, shape (M, k, n)."""
        Tsel, dTsel = self._tables(X)
        n = self.n_features_in_
        out = np.empty_like(Tsel)
        for j in range(n):
            f = Tsel.copy()
            f[:, :, j] = dTsel[:, :, j]
            out[:, :, j] = f.prod(axis=2)
        return out / self.half_width_


# functional forms ----------------------------------------------------------


def fit_scaling(states, eps=SCALE_EPS):
    """Midrange center and half-range (floored at ``eps``) per dimension."""
    b = ChebyshevBasis(eps=eps).fit(np.asarray(states, dtype=float).reshape(len(states), -1))
    return b.center_, b.half_width_


def eval_basis(spec: ChebyshevBasis, x):
    return spec.transform(np.atleast_2d(x))[0]


def eval_basis_gradient(spec: ChebyshevBasis, x):
    return spec.gradient(np.atleast_2d(x))[0]


def design_matrix(spec: ChebyshevBasis, states):
    return spec.transform(states)


@dataclass
class RegressionResult:
    coef: np.ndarray
    residual_rms: float
    condition: float
    ridge: float


def ridge_solve(Phi, y, lam=1e-6) -> RegressionResult:
    """Minimize (1/M) ||Phi a - y||^2 + lam ||a||^2 through a Cholesky solve of the normal equations."""
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError(f"ridge parameter must be >= 0, got {lam}")
    M, k = Phi.shape
    A = Phi.T @ Phi / M
    rhs = Phi.T @ y / M
    attempts = [lam] if lam > 0 else [0.0, RIDGE_FALLBACK]
    for lam_try in attempts:
        try:
            chol = linalg.cho_factor(A + lam_try * np.eye(k), check_finite=True)
        except linalg.LinAlgError:
            continue
        coef = linalg.cho_solve(chol, rhs)
        if not np.all(np.isfinite(coef)):
            continue
        if lam_try != lam:
            warnings.warn(f"singular normal equations; retried with ridge {lam_try:g}", RuntimeWarning)
        with np.errstate(over="ignore", invalid="ignore"):
            rms = float(np.sqrt(np.mean((Phi @ coef - y) ** 2)))
        return RegressionResult(
            coef=coef,
            residual_rms=rms,
            condition=float(np.linalg.cond(A + lam_try * np.eye(k))),
            ridge=lam_try,
        )
    raise RegressionError(f"normal equations are singular (M={M}, k={k}, ridge={attempts[-1]:g})")
