"""Estimator-style wrapper around the learning loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .policy import SolverConfig, estimate_cost, learn, optimal_control, _source
from .sampling import simulate_batch

_SCORE_STREAM = 2


class FBSDEController(BaseEstimator):
    """Learn a feedback controller for ``(model, cost)`` starting from ``x0``.

    ``fit`` runs the iterative importance-sampled LSMC scheme. After fitting,
    ``predict(X, t=...)`` returns the feedback control at the grid step that
    contains ``t``, ``value`` the approximate value function, and ``score``
    the negated mean cost of fresh noise-free rollouts.
    """

    def __init__(self, model=None, cost=None, T=1.0, N=100, M=1000, n_iter=1,
                 seed=0, ridge=1e-6, explore_std=0.5, degree=2, t0=0.0):
        self.model = model
        self.cost = cost
        self.T = T
        self.N = N
        self.M = M
        self.n_iter = n_iter
        self.seed = seed
        self.ridge = ridge
        self.explore_std = explore_std
        self.degree = degree
        self.t0 = t0

    def _config(self, x0):
        return SolverConfig(x0=x0, t0=self.t0, T=self.T, N=self.N, M=self.M, n_iter=self.n_iter,
                            seed=self.seed, ridge=self.ridge, explore_std=self.explore_std,
                            degree=self.degree)

    def fit(self, x0, y=None):
        x0 = check_array(np.atleast_2d(x0), ensure_min_features=1)
        if x0.shape[0] != 1:
            raise ValueError(f"fit expects a single initial state, got {x0.shape[0]}")
        self.x0_ = x0[0]
        self.policy_, self.stats_ = learn(self._config(self.x0_), self.model, self.cost)
        self.value_ = self.policy_.value
        self.n_features_in_ = self.model.n
        return self

    def _step(self, t):
        grid = self.value_.grid
        i = int(np.searchsorted(grid.knots, t, side="right")) - 1
        return min(max(i, 0), grid.N - 1)

    def _check_X(self, X):
        check_is_fitted(self, "policy_")
        X = check_array(np.atleast_2d(X))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X, t=None):
        X = self._check_X(X)
        return optimal_control(self.policy_, self._step(self.t0 if t is None else t), X)

    def value(self, X, t=None):
        X = self._check_X(X)
        return self.value_.value(self._step(self.t0 if t is None else t), X)

    def score(self, X=None, y=None, M=None, seed=None):
        """Negated mean cost of noise-free rollouts from ``X`` (default: the fitted x0)."""
        check_is_fitted(self, "policy_")
        x0 = self.x0_ if X is None else self._check_X(X)[0]
        batch = simulate_batch(self.model, x0, self.value_.grid, M or self.M,
                               self.seed + 1 if seed is None else seed,
                               k_source=_source(self.policy_, None), stream=(0, _SCORE_STREAM))
        return -estimate_cost(batch, self.cost)[0]
