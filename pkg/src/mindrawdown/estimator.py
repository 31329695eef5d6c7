"""Scikit-learn compatible estimator for minimal-drawdown portfolios."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted, validate_data

from .model import ModelSpec, ShortingSpec, build, drawdown_objective, GAMMA_BIG
from .drawdown import running_max
from .solver import (
    BISECTION_TOL, GAP_TOL, SolveStatus, default_time_limit, solve,
)


class NoSolutionError(RuntimeError):
    """The solver returned without a feasible portfolio."""

    def __init__(self, result):
        self.result = result
        super().__init__(f"no feasible portfolio: solver status {result.status.value}")


class MinDrawdownPortfolio(BaseEstimator):
    """Portfolio minimising in-sample drawdown over a price window.

    ``fit`` takes prices with one row per trading day and one column per
    asset (the last row is the rebalance date) and decides how many units of
    each asset to hold.

    Parameters
    ----------
    objective : {"minavg", "minmax", "weighted"}
        Average drawdown, maximum drawdown, or
        ``lambda1 * max + lambda2 * mean``.
    lookback : int
        Days scanned for the running peak.
    lambda1, lambda2 : float
        Weights of the ``"weighted"`` objective.
    capital : float
        Value available at the rebalance date (current holdings at market
        plus any cash change). Overridden by ``fit(..., capital=...)``.
    delta : float or array-like
        Maximum fraction of post-trade value in any one asset (long-only).
    buy_cost, sell_cost : float or array-like
        Fractional transaction costs.
    gamma : float
        Cap on total transaction cost as a fraction of ``capital``.
    gamma_big : float
        Weight of the drawdown objective against the cost columns.
    shorting : bool
        Allow short positions with the caps below.
    delta_long, delta_short, cap_long, cap_short : float
        Per-asset and aggregate long/short caps used when ``shorting``.
    gap_tol : float
        Relative optimality gap for branch-and-bound.
    bisection_tol : float
        Width, in drawdown points, at which bisection stops.
    time_limit : float, "auto" or None
        Seconds per solve; ``"auto"`` is ``max(500, 7N)``.
    node_limit : int or None
        Branch-and-bound node cap (deterministic alternative to time).
    n_jobs : int
        Nodes evaluated concurrently.
    random_state : int
        Seed for node tie-breaking.

    Attributes
    ----------
    holdings_ : ndarray of shape (n_assets,)
        Units per asset (negative when short).
    weights_ : ndarray of shape (n_assets,)
        Fraction of post-trade value held in each asset.
    costs_ : ndarray of shape (n_assets,)
        Transaction cost per asset.
    objective_ : float
        Drawdown objective of the fitted holdings over the window.
    result_ : SolveResult
    instance_ : ModelInstance
    """

    def __init__(self, objective="minavg", lookback=20, lambda1=1.0, lambda2=1.0,
                 capital=1000.0, delta=1.0, buy_cost=0.0, sell_cost=0.0, gamma=0.0,
                 gamma_big=GAMMA_BIG, shorting=False, delta_long=0.1, delta_short=0.1,
                 cap_long=1.1, cap_short=0.1, gap_tol=GAP_TOL, bisection_tol=BISECTION_TOL,
                 time_limit="auto", node_limit=None, n_jobs=1, random_state=0):
        self.objective = objective
        self.lookback = lookback
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.capital = capital
        self.delta = delta
        self.buy_cost = buy_cost
        self.sell_cost = sell_cost
        self.gamma = gamma
        self.gamma_big = gamma_big
        self.shorting = shorting
        self.delta_long = delta_long
        self.delta_short = delta_short
        self.cap_long = cap_long
        self.cap_short = cap_short
        self.gap_tol = gap_tol
        self.bisection_tol = bisection_tol
        self.time_limit = time_limit
        self.node_limit = node_limit
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _spec(self, T, current_holdings, capital):
        shorting = None
        if self.shorting:
            shorting = ShortingSpec(self.delta_long, self.delta_short, self.cap_long, self.cap_short)
        return ModelSpec(
            T=T, D=self.lookback, objective=self.objective, lambda1=self.lambda1,
            lambda2=self.lambda2, capital=self.capital if capital is None else capital,
            current_holdings=0.0 if current_holdings is None else current_holdings,
            delta=self.delta, buy_cost=self.buy_cost, sell_cost=self.sell_cost,
            gamma=self.gamma, gamma_big=self.gamma_big, shorting=shorting,
        )

    def fit(self, X, y=None, *, current_holdings=None, capital=None):
        """Decide holdings from the price window ``X``.

        Parameters
        ----------
        X : array-like of shape (n_days, n_assets)
            Strictly positive prices, oldest day first.
        y : ignored
        current_holdings : array-like of shape (n_assets,), optional
            Units held before rebalancing; zero by default.
        capital : float, optional
            Overrides the ``capital`` parameter for this fit.

        Raises
        ------
        NoSolutionError
            If the program is infeasible or the limit is hit before any
            feasible portfolio is found.
        """
        X = validate_data(self, X, dtype=np.float64, ensure_min_samples=1)
        if np.any(X <= 0):
            raise ValueError("prices must be strictly positive")
        spec = self._spec(X.shape[0], current_holdings, capital)
        names = getattr(self, "feature_names_in_", None)
        assets = tuple(map(str, names)) if names is not None else None
        window = X.T
        if assets is not None:
            window = _Window(assets, X.T)
        instance = build(window, spec)
        limit = self.time_limit
        if limit == "auto":
            limit = default_time_limit(X.shape[1])
        result = solve(instance, gap_tol=self.gap_tol, time_limit=limit,
                       bisection_tol=self.bisection_tol, node_limit=self.node_limit,
                       n_jobs=self.n_jobs, seed=self.random_state)
        self.instance_ = instance
        self.result_ = result
        if not result.status.has_solution:
            raise NoSolutionError(result)
        if result.status is SolveStatus.FEASIBLE_WITH_GAP:
            warnings.warn(f"stopped with relative gap {result.gap:.3g}", ConvergenceWarning,
                          stacklevel=2)
        self.holdings_ = result.holdings
        self.costs_ = result.costs
        value = X[-1] @ self.holdings_
        self.weights_ = X[-1] * self.holdings_ / value
        self.objective_ = result.objective
        return self

    def predict(self, X):
        """Portfolio value on each day of ``X`` for the fitted holdings."""
        check_is_fitted(self, "holdings_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.holdings_

    def transform(self, X):
        """Portfolio values as a single-column array."""
        return self.predict(X).reshape(-1, 1)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y, **fit_params).transform(X)

    def score(self, X, y=None):
        """Negative drawdown objective of the fitted holdings over ``X``."""
        P = self.predict(X)
        M = running_max(P, self.lookback)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where((M > 0) & (P < M), 100.0 * (M - P) / M, 0.0)
        return -drawdown_objective(self.instance_.spec, d)


class _Window:
    def __init__(self, assets, prices):
        self.assets = assets
        self.prices = prices
