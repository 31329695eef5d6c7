"""Minimal-drawdown portfolio construction and backtesting."""

__version__ = "0.1.0"

from .data import IndexSeries, PricePanel, load_index, load_panel, window  # noqa: E402
from .drawdown import (  # noqa: E402
    DrawdownSeries, drawdown, exceedance_pct, log_returns, sharpe_annualised,
)
from .estimator import MinDrawdownPortfolio, NoSolutionError  # noqa: E402
from .model import ModelSpec, ShortingSpec, build, recompute_reported_solution  # noqa: E402
from .solver import SolveResult, SolveStatus, VariableBounds, solve, tighten_bounds  # noqa: E402
from .backtest import BacktestConfig, BacktestReport, run_backtest  # noqa: E402

__all__ = [
    "BacktestConfig", "BacktestReport", "DrawdownSeries", "IndexSeries",
    "MinDrawdownPortfolio", "ModelSpec", "NoSolutionError", "PricePanel",
    "ShortingSpec", "SolveResult", "SolveStatus", "VariableBounds", "build",
    "drawdown", "exceedance_pct", "load_index", "load_panel", "log_returns",
    "recompute_reported_solution", "run_backtest", "sharpe_annualised", "solve",
    "tighten_bounds", "window",
]
