"""Drawdown, return and summary statistics for value series.

Drawdown at day ``t`` compares the value with the largest value seen over
the window ``[max(0, t - D), t]`` (the current day included)::

    M_t = max(P_tau, tau = t, t-1, ..., max(0, t-D))
    d_t = 100 * (M_t - P_t) / M_t

All functions are pure and accept any 1-D array-like of values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DomainError, UndefinedRatioError

TRADING_DAYS = 252


@dataclass(frozen=True)
class DrawdownSeries:
    """Running maxima and percentage drawdowns of a value series.

    ``lookback`` is ``None`` when the running maximum spans the full history.
    """

    running_max: np.ndarray
    drawdown_pct: np.ndarray
    lookback: int | None

    @property
    def max(self) -> float:
        return float(self.drawdown_pct.max())

    @property
    def mean(self) -> float:
        return float(self.drawdown_pct.mean())

    def __len__(self):
        return len(self.drawdown_pct)


def _as_values(series, min_length=1) -> np.ndarray:
    values = np.asarray(series, dtype=float).reshape(-1)
    if values.size < min_length:
        raise DomainError(f"need at least {min_length} values, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise DomainError("values must be finite")
    return values


def running_max(series, lookback: int | None = None) -> np.ndarray:
    """Maximum over the trailing window ``[t - lookback, t]`` for every ``t``.

    ``lookback=None`` uses the whole history up to ``t``.
    """
    values = _as_values(series)
    if lookback is None or lookback >= values.size - 1:
        return np.maximum.accumulate(values)
    if lookback < 1:
        raise DomainError(f"lookback must be >= 1, got {lookback}")
    padded = np.concatenate([np.full(lookback, -np.inf), values])
    return sliding_window_view(padded, lookback + 1).max(axis=1)


def drawdown(series, D: int | None = None) -> DrawdownSeries:
    """Percentage drawdown of ``series`` with lookback ``D``.

    Parameters
    ----------
    series : array-like
        Strictly positive values, oldest first.
    D : int or None
        Number of preceding periods scanned for the running maximum.
        ``None`` scans the full history.

    Raises
    ------
    DomainError
        If any value is not strictly positive.
    """
    values = _as_values(series)
    if np.any(values <= 0):
        raise DomainError("drawdown requires strictly positive values")
    peaks = running_max(values, D)
    pct = 100.0 * (peaks - values) / peaks
    # exact zero when the current value is the peak
    pct[values >= peaks] = 0.0
    return DrawdownSeries(running_max=peaks, drawdown_pct=pct, lookback=D)


def log_returns(series, percent: bool = True) -> np.ndarray:
    """Single-period continuous returns ``ln(v_t / v_{t-1})``.

    Returned in percent by default; ``percent=False`` gives plain fractions.
    """
    values = _as_values(series, min_length=2)
    if np.any(values <= 0):
        raise DomainError("log returns require strictly positive values")
    r = np.diff(np.log(values))
    return 100.0 * r if percent else r


def sharpe_annualised(daily_returns, days_per_year: int = TRADING_DAYS) -> float:
    """Annualised Sharpe ratio with a zero risk-free rate.

    Uses the sample (``ddof=1``) standard deviation.
    """
    r = _as_values(daily_returns, min_length=2)
    mean = r.mean()
    std = r.std(ddof=1)
    if std <= 1e-12 * max(1.0, abs(mean)):
        raise UndefinedRatioError("standard deviation of returns is zero")
    return float(mean / std * np.sqrt(days_per_year))


def exceedance_pct(portfolio, index) -> float:
    """Percentage of days on which the normalised portfolio strictly exceeds
    the normalised index (both divided by their first value)."""
    p = _as_values(portfolio)
    q = _as_values(index)
    if p.size != q.size:
        raise DomainError(f"length mismatch: {p.size} vs {q.size}")
    if p[0] <= 0 or q[0] <= 0:
        raise DomainError("series must start at a positive value")
    above = (p / p[0]) > (q / q[0])
    return float(100.0 * np.count_nonzero(above) / p.size)


def summarize(series, D: int | None = None) -> dict:
    """Average daily log return (fraction), max and mean drawdown in percent."""
    dd = drawdown(series, D)
    values = _as_values(series)
    avg_ret = float(log_returns(values, percent=False).mean()) if values.size > 1 else 0.0
    return {
        "avg_daily_return": avg_ret,
        "max_drawdown_pct": dd.max,
        "avg_drawdown_pct": dd.mean,
    }
