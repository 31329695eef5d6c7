"""Rolling-rebalance backtest.

At each rebalance date the portfolio is re-decided from the most recent
``T`` days, then held unchanged for ``rebalance_every`` days. The first
rebalance starts from cash; later ones start from the previous holdings
marked to market (self-financing). The out-of-sample segments are
concatenated into one value series.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from . import __version__
from .data import IndexSeries, PricePanel, window
from .drawdown import (
    drawdown, exceedance_pct, log_returns, sharpe_annualised, summarize,
)
from .estimator import MinDrawdownPortfolio, NoSolutionError
from .exceptions import DomainError, EmptyUniverseError
from .model import GAMMA_BIG
from .solver import BISECTION_TOL, GAP_TOL, SolveStatus

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1.0"
DETERMINISTIC_NODE_LIMIT = 5000


@dataclass
class BacktestConfig:
    """Backtest protocol plus the model and solver settings for every
    rebalance. ``deterministic`` replaces the time limit by a node limit
    so repeated runs give identical portfolios."""

    T: int = 30
    D: int = 20
    rebalance_every: int = 10
    initial_cash: float = 1000.0
    objective: str = "minavg"
    lambda1: float = 1.0
    lambda2: float = 1.0
    delta: float = 0.1
    buy_cost: float = 0.0
    sell_cost: float = 0.0
    gamma: float = 0.0
    gamma_big: float = GAMMA_BIG
    shorting: bool = False
    delta_long: float = 0.1
    delta_short: float = 0.1
    cap_long: float = 1.1
    cap_short: float = 0.1
    gap_tol: float = GAP_TOL
    bisection_tol: float = BISECTION_TOL
    time_limit: float | str | None = "auto"
    node_limit: int | None = None
    n_jobs: int = 1
    seed: int = 0
    deterministic: bool = False
    oos_lookback: int | None = None

    def __post_init__(self):
        if self.rebalance_every < 1:
            raise ValueError("rebalance_every must be >= 1")
        if self.T < 1 or self.D < 1:
            raise ValueError("T and D must be >= 1")
        if self.T <= self.D:
            logger.warning("T=%d <= D=%d: the lookback covers the whole window", self.T, self.D)

    def estimator(self) -> MinDrawdownPortfolio:
        time_limit, node_limit, n_jobs = self.time_limit, self.node_limit, self.n_jobs
        if self.deterministic:
            time_limit = None
            node_limit = node_limit or DETERMINISTIC_NODE_LIMIT
            n_jobs = 1
        return MinDrawdownPortfolio(
            objective=self.objective, lookback=self.D, lambda1=self.lambda1,
            lambda2=self.lambda2, capital=self.initial_cash, delta=self.delta,
            buy_cost=self.buy_cost, sell_cost=self.sell_cost, gamma=self.gamma,
            gamma_big=self.gamma_big, shorting=self.shorting, delta_long=self.delta_long,
            delta_short=self.delta_short, cap_long=self.cap_long, cap_short=self.cap_short,
            gap_tol=self.gap_tol, bisection_tol=self.bisection_tol, time_limit=time_limit,
            node_limit=node_limit, n_jobs=n_jobs, random_state=self.seed,
        )


@dataclass
class HoldingsState:
    """Units per panel asset plus uninvested cash."""

    units: np.ndarray
    cash: float = 0.0

    def value(self, prices) -> float:
        held = self.units != 0
        return float(self.units[held] @ prices[held] + self.cash)


@dataclass
class BacktestReport:
    config: dict
    per_rebalance: list
    dates: list
    stitched: np.ndarray
    summary: dict
    index_summary: dict | None = None
    index_values: np.ndarray | None = None
    events: list = field(default_factory=list)

    def to_dict(self, include_timing: bool = True) -> dict:
        per = []
        for rec in self.per_rebalance:
            rec = dict(rec)
            if not include_timing:
                rec.pop("wall_time", None)
            per.append(rec)
        summary = dict(self.summary)
        if not include_timing:
            summary.pop("avg_solve_time", None)
        return _clean({
            "schema_version": REPORT_SCHEMA_VERSION,
            "package_version": __version__,
            "config": self.config,
            "summary": summary,
            "index_summary": self.index_summary,
            "per_rebalance": per,
            "events": self.events,
            "n_out_of_sample_days": len(self.dates),
        })

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def timing(self) -> dict:
        return {
            "avg_solve_time": self.summary.get("avg_solve_time"),
            "wall_time": [rec.get("wall_time") for rec in self.per_rebalance],
        }

    def stitched_csv(self) -> str:
        lines = ["date,portfolio" + (",index" if self.index_values is not None else "")]
        for k, d in enumerate(self.dates):
            row = f"{d},{float(self.stitched[k])!r}"
            if self.index_values is not None:
                row += f",{float(self.index_values[k])!r}"
            lines.append(row)
        return "\n".join(lines) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def stitch(segments) -> np.ndarray:
    """Concatenate out-of-sample segments in order, without renormalising."""
    segments = [np.asarray(s, float).reshape(-1) for s in segments]
    if not segments:
        raise DomainError("no segments to stitch")
    return np.concatenate(segments)


def _ffill(prices: np.ndarray) -> np.ndarray:
    """Carry each asset's last observed price forward along the date axis."""
    out = prices.copy()
    for t in range(1, out.shape[1]):
        gap = ~np.isfinite(out[:, t])
        out[gap, t] = out[gap, t - 1]
    return out


def series_metrics(values, D: int | None = None) -> dict:
    """Average daily log return (fraction), max/mean drawdown (%) and
    annualised Sharpe ratio of a value series."""
    values = np.asarray(values, float)
    out = {"avg_daily_return": None, "max_drawdown_pct": None,
           "avg_drawdown_pct": None, "sharpe": None}
    if values.size == 0 or np.any(values <= 0):
        return out
    out.update(summarize(values, D))
    if values.size >= 3:
        try:
            out["sharpe"] = sharpe_annualised(log_returns(values, percent=False))
        except DomainError:
            pass
    return out


def _in_sample_stats(P, D):
    P = np.asarray(P, float)
    if np.any(P <= 0):
        dd = None
    else:
        dd = drawdown(P, D)
    return {
        "in_sample_avg_daily_return": float(log_returns(P, percent=False).mean())
        if P.size > 1 and np.all(P > 0) else None,
        "in_sample_max_drawdown_pct": dd.max if dd is not None else None,
        "in_sample_avg_drawdown_pct": dd.mean if dd is not None else None,
    }


def run_backtest(panel: PricePanel, index: IndexSeries | None, cfg: BacktestConfig) -> BacktestReport:
    """Run the rolling-rebalance protocol over ``panel``.

    Rebalances happen on date indices ``T-1, T-1+R, ...`` while at least one
    later date remains. Assets that are no longer eligible at a rebalance
    are sold at that date's price (net of sell cost). A rebalance whose solve
    yields no portfolio keeps the previous holdings.

    Raises
    ------
    DomainError
        If the panel is shorter than ``T + 1`` dates.
    """
    T, R = cfg.T, cfg.rebalance_every
    if panel.n_dates < T + 1:
        raise DomainError(f"panel has {panel.n_dates} dates; need at least T + 1 = {T + 1}")
    marks = _ffill(panel.prices)
    state = HoldingsState(np.zeros(panel.n_assets), cash=float(cfg.initial_cash))
    asset_pos = {a: i for i, a in enumerate(panel.assets)}
    est_template = cfg.estimator()

    per_rebalance, segments, seg_dates, events = [], [], [], []
    r = T - 1
    while r + 1 < panel.n_dates:
        seg_end = min(r + R, panel.n_dates - 1)
        price_r = marks[:, r]
        value_before = state.value(price_r)
        rec = {"date": panel.dates[r], "end_index": r}
        try:
            win = window(panel, r, T)
        except EmptyUniverseError:
            win = None
        if win is not None:
            idx = np.array([asset_pos[a] for a in win.assets])
            outside = np.setdiff1d(np.flatnonzero(state.units), idx)
            fs = cfg.sell_cost
            liquidation = float(np.sum(state.units[outside] * price_r[outside]
                                       * np.where(state.units[outside] > 0, 1 - fs, 1 + fs)))
            capital = float(state.units[idx] @ price_r[idx]) + liquidation + state.cash
            rec["excluded"] = list(win.excluded)
            rec["n_assets"] = len(idx)
            rec["capital"] = capital
            est = est_template.__class__(**est_template.get_params())
            try:
                with warnings.catch_warnings():
                    # the gap is recorded per rebalance instead
                    warnings.simplefilter("ignore", ConvergenceWarning)
                    est.fit(win.prices.T, current_holdings=state.units[idx], capital=capital)
            except NoSolutionError as exc:
                res = exc.result
                events.append({"date": panel.dates[r], "event": f"solve {res.status.value}; holding"})
                est = None
            except Exception as exc:  # numerical trouble in one window must not end the run
                res = None
                events.append({"date": panel.dates[r], "event": f"solve error: {exc}; holding"})
                est = None
            if est is not None:
                res = est.result_
                units = np.zeros(panel.n_assets)
                units[idx] = est.holdings_
                state = HoldingsState(units, cash=0.0)
                rec.update(_in_sample_stats(res.reported.P, cfg.D))
                rec["total_cost"] = float(res.costs.sum())
                rec["objective"] = res.objective
                rec["holdings"] = {a: float(u) for a, u in zip(win.assets, est.holdings_) if u != 0}
            if res is not None:
                rec.update(status=res.status.value, gap=res.gap, nodes=res.nodes,
                           method=res.method, wall_time=res.wall_time)
            else:
                rec.update(status="Error", gap=None, nodes=0, method=None, wall_time=None)
        else:
            events.append({"date": panel.dates[r], "event": "no eligible assets; holding"})
            rec.update(status="NoUniverse", gap=None, nodes=0, method=None, wall_time=None)
        rec["value_before"] = value_before
        rec["value_after"] = state.value(price_r)
        per_rebalance.append(rec)

        days = range(r + 1, seg_end + 1)
        segments.append([state.value(marks[:, t]) for t in days])
        seg_dates.extend(panel.dates[t] for t in days)
        r += R

    stitched = stitch(segments)
    report = BacktestReport(
        config=asdict(cfg), per_rebalance=per_rebalance, dates=seg_dates,
        stitched=stitched, summary=_summary(per_rebalance, stitched, cfg), events=events,
    )
    if index is not None:
        index_comparison(report, index)
    return report


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _summary(per_rebalance, stitched, cfg) -> dict:
    oos = series_metrics(stitched, cfg.oos_lookback)
    n = len(per_rebalance)
    proven = sum(rec["status"] == SolveStatus.PROVEN_OPTIMAL.value for rec in per_rebalance)
    return {
        "objective": cfg.objective,
        "n_rebalances": n,
        "in_sample_avg_daily_return": _mean(r.get("in_sample_avg_daily_return") for r in per_rebalance),
        "in_sample_max_drawdown_pct": _mean(r.get("in_sample_max_drawdown_pct") for r in per_rebalance),
        "in_sample_avg_drawdown_pct": _mean(r.get("in_sample_avg_drawdown_pct") for r in per_rebalance),
        "avg_solve_time": _mean(r.get("wall_time") for r in per_rebalance),
        "pct_proven_optimal": 100.0 * proven / n if n else None,
        "oos_avg_daily_return": oos["avg_daily_return"],
        "oos_max_drawdown_pct": oos["max_drawdown_pct"],
        "oos_avg_drawdown_pct": oos["avg_drawdown_pct"],
        "oos_sharpe": oos["sharpe"],
        "oos_max_drawdown_windowed_pct": series_metrics(stitched, cfg.D)["max_drawdown_pct"],
        "exceedance_pct": None,
    }


def index_comparison(report: BacktestReport, index: IndexSeries) -> dict:
    """Fill the index row (same metrics as the portfolio) and the
    percentage of out-of-sample days the portfolio beats the index.

    Raises
    ------
    DomainError
        If the index lacks a value on any out-of-sample date.
    """
    values = index.align(report.dates)
    oos = series_metrics(values, report.config.get("oos_lookback"))
    report.index_values = values
    report.index_summary = {
        "oos_avg_daily_return": oos["avg_daily_return"],
        "oos_max_drawdown_pct": oos["max_drawdown_pct"],
        "oos_avg_drawdown_pct": oos["avg_drawdown_pct"],
        "oos_sharpe": oos["sharpe"],
    }
    report.summary["exceedance_pct"] = exceedance_pct(report.stitched, values) if len(values) else None
    return report.index_summary


def table_row(report: BacktestReport, label: str | None = None) -> str:
    """One line in the layout of a results table: in-sample return, max
    drawdown, mean drawdown, solve time, % optimal | out-of-sample return,
    max drawdown, mean drawdown, Sharpe, % days above index."""
    s = report.summary

    def f(v, fmt):
        return "-" if v is None else format(v, fmt)

    return "  ".join([
        label or s["objective"].upper(),
        f(s["in_sample_avg_daily_return"], ".6f"),
        f(s["in_sample_max_drawdown_pct"], ".2f"),
        f(s["in_sample_avg_drawdown_pct"], ".2f"),
        f(s["avg_solve_time"], ".1f"),
        f(s["pct_proven_optimal"], ".1f"),
        "|",
        f(s["oos_avg_daily_return"], ".6f"),
        f(s["oos_max_drawdown_pct"], ".2f"),
        f(s["oos_avg_drawdown_pct"], ".2f"),
        f(s["oos_sharpe"], ".3f"),
        f(s["exceedance_pct"], ".1f"),
    ])
