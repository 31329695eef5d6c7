"""Command-line interface: ``solve``, ``backtest`` and ``drawdown``.

Exit codes: 0 success, 1 solver returned no portfolio, 2 bad input
(configuration, missing or malformed data files).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .backtest import BacktestConfig, _clean, run_backtest, table_row
from .data import load_index, load_panel, window
from .drawdown import drawdown, log_returns
from .exceptions import DomainError, ValidationError
from .model import GAMMA_BIG, ModelSpec, ShortingSpec, build
from .solver import BISECTION_TOL, GAP_TOL, default_time_limit, solve

logger = logging.getLogger("mindrawdown")

SOLVE_SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_NO_SOLUTION, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a run needs. Paths are resolved relative to the config
    file. Defaults: 30-day window, 20-day lookback, rebalance every 10 days,
    1000 starting cash, 10% per-asset cap, shorting caps 1.1 long and
    0.1 short."""

    prices: str | None = None
    index: str | None = None
    out: str = "out"
    seed: int = 0
    T: int = 30
    D: int = 20
    rebalance_every: int = 10
    initial_cash: float = 1000.0
    objective: str = "minavg"
    lambda1: float = 1.0
    lambda2: float = 1.0
    delta: float = 0.1
    gamma: float = 0.0
    buy_cost: float = 0.0
    sell_cost: float = 0.0
    gamma_big: float = GAMMA_BIG
    short: bool = False
    delta_long: float = 0.1
    delta_short: float = 0.1
    cap_long: float = 1.1
    cap_short: float = 0.1
    gap_tol: float = GAP_TOL
    bisection_tol: float = BISECTION_TOL
    time_limit: float | str | None = "auto"
    node_limit: int | None = None
    threads: int = 1
    deterministic: bool = False
    end_date: str | None = None
    oos_lookback: int | None = None

    def backtest_config(self) -> BacktestConfig:
        return BacktestConfig(
            T=self.T, D=self.D, rebalance_every=self.rebalance_every,
            initial_cash=self.initial_cash, objective=self.objective, lambda1=self.lambda1,
            lambda2=self.lambda2, delta=self.delta, buy_cost=self.buy_cost,
            sell_cost=self.sell_cost, gamma=self.gamma, gamma_big=self.gamma_big,
            shorting=self.short, delta_long=self.delta_long, delta_short=self.delta_short,
            cap_long=self.cap_long, cap_short=self.cap_short, gap_tol=self.gap_tol,
            bisection_tol=self.bisection_tol, time_limit=self.time_limit,
            node_limit=self.node_limit, n_jobs=self.threads, seed=self.seed,
            deterministic=self.deterministic, oos_lookback=self.oos_lookback,
        )


def load_config(path) -> RunConfig:
    """Read a YAML (or JSON) run configuration; unknown keys are rejected."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in ("prices", "index", "out"):
        if raw.get(key) is not None:
            p = Path(raw[key])
            raw[key] = str(p if p.is_absolute() else path.parent / p)
    return RunConfig(**raw)


_FLAG_MAP = {
    "objective": "objective", "lambda1": "lambda1", "lambda2": "lambda2", "short": "short",
    "delta": "delta", "gamma": "gamma", "gap_tol": "gap_tol", "time_limit": "time_limit",
    "seed": "seed", "out": "out", "threads": "threads", "deterministic": "deterministic",
    "prices": "prices", "index": "index", "end_date": "end_date", "node_limit": "node_limit",
}


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    for flag, key in _FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is not None and value is not False:
            updates[key] = value
    cfg = dataclasses.replace(cfg, **updates)
    if cfg.objective not in ("minavg", "minmax", "weighted"):
        raise ConfigError(f"unknown objective {cfg.objective!r}")
    if cfg.prices is None:
        raise ConfigError("no price file given (config key 'prices' or --prices)")
    return cfg


def _solver_limits(cfg, n_assets):
    if cfg.deterministic:
        from .backtest import DETERMINISTIC_NODE_LIMIT
        return None, cfg.node_limit or DETERMINISTIC_NODE_LIMIT, 1
    limit = cfg.time_limit
    if limit == "auto":
        limit = default_time_limit(n_assets)
    return limit, cfg.node_limit, cfg.threads


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_solve(args) -> int:
    cfg = _resolve_config(args)
    panel = load_panel(cfg.prices)
    end = panel.n_dates - 1 if cfg.end_date is None else panel.date_index(cfg.end_date)
    win = window(panel, end, cfg.T)
    shorting = ShortingSpec(cfg.delta_long, cfg.delta_short, cfg.cap_long, cfg.cap_short) if cfg.short else None
    spec = ModelSpec(
        T=cfg.T, D=cfg.D, objective=cfg.objective, lambda1=cfg.lambda1, lambda2=cfg.lambda2,
        capital=cfg.initial_cash, delta=cfg.delta, buy_cost=cfg.buy_cost, sell_cost=cfg.sell_cost,
        gamma=cfg.gamma, gamma_big=cfg.gamma_big, shorting=shorting,
    )
    instance = build(win, spec)
    time_limit, node_limit, n_jobs = _solver_limits(cfg, win.n_assets)
    res = solve(instance, gap_tol=cfg.gap_tol, time_limit=time_limit,
                bisection_tol=cfg.bisection_tol, node_limit=node_limit, n_jobs=n_jobs,
                seed=cfg.seed)
    out = {
        "schema_version": SOLVE_SCHEMA_VERSION,
        "package_version": __version__,
        "objective": cfg.objective,
        "end_date": win.dates[-1],
        "status": res.status.value,
        "method": res.method,
        "objective_value": res.objective,
        "lower_bound": res.lower_bound,
        "gap": res.gap,
        "nodes": res.nodes,
        "assets": list(win.assets),
        "excluded": list(win.excluded),
        "holdings": None,
    }
    if res.reported is not None:
        rep = res.reported
        VT = win.prices[:, -1]
        out.update(
            holdings=dict(zip(win.assets, res.holdings)),
            weights=dict(zip(win.assets, VT * res.holdings / rep.P[-1])),
            costs=dict(zip(win.assets, res.costs)),
            in_sample={"dates": list(win.dates), "value": rep.P, "peak": rep.M,
                       "drawdown_pct": rep.d, "max_drawdown_pct": rep.max_drawdown,
                       "avg_drawdown_pct": rep.mean_drawdown},
        )
        if cfg.short:
            out["long_holdings"] = dict(zip(win.assets, res.long_holdings))
            out["short_holdings"] = dict(zip(win.assets, res.short_holdings))
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "solve_result.json", out)
    _write_json(outdir / "timing.json", {"wall_time": res.wall_time})
    print(f"{res.status.value} method={res.method} objective={res.objective} gap={res.gap}")
    return EXIT_OK if res.status.has_solution else EXIT_NO_SOLUTION


def cmd_backtest(args) -> int:
    cfg = _resolve_config(args)
    panel = load_panel(cfg.prices)
    index = load_index(cfg.index) if cfg.index else None
    report = run_backtest(panel, index, cfg.backtest_config())
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report.to_json(include_timing=False), encoding="utf-8")
    (outdir / "stitched.csv").write_text(report.stitched_csv(), encoding="utf-8")
    _write_json(outdir / "timing.json", report.timing())
    print(table_row(report))
    return EXIT_OK


def cmd_drawdown(args) -> int:
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigError("--values must be a comma-separated list of numbers") from None
    else:
        text = Path(args.file).read_text(encoding="utf-8").split()
        values = []
        for tok in text:
            try:
                values.append(float(tok.split(",")[-1]))
            except ValueError:
                continue
    dd = drawdown(values, args.lookback)
    rets = np.concatenate([[np.nan], log_returns(values)]) if len(values) > 1 else [np.nan]
    print(f"{'time':>4}  {'value':>10}  {'return(%)':>9}  {'drawdown(%)':>11}")
    for t, (v, r, d) in enumerate(zip(values, rets, dd.drawdown_pct), start=1):
        rs = "" if np.isnan(r) else f"{r:.2f}"
        print(f"{t:>4}  {v:>10.2f}  {rs:>9}  {d:>11.2f}")
    if len(values) > 1:
        r = log_returns(values)
        sd = f"{r.std(ddof=1):.2f}" if r.size > 1 else "-"
        print(f"mean return {r.mean():.2f}  stdev {sd}  "
              f"mean drawdown {dd.mean:.2f}  max drawdown {dd.max:.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mindrawdown", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p):
        p.add_argument("--config", help="YAML/JSON run configuration")
        p.add_argument("--prices", help="long-format price CSV")
        p.add_argument("--index", help="index level CSV (date,value)")
        p.add_argument("--objective", choices=("minavg", "minmax", "weighted"))
        p.add_argument("--lambda1", type=float)
        p.add_argument("--lambda2", type=float)
        p.add_argument("--short", action="store_true", default=None)
        p.add_argument("--delta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--gap-tol", dest="gap_tol", type=float)
        p.add_argument("--time-limit", dest="time_limit", type=float)
        p.add_argument("--node-limit", dest="node_limit", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--deterministic", action="store_true", default=None)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("solve", help="solve one rebalance window")
    model_flags(p)
    p.add_argument("--end-date", dest="end_date", help="last in-sample date (default: last date)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("backtest", help="run the rolling-rebalance backtest")
    model_flags(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("drawdown", help="drawdown table for a value series")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--values", help="comma-separated values")
    src.add_argument("--file", help="file with one value per line (last CSV field used)")
    p.add_argument("--lookback", type=int, default=None, help="lookback D (default: full history)")
    p.set_defaults(func=cmd_drawdown)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
