"""Assembly of the drawdown-minimisation program for one rebalance.

Variables per instance (all stored in one LP column vector):

``x``     units held per asset (net units when shorting)
``xL/xS`` long and short units (shorting only)
``G``     transaction cost per asset
``P``     portfolio value per in-sample day
``M``     peak value over the lookback window per day
``d``     percentage drawdown per day
``dmax``  maximum drawdown (MinMax and Weighted objectives)

The peak definition is linearised as ``M_t >= P_tau`` over the lookback
window. The drawdown definition stays nonlinear and is kept as the bilinear
record ``d_t * M_t >= 100 * (M_t - P_t)`` for the global solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .drawdown import running_max
from .exceptions import EmptyUniverseError, ValidationError

OBJECTIVES = ("minavg", "minmax", "weighted")
GAMMA_BIG = 1e6


@dataclass(frozen=True)
class ShortingSpec:
    """Per-asset and aggregate caps on long and short positions, as
    proportions of the post-trade portfolio value."""

    delta_long: float | np.ndarray = 0.1
    delta_short: float | np.ndarray = 0.1
    cap_long: float = 1.1
    cap_short: float = 0.1

    def __post_init__(self):
        if self.cap_short < 0:
            raise ValidationError("cap_short must be >= 0")
        if self.cap_long < 1:
            raise ValidationError("cap_long must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of one rebalance problem.

    Vector-valued fields accept a scalar, broadcast over the assets.
    ``current_holdings`` are units, ``capital`` is the value available
    after any cash change.
    """

    T: int
    D: int
    objective: str = "minavg"
    lambda1: float = 1.0
    lambda2: float = 1.0
    capital: float = 1000.0
    current_holdings: float | np.ndarray = 0.0
    delta: float | np.ndarray = 1.0
    buy_cost: float | np.ndarray = 0.0
    sell_cost: float | np.ndarray = 0.0
    gamma: float = 0.0
    gamma_big: float = GAMMA_BIG
    shorting: ShortingSpec | None = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.T < 1 or self.D < 1:
            raise ValidationError("T and D must be >= 1")
        if not self.capital > 0:
            raise ValidationError("capital must be positive")
        if self.objective == "weighted" and not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValidationError("weighted objective needs lambda1, lambda2 > 0")
        if not 0 <= self.gamma <= 1:
            raise ValidationError("gamma must lie in [0, 1]")
        if not self.gamma_big > 0:
            raise ValidationError("gamma_big must be positive")

    def vector(self, name: str, n: int) -> np.ndarray:
        """Field ``name`` broadcast to length ``n``."""
        if name in ("delta_long", "delta_short"):
            value = getattr(self.shorting, name)
        else:
            value = getattr(self, name)
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full(n, float(arr))
        arr = arr.reshape(-1)
        if arr.size != n:
            raise ValidationError(f"{name} has {arr.size} entries for {n} assets")
        return arr.copy()

    @property
    def uses_dmax(self) -> bool:
        return self.objective in ("minmax", "weighted")


@dataclass(frozen=True)
class BilinearTerm:
    """``d[t] * M[t] >= 100 * (M[t] - P[t])`` by column index."""

    t: int
    d: int
    M: int
    P: int


@dataclass(frozen=True, eq=False)
class ModelInstance:
    spec: ModelSpec
    assets: tuple
    prices: np.ndarray
    var_names: tuple
    layout: dict
    c: np.ndarray
    c_drawdown: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    ub_names: tuple
    A_eq: np.ndarray
    b_eq: np.ndarray
    eq_names: tuple
    lower: np.ndarray
    upper: np.ndarray
    bilinear: tuple = field(default=())

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def T(self) -> int:
        return self.prices.shape[1]

    @property
    def shorting(self) -> bool:
        return "xL" in self.layout

    def cols(self, name) -> np.ndarray:
        return self.layout[name]

    def holdings(self, z) -> np.ndarray:
        return np.asarray(z)[self.layout["x"]]

    def with_bounds(self, lower, upper) -> "ModelInstance":
        return replace(self, lower=np.asarray(lower, float), upper=np.asarray(upper, float))

    def linear_residual(self, z) -> float:
        """Largest violation of the linear rows and bounds at ``z``."""
        z = np.asarray(z, float)
        viol = [0.0]
        if self.b_ub.size:
            viol.append(np.max(self.A_ub @ z - self.b_ub))
        if self.b_eq.size:
            viol.append(np.max(np.abs(self.A_eq @ z - self.b_eq)))
        viol.append(np.max(self.lower - z))
        viol.append(np.max(z - self.upper))
        return float(max(viol))


class _Rows:
    def __init__(self, n):
        self.n = n
        self.rows, self.rhs, self.names = [], [], []

    def add(self, coefs: dict, rhs: float, name: str):
        row = np.zeros(self.n)
        for j, v in coefs.items():
            row[j] += v
        self.rows.append(row)
        self.rhs.append(float(rhs))
        self.names.append(name)

    def matrix(self):
        if not self.rows:
            return np.zeros((0, self.n)), np.zeros(0), ()
        return np.vstack(self.rows), np.asarray(self.rhs), tuple(self.names)


def lookback_window(t: int, D: int) -> range:
    """Days ``tau`` in ``[max(0, t - D), t]``."""
    return range(max(0, t - D), t + 1)


def build(window, spec: ModelSpec) -> ModelInstance:
    """Assemble the program for a price window.

    Parameters
    ----------
    window : PricePanel or array-like of shape (n_assets, T)
    spec : ModelSpec

    Raises
    ------
    EmptyUniverseError
        If the window has no assets.
    ValidationError
        If the window length differs from ``spec.T`` or prices are not
        strictly positive.
    """
    if hasattr(window, "prices"):
        prices, assets = np.asarray(window.prices, float), tuple(window.assets)
    else:
        prices = np.atleast_2d(np.asarray(window, float))
        assets = tuple(f"A{i:03d}" for i in range(prices.shape[0]))
    N, T = prices.shape
    if N == 0:
        raise EmptyUniverseError("window has no assets")
    if T != spec.T:
        raise ValidationError(f"window has {T} days but spec.T = {spec.T}")
    if not np.all(prices > 0):
        raise ValidationError("window prices must be strictly positive")

    delta = spec.vector("delta", N)
    fb, fs = spec.vector("buy_cost", N), spec.vector("sell_cost", N)
    A = spec.vector("current_holdings", N)
    if spec.shorting is None and delta.sum() < 1:
        warnings.warn(
            f"proportion limits sum to {delta.sum():.3g} < 1; the long-only program is infeasible",
            stacklevel=2,
        )
    VT = prices[:, -1]

    names, layout = [], {}

    def block(key, count, label):
        start = len(names)
        names.extend(label(k) for k in range(count))
        layout[key] = np.arange(start, start + count)

    block("x", N, lambda i: f"x[{assets[i]}]")
    block("G", N, lambda i: f"G[{assets[i]}]")
    block("P", T, lambda t: f"P[{t + 1}]")
    block("M", T, lambda t: f"M[{t + 1}]")
    block("d", T, lambda t: f"d[{t + 1}]")
    if spec.uses_dmax:
        block("dmax", 1, lambda _: "dmax")
    n = len(names)
    x, G, P, M, d = (layout[k] for k in ("x", "G", "P", "M", "d"))

    eq, ub = _Rows(n), _Rows(n)
    for t in range(T):
        coefs = {P[t]: 1.0}
        for i in range(N):
            coefs[x[i]] = -prices[i, t]
        eq.add(coefs, 0.0, f"value[{t + 1}]")
    for i in range(N):
        ub.add({x[i]: VT[i], P[-1]: -delta[i]}, 0.0, f"prop[{assets[i]}]")
    for i in range(N):
        ub.add({x[i]: -fs[i] * VT[i], G[i]: -1.0}, -fs[i] * A[i] * VT[i], f"sellcost[{assets[i]}]")
        ub.add({x[i]: fb[i] * VT[i], G[i]: -1.0}, fb[i] * A[i] * VT[i], f"buycost[{assets[i]}]")
    ub.add({G[i]: 1.0 for i in range(N)}, spec.gamma * spec.capital, "costcap")
    balance = {G[i]: 1.0 for i in range(N)}
    balance[P[-1]] = 1.0
    eq.add(balance, spec.capital, "balance")
    for t in range(T):
        for tau in lookback_window(t, spec.D):
            ub.add({P[tau]: 1.0, M[t]: -1.0}, 0.0, f"peak[{t + 1},{tau + 1}]")
    if spec.uses_dmax:
        dmax = layout["dmax"][0]
        for t in range(T):
            ub.add({d[t]: 1.0, dmax: -1.0}, 0.0, f"maxdd[{t + 1}]")

    c_dd = np.zeros(n)
    if spec.objective == "minavg":
        c_dd[d] = 1.0 / T
    elif spec.objective == "minmax":
        c_dd[layout["dmax"]] = 1.0
    else:
        c_dd[d] = spec.lambda2 / T
        c_dd[layout["dmax"]] = spec.lambda1
    c = spec.gamma_big * c_dd
    c[G] += 1.0

    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    A_ub, b_ub, ub_names = ub.matrix()
    A_eq, b_eq, eq_names = eq.matrix()
    inst = ModelInstance(
        spec=spec, assets=assets, prices=prices, var_names=tuple(names), layout=layout,
        c=c, c_drawdown=c_dd, A_ub=A_ub, b_ub=b_ub, ub_names=ub_names,
        A_eq=A_eq, b_eq=b_eq, eq_names=eq_names, lower=lower, upper=upper,
        bilinear=tuple(BilinearTerm(t, d[t], M[t], P[t]) for t in range(T)),
    )
    if spec.shorting is not None:
        inst = build_shorting_constraints(inst, spec)
    return inst


def build_shorting_constraints(instance: ModelInstance, spec: ModelSpec) -> ModelInstance:
    """Split holdings into long and short parts and replace the per-asset
    proportion limits by separate long/short and aggregate caps.

    ``P_t >= 0`` stays in force, so the portfolio value never goes negative.
    """
    if spec.shorting is None:
        raise ValidationError("spec has no shorting parameters")
    if instance.shorting:
        return instance
    N, n0 = instance.n_assets, instance.n_vars
    VT = instance.prices[:, -1]
    dl, ds = spec.vector("delta_long", N), spec.vector("delta_short", N)
    sh = spec.shorting

    names = list(instance.var_names)
    layout = dict(instance.layout)
    layout["xL"] = np.arange(n0, n0 + N)
    layout["xS"] = np.arange(n0 + N, n0 + 2 * N)
    names += [f"xL[{a}]" for a in instance.assets] + [f"xS[{a}]" for a in instance.assets]
    n = len(names)
    x, xL, xS, PT = layout["x"], layout["xL"], layout["xS"], layout["P"][-1]

    def widen(A):
        return np.hstack([A, np.zeros((A.shape[0], n - n0))])

    keep = [k for k, nm in enumerate(instance.ub_names) if not nm.startswith("prop[")]
    ub, eq = _Rows(n), _Rows(n)
    ub.rows = list(widen(instance.A_ub[keep]))
    ub.rhs = list(instance.b_ub[keep])
    ub.names = [instance.ub_names[k] for k in keep]
    eq.rows = list(widen(instance.A_eq))
    eq.rhs = list(instance.b_eq)
    eq.names = list(instance.eq_names)

    for i, a in enumerate(instance.assets):
        eq.add({x[i]: 1.0, xL[i]: -1.0, xS[i]: 1.0}, 0.0, f"split[{a}]")
    for i, a in enumerate(instance.assets):
        ub.add({xL[i]: VT[i], PT: -dl[i]}, 0.0, f"proplong[{a}]")
        ub.add({xS[i]: VT[i], PT: -ds[i]}, 0.0, f"propshort[{a}]")
    ub.add({**{xL[i]: VT[i] for i in range(N)}, PT: -sh.cap_long}, 0.0, "caplong")
    ub.add({**{xS[i]: VT[i] for i in range(N)}, PT: -sh.cap_short}, 0.0, "capshort")

    lower = np.concatenate([instance.lower, np.zeros(2 * N)])
    upper = np.concatenate([instance.upper, np.full(2 * N, np.inf)])
    lower[x] = -np.inf
    c = np.concatenate([instance.c, np.zeros(2 * N)])
    c_dd = np.concatenate([instance.c_drawdown, np.zeros(2 * N)])
    A_ub, b_ub, ub_names = ub.matrix()
    A_eq, b_eq, eq_names = eq.matrix()
    return replace(
        instance, spec=spec, var_names=tuple(names), layout=layout, c=c, c_drawdown=c_dd,
        A_ub=A_ub, b_ub=b_ub, ub_names=ub_names, A_eq=A_eq, b_eq=b_eq, eq_names=eq_names,
        lower=lower, upper=upper,
    )


@dataclass(frozen=True)
class ReportedSolution:
    """Values recomputed exactly from holdings.

    ``objective`` is the drawdown objective without the cost term;
    ``penalised`` adds it back as ``gamma_big * objective + sum(costs)``.
    """

    holdings: np.ndarray
    costs: np.ndarray
    P: np.ndarray
    M: np.ndarray
    d: np.ndarray
    objective: float
    penalised: float

    @property
    def max_drawdown(self) -> float:
        return float(self.d.max())

    @property
    def mean_drawdown(self) -> float:
        return float(self.d.mean())


def drawdown_objective(spec: ModelSpec, d) -> float:
    d = np.asarray(d, float)
    if spec.objective == "minavg":
        return float(d.mean())
    if spec.objective == "minmax":
        return float(d.max())
    return float(spec.lambda1 * d.max() + spec.lambda2 * d.mean())


def transaction_costs(instance: ModelInstance, x) -> np.ndarray:
    """``max(f_s (A - x) V_T, f_b (x - A) V_T, 0)`` per asset."""
    spec, N = instance.spec, instance.n_assets
    VT = instance.prices[:, -1]
    A = spec.vector("current_holdings", N)
    fb, fs = spec.vector("buy_cost", N), spec.vector("sell_cost", N)
    x = np.asarray(x, float)
    return np.maximum.reduce([fs * (A - x) * VT, fb * (x - A) * VT, np.zeros(N)])


def recompute_reported_solution(instance: ModelInstance, x) -> ReportedSolution:
    """Portfolio values, exact peaks, exact drawdowns and exact costs for
    holdings ``x``, ignoring any slack the solver left in ``M``, ``d`` or ``G``."""
    x = np.asarray(x, float).reshape(-1)
    P = instance.prices.T @ x
    M = running_max(P, instance.spec.D)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(M > 0, 100.0 * (M - P) / M, 0.0)
    d = np.where(P >= M, 0.0, d)
    costs = transaction_costs(instance, x)
    obj = drawdown_objective(instance.spec, d)
    return ReportedSolution(
        holdings=x, costs=costs, P=P, M=M, d=d, objective=obj,
        penalised=float(instance.spec.gamma_big * obj + costs.sum()),
    )


def full_vector(instance: ModelInstance, x, costs=None) -> np.ndarray:
    """Column vector of the program for holdings ``x`` with exact peaks and
    drawdowns; costs default to the exact transaction costs."""
    sol = recompute_reported_solution(instance, x)
    z = np.zeros(instance.n_vars)
    lay = instance.layout
    z[lay["x"]] = sol.holdings
    z[lay["G"]] = sol.costs if costs is None else costs
    z[lay["P"]] = sol.P
    z[lay["M"]] = sol.M
    z[lay["d"]] = sol.d
    if "dmax" in lay:
        z[lay["dmax"]] = sol.d.max()
    if "xL" in lay:
        z[lay["xL"]] = np.maximum(sol.holdings, 0.0)
        z[lay["xS"]] = np.maximum(-sol.holdings, 0.0)
    return z


def dump_lp(instance: ModelInstance) -> str:
    """Human-readable listing of the program for debugging."""
    out = []
    names = instance.var_names

    def expr(row):
        terms = [f"{v:+.10g} {names[j]}" for j, v in enumerate(row) if v != 0]
        return " ".join(terms) if terms else "0"

    out.append("\\ drawdown program: "
               f"{instance.n_assets} assets, T={instance.T}, D={instance.spec.D}, "
               f"objective={instance.spec.objective}")
    out.append("minimize")
    out.append(f"  obj: {expr(instance.c)}")
    out.append("subject to")
    for nm, row, rhs in zip(instance.eq_names, instance.A_eq, instance.b_eq):
        out.append(f"  {nm}: {expr(row)} = {rhs:.10g}")
    for nm, row, rhs in zip(instance.ub_names, instance.A_ub, instance.b_ub):
        out.append(f"  {nm}: {expr(row)} <= {rhs:.10g}")
    out.append("bilinear")
    for b in instance.bilinear:
        out.append(f"  dd[{b.t + 1}]: {names[b.d]} * {names[b.M]} >= 100 {names[b.M]} - 100 {names[b.P]}")
    out.append("bounds")
    for nm, lo, hi in zip(names, instance.lower, instance.upper):
        out.append(f"  {lo:.10g} <= {nm} <= {hi:.10g}")
    out.append("end")
    return "\n".join(out) + "\n"
