"""Global solution of drawdown programs.

MinMax programs are solved by bisection on the drawdown level: for a fixed
level ``L`` the requirement ``d_t <= L`` for every day is the linear system
``P_t >= (1 - L/100) * P_tau`` over each lookback window, so each probe is
an LP.

MinAvg and Weighted programs are solved by spatial branch-and-bound. Each
bilinear product ``d_t * M_t`` gets an auxiliary column ``w_t`` bounded by
its McCormick envelope over the node box; node relaxations are LPs.
"""

from __future__ import annotations

import enum
import heapq
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .lp import LinearProgram, solve_lp
from .model import (
    ModelInstance, ReportedSolution, full_vector, lookback_window,
    recompute_reported_solution, transaction_costs,
)

logger = logging.getLogger(__name__)

GAP_TOL = 1e-5
BISECTION_TOL = 1e-4
M_FLOOR = 1e-6


class SolveStatus(enum.Enum):
    PROVEN_OPTIMAL = "ProvenOptimal"
    FEASIBLE_WITH_GAP = "FeasibleWithGap"
    INFEASIBLE = "Infeasible"
    TIMED_OUT = "TimedOut"

    @property
    def has_solution(self) -> bool:
        return self in (SolveStatus.PROVEN_OPTIMAL, SolveStatus.FEASIBLE_WITH_GAP)


class Infeasible(Exception):
    """The linear part of an instance admits no solution."""


@dataclass
class VariableBounds:
    """Box for every program variable, from the auxiliary LPs on ``P_t``.

    ``P``, ``M`` and ``d`` are arrays of shape ``(T, 2)`` holding
    ``[lower, upper]`` per day. ``x`` likewise has shape ``(N, 2)``.
    """

    x: np.ndarray
    G_upper: np.ndarray
    P: np.ndarray
    M: np.ndarray
    d: np.ndarray
    long_upper: np.ndarray | None = None
    short_upper: np.ndarray | None = None
    witnesses: list = field(default_factory=list, repr=False)

    @property
    def x_upper(self) -> np.ndarray:
        return self.x[:, 1]

    def apply(self, instance: ModelInstance) -> ModelInstance:
        """Copy of ``instance`` with these bounds installed."""
        lo, hi = instance.lower.copy(), instance.upper.copy()
        lay = instance.layout
        lo[lay["x"]], hi[lay["x"]] = self.x[:, 0], self.x[:, 1]
        hi[lay["G"]] = self.G_upper
        for key, box in (("P", self.P), ("M", self.M), ("d", self.d)):
            lo[lay[key]], hi[lay[key]] = box[:, 0], box[:, 1]
        if "dmax" in lay:
            lo[lay["dmax"]] = self.d[:, 0].max()
            hi[lay["dmax"]] = self.d[:, 1].max()
        if "xL" in lay:
            hi[lay["xL"]] = self.long_upper
            hi[lay["xS"]] = self.short_upper
        return instance.with_bounds(lo, hi)

    def contains(self, instance: ModelInstance, z, tol=1e-7) -> bool:
        """Whether column vector ``z`` lies inside the box (to ``tol``,
        relative to each bound's magnitude)."""
        inst = self.apply(instance)
        z = np.asarray(z, float)
        scale = tol * np.maximum(1.0, np.abs(np.where(np.isfinite(inst.upper), inst.upper, 0.0)))
        return bool(np.all(z >= inst.lower - scale) and np.all(z <= inst.upper + scale))


@dataclass
class SolveResult:
    status: SolveStatus
    method: str
    holdings: np.ndarray | None = None
    costs: np.ndarray | None = None
    objective: float | None = None
    lower_bound: float | None = None
    gap: float | None = None
    nodes: int = 0
    wall_time: float = 0.0
    reported: ReportedSolution | None = None
    bounds: VariableBounds | None = None
    node_lower_bounds: list = field(default_factory=list, repr=False)
    bound_history: list = field(default_factory=list, repr=False)
    probes: list = field(default_factory=list, repr=False)

    @property
    def long_holdings(self):
        return None if self.holdings is None else np.maximum(self.holdings, 0.0)

    @property
    def short_holdings(self):
        return None if self.holdings is None else np.maximum(-self.holdings, 0.0)


def _linear_core(instance: ModelInstance):
    """Columns and rows of the program that do not involve ``M``, ``d``
    or ``dmax``: the value definitions, proportion limits, costs and the
    balance."""
    lay = instance.layout
    core = np.concatenate([lay[k] for k in ("x", "G", "P", "xL", "xS") if k in lay])
    core.sort()
    other = np.setdiff1d(np.arange(instance.n_vars), core)

    def rows(A):
        return np.flatnonzero(~np.any(A[:, other] != 0, axis=1))

    ru, re = rows(instance.A_ub), rows(instance.A_eq)
    return core, instance.A_ub[np.ix_(ru, core)], instance.b_ub[ru], \
        instance.A_eq[np.ix_(re, core)], instance.b_eq[re]


def tighten_bounds(instance: ModelInstance) -> VariableBounds:
    """Bounds on every variable from ``2T`` LPs minimising and maximising
    each ``P_t`` over the linear constraints.

    Raises
    ------
    Infeasible
        If the linear constraints admit no point.
    """
    spec = instance.spec
    N, T, C = instance.n_assets, instance.T, spec.capital
    VT = instance.prices[:, -1]
    core, A_ub, b_ub, A_eq, b_eq = _linear_core(instance)
    pos = {j: k for k, j in enumerate(core)}
    P_cols = [pos[j] for j in instance.layout["P"]]
    lo, hi = instance.lower[core], instance.upper[core]
    if instance.shorting:
        long_up = spec.vector("delta_long", N) * C / VT
        short_up = spec.vector("delta_short", N) * C / VT
        hi = hi.copy()
        hi[[pos[j] for j in instance.layout["xL"]]] = long_up
        hi[[pos[j] for j in instance.layout["xS"]]] = short_up
        x_box = np.column_stack([-short_up, long_up])
    else:
        long_up = short_up = None
        x_box = np.column_stack([np.zeros(N), spec.vector("delta", N) * C / VT])
    lo, hi = lo.copy(), hi.copy()
    lo[[pos[j] for j in instance.layout["x"]]] = x_box[:, 0]
    hi[[pos[j] for j in instance.layout["x"]]] = x_box[:, 1]
    G_up = np.full(N, spec.gamma * C)
    hi[[pos[j] for j in instance.layout["G"]]] = G_up

    P = np.zeros((T, 2))
    witnesses = []
    for t in range(T):
        for k, sense in enumerate(("min", "max")):
            c = np.zeros(core.size)
            c[P_cols[t]] = 1.0
            sol = solve_lp(LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lo, hi, sense=sense))
            if not sol.optimal:
                raise Infeasible(f"bound LP for P[{t + 1}] is {sol.status.value}")
            P[t, k] = sol.objective
            witnesses.append(sol.x[[pos[j] for j in instance.layout["x"]]])
    pad = 1e-9 * np.maximum(1.0, np.abs(P))
    P[:, 0] = np.maximum(P[:, 0] - pad[:, 0], 0.0)
    P[:, 1] = P[:, 1] + pad[:, 1]

    M = np.zeros((T, 2))
    for t in range(T):
        win = list(lookback_window(t, spec.D))
        M[t] = P[win, 0].max(), P[win, 1].max()
    M[:, 0] = np.maximum(M[:, 0], M_FLOOR * C)
    M[:, 1] = np.maximum(M[:, 1], M[:, 0])
    d = np.column_stack([
        np.maximum(0.0, 100.0 * (1.0 - P[:, 1] / M[:, 0])),
        np.minimum(100.0, 100.0 * (1.0 - P[:, 0] / M[:, 1])),
    ])
    d[:, 1] = np.maximum(d[:, 1], d[:, 0])
    return VariableBounds(x=x_box, G_upper=G_up, P=P, M=M, d=d,
                          long_upper=long_up, short_upper=short_up, witnesses=witnesses)


def _relative_gap(upper, lower):
    return max(0.0, upper - lower) / max(abs(upper), 1e-9)


# --------------------------------------------------------------------------
# MinMax by bisection
# --------------------------------------------------------------------------

def solve_minmax_bisection(instance: ModelInstance, bounds: VariableBounds,
                           tol: float = BISECTION_TOL, time_limit: float | None = None,
                           _start: float | None = None) -> SolveResult:
    """Minimise the maximum drawdown by bisection on the drawdown level.

    Each probe asks whether some feasible portfolio keeps every daily
    drawdown at or below the probed level; probes minimise total cost so the
    cost columns come out tight. The upper end is lowered to the exact
    maximum drawdown of each feasible probe's holdings.
    """
    start = time.perf_counter() if _start is None else _start
    spec = instance.spec
    inst = bounds.apply(instance)
    core, A_ub, b_ub, A_eq, b_eq = _linear_core(inst)
    pos = {j: k for k, j in enumerate(core)}
    P_cols = [pos[j] for j in inst.layout["P"]]
    x_cols = [pos[j] for j in inst.layout["x"]]
    lo_b, hi_b = inst.lower[core], inst.upper[core]
    c = inst.c[core]
    pairs = [(t, tau) for t in range(inst.T) for tau in lookback_window(t, spec.D) if tau != t]

    def probe(level):
        A = np.zeros((len(pairs), core.size))
        keep = 1.0 - level / 100.0
        for k, (t, tau) in enumerate(pairs):
            A[k, P_cols[tau]] += keep
            A[k, P_cols[t]] -= 1.0
        lp = LinearProgram(c, np.vstack([A_ub, A]), np.concatenate([b_ub, np.zeros(len(pairs))]),
                           A_eq, b_eq, lo_b, hi_b)
        sol = solve_lp(lp)
        return sol.x[x_cols] if sol.optimal else None

    def timed_out():
        return time_limit is not None and time.perf_counter() - start >= time_limit

    result = SolveResult(SolveStatus.TIMED_OUT, "bisection", bounds=bounds)
    if timed_out():
        return result
    lo, hi = float(bounds.d[:, 0].max()), 100.0
    best = None
    for level in (lo, hi):
        x = probe(level)
        result.probes.append((level, x is not None))
        if x is not None:
            best = recompute_reported_solution(inst, x)
            hi = min(hi, best.max_drawdown)
            break
    if best is None:
        result.status = SolveStatus.INFEASIBLE
        result.wall_time = time.perf_counter() - start
        return result
    if hi - lo <= tol or best.max_drawdown <= lo:
        lo = min(lo, hi)
    while hi - lo > tol:
        if timed_out():
            break
        mid = 0.5 * (lo + hi)
        x = probe(mid)
        result.probes.append((mid, x is not None))
        if x is None:
            lo = mid
        else:
            cand = recompute_reported_solution(inst, x)
            if cand.max_drawdown <= best.max_drawdown:
                best = cand
            hi = min(mid, best.max_drawdown)
    result.holdings = best.holdings
    result.lower_bound = lo
    result.objective = best.objective
    result.gap = _relative_gap(hi, lo)
    result.status = SolveStatus.PROVEN_OPTIMAL if hi - lo <= tol else SolveStatus.FEASIBLE_WITH_GAP
    result.nodes = len(result.probes)
    result.wall_time = time.perf_counter() - start
    return result


# --------------------------------------------------------------------------
# Spatial branch-and-bound
# --------------------------------------------------------------------------

@dataclass(order=True)
class _Node:
    lb: float
    tiebreak: float
    seq: int
    dL: np.ndarray = field(compare=False)
    dU: np.ndarray = field(compare=False)
    ML: np.ndarray = field(compare=False)
    MU: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


class _Relaxation:
    """Node LP builder: the program's linear rows, ``w_t >= 100 (M_t - P_t)``
    and the McCormick envelope of ``w_t = d_t M_t`` over the node box."""

    def __init__(self, inst: ModelInstance):
        self.inst = inst
        n, T = inst.n_vars, inst.T
        self.n = n + T
        self.w = np.arange(n, n + T)
        self.d = np.array([b.d for b in inst.bilinear])
        self.M = np.array([b.M for b in inst.bilinear])
        self.P = np.array([b.P for b in inst.bilinear])
        pad = np.zeros((0, T))
        link = np.zeros((T, self.n))
        for t in range(T):
            link[t, self.M[t]] = 100.0
            link[t, self.P[t]] = -100.0
            link[t, self.w[t]] = -1.0
        self.A_ub = np.vstack([np.hstack([inst.A_ub, np.zeros((inst.A_ub.shape[0], T))]), link])
        self.b_ub = np.concatenate([inst.b_ub, np.zeros(T)])
        self.A_eq = np.hstack([inst.A_eq, np.zeros((inst.A_eq.shape[0], T))]) if inst.A_eq.size else pad
        self.b_eq = inst.b_eq
        self.c = np.concatenate([inst.c, np.zeros(T)])
        self.lower = np.concatenate([inst.lower, np.zeros(T)])
        self.upper = np.concatenate([inst.upper, np.zeros(T)])
        self.P_box = np.column_stack([inst.lower[self.P], inst.upper[self.P]])

    def tighten(self, node: _Node):
        """Propagate the node's peak box into the drawdown box."""
        Pmin, Pmax = self.P_box[:, 0], self.P_box[:, 1]
        node.dL = np.maximum(node.dL, 100.0 * (1.0 - Pmax / node.ML))
        node.dU = np.minimum(node.dU, 100.0 * (1.0 - Pmin / node.MU))
        return bool(np.all(node.dL <= node.dU + 1e-9))

    def lp(self, node: _Node) -> LinearProgram:
        T = self.inst.T
        dL, dU = node.dL, np.maximum(node.dU, node.dL)
        ML, MU = node.ML, node.MU
        A = np.zeros((4 * T, self.n))
        b = np.zeros(4 * T)
        for t in range(T):
            d, M, w = self.d[t], self.M[t], self.w[t]
            r = 4 * t
            A[r, [M, d, w]] = dL[t], ML[t], -1.0
            b[r] = dL[t] * ML[t]
            A[r + 1, [M, d, w]] = dU[t], MU[t], -1.0
            b[r + 1] = dU[t] * MU[t]
            A[r + 2, [M, d, w]] = -dU[t], -ML[t], 1.0
            b[r + 2] = -dU[t] * ML[t]
            A[r + 3, [M, d, w]] = -dL[t], -MU[t], 1.0
            b[r + 3] = -dL[t] * MU[t]
        lower, upper = self.lower.copy(), self.upper.copy()
        lower[self.d], upper[self.d] = dL, dU
        lower[self.M], upper[self.M] = ML, MU
        lower[self.w], upper[self.w] = dL * ML, dU * MU
        return LinearProgram(self.c, np.vstack([self.A_ub, A]), np.concatenate([self.b_ub, b]),
                             self.A_eq, self.b_eq, lower, upper)


def _evaluate(relax: _Relaxation, node: _Node):
    if not relax.tighten(node):
        return None
    sol = solve_lp(relax.lp(node))
    return sol if sol.optimal else None


def solve_spatial_bnb(instance: ModelInstance, bounds: VariableBounds,
                      gap_tol: float = GAP_TOL, time_limit: float | None = None, *,
                      node_limit: int | None = None, n_jobs: int = 1, seed: int = 0,
                      _start: float | None = None) -> SolveResult:
    """Best-first spatial branch-and-bound over the peak and drawdown boxes.

    Parameters
    ----------
    gap_tol : float
        Stop once ``(upper - lower) / max(|upper|, 1e-9) <= gap_tol``.
    time_limit : float, optional
        Seconds; the best incumbent is returned with its gap when reached.
    node_limit : int, optional
        Deterministic alternative to ``time_limit``.
    n_jobs : int
        Nodes evaluated concurrently per round. Rounds are merged in pop
        order, so a given ``n_jobs`` always yields the same search.
    seed : int
        Seeds tie-breaking between nodes with equal bounds.

    Notes
    -----
    Bounds are in objective units (``gamma_big * drawdown + costs``);
    ``node_lower_bounds`` (one per evaluated node, including pruned ones)
    and ``bound_history`` (the global bound at the start of each round)
    are divided by ``gamma_big``.
    """
    start = time.perf_counter() if _start is None else _start
    spec = instance.spec
    inst = bounds.apply(instance)
    relax = _Relaxation(inst)
    rng = np.random.default_rng(seed)
    G_cols = inst.layout["G"]
    abs_tol = 1e-9 * spec.gamma_big
    result = SolveResult(SolveStatus.TIMED_OUT, "spatial_bnb", bounds=bounds)

    upper, incumbent = np.inf, None

    def offer(x, cost_total):
        nonlocal upper, incumbent
        sol = recompute_reported_solution(inst, x)
        value = spec.gamma_big * sol.objective + cost_total
        if value < upper - 1e-12 * max(1.0, abs(value)):
            upper, incumbent = value, sol

    for x in bounds.witnesses:
        if inst.linear_residual(full_vector(inst, x)) <= 1e-6 * spec.capital:
            offer(x, transaction_costs(inst, x).sum())

    def timed_out():
        return time_limit is not None and time.perf_counter() - start >= time_limit

    seq = 0
    root = _Node(-np.inf, 0.0, seq, inst.lower[relax.d].copy(), inst.upper[relax.d].copy(),
                 inst.lower[relax.M].copy(), inst.upper[relax.M].copy())
    heap = [root]
    lower = -np.inf
    stalled = np.inf
    nodes = 0
    pool = ThreadPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None

    def tol_for(ub):
        return max(gap_tol * abs(ub), abs_tol)

    try:
        while heap:
            lower = heap[0].lb
            if np.isfinite(lower):
                result.bound_history.append(min(lower, stalled) / spec.gamma_big)
            if upper < np.inf and upper - lower <= tol_for(upper):
                break
            if timed_out() or (node_limit is not None and nodes >= node_limit):
                break
            batch = [heapq.heappop(heap) for _ in range(min(n_jobs, len(heap)))]
            if pool is None:
                sols = [_evaluate(relax, nd) for nd in batch]
            else:
                sols = list(pool.map(lambda nd: _evaluate(relax, nd), batch))
            for node, sol in zip(batch, sols):
                nodes += 1
                if sol is None:
                    continue
                z = sol.x
                lb = max(node.lb, sol.objective)
                result.node_lower_bounds.append(lb / spec.gamma_big)
                offer(inst.holdings(z[: inst.n_vars]), float(z[G_cols].sum()))
                if lb >= upper - tol_for(upper):
                    continue
                d, M, P, w = z[relax.d], z[relax.M], z[relax.P], z[relax.w]
                shortfall = 100.0 * (M - P) - d * M
                violated = shortfall > 1e-9 * np.maximum(1.0, 100.0 * M)
                if not violated.any():
                    continue
                gapw = np.where(violated, np.abs(w - d * M), -1.0)
                t = int(np.argmax(gapw))
                children = _split(node, t)
                if children is None:
                    stalled = min(stalled, lb)
                    continue
                for child in children:
                    seq += 1
                    child.lb, child.tiebreak, child.seq = lb, float(rng.random()), seq
                    heapq.heappush(heap, child)
        else:
            lower = upper
    finally:
        if pool is not None:
            pool.shutdown()

    result.nodes = nodes
    result.wall_time = time.perf_counter() - start
    if incumbent is None:
        if not heap and nodes > 0:
            result.status = SolveStatus.INFEASIBLE
        return result
    lower = min(lower, upper, stalled)
    result.holdings = incumbent.holdings
    result.objective = incumbent.objective
    result.lower_bound = lower / spec.gamma_big
    result.bound_history.append(result.lower_bound)
    gap = 0.0 if upper - lower <= abs_tol else _relative_gap(upper, lower)
    result.gap = gap
    result.status = SolveStatus.PROVEN_OPTIMAL if gap <= gap_tol else SolveStatus.FEASIBLE_WITH_GAP
    return result


def _split(node: _Node, t: int):
    """Bisect the peak interval of day ``t``; fall back to the drawdown
    interval once the peak interval has collapsed.

    Midpoint splits close the envelope gap much faster than splits at the
    LP value on these programs.
    """
    ML, MU = node.ML[t], node.MU[t]
    dL, dU = node.dL[t], node.dU[t]
    if MU - ML > 1e-10 * max(1.0, MU):
        key, a, b = "M", ML, MU
    elif dU - dL > 1e-10:
        key, a, b = "d", dL, dU
    else:
        return None
    cut = 0.5 * (a + b)
    left = _Node(node.lb, 0.0, 0, node.dL.copy(), node.dU.copy(), node.ML.copy(), node.MU.copy(),
                 node.depth + 1)
    right = _Node(node.lb, 0.0, 0, node.dL.copy(), node.dU.copy(), node.ML.copy(), node.MU.copy(),
                  node.depth + 1)
    if key == "M":
        left.MU[t], right.ML[t] = cut, cut
    else:
        left.dU[t], right.dL[t] = cut, cut
    return left, right


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------

def pin_costs(instance: ModelInstance, x) -> np.ndarray:
    """Rescale holdings so that exact transaction costs absorb the whole
    balance: ``V_T @ x + costs(x) = C``.

    Drawdowns and proportion limits are invariant to the scale of ``x``,
    so any slack the solver left in the cost columns is returned to the
    portfolio without changing the objective. Returns ``x`` unchanged if
    the rescaled point would break the cost cap.
    """
    spec = instance.spec
    VT = instance.prices[:, -1]
    x = np.asarray(x, float)
    C = spec.capital

    def excess(a):
        return VT @ (a * x) + transaction_costs(instance, a * x).sum() - C

    e1 = excess(1.0)
    if abs(e1) <= 1e-13 * C or VT @ x <= 0:
        return x
    lo, hi = 1.0, 1.0
    if e1 < 0:
        while excess(hi) < 0:
            hi *= 2.0
    else:
        while excess(lo) > 0:
            lo *= 0.5
    alpha = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    scaled = alpha * x
    if transaction_costs(instance, scaled).sum() > spec.gamma * C * (1 + 1e-12) + 1e-12:
        return x
    return scaled


def default_time_limit(n_assets: int) -> float:
    """``max(500, 7N)`` seconds."""
    return float(max(500, 7 * n_assets))


def solve(instance: ModelInstance, *, gap_tol: float = GAP_TOL, time_limit: float | None = None,
          bisection_tol: float = BISECTION_TOL, node_limit: int | None = None,
          n_jobs: int = 1, seed: int = 0) -> SolveResult:
    """Tighten bounds, route MinMax to bisection and MinAvg/Weighted to
    spatial branch-and-bound, then report exact recomputed values."""
    start = time.perf_counter()
    method = "bisection" if instance.spec.objective == "minmax" else "spatial_bnb"
    if time_limit is not None and time_limit <= 0:
        return SolveResult(SolveStatus.TIMED_OUT, method)
    try:
        bounds = tighten_bounds(instance)
    except Infeasible as exc:
        logger.info("instance infeasible: %s", exc)
        return SolveResult(SolveStatus.INFEASIBLE, method, wall_time=time.perf_counter() - start)
    if method == "bisection":
        res = solve_minmax_bisection(instance, bounds, bisection_tol, time_limit, _start=start)
    else:
        res = solve_spatial_bnb(instance, bounds, gap_tol, time_limit, node_limit=node_limit,
                                n_jobs=n_jobs, seed=seed, _start=start)
    if res.holdings is not None:
        x = pin_costs(instance, res.holdings)
        rep = recompute_reported_solution(instance, x)
        res.holdings, res.costs, res.reported = x, rep.costs, rep
        res.objective = rep.objective
    res.wall_time = time.perf_counter() - start
    return res
