"""Linear programming engine.

Thin deterministic wrapper around the HiGHS dual simplex shipped with SciPy.
Every optimal result is checked for primal feasibility and for agreement
between the primal and dual objectives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .exceptions import LpError, LpIterationLimit

FEAS_TOL = 1e-7
OPT_TOL = 1e-7


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """``min/max c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``,
    ``lower <= x <= upper``.

    ``lower``/``upper`` may hold ``-inf``/``inf``. Empty constraint blocks
    may be passed as ``None``.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        if self.lower is None:
            self.lower = np.zeros(n)
        if self.upper is None:
            self.upper = np.full(n, np.inf)
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        self.A_ub, self.b_ub = _block(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = _block(self.A_eq, self.b_eq, n, "eq")
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bounds must have one entry per variable")
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        for name in ("c", "A_ub", "b_ub", "A_eq", "b_eq", "lower", "upper"):
            if np.isnan(getattr(self, name)).any():
                raise ValueError(f"NaN in {name}")

    @property
    def n_vars(self) -> int:
        return self.c.size


def _block(A, b, n, name):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape != (b.size, n):
        raise ValueError(f"A_{name} has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    objective: float | None
    dual_objective: float | None = None
    max_violation: float = 0.0
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def max_violation(lp: LinearProgram, x) -> float:
    """Largest absolute constraint or bound violation of ``x``."""
    viol = [0.0]
    if lp.b_ub.size:
        viol.append(float(np.max(lp.A_ub @ x - lp.b_ub)))
    if lp.b_eq.size:
        viol.append(float(np.max(np.abs(lp.A_eq @ x - lp.b_eq))))
    viol.append(float(np.max(lp.lower - x, initial=0.0)))
    viol.append(float(np.max(x - lp.upper, initial=0.0)))
    return max(viol)


def _dual_objective(lp, res, sign):
    y = 0.0
    if lp.b_ub.size:
        y += lp.b_ub @ res.ineqlin.marginals
    if lp.b_eq.size:
        y += lp.b_eq @ res.eqlin.marginals
    lo, up = lp.lower, lp.upper
    ml, mu = res.lower.marginals, res.upper.marginals
    y += np.sum(np.where(np.isfinite(lo), lo, 0.0) * ml)
    y += np.sum(np.where(np.isfinite(up), up, 0.0) * mu)
    return sign * float(y)


def solve_lp(lp: LinearProgram, *, feas_tol: float = FEAS_TOL, opt_tol: float = OPT_TOL,
             max_iter: int | None = None) -> LpSolution:
    """Solve ``lp`` with HiGHS dual simplex.

    Raises
    ------
    LpIterationLimit
        If the iteration cap is reached.
    LpError
        On a numerical failure, or if an optimal point violates the
        constraints by more than ``100 * feas_tol`` relative to the data
        scale, or if primal and dual objectives disagree by more than
        1e-6 relative.
    """
    sign = 1.0 if lp.sense == "min" else -1.0
    options = {
        "primal_feasibility_tolerance": feas_tol,
        "dual_feasibility_tolerance": opt_tol,
        "presolve": True,
    }
    if max_iter is not None:
        options["maxiter"] = max_iter
    res = linprog(
        sign * lp.c,
        A_ub=lp.A_ub if lp.b_ub.size else None,
        b_ub=lp.b_ub if lp.b_ub.size else None,
        A_eq=lp.A_eq if lp.b_eq.size else None,
        b_eq=lp.b_eq if lp.b_eq.size else None,
        bounds=np.column_stack([lp.lower, lp.upper]),
        method="highs-ds",
        options=options,
    )
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, None, None, iterations=nit)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, None, None, iterations=nit)
    if res.status == 1:
        raise LpIterationLimit(f"iteration limit reached after {nit} iterations")
    if res.status != 0:
        raise LpError(f"LP solve failed (status {res.status}): {res.message}")

    x = np.asarray(res.x, dtype=float)
    primal = float(lp.c @ x)
    viol = max_violation(lp, x)
    scale = max(1.0, float(np.max(np.abs(x), initial=0.0)),
                float(np.max(np.abs(lp.b_ub), initial=0.0)),
                float(np.max(np.abs(lp.b_eq), initial=0.0)))
    if viol > 100 * feas_tol * scale:
        raise LpError(
            f"optimal point violates constraints by {viol:.3e} "
            f"(scale {scale:.3e}, coefficient range "
            f"{_coef_range(lp)})"
        )
    dual = _dual_objective(lp, res, sign)
    if abs(primal - dual) > 1e-6 * max(1.0, abs(primal)):
        raise LpError(f"duality gap too large: primal {primal!r}, dual {dual!r}")
    return LpSolution(LpStatus.OPTIMAL, x, primal, dual, viol, nit)


def _coef_range(lp):
    parts = [np.abs(lp.A_ub[lp.A_ub != 0]), np.abs(lp.A_eq[lp.A_eq != 0])]
    vals = np.concatenate(parts)
    if vals.size == 0:
        return "empty"
    return f"[{vals.min():.2e}, {vals.max():.2e}]"
