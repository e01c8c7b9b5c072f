"""Derivative of the control-to-state map through the weighted problem.

At a state y the derivative delta = S'(u) h solves

    (delta, z)_A + sum_i M_ii w_i delta_i z_i = (M h, z)   for all z in V_y,

with weight w_i = alpha |y_i|^(alpha-1) off the dead zone and V_y the
nodal functions vanishing on the dead zone (homogeneous Dirichlet there).
The weight is used as is, without capping, however large it gets. The
restricted system is factored once by sparse LU: near the dead zone the
weights blow up and CG stalls above the accuracy the identity checks need.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, h01_norm, lq_norm
from .scalar_kernel import Exponent
from .state_solver import dead_zone, default_dead_zone_eps, solve_state

# difference quotients need state solves well below the quotient resolution;
# 1e-12*tau sits under the double-precision residual floor, while a 1e-12
# solve adds only about 2e-12/tau to a quotient
QUOTIENT_TOL_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class SensitivitySystem:
    grid: Grid
    alpha: float
    y: np.ndarray
    mask: np.ndarray  # dead-zone nodes
    weights: np.ndarray  # alpha |y|^(alpha-1) on kept nodes, 0 on the mask
    keep: np.ndarray  # indices of non-masked nodes
    matrix: sp.csr_matrix  # A + M diag(w) restricted to `keep`

    @property
    def empty(self):
        return self.keep.size == 0

    @cached_property
    def _lu(self):
        return spla.splu(self.matrix.tocsc())

    def solve(self, rhs):
        """Solve the restricted system for full-length right-hand side(s); zero on the mask.

        `rhs` is (m,) or (m, k) with one right-hand side per column.
        """
        out = np.zeros(np.shape(rhs))
        if self.empty:
            return out
        b = rhs[self.keep]
        x = self._lu.solve(b)
        x += self._lu.solve(b - self.matrix @ x)  # one refinement step
        out[self.keep] = x
        return out

    def inner(self, v, w):
        """Weighted inner product (v, w)_A + sum M w_i v_i w_i."""
        g = self.grid
        return float(v @ (g.stiffness @ w) + np.sum(g.mass * self.weights * v * w))


def build_sensitivity(grid, y, alpha, eps_dead=None):
    alpha = Exponent(alpha)
    grid.check(y)
    eps = default_dead_zone_eps(y) if eps_dead is None else eps_dead
    mask, _ = dead_zone(grid, y, eps)
    keep = np.flatnonzero(~mask)
    weights = np.zeros(grid.m)
    weights[keep] = alpha * np.abs(y[keep]) ** (alpha - 1.0)
    A = grid.stiffness.matrix
    V = A[keep][:, keep] + sp.diags(grid.mass[keep] * weights[keep])
    return SensitivitySystem(grid, alpha, np.array(y), mask, weights, keep, V.tocsr())


def apply_S_prime(sys, h):
    """delta = S'(u) h; exactly zero on the dead zone."""
    sys.grid.check(h)
    return sys.solve(sys.grid.mass * h)


def quotient_tol(tau):
    return max(1e-12 * tau, QUOTIENT_TOL_FLOOR)


def difference_quotient(problem, h, tau, y_base=None, tol=None):
    """(S(u + tau h) - S(u)) / tau from two state solves.

    Returns (delta_tau, y_base, y_perturbed). Pass `y_base` to reuse a
    solution of the unperturbed problem.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    problem.grid.check(h)
    tol = quotient_tol(tau) if tol is None else tol
    if y_base is None:
        y_base, _ = solve_state(problem, tol=tol, polish=True)
    if not np.any(h):
        return np.zeros_like(y_base), y_base, y_base.copy()
    y_tau, _ = solve_state(problem.with_control(problem.u + tau * h), tol=tol, y0=y_base, polish=True)
    return (y_tau - y_base) / tau, y_base, y_tau


@dataclass
class StudyTable:
    """Rows of (parameter, measured value) with a status flag."""

    columns: tuple
    rows: list = field(default_factory=list)
    status: str = "ok"
    meta: dict = field(default_factory=dict)

    @property
    def params(self):
        return np.array([r[0] for r in self.rows], dtype=float)

    @property
    def values(self):
        return np.array([r[1] for r in self.rows], dtype=float)

    def loglog_slope(self):
        """Least-squares slope of log(value) against log(param)."""
        p, v = self.params, self.values
        if np.any(v <= 0):
            return math.nan
        return float(np.polyfit(np.log(p), np.log(v), 1)[0])

    def to_csv(self, fh):
        fh.write(",".join(self.columns) + "\n")
        for row in self.rows:
            fh.write(",".join(repr(float(c)) for c in row) + "\n")


def _check_taus(taus):
    taus = [float(t) for t in taus]
    if not taus or any(t <= 0 for t in taus) or any(a <= b for a, b in zip(taus, taus[1:])):
        raise ValueError("tau list must be positive and strictly decreasing")
    return taus


def frechet_remainder_study(problem, h, taus, eps_dead=None):
    """r(tau) = ||S(u + tau h) - S(u) - tau S'(u) h||_A / tau."""
    taus = _check_taus(taus)
    g = problem.grid
    table = StudyTable(("tau", "value"))
    y, _ = solve_state(problem, tol=quotient_tol(min(taus)), polish=True)
    delta = apply_S_prime(build_sensitivity(g, y, problem.alpha, eps_dead), h)
    for tau in taus:
        dq, _, _ = difference_quotient(problem, h, tau, y_base=y, tol=quotient_tol(tau))
        table.rows.append((tau, h01_norm(g, dq - delta)))
    table.meta["derivative_h01"] = h01_norm(g, delta)
    return table


def dead_zone_decay_study(problem, h, taus, zone=None):
    """L^(alpha+1) norm of the difference quotients over the dead zone.

    `zone` is a boolean node mask; by default the dead zone of S(u).
    An empty zone yields a table with status "empty_dead_zone".
    """
    taus = _check_taus(taus)
    g = problem.grid
    table = StudyTable(("tau", "value"))
    y, _ = solve_state(problem, tol=quotient_tol(min(taus)), polish=True)
    if zone is None:
        zone, _ = dead_zone(g, y)
    zone = np.asarray(zone, dtype=bool)
    if not zone.any():
        table.status = "empty_dead_zone"
        return table
    q = problem.alpha + 1.0
    for tau in taus:
        dq, _, _ = difference_quotient(problem, h, tau, y_base=y, tol=quotient_tol(tau))
        table.rows.append((tau, lq_norm(g, np.where(zone, dq, 0.0), q)))
    table.meta["slope"] = table.loglog_slope()
    table.meta["bound_slope"] = (1.0 - problem.alpha) / (1.0 + problem.alpha)
    return table
