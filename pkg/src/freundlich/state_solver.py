"""Discrete state equation  A y + M phi(y) = M u  (homogeneous Dirichlet).

The equation is the optimality condition of the strictly convex energy

    E(y) = 1/2 y^T A y + sum_i M_ii |y_i|^(a+1)/(a+1) - (M u)^T y,

which is what both solvers minimize. Under the lumped mass the
nonsmooth part is nodally separable, so its prox is the exact scalar map
from `scalar_kernel`.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, dual_norm
from .linsolve import ConvergenceError
from .scalar_kernel import Exponent, phi, potential, potential_change, prox_potential

METHODS = ("accel_prox", "coord_descent")

# give up once the cheap residual has not improved for this many iterations;
# that only happens when tol sits below the rounding floor
STALL_WINDOW = 3000


@dataclass(frozen=True)
class StateProblem:
    grid: Grid
    alpha: float
    u: np.ndarray

    def __post_init__(self):
        Exponent(self.alpha)
        self.grid.check(self.u)

    def with_control(self, u):
        return StateProblem(self.grid, self.alpha, np.asarray(u, dtype=float))


@dataclass
class SolveReport:
    iterations: int
    energy: float
    residual: float
    method: str
    wall_time: float
    restarts: int = 0
    # per-iteration energy changes of accepted iterates (accel_prox only)
    energy_changes: list = field(default_factory=list, repr=False)


def energy(problem, y):
    g = problem.grid
    g.check(y)
    M = g.mass
    return float(0.5 * y @ (g.stiffness @ y) + np.sum(M * potential(y, problem.alpha)) - (M * problem.u) @ y)


def residual_vector(problem, y, u=None):
    g = problem.grid
    u = problem.u if u is None else u
    return g.stiffness @ y + g.mass * (phi(y, problem.alpha) - u)


def pde_residual(problem, y, u=None):
    """Dual norm sqrt(r^T A^{-1} r) of r = A y + M phi(y) - M u."""
    g = problem.grid
    g.check(y)
    if u is not None:
        g.check(u)
    return dual_norm(g, residual_vector(problem, y, u))


def vi_gap(problem, y, v):
    """(y, v - y)_A + sum M pot(v) - sum M pot(y) - (M u, v - y).

    Nonnegative for every v exactly when y solves the state equation.
    """
    g = problem.grid
    g.check(y, v)
    M = g.mass
    d = v - y
    return float(
        y @ (g.stiffness @ d)
        + np.sum(M * potential(v, problem.alpha))
        - np.sum(M * potential(y, problem.alpha))
        - (M * problem.u) @ d
    )


def default_dead_zone_eps(y):
    return 1e-10 * max(1.0, float(np.max(np.abs(y))) if len(y) else 0.0)


def dead_zone(grid, y, eps=None):
    """Nodes with |y_i| <= eps, and their share of the interior measure."""
    grid.check(y)
    eps = default_dead_zone_eps(y) if eps is None else eps
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    mask = np.abs(y) <= eps
    M = grid.mass
    return mask, float(np.sum(M[mask]) / np.sum(M))


class _ResidualBounds:
    """Cheap two-sided bounds on the dual norm from the Euclidean norm,
    plus stall tracking."""

    def __init__(self, grid):
        self.grid = grid
        self.lo = 1.0 / math.sqrt(1.01 * grid.stiffness_lambda_max)
        self.hi = 1.0 / math.sqrt(grid.stiffness_lambda_min)
        self.best = math.inf
        self.best_k = 0

    def stalled(self, k, rn):
        if rn < 0.99 * self.best:
            self.best, self.best_k = rn, k
        return k - self.best_k > STALL_WINDOW


def _solve_accel_prox(problem, tol, max_iter, y0):
    g = problem.grid
    A = g.stiffness.matrix
    M = g.mass
    b = M * problem.u
    alpha = problem.alpha
    # 1% margin: the power-iteration estimate sits just below the true value
    step = 1.0 / (1.01 * g.stiffness_lambda_max)
    tprox = step * M
    bounds = _ResidualBounds(g)

    def energy_change(x_new, x):
        # E(x_new) - E(x) without cancelling two O(1) energies
        d = x_new - x
        return d @ (0.5 * (A @ (x_new + x)) - b) + np.sum(M * potential_change(x_new, x, alpha))

    x = np.zeros(g.m) if y0 is None else np.array(y0, dtype=float)
    z = x.copy()
    theta = 1.0
    restarts = 0
    changes = []
    res = math.inf
    for k in range(1, max_iter + 1):
        x_new = prox_potential(z - step * (A @ z - b), tprox, alpha, x0=x)
        dE = energy_change(x_new, x)
        if dE > 0:
            # function-value restart: a plain prox-gradient step from x descends
            restarts += 1
            z = x
            theta = 1.0
            x_new = prox_potential(z - step * (A @ z - b), tprox, alpha, x0=x)
            dE = energy_change(x_new, x)
        # A x+ + M phi(x+) - b, read off the prox optimality condition
        r = A @ (x_new - z) + (z - x_new) / step
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        z = x_new + ((theta - 1.0) / theta_new) * (x_new - x)
        x, theta = x_new, theta_new
        changes.append(dE)
        rn = np.linalg.norm(r)
        if rn * bounds.hi <= tol or (rn * bounds.lo <= tol and k % 10 == 0):
            res = pde_residual(problem, x)
            if res <= tol:
                return x, k, restarts, changes, res
        if bounds.stalled(k, rn):
            break
    raise ConvergenceError(
        f"accelerated prox did not reach residual {tol:.1e} ({k} iterations)", iterations=k, residual=res
    )


def _color_classes(grid):
    if grid.dim == 1:
        parity = np.arange(grid.m) % 2
    else:
        k = grid.n - 1
        idx = np.arange(grid.m)
        parity = (idx % k + idx // k) % 2
    return [np.flatnonzero(parity == c) for c in (0, 1)]


def _solve_coord_descent(problem, tol, max_iter, y0):
    """Cyclic coordinate descent in red-black order.

    Same-colour nodes do not interact through A, so updating a colour
    class at once equals visiting its nodes one after another. Each node
    update minimizes E exactly in that coordinate via the scalar prox.
    """
    g = problem.grid
    A = g.stiffness.matrix
    M = g.mass
    b = M * problem.u
    alpha = problem.alpha
    diag = A.diagonal()
    classes = [(idx, A[idx], diag[idx], M[idx] / diag[idx]) for idx in _color_classes(g)]
    bounds = _ResidualBounds(g)
    y = np.zeros(g.m) if y0 is None else np.array(y0, dtype=float)
    res = math.inf
    for k in range(1, max_iter + 1):
        for idx, rows, d, t in classes:
            off = rows @ y - d * y[idx]
            y[idx] = prox_potential((b[idx] - off) / d, t, alpha, x0=y[idx])
        r = residual_vector(problem, y)
        rn = np.linalg.norm(r)
        if rn * bounds.hi <= tol or (rn * bounds.lo <= tol and k % 10 == 0):
            res = pde_residual(problem, y)
            if res <= tol:
                return y, k, 0, [], res
        if bounds.stalled(k, rn):
            break
    raise ConvergenceError(
        f"coordinate descent did not reach residual {tol:.1e} ({k} sweeps)", iterations=k, residual=res
    )


def newton_polish(problem, y, max_steps=8):
    """Newton steps on the nodes off the dead-zone threshold, others frozen.

    The equation is smooth away from y = 0, so a few steps from a converged
    first-order iterate drive the residual to rounding level. A step is
    kept only if it lowers the dual-norm residual and flips no sign.
    Returns (y, residual).
    """
    g = problem.grid
    A = g.stiffness.matrix
    M = g.mass
    alpha = problem.alpha
    y = np.array(y, dtype=float)
    res = pde_residual(problem, y)
    free = np.flatnonzero(np.abs(y) > default_dead_zone_eps(y))
    if free.size == 0:
        return y, res
    A_ff = A[free][:, free]
    for _ in range(max_steps):
        r = residual_vector(problem, y)
        w = M[free] * alpha * np.abs(y[free]) ** (alpha - 1.0)
        step = spla.spsolve((A_ff + sp.diags(w)).tocsc(), r[free])
        trial = y.copy()
        trial[free] -= step
        if np.any(np.sign(trial[free]) != np.sign(y[free])):
            break
        res_new = pde_residual(problem, trial)
        if not res_new < res:
            break
        y, res = trial, res_new
    return y, res


def solve_state(problem, method="accel_prox", tol=1e-10, max_iter=200_000, y0=None, polish=False):
    """Solve the discrete state equation to dual-norm residual <= tol.

    Returns (y, SolveReport). `y0` warm-starts either method. With
    `polish`, Newton steps off the dead zone follow (see `newton_polish`)
    and the report carries the final residual.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    if not np.any(problem.u):
        y = np.zeros(problem.grid.m)
        return y, SolveReport(0, 0.0, 0.0, method, time.perf_counter() - t0)
    solver = _solve_accel_prox if method == "accel_prox" else _solve_coord_descent
    y, its, restarts, changes, res = solver(problem, tol, max_iter, y0)
    if polish:
        y, res = newton_polish(problem, y)
    report = SolveReport(its, energy(problem, y), res, method, time.perf_counter() - t0, restarts, changes)
    return y, report


# ---------------------------------------------------------------------------
# manufactured solutions (1D)


def _plateau_parts(x):
    a = np.maximum(x - 0.5, 0.0)
    b = 1.0 - x
    y = 256.0 * a**4 * b**4
    ypp = 256.0 * (12 * a**2 * b**4 - 32 * a**3 * b**3 + 12 * a**4 * b**2)
    return y, ypp


def manufactured_instance(name, grid, alpha):
    """Right-hand side and exact solution of a manufactured 1D instance.

    sine:    y = sin(pi x) > 0,  u = pi^2 sin(pi x) + sin(pi x)^alpha
    plateau: y = 256 (x - 1/2)_+^4 (1 - x)^4, identically zero on [0, 1/2],
             u = -y'' + y^alpha on (1/2, 1) and u = 0 on [0, 1/2]
    """
    alpha = Exponent(alpha)
    if grid.dim != 1:
        raise ValueError("manufactured instances are one-dimensional")
    x = grid.coords[:, 0]
    if name == "sine":
        y = np.sin(np.pi * x)
        u = np.pi**2 * y + y**alpha
    elif name == "plateau":
        y, ypp = _plateau_parts(x)
        u = np.where(x > 0.5, -ypp + phi(y, alpha), 0.0)
    else:
        raise ValueError(f"unknown manufactured instance {name!r}")
    return u, y
