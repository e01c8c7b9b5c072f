"""Tracking-type control problem: adjoint, reduced gradient, projected
gradient descent and first-order certificates.

    J(y, u) = 1/2 ||y - y_D||^2 + nu/2 ||u||^2,   u_a <= u <= u_b,

with y = S(u) the state. The adjoint p solves the weighted problem of the
sensitivity module with right-hand side M (y - y_D), and p + nu u is the
nodal representative of the reduced derivative.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .grid import Grid, Interval, h01_inner, l2_inner
from .scalar_kernel import Exponent
from .sensitivity import StudyTable, build_sensitivity
from .state_solver import StateProblem, pde_residual, solve_state

# state solves inside the optimizer are polished to rounding level so that
# objective differences and gradients stay clean down to KKT tolerances
STATE_TOL = 1e-12


def _bound(grid, value):
    b = np.broadcast_to(np.asarray(value, dtype=float), (grid.m,)).copy()
    if np.any(np.isnan(b)):
        raise ValueError("box bounds must not be NaN")
    return b


@dataclass(frozen=True, eq=False)
class ControlProblem:
    grid: Grid
    alpha: float
    y_d: np.ndarray
    nu: float
    u_a: np.ndarray = -math.inf
    u_b: np.ndarray = math.inf
    eps_dead: float = None

    def __post_init__(self):
        Exponent(self.alpha)
        self.grid.check(self.y_d)
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        object.__setattr__(self, "u_a", _bound(self.grid, self.u_a))
        object.__setattr__(self, "u_b", _bound(self.grid, self.u_b))
        if np.any(self.u_a > self.u_b):
            raise ValueError("need u_a <= u_b at every node")

    def state_problem(self, u):
        return StateProblem(self.grid, self.alpha, np.asarray(u, dtype=float))


def objective(cp, y, u):
    """Value and nodal partial derivatives (y - y_D, nu u)."""
    cp.grid.check(y, u)
    dy = y - cp.y_d
    value = 0.5 * l2_inner(cp.grid, dy, dy) + 0.5 * cp.nu * l2_inner(cp.grid, u, u)
    return value, dy, cp.nu * u


def objective_change(cp, y_new, u_new, y, u):
    """J(y_new, u_new) - J(y, u) without subtracting two nearly equal values."""
    M = cp.grid.mass
    return float(
        0.5 * np.sum(M * (y_new - y) * (y_new + y - 2.0 * cp.y_d)) + 0.5 * cp.nu * np.sum(M * (u_new - u) * (u_new + u))
    )


def solve_adjoint(sys, dJ_dy):
    """p in the discrete weighted space with (p, z)_V = (dJ_dy, z)_M; zero on the dead zone."""
    sys.grid.check(dJ_dy)
    return sys.solve(sys.grid.mass * dJ_dy)


def _state(cp, u, y0=None):
    y, _ = solve_state(cp.state_problem(u), tol=STATE_TOL, y0=y0, polish=True)
    return y


def reduced_gradient(cp, u, y0=None):
    """Returns (g, p, y) with g = p + nu u."""
    cp.grid.check(u)
    y = _state(cp, u, y0)
    sys = build_sensitivity(cp.grid, y, cp.alpha, cp.eps_dead)
    p = solve_adjoint(sys, y - cp.y_d)
    return p + cp.nu * u, p, y


def project_box(cp, u):
    return np.minimum(np.maximum(u, cp.u_a), cp.u_b)


@dataclass
class OptimizeHistory:
    objective: list = field(default_factory=list)
    kkt: list = field(default_factory=list)
    step: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    message: str = ""

    def to_csv(self, fh):
        fh.write("iter,objective,kkt_residual,step\n")
        for k, (j, r, s) in enumerate(zip(self.objective, self.kkt, self.step)):
            fh.write(f"{k},{j!r},{r!r},{s!r}\n")


def _kkt_from(cp, u, g):
    d = u - project_box(cp, u - g)
    return math.sqrt(l2_inner(cp.grid, d, d))


def projected_gradient_solve(cp, u0, tol=1e-8, max_iter=500, armijo=1e-4, max_backtracks=60):
    """Projected gradient with Armijo backtracking from step 1/nu.

    A trial u+ = P(u - s g) is accepted when
    J(u+) - J(u) <= -(armijo / s) ||u+ - u||_M^2. Stops once the residual
    ||u - P(u - g)||_M drops to `tol`. On exhaustion the last iterate is
    returned with `converged` False. Row k of the history holds the
    objective and residual of iterate k and the step that produced it
    (0 for the start).
    """
    g_ = cp.grid
    u = project_box(cp, np.asarray(u0, dtype=float))
    g_.check(u)
    hist = OptimizeHistory()
    g, p, y = reduced_gradient(cp, u)
    J, _, _ = objective(cp, y, u)
    res = _kkt_from(cp, u, g)
    hist.objective.append(J)
    hist.kkt.append(res)
    hist.step.append(0.0)
    step0 = 1.0 / cp.nu
    for k in range(1, max_iter + 1):
        if res <= tol:
            hist.converged = True
            break
        s = step0
        for _ in range(max_backtracks):
            u_new = project_box(cp, u - s * g)
            y_new = _state(cp, u_new, y0=y)
            du = u_new - u
            dJ = objective_change(cp, y_new, u_new, y, u)
            if dJ <= -(armijo / s) * l2_inner(g_, du, du):
                break
            s *= 0.5
        else:
            hist.message = "line search failed"
            break
        u = u_new
        g, p, y = reduced_gradient(cp, u, y0=y_new)
        J = J + dJ
        res = _kkt_from(cp, u, g)
        hist.objective.append(J)
        hist.kkt.append(res)
        hist.step.append(s)
        hist.iterations = k
    else:
        hist.converged = res <= tol
    if not hist.converged and not hist.message:
        hist.message = f"no convergence in {max_iter} iterations"
    return u, hist


def kkt_residual(cp, u):
    """||u - P(u - (p + nu u))||_M and the residuals of the KKT system's parts.

    Components: `state` (dual-norm PDE residual), `adjoint` (Euclidean
    residual of the restricted weighted system), `projection`
    (||u - max(u_a, min(u_b, -p/nu))||_M).
    """
    g, p, y = reduced_gradient(cp, u)
    sys = build_sensitivity(cp.grid, y, cp.alpha, cp.eps_dead)
    M = cp.grid.mass
    keep = sys.keep
    r_adj = sys.matrix @ p[keep] - (M * (y - cp.y_d))[keep]
    proj = u - np.maximum(cp.u_a, np.minimum(cp.u_b, -p / cp.nu))
    comps = {
        "state": pde_residual(cp.state_problem(u), y),
        "adjoint": float(np.linalg.norm(r_adj)),
        "projection": math.sqrt(l2_inner(cp.grid, proj, proj)),
    }
    return _kkt_from(cp, u, g), comps


def _sample_box(cp, u, count, rng):
    # unbounded sides get a unit-width window around u
    lo = np.where(np.isfinite(cp.u_a), cp.u_a, u - 1.0)
    hi = np.where(np.isfinite(cp.u_b), cp.u_b, u + 1.0)
    V = [lo + (hi - lo) * rng.random(cp.grid.m) for _ in range(count)]
    for i in range(cp.grid.m):
        for end in (lo[i], hi[i]):
            v = u.copy()
            v[i] = end
            V.append(v)
    return np.array(V).T


def bouligand_gap(cp, u, sample_count=200, seed=0):
    """min over sampled v in the box of (y - y_D, S'(u)(v - u))_M + nu (u, v - u)_M.

    Samples are `sample_count` seeded uniform draws plus the 2m single-node
    moves to either bound. Directional derivatives go through S'(u) itself,
    not through the adjoint.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    u = project_box(cp, np.asarray(u, dtype=float))
    y = _state(cp, u)
    sys = build_sensitivity(cp.grid, y, cp.alpha, cp.eps_dead)
    M = cp.grid.mass
    D = _sample_box(cp, u, sample_count, np.random.default_rng(seed)) - u[:, None]
    delta = sys.solve(M[:, None] * D)
    vals = (M * (y - cp.y_d)) @ delta + cp.nu * ((M * u) @ D)
    return float(np.min(vals))


def stampacchia_truncation_check(sys, p, dJ_dy, k_list, rtol=1e-10):
    """For p_k = p - clip(p, -k, k) tabulate ||p_k||_A^2, (p_k, p_k)_V and
    (dJ_dy, p_k)_M; the first must not exceed the second, nor the second
    the third. Status is "ok" or "violated" at relative tolerance `rtol`."""
    table = StudyTable(("k", "h01_sq", "weighted_sq", "rhs"))
    for k in k_list:
        if k < 0:
            raise ValueError("truncation levels must be nonnegative")
        pk = p - np.clip(p, -k, k)
        a = h01_inner(sys.grid, pk, pk)
        b = sys.inner(pk, pk)
        c = l2_inner(sys.grid, dJ_dy, pk)
        table.rows.append((k, a, b, c))
        slack = rtol * max(abs(a), abs(b), abs(c))
        if a > b + slack or b > c + slack:
            table.status = "violated"
    return table


def admissible_adjoint_exponents(s, d):
    """Lebesgue exponents r with p in L^r when dJ/dy lies in L^s, dimension d."""
    d = int(d)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    s = math.inf if s == math.inf else Fraction(s)
    if not s > max(1, Fraction(2 * d, d + 2)):
        raise ValueError(f"need s > max(1, 2d/(d+2)), got s={s}, d={d}")
    one = Fraction(1)
    half_d = Fraction(d, 2)
    if s > half_d:
        return Interval(one, math.inf, True, True)
    if s == half_d:
        return Interval(one, math.inf, True, False)
    return Interval(one, 1 / (1 / s - Fraction(2, d)), True, False)
