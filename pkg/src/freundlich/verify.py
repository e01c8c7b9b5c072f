"""Executable property suite behind the `verify` command.

Each check returns (passed, detail). `run_suite` runs them all on one
seeded generator and returns (name, passed, detail) triples in a fixed order.
"""

import math

import numpy as np

from .adjoint_optimizer import (
    ControlProblem,
    admissible_adjoint_exponents,
    bouligand_gap,
    kkt_residual,
    projected_gradient_solve,
    reduced_gradient,
    stampacchia_truncation_check,
)
from .grid import Interval, embedding_exponents, h01_norm, hminus1_norm, l2_inner, make_grid
from .scalar_kernel import expansion_residuals, phi, potential, prox_potential
from .sensitivity import apply_S_prime, build_sensitivity, difference_quotient
from .state_solver import StateProblem, solve_state, vi_gap


def check_phi_odd_monotone(ctx):
    s = np.sort(ctx.rng.uniform(-5, 5, 400))
    ok = True
    for a in (0.25, 0.5, 0.75):
        v = phi(s, a)
        ok &= bool(np.all(np.diff(v) >= 0) and np.array_equal(phi(-s, a), -v))
    return ok, "400 points per exponent"


def check_potential_derivative(ctx):
    eps = 1e-6
    s = ctx.rng.uniform(0.1, 3, 50) * ctx.rng.choice([-1, 1], 50)
    err = max(
        float(np.max(np.abs((potential(s + eps, a) - potential(s - eps, a)) / (2 * eps) - phi(s, a))))
        for a in (0.25, 0.5, 0.75)
    )
    return err <= 1e-6, f"max error {err:.2e}"


def check_prox(ctx):
    v = ctx.rng.uniform(-10, 10, (2, 500))
    t = ctx.rng.uniform(0.01, 5, 500)
    worst_res, ok = 0.0, True
    for a in (0.25, 0.5, 0.75):
        x1, x2 = prox_potential(v[0], t, a), prox_potential(v[1], t, a)
        ok &= bool(np.all(np.abs(x1 - x2) <= np.abs(v[0] - v[1]) * (1 + 1e-12)))
        res = np.abs(x1 + t * phi(x1, a) - v[0]) / np.maximum(1, np.abs(v[0]))
        worst_res = max(worst_res, float(res.max()))
    return ok and worst_res <= 1e-14, f"max relative residual {worst_res:.1e}"


def check_expansion_identities(ctx):
    worst = 0.0
    for _ in range(300):
        x = ctx.rng.uniform(1e-3, 2) * ctx.rng.choice([-1, 1])
        t = 1.0 - ctx.rng.random()
        z = ctx.rng.uniform(-2, 2)
        beta = ctx.rng.choice([0.25, 0.5, 0.75])
        r = expansion_residuals(x, t, z, beta)
        worst = max(worst, *(ri / (1 + abs(l)) for ri, l in zip(r[:3], r.lhs)))
    return worst <= 1e-8, f"max scaled residual {worst:.1e}"


def check_stiffness(ctx):
    A = ctx.grid.stiffness.matrix
    sym = (A != A.T).nnz == 0
    X = ctx.rng.standard_normal((ctx.grid.m, 100))
    pos = bool(np.all(np.einsum("ij,ij->j", X, A @ X) > 0))
    return sym and pos, "exact symmetry, 100 random quadratic forms"


def check_norm_duality(ctx):
    g = ctx.grid
    ok = True
    for _ in range(20):
        u, v = ctx.rng.standard_normal((2, g.m))
        ok &= abs(l2_inner(g, u, v)) <= hminus1_norm(g, u) * h01_norm(g, v) * (1 + 1e-10)
    return ok, "20 random pairs"


def check_nonexpansive(ctx):
    g = ctx.grid
    worst = 0.0
    for _ in range(5):
        u1, u2 = ctx.rng.uniform(-20, 20, (2, g.m))
        y1, _ = solve_state(StateProblem(g, ctx.alpha, u1), tol=1e-11)
        y2, _ = solve_state(StateProblem(g, ctx.alpha, u2), tol=1e-11)
        worst = max(worst, h01_norm(g, y1 - y2) / hminus1_norm(g, u1 - u2))
    return worst <= 1 + 1e-8, f"max ratio {worst:.6f}"


def check_solvers_agree(ctx):
    g = ctx.grid
    u = ctx.rng.uniform(-20, 20, g.m)
    p = StateProblem(g, ctx.alpha, u)
    y1, _ = solve_state(p, "accel_prox", tol=1e-11)
    y2, _ = solve_state(p, "coord_descent", tol=1e-11)
    d = float(np.max(np.abs(y1 - y2)))
    return d <= 1e-8, f"max difference {d:.1e}"


def check_vi(ctx):
    g = ctx.grid
    p = StateProblem(g, ctx.alpha, ctx.rng.uniform(-20, 20, g.m))
    y, rep = solve_state(p, tol=1e-11)
    gaps = [vi_gap(p, y, y + ctx.rng.standard_normal(g.m) * 10.0 ** ctx.rng.uniform(-3, 1)) for _ in range(50)]
    return min(gaps) >= -1e-9 and rep.residual <= 1e-10, f"min gap {min(gaps):.1e}"


def _positive_state(ctx):
    g = ctx.grid
    p = StateProblem(g, ctx.alpha, np.full(g.m, 10.0))
    y, _ = solve_state(p, tol=1e-12, polish=True)
    return p, y, build_sensitivity(g, y, ctx.alpha)


def _dead_state(ctx):
    g = ctx.grid
    x = g.coords[:, 0]
    # small sources leave a dead zone: absorption beats diffusion there
    p = StateProblem(g, ctx.alpha, np.where(x > 0.5, 0.02, 0.0))
    y, _ = solve_state(p, tol=1e-12, polish=True)
    return p, y, build_sensitivity(g, y, ctx.alpha)


def check_derivative_dead_zone(ctx):
    _, y, sys = _dead_state(ctx)
    d = apply_S_prime(sys, ctx.rng.standard_normal(ctx.grid.m))
    return bool(sys.mask.any() and np.all(d[sys.mask] == 0.0)), f"{int(sys.mask.sum())} masked nodes"


def check_derivative_symmetric(ctx):
    g = ctx.grid
    _, _, sys = _dead_state(ctx)
    h1, h2 = ctx.rng.standard_normal((2, g.m))
    a, b = l2_inner(g, apply_S_prime(sys, h1), h2), l2_inner(g, h1, apply_S_prime(sys, h2))
    err = abs(a - b) / max(abs(a), 1e-300)
    return err <= 1e-10, f"relative asymmetry {err:.1e}"


def check_derivative_bound(ctx):
    g = ctx.grid
    _, _, sys = _dead_state(ctx)
    h = ctx.rng.standard_normal(g.m)
    d = apply_S_prime(sys, h)
    return h01_norm(g, d) <= hminus1_norm(g, h) * (1 + 1e-10), "derivative bounded by the data"


def check_quotients_converge(ctx):
    g = ctx.grid
    p, y, sys = _positive_state(ctx)
    h = ctx.rng.standard_normal(g.m)
    d = apply_S_prime(sys, h)
    errs = [h01_norm(g, difference_quotient(p, h, tau, y_base=y)[0] - d) for tau in (1e-1, 1e-2, 1e-3)]
    return bool(np.all(np.diff(errs) < 0)), ", ".join(f"{e:.1e}" for e in errs)


def _tracking(ctx):
    g = ctx.grid
    yd = g.nodal((lambda x: np.sin(np.pi * x)) if g.dim == 1 else (lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)))
    return ControlProblem(g, ctx.alpha, yd, 1e-2, 0.0, 2.0)


def check_adjoint_identity(ctx):
    g = ctx.grid
    cp = _tracking(ctx)
    u = ctx.rng.uniform(0, 2, g.m)
    _, p, y = reduced_gradient(cp, u)
    sys = build_sensitivity(g, y, ctx.alpha)
    h = ctx.rng.standard_normal(g.m)
    a, b = l2_inner(g, y - cp.y_d, apply_S_prime(sys, h)), l2_inner(g, p, h)
    err = abs(a - b) / max(abs(a), 1e-300)
    return err <= 1e-10, f"relative mismatch {err:.1e}"


def check_kkt_and_bouligand(ctx):
    g = ctx.grid
    cp = _tracking(ctx)
    u, hist = projected_gradient_solve(cp, ctx.rng.uniform(0, 2, g.m), tol=1e-10)
    res, comps = kkt_residual(cp, u)
    gap = bouligand_gap(cp, u, 50, ctx.seed)
    gap_off = bouligand_gap(cp, np.full(g.m, 1.0), 50, ctx.seed)
    ok = hist.converged and res <= 1e-10 and comps["projection"] <= 1e-7 and gap >= -1e-7 and gap_off < 0
    ctx.stationary = (cp, u)
    return ok, f"kkt {res:.1e}, gap {gap:.1e}, gap away from optimum {gap_off:.1e}"


def check_truncation_chain(ctx):
    if getattr(ctx, "stationary", None) is None:
        check_kkt_and_bouligand(ctx)
    cp, u = ctx.stationary
    _, p, y = reduced_gradient(cp, u)
    sys = build_sensitivity(ctx.grid, y, ctx.alpha)
    P = float(np.max(np.abs(p)))
    table = stampacchia_truncation_check(sys, p, y - cp.y_d, [0.0, 0.25 * P, 0.5 * P, P])
    return table.status == "ok", f"{len(table.rows)} levels"


def check_exponent_tables(ctx):
    inf = math.inf
    ok = str(embedding_exponents(1)[0]) == "[1, inf]"
    ok &= str(embedding_exponents(2)[1]) == "(1, inf]"
    ok &= str(embedding_exponents(3)[0]) == "[1, 6]"
    ok &= admissible_adjoint_exponents(2, 3) == Interval(1, inf, True, True)
    ok &= admissible_adjoint_exponents(2, 4) == Interval(1, inf, True, False)
    ok &= str(admissible_adjoint_exponents(2, 6)) == "[1, 6)"
    return bool(ok), "spot values"


CHECKS = (
    ("phi_odd_and_monotone", check_phi_odd_monotone),
    ("potential_derivative_is_phi", check_potential_derivative),
    ("prox_exact_and_nonexpansive", check_prox),
    ("power_expansion_identities", check_expansion_identities),
    ("stiffness_symmetric_positive", check_stiffness),
    ("h1_dual_pairing_bound", check_norm_duality),
    ("nonexpansive_solution_map", check_nonexpansive),
    ("state_solvers_agree", check_solvers_agree),
    ("variational_inequality_gap", check_vi),
    ("derivative_vanishes_on_dead_zone", check_derivative_dead_zone),
    ("derivative_self_adjoint", check_derivative_symmetric),
    ("derivative_bounded_by_data", check_derivative_bound),
    ("difference_quotients_converge", check_quotients_converge),
    ("adjoint_identity", check_adjoint_identity),
    ("kkt_and_bouligand_stationarity", check_kkt_and_bouligand),
    ("truncation_chain", check_truncation_chain),
    ("exponent_tables", check_exponent_tables),
)


class _Context:
    def __init__(self, grid, alpha, seed):
        self.grid = grid
        self.alpha = alpha
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.stationary = None


def run_suite(dim=1, n=32, alpha=0.5, seed=0):
    ctx = _Context(make_grid(dim, n), alpha, seed)
    out = []
    for name, check in CHECKS:
        try:
            ok, detail = check(ctx)
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
