"""Uniform grids on (0,1) and (0,1)^2 with P1 stiffness and lumped mass.

Fields are plain float arrays holding one value per interior node. In 2D
the interior node (i, j), 1 <= i, j <= n-1, has index (j-1)*(n-1) + (i-1),
so x runs fastest.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linsolve import cg_solve, lambda_max


@dataclass(frozen=True)
class Operator:
    """Sparse symmetric matrix over the interior nodes."""

    matrix: sp.csr_matrix
    symmetric: bool = True
    positive_definite: bool = True

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def shape(self):
        return self.matrix.shape

    def diagonal(self):
        return self.matrix.diagonal()


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 2:
            raise ValueError(f"need at least 2 cells per axis, got {self.n}")

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def m(self):
        return (self.n - 1) ** self.dim

    @cached_property
    def coords(self):
        """Interior node coordinates, shape (m, dim)."""
        x = np.arange(1, self.n) / self.n
        if self.dim == 1:
            return x[:, None]
        X, Y = np.meshgrid(x, x, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def stiffness(self):
        return assemble_stiffness(self)

    @cached_property
    def mass(self):
        """Lumped mass as a vector of diagonal entries."""
        return assemble_lumped_mass(self).diagonal()

    @cached_property
    def stiffness_lambda_min(self):
        # closed-form spectrum of the tridiagonal / 5-point matrices
        lam = 2.0 - 2.0 * math.cos(math.pi / self.n)
        return lam * self.n if self.dim == 1 else 2.0 * lam

    @cached_property
    def stiffness_lambda_max(self):
        return lambda_max(self.stiffness)

    def nodal(self, f):
        """Sample f(x) (1D) or f(x, y) (2D) at the interior nodes."""
        if self.dim == 1:
            return np.asarray(f(self.coords[:, 0]), dtype=float) * np.ones(self.m)
        return np.asarray(f(self.coords[:, 0], self.coords[:, 1]), dtype=float) * np.ones(self.m)

    def check(self, *fields):
        for v in fields:
            if np.shape(v) != (self.m,):
                raise ValueError(f"field of shape {np.shape(v)} does not live on a grid with {self.m} interior nodes")
            if not np.all(np.isfinite(v)):
                raise ValueError("field has non-finite entries")


def make_grid(dim, n):
    return Grid(int(dim), int(n))


def _tridiag(k, diag, off):
    return sp.diags([off * np.ones(k - 1), diag * np.ones(k), off * np.ones(k - 1)], [-1, 0, 1], format="csr")


def assemble_stiffness(grid):
    """P1 stiffness: v^T A w approximates the integral of grad v . grad w."""
    k = grid.n - 1
    if grid.dim == 1:
        A = _tridiag(k, 2.0 * grid.n, -1.0 * grid.n)
    else:
        # right-triangle P1 elements reproduce the 5-point stencil, no h scaling
        T = _tridiag(k, 2.0, -1.0)
        eye = sp.identity(k, format="csr")
        A = (sp.kron(eye, T) + sp.kron(T, eye)).tocsr()
    A.sort_indices()
    return Operator(A, symmetric=True, positive_definite=True)


def assemble_lumped_mass(grid):
    return Operator(sp.diags(np.full(grid.m, grid.h**grid.dim), format="csr"))


def h01_inner(grid, v, w):
    grid.check(v, w)
    return float(v @ (grid.stiffness @ w))


def h01_norm(grid, v):
    return math.sqrt(max(h01_inner(grid, v, v), 0.0))


def l2_inner(grid, v, w):
    grid.check(v, w)
    return float(np.dot(grid.mass * v, w))


def dual_norm(grid, r, tol=1e-10):
    """sqrt(r^T A^{-1} r) for a residual/functional vector r.

    Uses the CG energy estimate 2 x.r - x.Ax, whose error is quadratic in
    the CG error, so the modest tolerance (the eps*cond(A) rounding floor
    rules out 1e-12 on fine 1D grids) still gives full accuracy.
    """
    r = np.asarray(r, dtype=float)
    grid.check(r)
    scale = np.linalg.norm(r)
    if scale == 0:
        return 0.0
    rr = r / scale
    x = cg_solve(grid.stiffness, rr, tol=tol)
    q = 2.0 * float(rr @ x) - float(x @ (grid.stiffness @ x))
    return scale * math.sqrt(max(q, 0.0))


def hminus1_norm(grid, u, tol=1e-10):
    """Discrete H^{-1} norm of the L^2 function u: sqrt((Mu)^T A^{-1} (Mu))."""
    grid.check(u)
    return dual_norm(grid, grid.mass * u, tol=tol)


def lq_norm(grid, v, q):
    """(sum_i M_ii |v_i|^q)^(1/q); q = inf gives max |v_i|."""
    grid.check(v)
    q = float(q)
    if q < 1:
        raise ValueError("q must be >= 1")
    if math.isinf(q):
        return float(np.max(np.abs(v))) if v.size else 0.0
    return float(np.sum(grid.mass * np.abs(v) ** q) ** (1.0 / q))


# ---------------------------------------------------------------------------
# exponent intervals


@dataclass(frozen=True)
class Interval:
    """Interval of exponents; `upper` may be math.inf. Finite endpoints are Fractions."""

    lower: object
    upper: object
    lower_closed: bool
    upper_closed: bool

    def __contains__(self, q):
        q = math.inf if q == math.inf else Fraction(q)
        above = q >= self.lower if self.lower_closed else q > self.lower
        if self.upper == math.inf:
            below = True if q != math.inf else self.upper_closed
        else:
            below = q <= self.upper if self.upper_closed else q < self.upper
        return above and below

    def __str__(self):
        def fmt(e):
            return "inf" if e == math.inf else str(e)

        return f"{'[' if self.lower_closed else '('}{fmt(self.lower)}, {fmt(self.upper)}{']' if self.upper_closed else ')'}"


def embedding_exponents(d):
    """Exponents q with H^1_0 -> L^q, and with L^q -> H^{-1}, in dimension d."""
    d = int(d)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    one = Fraction(1)
    if d == 1:
        return Interval(one, math.inf, True, True), Interval(one, math.inf, True, True)
    if d == 2:
        return Interval(one, math.inf, True, False), Interval(one, math.inf, False, True)
    return (
        Interval(one, Fraction(2 * d, d - 2), True, True),
        Interval(Fraction(2 * d, d + 2), math.inf, True, True),
    )


# ---------------------------------------------------------------------------
# field dumps


def write_field(path, grid, values):
    """Write `index,x[,y],value` rows in interior-node order."""
    grid.check(values)
    cols = ["index", "x"] + (["y"] if grid.dim == 2 else []) + ["value"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(grid.m):
            xs = ",".join(repr(float(c)) for c in grid.coords[k])
            fh.write(f"{k},{xs},{float(values[k])!r}\n")


def read_field(path):
    """Read a field dump; returns (grid, values)."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ValueError(f"{path}: empty field file")
    header = [c.strip() for c in text[0].split(",")]
    if header == ["index", "x", "value"]:
        dim = 1
    elif header == ["index", "x", "y", "value"]:
        dim = 2
    else:
        raise ValueError(f"{path}: unexpected header {text[0]!r}")
    rows = [line.split(",") for line in text[1:] if line.strip()]
    m = len(rows)
    n = round(m ** (1.0 / dim)) + 1
    if (n - 1) ** dim != m:
        raise ValueError(f"{path}: {m} rows do not form a uniform {dim}D interior grid")
    grid = Grid(dim, n)
    values = np.empty(m)
    for k, row in enumerate(rows):
        if int(row[0]) != k:
            raise ValueError(f"{path}: row {k} has index {row[0]}")
        coords = np.array([float(c) for c in row[1 : 1 + dim]])
        if not np.allclose(coords, grid.coords[k], atol=1e-12):
            raise ValueError(f"{path}: row {k} coordinates do not match the grid")
        values[k] = float(row[-1])
    grid.check(values)
    return grid, values
