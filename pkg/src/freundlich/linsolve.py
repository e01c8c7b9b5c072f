"""Jacobi-preconditioned conjugate gradients and power iteration."""

import numpy as np
import scipy.sparse as sp


class ConvergenceError(RuntimeError):
    """An iterative method ran out of iterations before meeting its tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


def _matrix(A):
    return getattr(A, "matrix", A)


def cg_solve(A, b, tol=1e-12, x0=None, maxiter=None):
    """Solve A x = b for symmetric positive definite A.

    Stops once ||A x - b||_2 <= tol * max(1, ||b||_2). The preconditioner is
    the inverse diagonal of A. Raises ConvergenceError after `maxiter`
    iterations (default 10 * size), which usually signals an indefinite or
    badly scaled operator.
    """
    A = _matrix(A)
    b = np.asarray(b, dtype=float)
    m = b.shape[0]
    if m == 0:
        return np.zeros(0)
    if tol <= 0:
        raise ValueError("tol must be positive")
    maxiter = 10 * m if maxiter is None else maxiter
    diag = A.diagonal() if sp.issparse(A) else np.diag(A)
    if np.any(diag <= 0):
        raise ValueError("operator has a nonpositive diagonal entry; not SPD")
    inv_diag = 1.0 / diag
    target = tol * max(1.0, np.linalg.norm(b))

    x = np.zeros(m) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    rnorm = np.linalg.norm(r)
    if rnorm <= target:
        return x
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ad = A @ d
        step = rz / (d @ Ad)
        x += step * d
        r -= step * Ad
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # recursive residuals drift; confirm with the true one
            r = b - A @ x
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                return x
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach tolerance in {maxiter} iterations (residual {rnorm:.3e})",
        iterations=maxiter,
        residual=rnorm,
    )


def lambda_max(A, iterations=200, seed=0):
    """Largest eigenvalue of a symmetric matrix by power iteration.

    Uses a fixed number of iterations from a seeded start vector and returns
    the final Rayleigh quotient, which never exceeds the true value for a
    positive semidefinite matrix.
    """
    A = _matrix(A)
    m = A.shape[0]
    v = np.random.default_rng(seed).standard_normal(m)
    v /= np.linalg.norm(v)
    for _ in range(iterations):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(v @ (A @ v))
