"""Pointwise pieces of the sublinear absorption term sgn(s)|s|^alpha.

Everything here acts elementwise on floats or numpy arrays.
"""

from typing import NamedTuple

import numpy as np
from numpy.polynomial.legendre import leggauss


class Exponent(float):
    """An exponent strictly inside (0, 1)."""

    def __new__(cls, value):
        value = float(value)
        if not 0.0 < value < 1.0:
            raise ValueError(f"exponent must lie in the open interval (0, 1), got {value!r}")
        return super().__new__(cls, value)


def _abspow(a, p):
    # a >= 0; 0 maps to 0 regardless of the sign of p
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.exp(p * np.log(a))
    return np.where(a > 0, out, 0.0)


def phi(s, alpha):
    """The odd, nondecreasing map s -> sgn(s)|s|^alpha."""
    alpha = Exponent(alpha)
    s = np.asarray(s, dtype=float)
    out = np.sign(s) * _abspow(np.abs(s), alpha)
    return out if out.ndim else float(out)


def potential(s, alpha):
    """Convex potential |s|^(alpha+1)/(alpha+1); its derivative is `phi`."""
    alpha = Exponent(alpha)
    s = np.asarray(s, dtype=float)
    out = _abspow(np.abs(s), alpha + 1.0) / (alpha + 1.0)
    return out if out.ndim else float(out)


def potential_change(a, b, alpha):
    """potential(a) - potential(b), accurate relative to |a - b| for close a, b."""
    alpha = Exponent(alpha)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = alpha + 1.0
    # the log1p form only pays off (and only stays finite) when a is near b
    same = (np.sign(a) == np.sign(b)) & (b != 0) & (np.abs(a - b) <= np.abs(b))
    bb = np.where(same, b, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        close = _abspow(np.abs(bb), p) * np.expm1(p * np.log1p((a - bb) / bb)) / p
    direct = potential(a, alpha) - potential(b, alpha)
    return np.where(same, close, direct)


_BISECTION_WIDTH = 1e-12
_MAX_BISECTIONS = 200
_MAX_NEWTON = 60


def _prox_bracket(a, t, alpha):
    # root x of x + t x^alpha = a (a > 0) satisfies lo <= x <= hi
    hi = np.minimum(a, _abspow(a / t, 1.0 / alpha))
    lo = np.minimum(0.5 * a, _abspow(0.5 * a / t, 1.0 / alpha))
    return lo, hi


def prox_potential(v, t, alpha, x0=None):
    """Exact minimizer of 0.5*(x - v)**2 + t*potential(x, alpha).

    Equivalently the unique root of x + t*phi(x) = v. Works elementwise;
    `t` broadcasts against `v`. With `x0` (a previous solution) a
    safeguarded Newton iteration is started there instead of bisecting.
    """
    alpha = Exponent(alpha)
    v = np.asarray(v, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), v.shape)
    if np.any(t <= 0):
        raise ValueError("prox parameter t must be positive")
    sign = np.sign(v)
    a = np.abs(v)
    live = a > 0
    aa = np.where(live, a, 1.0)
    tt = np.where(live, t, 1.0)
    lo, hi = _prox_bracket(aa, tt, alpha)

    def g(x):
        return x + tt * _abspow(x, alpha) - aa

    def dg(x):
        return 1.0 + tt * alpha * _abspow(x, alpha - 1.0)

    if x0 is None:
        # x -> x + t x^alpha is strictly increasing, so the bracket never breaks
        for _ in range(_MAX_BISECTIONS):
            if np.all(hi - lo <= _BISECTION_WIDTH * hi):
                break
            mid = np.where(lo > 0, np.sqrt(lo * hi), 0.5 * (lo + hi))
            left = g(mid) <= 0
            lo = np.where(left, mid, lo)
            hi = np.where(left, hi, mid)
        # g is concave on (0, inf): a Newton step from the left end stays left of the root
        x = lo - g(lo) / dg(lo)
        x = np.clip(x, lo, hi)
    else:
        x = np.clip(np.abs(np.asarray(x0, dtype=float)) * (np.sign(x0) == sign), lo, hi)
        x = np.where(x > 0, x, lo)
        for _ in range(_MAX_NEWTON):
            gx = g(x)
            lo = np.where(gx <= 0, np.maximum(lo, x), lo)
            hi = np.where(gx >= 0, np.minimum(hi, x), hi)
            step = gx / dg(x)
            xn = x - step
            outside = (xn < lo) | (xn > hi)
            xn = np.where(outside, np.sqrt(lo * hi), xn)
            done = np.abs(xn - x) <= 4e-16 * np.abs(xn)
            x = xn
            if np.all(done | ~live):
                break

    out = np.where(live, sign * x, 0.0)
    return out if out.ndim else float(out)


# Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = leggauss(16)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def taylor_weight_integral(a, b, beta, tol=1e-12, max_levels=80):
    """Integral over s in [0, 1] of (1-s) * ((1-s)*a + s*b)**(beta-1).

    Requires a > 0, b >= 0. Composite Gauss-Legendre on dyadic panels that
    pile up at both ends: at s = 1 the integrand is singular when b = 0,
    and near s = 0 it is steep when a << b.
    """
    beta = Exponent(beta)
    if a <= 0 or b < 0:
        raise ValueError("need a > 0 and b >= 0")

    def integrand(s):
        return (1.0 - s) * ((1.0 - s) * a + s * b) ** (beta - 1.0)

    def panel(left, right):
        s = left + (right - left) * _GL_X
        return (right - left) * float(np.dot(_GL_W, integrand(s)))

    body = 0.0
    prev = None
    for k in range(1, max_levels):
        w = 2.0**-k
        body += panel(0.5 * w, w) + panel(1.0 - w, 1.0 - 0.5 * w)
        total = body + panel(0.0, 0.5 * w) + panel(1.0 - 0.5 * w, 1.0)
        if prev is not None and abs(total - prev) < tol * max(1.0, abs(total)):
            return total
        prev = total
    return total


def _stable_parts(x, t, z):
    """|x+tz| - |x| and |x+tz|^p - |x|^p style differences without the
    cancellation that plain subtraction suffers for small t."""
    y = x + t * z
    if np.sign(y) == np.sign(x):
        diff = np.sign(x) * t * z
        ratio_log = np.log1p(t * z / x)
    else:
        diff = abs(y) - abs(x)
        ratio_log = np.log(abs(y) / abs(x)) if y != 0 else -np.inf
    return abs(y), diff, ratio_log


class ExpansionResiduals(NamedTuple):
    r1: float
    r2: float
    r3: float
    lhs: tuple


def expansion_residuals(x, t, z, beta):
    """Residuals |LHS - RHS| of the three power-expansion identities.

    For x != 0, t > 0 and real z:

    1. second difference quotient of |.|^(beta+1) split into a |.| part and
       a Taylor remainder with integral weight,
    2. closed form of the second difference quotient of |.|,
    3. closed form of ((|x+tz| - |x|)/t)**2.

    The left-hand sides are returned alongside for relative tolerances.
    """
    beta = Exponent(beta)
    x, t, z = float(x), float(t), float(z)
    if x == 0:
        raise ValueError("identities are stated for x != 0")
    if t <= 0:
        raise ValueError("t must be positive")
    ax = abs(x)
    ay, diff, ratio_log = _stable_parts(x, t, z)
    sx = np.sign(x)

    # |x+tz|^(b+1) - |x|^(b+1)
    if np.isfinite(ratio_log):
        pow_diff = ax ** (beta + 1) * np.expm1((beta + 1) * ratio_log)
    else:
        pow_diff = -ax ** (beta + 1)

    lhs1 = (pow_diff / t - (beta + 1) * ax ** (beta - 1) * x * z) / t
    abs_quot = (diff / t - sx * z) / t
    integral = taylor_weight_integral(ax, ay, beta)
    rhs1 = (beta + 1) * ax**beta * abs_quot + (diff / t) ** 2 * (beta**2 + beta) * integral

    lhs2 = abs_quot
    rhs2 = (ax * diff - t * x * z) / (ax * (ay + ax) ** 2) * z**2

    lhs3 = (diff / t) ** 2
    denom = (ax + ay) ** 2
    rhs3 = 4 * x**2 / denom * z**2 + (4 * t * x * z + t**2 * z**2) / denom * z**2

    return ExpansionResiduals(
        abs(lhs1 - rhs1), abs(lhs2 - rhs2), abs(lhs3 - rhs3), (lhs1, lhs2, lhs3)
    )
