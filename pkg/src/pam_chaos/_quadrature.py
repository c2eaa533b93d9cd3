"""Quadrature helpers for cell-pair integrals of (possibly singular) kernels.

The double integral of a translation-invariant kernel over two boxes
reduces to a single integral against the overlap weight

    w(z) = prod_i |A_i  intersect  (B_i + z_i)|,

a product of trapezoids with kinks at the four endpoint differences.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate, special

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def overlap_1d(z, a_lo, a_hi, b_lo, b_hi):
    """Length of [a_lo, a_hi] intersected with [b_lo + z, b_hi + z]."""
    z = np.asarray(z, dtype=float)
    return np.clip(np.minimum(a_hi, b_hi + z) - np.maximum(a_lo, b_lo + z), 0.0, None)


def _breakpoints(a_lo, a_hi, b_lo, b_hi):
    pts = {a_lo - b_hi, a_lo - b_lo, a_hi - b_hi, a_hi - b_lo, 0.0}
    lo, hi = a_lo - b_hi, a_hi - b_lo
    return sorted(p for p in pts if lo <= p <= hi)


def box_pair_integral_1d(kernel, a_lo, a_hi, b_lo, b_hi, singular_at_zero=False):
    """Integral of kernel(x - y) over x in [a_lo, a_hi], y in [b_lo, b_hi]."""
    pts = _breakpoints(a_lo, a_hi, b_lo, b_hi)
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi - lo <= 0:
            continue

        def f(z):
            return kernel(np.atleast_1d(z))[0] * overlap_1d(z, a_lo, a_hi, b_lo, b_hi)

        val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-11, limit=200)
        total += val
    return total


def _gauss_jacobi_01(alpha_exp, n=24):
    """Nodes/weights on [0, 1] for the weight u**alpha_exp (alpha_exp > -1)."""
    x, w = special.roots_jacobi(n, 0.0, alpha_exp)
    u = 0.5 * (x + 1.0)
    return u, w * 0.5 ** (alpha_exp + 1.0)


def _rect_integral_2d(f, x0, x1, y0, y1, corner_singular_exponent=None):
    """Integrate f(x, y) over a rectangle.

    When ``corner_singular_exponent`` is given, f behaves like
    |(x, y)|**(-exponent) near the corner (x0, y0); a Duffy split into two
    triangles with Gauss-Jacobi in the radial variable absorbs it.
    """
    if corner_singular_exponent is None:
        xs = 0.5 * (x1 - x0) * (_GL_NODES + 1) + x0
        ys = 0.5 * (y1 - y0) * (_GL_NODES + 1) + y0
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        W = np.outer(_GL_WEIGHTS, _GL_WEIGHTS) * 0.25 * (x1 - x0) * (y1 - y0)
        return float(np.sum(W * f(X, Y)))
    a, b = x1 - x0, y1 - y0
    sx, sy = np.sign(a), np.sign(b)
    a, b = abs(a), abs(b)
    ju, jw = _gauss_jacobi_01(1.0 - corner_singular_exponent)
    U, V = np.meshgrid(ju, 0.5 * (_GL_NODES + 1), indexing="ij")
    WU = np.outer(jw, 0.5 * _GL_WEIGHTS)
    total = 0.0
    # triangle below the diagonal: x = a u, y = b u v ; jacobian a b u
    X, Y = a * U, b * U * V
    r = np.sqrt(a * a + b * b * V * V)
    vals = f(x0 + sx * X, y0 + sy * Y) * (U * r) ** corner_singular_exponent
    total += np.sum(WU * vals * a * b / r**corner_singular_exponent)
    # triangle above: y = b u, x = a u v
    X, Y = a * U * V, b * U
    r = np.sqrt(a * a * V * V + b * b)
    vals = f(x0 + sx * X, y0 + sy * Y) * (U * r) ** corner_singular_exponent
    total += np.sum(WU * vals * a * b / r**corner_singular_exponent)
    return float(total)


def box_pair_integral_2d(kernel, box_a, box_b, singular_exponent=None):
    """Integral of kernel(x - y) over x in box_a, y in box_b (d = 2).

    ``kernel`` maps arrays (..., 2) -> (...). ``singular_exponent`` is the
    exponent s of a |z|**(-s) singularity at the origin, if any.
    """
    (ax0, ax1), (ay0, ay1) = box_a
    (bx0, bx1), (by0, by1) = box_b
    px = _breakpoints(ax0, ax1, bx0, bx1)
    py = _breakpoints(ay0, ay1, by0, by1)

    def f(X, Y):
        z = np.stack([X, Y], axis=-1)
        return (kernel(z) * overlap_1d(X, ax0, ax1, bx0, bx1)
                * overlap_1d(Y, ay0, ay1, by0, by1))

    total = 0.0
    for x0, x1 in zip(px[:-1], px[1:]):
        for y0, y1 in zip(py[:-1], py[1:]):
            if x1 <= x0 or y1 <= y0:
                continue
            corner = None
            if singular_exponent is not None:
                for cx in (x0, x1):
                    for cy in (y0, y1):
                        if cx == 0.0 and cy == 0.0:
                            corner = (cx, cy)
            if corner is None:
                total += _rect_integral_2d(f, x0, x1, y0, y1)
            else:
                ox = x1 if corner[0] == x1 else x0
                oy = y1 if corner[1] == y1 else y0
                fx = x0 if ox == x1 else x1
                fy = y0 if oy == y1 else y1
                total += _rect_integral_2d(f, ox, fx, oy, fy, singular_exponent)
    return total
