"""Primitives for the hyperbolic plane.

Three charts are used through the package:
  * upper half-plane      -- where the group matrices live (real SL(2,R)),
  * Poincare disk         -- public I/O coordinates (complex numbers),
  * Minkowski hyperboloid -- internal numerics (distances, midpoints, flow,
                             parallel transport are all linear-algebraic).

Hyperboloid points are rows (X1, X2, X0) with X1^2 + X2^2 - X0^2 = -1, X0 > 0.
"""

import numpy as np

# Minkowski signature (+, +, -)
ETA = np.diag([1.0, 1.0, -1.0])

ORIGIN = np.array([0.0, 0.0, 1.0])


def mink(X, Y):
    """Minkowski inner product, broadcasting over leading axes."""
    return X[..., 0] * Y[..., 0] + X[..., 1] * Y[..., 1] - X[..., 2] * Y[..., 2]


def disk_to_hyperboloid(z):
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    r2 = x * x + y * y
    den = 1.0 - r2
    return np.stack([2 * x / den, 2 * y / den, (1 + r2) / den], axis=-1)


def hyperboloid_to_disk(X):
    X = np.asarray(X, dtype=float)
    return (X[..., 0] + 1j * X[..., 1]) / (1.0 + X[..., 2])


def halfplane_to_disk(w):
    w = np.asarray(w, dtype=complex)
    return (w - 1j) / (w + 1j)


def dist(X, Y):
    """Hyperbolic distance between hyperboloid points.

    Nearby points use the chord form 2 asinh(|X-Y|/2), stable down to machine
    precision where arccosh loses half the digits.
    """
    u = -mink(X, Y)
    with np.errstate(invalid="ignore"):
        far = np.arccosh(np.maximum(u, 1.0))
    near = u < 1.1
    if not np.any(near):
        return far
    D = np.asarray(X) - np.asarray(Y)
    c2 = np.maximum(mink(D, D), 0.0)
    chord = 2.0 * np.arcsinh(0.5 * np.sqrt(c2))
    return np.where(near, chord, far)


def dist_disk(z, w):
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    num = 2.0 * np.abs(z - w) ** 2
    den = (1.0 - np.abs(z) ** 2) * (1.0 - np.abs(w) ** 2)
    return np.arccosh(1.0 + num / den)


def midpoint(X, Y):
    """Hyperbolic midpoint: normalized Minkowski sum."""
    S = X + Y
    norm = np.sqrt(np.maximum(-mink(S, S), 1e-300))
    return S / norm[..., None]


def project_tangent(X, V):
    """Project ambient vector V onto the tangent space at X (<V,X> = 0)."""
    return V + mink(V, X)[..., None] * X


def tangent_norm(V):
    return np.sqrt(np.maximum(mink(V, V), 0.0))


def normalize_tangent(V):
    return V / tangent_norm(V)[..., None]


def flow(X, V, t):
    """Geodesic flow: unit-speed geodesic from (X, V) evaluated at time t.

    Returns (point, velocity); exact for the curvature -1 base metric.
    """
    t = np.asarray(t, dtype=float)
    ch, sh = np.cosh(t)[..., None], np.sinh(t)[..., None]
    return X * ch + V * sh, X * sh + V * ch


def direction(X, Y):
    """Unit tangent at X pointing toward Y along the connecting geodesic."""
    c = -mink(X, Y)
    s = np.sqrt(np.maximum(c * c - 1.0, 1e-300))
    return (Y - c[..., None] * X) / s[..., None]


def parallel_transport(Y, X, W):
    """Parallel transport of tangent W at Y to X along the connecting geodesic."""
    d = dist(Y, X)
    small = d < 1e-14
    with np.errstate(over="ignore", invalid="ignore"):
        U = direction(Y, X)
        # tangent at X of the same geodesic
        ch, sh = np.cosh(d)[..., None], np.sinh(d)[..., None]
        U_end = Y * sh + U * ch
        wU = mink(W, U)[..., None]
        out = W + wU * (U_end - U)
    if np.any(small):
        out = np.where(small[..., None], W, out)
    return out


def angle_between(V, W):
    """Angle in [0, pi] between tangent vectors at a common base point."""
    denom = tangent_norm(V) * tangent_norm(W)
    with np.errstate(over="ignore", invalid="ignore"):
        c = mink(V, W) / np.maximum(denom, 1e-300)
    return np.arccos(np.clip(np.nan_to_num(c), -1.0, 1.0))


def disk_jacobian(z):
    """Vectorized Jacobian dX/d(x,y) of the disk -> hyperboloid chart, (N,3,2)."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    x, y = z.real, z.imag
    r2 = x * x + y * y
    den = 1.0 - r2
    J = np.zeros(z.shape + (3, 2))
    J[..., 0, 0] = 2.0 / den + 4 * x * x / den**2
    J[..., 0, 1] = 4 * x * y / den**2
    J[..., 1, 0] = 4 * x * y / den**2
    J[..., 1, 1] = 2.0 / den + 4 * y * y / den**2
    J[..., 2, 0] = 2 * x / den + 2 * x * (1 + r2) / den**2
    J[..., 2, 1] = 2 * y / den + 2 * y * (1 + r2) / den**2
    return J


def slerp(A, B, t):
    """Point at parameter fraction t along the geodesic from A to B."""
    d = dist(A, B)
    sd = np.sinh(d)
    wa = np.sinh((1.0 - t) * d) / sd
    wb = np.sinh(t * d) / sd
    P = wa[..., None] * A + wb[..., None] * B
    return P / np.sqrt(np.maximum(-mink(P, P), 1e-300))[..., None]


# --- stable small-distance helpers -----------------------------------------
#
# rho = arccosh(u) is not smooth in u at u = 1; rho^2 is.  Series in v = u - 1:
#   rho^2 = 2v - v^2/3 + 4v^3/45 - v^4/35 + O(v^5)

_RHO2_SERIES = (2.0, -1.0 / 3.0, 4.0 / 45.0, -1.0 / 35.0)


def rho2_from_u(u):
    """arccosh(u)^2, smooth and accurate through u = 1."""
    u = np.asarray(u, dtype=float)
    v = np.maximum(u - 1.0, 0.0)
    series = v * (_RHO2_SERIES[0] + v * (_RHO2_SERIES[1] + v * (_RHO2_SERIES[2] + v * _RHO2_SERIES[3])))
    with np.errstate(invalid="ignore"):
        exact = np.arccosh(np.maximum(u, 1.0)) ** 2
    return np.where(v < 1e-4, series, exact)


def drho2_du(u):
    """d(rho^2)/du = 2 arccosh(u)/sqrt(u^2-1), smooth through u = 1."""
    u = np.asarray(u, dtype=float)
    v = np.maximum(u - 1.0, 0.0)
    # 2*rho/sinh(rho) expanded: 2 - 2v/3 + (4/15)v^2 ... derive from rho2 series
    series = 2.0 - (2.0 / 3.0) * v + (4.0 / 15.0) * v * v
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.arccosh(np.maximum(u, 1.0))
        exact = 2.0 * rho / np.sqrt(np.maximum(u * u - 1.0, 1e-300))
    return np.where(v < 1e-4, series, exact)
