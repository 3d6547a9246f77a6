import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lengthsep import hyperbolic as hyp

pts = st.complex_numbers(max_magnitude=0.8, allow_nan=False, allow_infinity=False)


def test_chart_roundtrip():
    z = np.array([0.1 + 0.2j, -0.5 + 0.6j, 0.0 + 0.0j])
    X = hyp.disk_to_hyperboloid(z)
    assert np.allclose(hyp.mink(X, X), -1.0)
    back = hyp.hyperboloid_to_disk(X)
    assert np.allclose(back, z)


def test_distance_matches_disk_formula():
    z = 0.3 + 0.1j
    w = -0.2 + 0.4j
    X, Y = hyp.disk_to_hyperboloid(z), hyp.disk_to_hyperboloid(w)
    assert np.isclose(hyp.dist(X, Y), hyp.dist_disk(z, w))


def test_midpoint_is_equidistant():
    X = hyp.disk_to_hyperboloid(0.3 + 0.1j)
    Y = hyp.disk_to_hyperboloid(-0.4 + 0.25j)
    M = hyp.midpoint(X, Y)
    assert np.isclose(hyp.dist(X, M), hyp.dist(M, Y), atol=1e-12)
    assert np.isclose(hyp.dist(X, M) + hyp.dist(M, Y), hyp.dist(X, Y), atol=1e-12)


def test_flow_is_unit_speed():
    X = hyp.disk_to_hyperboloid(0.2 - 0.1j)
    V = hyp.normalize_tangent(hyp.project_tangent(X, np.array([1.0, 0.5, 0.0])))
    P, W = hyp.flow(X, V, 0.7)
    assert np.isclose(hyp.dist(X, P), 0.7)
    assert np.isclose(hyp.mink(W, W), 1.0)
    assert np.isclose(hyp.mink(P, W), 0.0, atol=1e-12)


def test_parallel_transport_preserves_norm_and_flow_direction():
    X = hyp.disk_to_hyperboloid(0.1 + 0.0j)
    Y = hyp.disk_to_hyperboloid(0.3 + 0.2j)
    U = hyp.direction(X, Y)
    W = hyp.normalize_tangent(hyp.project_tangent(X, np.array([0.0, 1.0, 0.3])))
    PW = hyp.parallel_transport(X, Y, W)
    assert np.isclose(hyp.mink(PW, PW), 1.0, atol=1e-12)
    assert np.isclose(hyp.mink(PW, Y), 0.0, atol=1e-10)
    # the geodesic's own direction transports to the endpoint direction
    d = hyp.dist(X, Y)
    U_end = X * np.sinh(d) + U * np.cosh(d)
    PU = hyp.parallel_transport(X, Y, U)
    assert np.allclose(PU, U_end, atol=1e-10)
    # angles with the connecting geodesic are preserved
    a0 = hyp.angle_between(W, U)
    a1 = hyp.angle_between(PW, U_end)
    assert np.isclose(a0, a1, atol=1e-10)


def test_slerp_endpoints_and_midpoint():
    A = hyp.disk_to_hyperboloid(0.5 + 0.1j)
    B = hyp.disk_to_hyperboloid(-0.1 - 0.3j)
    assert np.allclose(hyp.slerp(A, B, np.array(0.0)), A)
    assert np.allclose(hyp.slerp(A, B, np.array(1.0)), B)
    assert np.allclose(hyp.slerp(A, B, np.array(0.5)), hyp.midpoint(A, B), atol=1e-12)


def test_rho2_from_u_small_and_large():
    u = np.array([1.0, 1.0 + 1e-8, 1.0 + 1e-3, 2.5])
    r2 = hyp.rho2_from_u(u)
    assert r2[0] == 0.0
    assert np.isclose(r2[3], np.arccosh(2.5) ** 2, rtol=1e-14)
    # series region consistency against mpmath-free reference: arccosh^2
    assert np.isclose(r2[2], np.arccosh(1.0 + 1e-3) ** 2, rtol=1e-9)
    d = hyp.drho2_du(np.array([1.0 + 1e-9, 1.5]))
    assert np.isclose(d[0], 2.0, rtol=1e-6)
    assert np.isclose(d[1], 2 * np.arccosh(1.5) / np.sqrt(1.5**2 - 1), rtol=1e-12)


@settings(max_examples=60)
@given(pts, pts, pts)
def test_triangle_inequality(a, b, c):
    A, B, C = (hyp.disk_to_hyperboloid(np.array(z)) for z in (a, b, c))
    assert hyp.dist(A, C) <= hyp.dist(A, B) + hyp.dist(B, C) + 1e-10


@settings(max_examples=40)
@given(pts, pts)
def test_disk_jacobian_vs_fd(a, b):
    if abs(a - b) < 1e-3:
        return
    z = np.array([a])
    J = hyp.disk_jacobian(z)[0]
    h = 1e-7
    fd_x = (hyp.disk_to_hyperboloid(z + h) - hyp.disk_to_hyperboloid(z - h)) / (2 * h)
    fd_y = (hyp.disk_to_hyperboloid(z + 1j * h) - hyp.disk_to_hyperboloid(z - 1j * h)) / (2 * h)
    assert np.allclose(J[:, 0], fd_x[0], atol=1e-5)
    assert np.allclose(J[:, 1], fd_y[0], atol=1e-5)
