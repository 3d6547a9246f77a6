"""Conformal perturbations of the base metric: products of radial bump factors.

The metric is exp(2F) g0 with F = sum_j log(1 + (delta_j/r_j) chi(dist/r_j)),
chi a fixed smooth compactly supported profile normalized so a bump centered
on a geodesic shifts that geodesic's length by exactly delta at first order.

Bump radial coordinates use the base hyperbolic distance; supports within a
window are pairwise disjoint, so the exactness of the length shift is
re-verified downstream by relaxation rather than assumed.
"""

import json
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from . import hyperbolic as hyp
from .jets import Jet, jet_exp, jet_log, derivatives
from .surface_group import R_CIRC, BolzaSurface, format_word, parse_word

_SUPPORT_TOL = 1e-12


@lru_cache(maxsize=1)
def _profile_norm():
    """Normalization c with integral of c*exp(-1/(1-s^2)) over [-1,1] equal 1."""
    val, err = quad(lambda s: np.exp(-1.0 / (1.0 - s * s)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return 1.0 / val


class BumpProfile:
    """Smooth radial profile chi: [0,1] -> [0, c_max], compactly supported in
    [0,1), unit integral over a diameter."""

    def __init__(self):
        self.c_norm = _profile_norm()

    @property
    def c_max(self):
        return self.c_norm * np.exp(-1.0)

    def chi(self, s):
        s = np.abs(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        inside = s < 1.0 - _SUPPORT_TOL
        si = s[inside]
        out[inside] = self.c_norm * np.exp(-1.0 / (1.0 - si * si))
        return out

    def chi_q(self, q):
        """chi as a function of q = s^2 (smooth through the center)."""
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        inside = q < 1.0 - _SUPPORT_TOL
        qi = q[inside]
        out[inside] = self.c_norm * np.exp(-1.0 / (1.0 - qi))
        return out

    def dchi_dq(self, q):
        """d(chi)/dq = -chi/(1-q)^2."""
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        inside = q < 1.0 - _SUPPORT_TOL
        qi = q[inside]
        out[inside] = -self.c_norm * np.exp(-1.0 / (1.0 - qi)) / (1.0 - qi) ** 2
        return out

    def chi_jet(self, s_jet):
        """Jet of chi along a radial jet s(t); s must stay inside the support."""
        q = s_jet * s_jet
        if np.any(1.0 - q.c[0] <= 0):
            raise ValueError("chi_jet sampled outside the open support")
        return jet_exp(-(1.0 / (1.0 - q))) * self.c_norm

    def derivative_sup(self, order, n_grid=4001):
        """sup_s |d^order chi / ds^order| on a dense grid (profile constant)."""
        s = np.linspace(-1.0 + 1e-9, 1.0 - 1e-9, n_grid)
        sj = Jet.variable(s, order)
        cj = self.chi_jet(sj)
        return float(np.max(np.abs(derivatives(cj)[order])))

    def diameter_integral(self):
        val, _ = quad(lambda s: self.chi(abs(s)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
        return val


PROFILE = BumpProfile()


@dataclass(frozen=True)
class Bump:
    """One radial conformal factor: center on a named geodesic, support radius
    r0 (base-metric ball), signed length increment delta."""

    center: complex          # disk coordinates, fundamental domain
    r0: float
    delta: float
    window: int = 0
    index: int = 0
    geodesic_word: tuple = ()
    arc_position: float = 0.0

    @property
    def amplitude(self):
        """a = delta/r0, the dimensionless factor amplitude."""
        return self.delta / self.r0

    @property
    def center_hyp(self):
        return hyp.disk_to_hyperboloid(self.center)

    def validate(self, injectivity_radius):
        if not self.r0 < injectivity_radius / 2.0:
            raise ValueError("bump radius %.3g exceeds half the injectivity radius" % self.r0)
        if not abs(self.amplitude) * PROFILE.c_max < 1.0:
            raise ValueError("|delta|/r0 = %.3g makes the conformal factor vanish" % abs(self.amplitude))


class ConformalMetric:
    """exp(2F) g0 for the octagon base surface.  Immutable; window updates
    construct a new metric value."""

    def __init__(self, surface=None, bumps=()):
        self.surface = surface if surface is not None else BolzaSurface()
        self.bumps = tuple(bumps)
        for b in self.bumps:
            b.validate(self.surface.injectivity_radius)
        self._lift_cache = {}

    def with_bumps(self, new_bumps):
        m = ConformalMetric(self.surface, self.bumps + tuple(new_bumps))
        return m

    @property
    def max_r0(self):
        return max((b.r0 for b in self.bumps), default=0.0)

    # --- lifted bump centers -------------------------------------------------

    def lifted_centers(self, radius):
        """All deck translates of bump centers relevant within displacement
        `radius` of the chart origin: (C (M,3), a (M,), r0 (M,), bump_id (M,))."""
        key = round(float(radius), 6)
        if key in self._lift_cache:
            return self._lift_cache[key]
        if not self.bumps:
            out = (np.zeros((0, 3)), np.zeros(0), np.ones(0), np.zeros(0, dtype=int))
            self._lift_cache[key] = out
            return out
        translates = self.surface.translates(radius + self.max_r0 + R_CIRC + 0.2)
        L = np.array([g.so21() for g in translates])
        C0 = np.array([b.center_hyp for b in self.bumps])
        C = np.einsum("gij,bj->gbi", L, C0).reshape(-1, 3)
        bump_id = np.tile(np.arange(len(self.bumps)), len(translates))
        keep = C[:, 2] <= np.cosh(radius + self.max_r0 + 1e-9)
        C = C[keep]
        bump_id = bump_id[keep]
        a = np.array([b.amplitude for b in self.bumps])[bump_id]
        r0 = np.array([b.r0 for b in self.bumps])[bump_id]
        out = (C, a, r0, bump_id)
        self._lift_cache[key] = out
        return out

    def lifts_near(self, X, margin=0.05):
        """Lift set pruned to those within r0+margin of the given points."""
        X = np.atleast_2d(X)
        radius = float(np.arccosh(np.maximum(X[:, 2].max(), 1.0))) + 0.05
        C, a, r0, bump_id = self.lifted_centers(radius)
        if len(C) == 0:
            return C, a, r0, bump_id
        step = max(1, len(X) // 512)
        Xs = X[::step]
        if step > 1:
            # exact coverage radius of the subsample over the full point set
            d_cov = hyp.dist(X[:, None, :], Xs[None, :, :]).min(axis=1).max()
        else:
            d_cov = 0.0
        u = -(Xs @ (hyp.ETA @ C.T))
        keep = u.min(axis=0) <= np.cosh(r0 + margin + d_cov)
        return C[keep], a[keep], r0[keep], bump_id[keep]

    # --- pointwise evaluation --------------------------------------------------

    def log_factor(self, X, lifts=None):
        """F at hyperboloid points (vectorized)."""
        X = np.atleast_2d(X)
        if lifts is None:
            lifts = self.lifts_near(X)
        C, a, r0, _ = lifts
        F = np.zeros(len(X))
        if len(C) == 0:
            return F
        u = -(X @ (hyp.ETA @ C.T))                      # (N, M) cosh(dist)
        q = hyp.rho2_from_u(u) / r0[None, :] ** 2
        F += np.log1p(a[None, :] * PROFILE.chi_q(q)).sum(axis=1)
        return F

    def log_factor_and_grad(self, X, lifts=None):
        """F and its ambient gradient dF/dX at hyperboloid points."""
        X = np.atleast_2d(X)
        if lifts is None:
            lifts = self.lifts_near(X)
        C, a, r0, _ = lifts
        F = np.zeros(len(X))
        G = np.zeros_like(X)
        if len(C) == 0:
            return F, G
        u = -(X @ (hyp.ETA @ C.T))
        q = hyp.rho2_from_u(u) / r0[None, :] ** 2
        chi = PROFILE.chi_q(q)
        F += np.log1p(a[None, :] * chi).sum(axis=1)
        # dF/du_j = a chi'(q) / (1 + a chi) * (drho2/du) / r0^2 ; du/dX = -eta C
        coef = a[None, :] * PROFILE.dchi_dq(q) / (1.0 + a[None, :] * chi)
        coef = coef * hyp.drho2_du(u) / r0[None, :] ** 2
        G -= coef @ (C @ hyp.ETA)
        return F, G

    def weight(self, X, lifts=None):
        return np.exp(self.log_factor(X, lifts))

    # --- public surface-point API ---------------------------------------------

    def factor_at(self, point, max_order=0):
        """F and its disk-coordinate derivatives at a fundamental-domain point.

        Returns (F,), (F, grad) or (F, grad, hess) for max_order 0, 1, 2.
        """
        if max_order not in (0, 1, 2):
            raise ValueError("max_order must be 0, 1 or 2")
        z = complex(point)
        X = hyp.disk_to_hyperboloid(z)
        C, a, r0, _ = self.lifted_centers(float(np.arccosh(max(X[2], 1.0))) + self.max_r0 + 0.05)
        if len(C) == 0:
            u = np.zeros((0,))
        else:
            u = -(X @ (hyp.ETA @ C.T))
        q = hyp.rho2_from_u(u) / r0**2 if len(C) else u
        chi = PROFILE.chi_q(q) if len(C) else u
        F = float(np.log1p(a * chi).sum()) if len(C) else 0.0
        if max_order == 0:
            return (F,)
        J, H = _disk_chart_jacobian(z)
        if len(C) == 0:
            grad = np.zeros(2)
            hess = np.zeros((2, 2))
        else:
            # dF/dq_j and d2F/dq_j^2 per lift
            dchi = PROFILE.dchi_dq(q)
            denom = 1.0 + a * chi
            dF_dq = a * dchi / denom
            # d(chi')/dq = chi * ((1/(1-q)^2)^2 - 2/(1-q)^3) sign handled below
            d2chi = _d2chi_dq2(q)
            d2F_dq2 = a * d2chi / denom - (a * dchi / denom) ** 2
            du_dX = -(C @ hyp.ETA)                       # (M,3)
            g1 = hyp.drho2_du(u) / r0**2                 # dq/du
            g2 = _d2rho2_du2(u) / r0**2
            # assemble in ambient X coords then pull back through the chart
            gradX = (dF_dq * g1)[:, None] * du_dX
            gradX = gradX.sum(axis=0)
            hessX = np.zeros((3, 3))
            for j in range(len(C)):
                v = du_dX[j]
                hessX += (d2F_dq2[j] * g1[j] ** 2 + dF_dq[j] * g2[j]) * np.outer(v, v)
            grad = J.T @ gradX
            hess = J.T @ hessX @ J
            for k in range(3):
                hess += gradX[k] * H[k]
        if max_order == 1:
            return (F, grad)
        return (F, grad, hess)

    def curvature_at(self, point):
        """Gaussian curvature of exp(2F) g0 at a fundamental-domain point:
        K = exp(-2F) (-1 - Lap0 F), computed from per-bump radial derivatives."""
        z = complex(point)
        X = hyp.disk_to_hyperboloid(z)
        return float(self.curvature_hyp(X[None])[0])

    def curvature_hyp(self, X, lifts=None):
        """Vectorized curvature at hyperboloid points."""
        X = np.atleast_2d(X)
        if lifts is None:
            lifts = self.lifts_near(X)
        C, a, r0, _ = lifts
        F = np.zeros(len(X))
        lap = np.zeros(len(X))
        if len(C):
            u = -(X @ (hyp.ETA @ C.T))
            rho2 = hyp.rho2_from_u(u)
            rho = np.sqrt(np.maximum(rho2, 0.0))
            for j in range(len(C)):
                val, d1, d2 = _radial_term_derivs(a[j], r0[j], rho[:, j])
                F += val
                small = rho[:, j] < 1e-8
                with np.errstate(divide="ignore", invalid="ignore"):
                    lap_j = d2 + d1 / np.tanh(np.maximum(rho[:, j], 1e-300))
                lap += np.where(small, 2.0 * d2, lap_j)
        return np.exp(-2.0 * F) * (-1.0 - lap)

    # --- serialization -----------------------------------------------------------

    def to_json_dict(self):
        return {
            "surface": "genus2-regular-octagon",
            "bumps": [
                {
                    "window": b.window,
                    "index": b.index,
                    "center_coords": [b.center.real, b.center.imag],
                    "r0": b.r0,
                    "delta": b.delta,
                    "geodesic_word": format_word(b.geodesic_word),
                    "arc_position": b.arc_position,
                }
                for b in self.bumps
            ],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_json_dict(), indent=1, sort_keys=True)
        if path is not None:
            tmp = str(path) + ".tmp"
            with open(tmp, "w") as f:
                f.write(text + "\n")
            os.replace(tmp, path)
        return text

    @classmethod
    def from_json(cls, source, surface=None):
        if isinstance(source, (str, bytes)) and os.path.exists(source):
            with open(source) as f:
                doc = json.load(f)
        elif isinstance(source, (str, bytes)):
            doc = json.loads(source)
        else:
            doc = source
        if doc.get("surface") != "genus2-regular-octagon":
            raise ValueError("unknown surface id %r" % doc.get("surface"))
        bumps = [
            Bump(
                center=complex(b["center_coords"][0], b["center_coords"][1]),
                r0=float(b["r0"]),
                delta=float(b["delta"]),
                window=int(b["window"]),
                index=int(b["index"]),
                geodesic_word=parse_word(b["geodesic_word"]),
                arc_position=float(b.get("arc_position", 0.0)),
            )
            for b in doc["bumps"]
        ]
        return cls(surface=surface, bumps=bumps)


def bump_length_increment(bump):
    """First-order predicted length increment of the host geodesic: exactly
    delta, by the unit-diameter-integral normalization of the profile."""
    return bump.delta


@dataclass
class CkNormReport:
    """Measured size of the perturbation exp(2F) g0 - g0 and its curvature range."""

    order: int
    f_norms: list            # sup |d^j F / d rho^j| per order j = 0..k
    metric_norms: list       # sup |d^j (exp(2F)-1) / d rho^j|
    analytic_budget: float   # 2 sup|chi^(k)| * max |delta| r0^-(k+1): linear-regime bound
    curvature_min: float
    curvature_max: float
    eps0: float
    admissible: bool
    overlapping_supports: bool = False

    @property
    def measured_norm(self):
        return max(self.metric_norms)


def admissibility(metric, eps0, k, n_radial=65):
    """Estimate the C^k size of the perturbation and its curvature range.

    Radial-derivative estimator: the bump terms are radial, so sup norms of
    d^j/drho^j along radial rays are measured per bump on a grid with
    >= 8 samples across every support (n_radial >> 8); disjoint supports make
    the estimate exact for each term, overlapping supports (possible across
    windows) are combined by summation, which upper-bounds the true norm.
    NotAdmissible is a report state, never an exception.
    """
    if k < 2:
        raise ValueError("admissibility order k must be >= 2")
    bumps = metric.bumps
    if not bumps:
        grid = _base_grid()
        K = metric.curvature_hyp(grid)
        return CkNormReport(
            order=k,
            f_norms=[0.0] * (k + 1),
            metric_norms=[0.0] * (k + 1),
            analytic_budget=0.0,
            curvature_min=float(K.min()),
            curvature_max=float(K.max()),
            eps0=eps0,
            admissible=True,
        )
    overlaps = _supports_overlap(metric)
    f_sup = np.zeros(k + 1)
    m_sup = np.zeros(k + 1)
    k_min, k_max = np.inf, -np.inf
    for b in bumps:
        rho = np.linspace(0.0, b.r0 * (1.0 - 1e-9), n_radial)
        rj = Jet.variable(rho, k)
        term = jet_log(1.0 + PROFILE.chi_jet(rj * (1.0 / b.r0)) * b.amplitude)
        metric_dev = jet_exp(term * 2.0) - 1.0
        for j, (df, dm) in enumerate(zip(derivatives(term), derivatives(metric_dev))):
            f_sup[j] = max(f_sup[j], np.abs(df).max())
            m_sup[j] = max(m_sup[j], np.abs(dm).max())
        # curvature along the radial line through this bump center (plus others)
        P = b.center_hyp
        V = hyp.project_tangent(P, np.array([1.0, 0.3, 0.0]))
        V = hyp.normalize_tangent(V)
        pts, _ = hyp.flow(np.repeat(P[None], len(rho), axis=0), np.repeat(V[None], len(rho), axis=0), rho)
        Kv = metric.curvature_hyp(pts)
        k_min, k_max = min(k_min, Kv.min()), max(k_max, Kv.max())
    if overlaps:
        f_sup = f_sup * 2.0
        m_sup = m_sup * 2.0
    grid = _base_grid()
    Kg = metric.curvature_hyp(grid)
    k_min, k_max = float(min(k_min, Kg.min())), float(max(k_max, Kg.max()))
    c_k = PROFILE.derivative_sup(k)
    budget = max(2.0 * c_k * abs(b.delta) * b.r0 ** (-(k + 1)) for b in bumps)
    measured = float(m_sup.max())
    return CkNormReport(
        order=k,
        f_norms=[float(x) for x in f_sup],
        metric_norms=[float(x) for x in m_sup],
        analytic_budget=float(budget),
        curvature_min=k_min,
        curvature_max=k_max,
        eps0=eps0,
        admissible=bool(k_max < 0.0 and measured < eps0),
        overlapping_supports=overlaps,
    )


def _supports_overlap(metric):
    bumps = metric.bumps
    for i in range(len(bumps)):
        for j in range(i + 1, len(bumps)):
            d = hyp.dist(bumps[i].center_hyp, bumps[j].center_hyp)
            if d < bumps[i].r0 + bumps[j].r0:
                return True
    return False


def _base_grid(n_r=12, n_t=24):
    """Coarse polar grid over the fundamental-domain region of the disk."""
    r = np.linspace(0.0, 0.6, n_r)
    t = np.linspace(0.0, 2 * np.pi, n_t, endpoint=False)
    z = (r[:, None] * np.exp(1j * t[None, :])).ravel()
    return hyp.disk_to_hyperboloid(z)


# --- radial derivatives -------------------------------------------------------------

def _radial_term_derivs(a, r0, rho, order=2):
    """Value and d/drho derivatives of log(1 + a chi(rho/r0)) up to `order`."""
    rho = np.asarray(rho, dtype=float)
    inside = rho / r0 < 1.0 - 1e-9
    out = [np.zeros_like(rho) for _ in range(order + 1)]
    if inside.any():
        sj = Jet.variable(rho[inside], order) * (1.0 / r0)
        term = jet_log(1.0 + PROFILE.chi_jet(sj) * a)
        for k, d in enumerate(derivatives(term)):
            out[k][inside] = d
    return out


def _d2chi_dq2(q):
    """Second derivative of chi w.r.t. q = s^2."""
    q = np.asarray(q, dtype=float)
    out = np.zeros_like(q)
    inside = q < 1.0 - _SUPPORT_TOL
    qi = q[inside]
    w = 1.0 - qi
    chi = _profile_norm() * np.exp(-1.0 / w)
    out[inside] = chi * (1.0 / w**4 - 2.0 / w**3)
    return out


def _d2rho2_du2(u):
    """Second derivative of arccosh(u)^2 w.r.t. u, smooth through u = 1."""
    u = np.asarray(u, dtype=float)
    v = np.maximum(u - 1.0, 0.0)
    # from rho2 = 2v - v^2/3 + (4/45)v^3 - v^4/35
    series = -2.0 / 3.0 + (8.0 / 15.0) * v - (12.0 / 35.0) * v * v
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.arccosh(np.maximum(u, 1.0))
        s2 = np.maximum(u * u - 1.0, 1e-300)
        exact = 2.0 / s2 - 2.0 * rho * u / s2**1.5
    return np.where(v < 1e-4, series, exact)


def _disk_chart_jacobian(z):
    """Jacobian (3x2) and per-component Hessians (3 of 2x2) of the map
    (x, y) -> hyperboloid X."""
    x, y = z.real, z.imag
    r2 = x * x + y * y
    den = 1.0 - r2
    X1 = 2 * x / den
    X2 = 2 * y / den
    X0 = (1 + r2) / den
    d_den = np.array([-2 * x, -2 * y])
    J = np.zeros((3, 2))
    J[0] = np.array([2.0 / den, 0.0]) - 2 * x * d_den / den**2
    J[1] = np.array([0.0, 2.0 / den]) - 2 * y * d_den / den**2
    J[2] = np.array([2 * x, 2 * y]) / den - (1 + r2) * d_den / den**2
    # Hessians via exact second partials
    H = np.zeros((3, 2, 2))
    dd = np.array([[-2.0, 0.0], [0.0, -2.0]])  # Hess of den
    for comp, (num, dnum, hnum) in enumerate(
        [
            (2 * x, np.array([2.0, 0.0]), np.zeros((2, 2))),
            (2 * y, np.array([0.0, 2.0]), np.zeros((2, 2))),
            (1 + r2, np.array([2 * x, 2 * y]), np.array([[2.0, 0.0], [0.0, 2.0]])),
        ]
    ):
        H[comp] = (
            hnum / den
            - (np.outer(dnum, d_den) + np.outer(d_den, dnum)) / den**2
            - num * dd / den**2
            + 2 * num * np.outer(d_den, d_den) / den**3
        )
    return J, H
