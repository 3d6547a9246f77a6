"""Closed geodesics of a perturbed metric, one per free homotopy class.

A discrete closed curve lives in the universal cover with deck-twisted
periodicity node[i+N] = twist(node[i]).  Relaxation minimizes the discrete
length energy sum_i (w_i d_i)^2 / tau_i (w = conformal factor averaged over
segment ends, d = exact hyperbolic distance, tau = target spacing share);
the minimizer is the discrete geodesic parameterized proportionally to tau.
Lengths are measured afterwards by the midpoint rule
sum exp(F(midpoint)) * d, second-order in the spacing.

Numerics: each class is relaxed in standard position, conjugated so its axis
is the geodesic through the chart origin in the first coordinate direction.
There the deck twist is an analytic translation matrix, node coordinates stay
within cosh(length/2 + spacing), and distances use the chord form
2 asinh(|X-Y|/2); together this keeps float noise at machine scale uniformly
over the working set.  Bump data is pulled into the standard frame through
the (isometric) frame matrix of the axis.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import hyperbolic as hyp
from .errors import NoConvergence, SpacingCollapse
from .surface_group import axis_basis, class_length


@dataclass
class Tolerances:
    spacing: float = 0.01
    grad_tol: float = 1e-10
    residual_tol: float = 1e-7
    max_iters: int = 100_000


DEFAULT_TOLERANCES = Tolerances()


class _Frame:
    """Isometry taking the standard axis (through the origin, first coordinate
    direction) to the class axis, plus the analytic standard-position twist."""

    def __init__(self, twist):
        P, V = axis_basis(twist)
        W = hyp.ETA @ np.cross(P, V)
        W = W / np.sqrt(hyp.mink(W, W))
        self.ell = class_length(twist)
        self.B = np.stack([V, W, P], axis=1)
        self.Binv = np.diag([1.0, 1.0, -1.0]) @ self.B.T @ hyp.ETA

    def twist_std(self):
        ch, sh = np.cosh(self.ell), np.sinh(self.ell)
        return np.array([[ch, 0.0, sh], [0.0, 1.0, 0.0], [sh, 0.0, ch]])

    def axis_std(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + (3,))
        out[..., 0] = np.sinh(s)
        out[..., 2] = np.cosh(s)
        return out

    def to_world(self, Y):
        return Y @ self.B.T

    def to_std(self, X):
        return X @ self.Binv.T


def _class_frame(cls, surface):
    """Frame of the class axis, built on the conjugate of the representative
    whose axis passes through the fundamental domain; cached per class."""
    cache = getattr(surface, "_frame_cache", None)
    if cache is None:
        cache = {}
        surface._frame_cache = cache
    fr = cache.get(cls.word)
    if fr is None:
        fr = _Frame(surface.normalized_conjugate(cls.representative))
        cache[cls.word] = fr
    return fr


@dataclass
class DiscreteClosedCurve:
    """Twisted-periodic polyline representing a closed curve on the surface."""

    cls: object                   # ConjugacyClass
    nodes: np.ndarray             # disk-model complex array, length N
    twist: object                 # MoebiusElement with node[i+N] = twist(node[i])
    spacing: float                # nominal target spacing
    targets: np.ndarray = None    # per-segment target spacing (len N)
    frame: object = field(default=None, repr=False)   # _Frame of the axis
    std_nodes: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.targets is None:
            self.targets = np.full(len(self.nodes), self.spacing)

    @property
    def N(self):
        return len(self.nodes)

    def hyperboloid_nodes(self):
        return hyp.disk_to_hyperboloid(self.nodes)

    def standard_nodes(self, surface=None):
        if self.std_nodes is not None:
            return self.std_nodes
        fr = self.frame if self.frame is not None else _Frame(self.twist)
        return fr.to_std(self.hyperboloid_nodes())


@dataclass
class ClosedGeodesicNumeric:
    """A converged discrete closed geodesic with measured invariants."""

    curve: DiscreteClosedCurve
    length: float
    residual: float
    tangents: np.ndarray          # hyperboloid tangent per node, perturbed-metric unit
    iterations: int = 0


def initial_curve(cls, metric, spacing, anchors=()):
    """Warm start: N = ceil(base_length/spacing) points along the base axis.

    `anchors` is an optional list of (arc_position, fine_radius) pairs around
    which the grid is refined (step radius/8) to resolve bump supports; the
    anchor positions become grid nodes exactly, preserving bump symmetry.
    Arc positions are measured from the axis point closest to the origin.
    """
    fr = _class_frame(cls, metric.surface)
    ell = fr.ell
    s_grid = _build_grid(ell, spacing, anchors)
    Y = fr.axis_std(s_grid)
    targets = np.diff(np.append(s_grid, s_grid[0] + ell))
    return DiscreteClosedCurve(
        cls=cls,
        nodes=hyp.hyperboloid_to_disk(fr.to_world(Y)),
        twist=surface_twist(cls, metric.surface),
        spacing=spacing,
        targets=targets,
        frame=fr,
        std_nodes=Y,
    )


def surface_twist(cls, surface):
    """Deck transformation used for curves of this class (axis through the
    fundamental domain); cached on the surface."""
    cache = getattr(surface, "_twist_cache", None)
    if cache is None:
        cache = {}
        surface._twist_cache = cache
    tw = cache.get(cls.word)
    if tw is None:
        tw = surface.normalized_conjugate(cls.representative)
        cache[cls.word] = tw
    return tw


def _build_grid(ell, spacing, anchors):
    n = int(np.ceil(ell / spacing))
    base = -ell / 2.0 + ell * np.arange(n) / n
    if not anchors:
        return base
    lo = -ell / 2.0
    pts = set(np.round(base, 12))
    for pos, radius in anchors:
        pos = (pos - lo) % ell + lo
        fine = min(spacing, max(radius / 8.0, 1e-7))
        span = min(1.5 * radius, ell / 4.0)
        k = max(int(np.ceil(span / fine)), 1)
        for j in range(-k, k + 1):
            s = (pos + j * span / k - lo) % ell + lo
            pts.add(round(s, 12))
    grid = np.array(sorted(pts))
    # drop points crowding an anchor patch: no segment shorter than 0.35x the
    # local intended step (degenerate segments make the energy needlessly stiff)
    fine_min = min(min(spacing, max(r / 8.0, 1e-7)) for _, r in anchors)
    anchor_pts = {round((p - lo) % ell + lo, 12) for p, _ in anchors}
    keep = [0]
    for i in range(1, len(grid)):
        if grid[i] - grid[keep[-1]] >= 0.35 * fine_min:
            keep.append(i)
        elif round(grid[i], 12) in anchor_pts:
            keep[-1] = i  # prefer the anchor point itself
    grid = grid[keep]
    if (grid[0] + ell) - grid[-1] < 0.35 * fine_min and len(grid) > 1:
        grid = grid[:-1]
    return grid


# --- stable distance helpers ----------------------------------------------------

def _chord_dist(A, B):
    """2 asinh(|A-B|_Minkowski / 2): hyperbolic distance, stable for nearby points."""
    D = A - B
    c2 = np.maximum(hyp.mink(D, D), 0.0)
    return 2.0 * np.arcsinh(0.5 * np.sqrt(c2))


def _seg_dist_sinh(A, B):
    """(distance, sinh(distance)) per segment via the chord form."""
    D = A - B
    c2 = np.maximum(hyp.mink(D, D), 0.0)
    c = np.sqrt(c2)
    d = 2.0 * np.arcsinh(0.5 * c)
    s = c * np.sqrt(1.0 + 0.25 * c2)
    return d, s


def _pulled_lifts(curve, metric, margin=0.08):
    """Bump lifts relevant to the curve, pulled into the standard frame."""
    fr = curve.frame if curve.frame is not None else _Frame(curve.twist)
    Y = curve.standard_nodes()
    X = fr.to_world(Y)
    C, a, r0, bump_id = metric.lifts_near(X, margin=margin)
    if len(C):
        C = fr.to_std(C)
    return (C, a, r0, bump_id), fr, Y


# --- energy, gradient, descent ----------------------------------------------------

def _energy_and_grad(X, L, metric, lifts, targets):
    XN = np.vstack([X, (L @ X[0])[None]])
    d, s = _seg_dist_sinh(XN[:-1], XN[1:])
    F, G = metric.log_factor_and_grad(X, lifts)
    w = np.exp(F)
    wN = np.append(w, w[0])
    wbar = 0.5 * (wN[:-1] + wN[1:])
    E = float(np.sum((wbar * d) ** 2 / targets))
    dE_dd = 2.0 * wbar**2 * d / targets
    dE_dw = 2.0 * wbar * d**2 / targets
    s = np.maximum(s, 1e-300)
    EB = XN[1:] @ hyp.ETA
    EA = XN[:-1] @ hyp.ETA
    gX = -dE_dd[:, None] * EB / s[:, None]
    contrib_next = dE_dd[:, None] * EA / s[:, None]
    gX[1:] -= contrib_next[:-1]
    gX[0] -= contrib_next[-1] @ L
    coeff = 0.5 * dE_dw + np.roll(0.5 * dE_dw, 1)
    gX += (coeff * w)[:, None] * G
    return E, gX


def _frames(X):
    """Minkowski-orthonormal tangent frame (e1, e2) at each node."""
    ref1 = np.zeros_like(X)
    ref1[:, 0] = 1.0
    e1 = hyp.project_tangent(X, ref1)
    n1 = hyp.tangent_norm(e1)
    degenerate = n1 < 1e-6
    if degenerate.any():
        alt = np.zeros_like(X)
        alt[:, 1] = 1.0
        e1 = np.where(degenerate[:, None], hyp.project_tangent(X, alt), e1)
        n1 = hyp.tangent_norm(e1)
    e1 = e1 / n1[:, None]
    ref2 = np.zeros_like(X)
    ref2[:, 1] = 1.0
    e2 = hyp.project_tangent(X, ref2)
    e2 = e2 - hyp.mink(e2, e1)[:, None] * e1
    n2 = hyp.tangent_norm(e2)
    degenerate = n2 < 1e-6
    if degenerate.any():
        alt = np.zeros_like(X)
        alt[:, 0] = 1.0
        cand = hyp.project_tangent(X, alt)
        cand = cand - hyp.mink(cand, e1)[:, None] * e1
        e2 = np.where(degenerate[:, None], cand, e2)
        n2 = hyp.tangent_norm(e2)
    e2 = e2 / n2[:, None]
    return e1, e2


def _local_grad(gX, e1, e2):
    """Chart gradient for the updates X -> exp_X(a e1 + b e2)."""
    return np.stack([(gX * e1).sum(axis=1), (gX * e2).sum(axis=1)], axis=1)


def _retract(X, e1, e2, ab):
    V = ab[:, 0:1] * e1 + ab[:, 1:2] * e2
    n = hyp.tangent_norm(V)
    small = n < 1e-16
    nn = np.where(small, 1.0, n)
    Xn = X * np.cosh(n)[:, None] + (V / nn[:, None]) * np.sinh(n)[:, None]
    Xn = np.where(small[:, None], X + V, Xn)
    return Xn / np.sqrt(np.maximum(-hyp.mink(Xn, Xn), 1e-300))[:, None]


def _max_dev(X, L, metric, lifts, targets):
    """Largest node deviation from the two-segment discrete-geodesic midpoint
    (the quantity behind the geodesic residual, before normalization)."""
    prev_ = np.vstack([np.linalg.solve(L, X[-1])[None], X[:-1]])
    nxt = np.vstack([X[1:], (L @ X[0])[None]])
    M = _two_segment_midpoint(prev_, nxt, np.roll(targets, 1), targets, metric, lifts)
    return float(_chord_dist(X, M).max())


def _descend(X, L, metric, lifts, targets, tol):
    """Barzilai-Borwein descent in per-node tangent frames with nonmonotone
    acceptance (near the minimum the energy sits below float resolution while
    the gradient is still informative).

    Converges when the gradient sup norm passes grad_tol or when the directly
    measured node defect is within half the residual budget
    residual_tol * spacing^2 (the residual is what gets certified downstream).
    """
    dev_budget = 0.5 * tol.residual_tol * tol.spacing**2
    check_every = 150
    if _max_dev(X, L, metric, lifts, targets) <= dev_budget:
        return X, 0, True
    E, gX = _energy_and_grad(X, L, metric, lifts, targets)
    e1, e2 = _frames(X)
    g = _local_grad(gX, e1, e2)
    step = 1e-3
    prev_g = None
    last_move = None
    recent_E = [E]
    prev_check_dev = np.inf
    it = 0
    while it < tol.max_iters:
        gmax = float(np.abs(g).max())
        if gmax < tol.grad_tol:
            return X, it, True
        backtrack_failed = False
        if prev_g is not None and last_move is not None:
            y = g - prev_g
            sy = float((last_move * y).sum())
            if sy > 1e-300:
                if it % 2 == 0:
                    step = float((last_move * last_move).sum()) / sy
                else:
                    step = sy / max(float((y * y).sum()), 1e-300)
                step = min(max(step, 1e-13), 10.0)
        E_ref = max(recent_E)
        trial = step
        accepted = False
        for _ in range(60):
            move = -trial * g
            X_new = _retract(X, e1, e2, move)
            E_new, gX_new = _energy_and_grad(X_new, L, metric, lifts, targets)
            if np.isfinite(E_new) and E_new <= E_ref * (1.0 + 1e-15):
                accepted = True
                break
            trial *= 0.5
        if accepted:
            prev_g = g
            last_move = move
            X, E = X_new, E_new
            recent_E.append(E)
            if len(recent_E) > 10:
                recent_E.pop(0)
            e1, e2 = _frames(X)
            g = _local_grad(gX_new, e1, e2)
            it += 1
        else:
            backtrack_failed = True
        if backtrack_failed or it % check_every == 0:
            dev = _max_dev(X, L, metric, lifts, targets)
            if dev <= dev_budget:
                return X, it, True
            if backtrack_failed or dev >= prev_check_dev * 0.9:
                return X, it, dev <= 2.0 * dev_budget
            prev_check_dev = dev
    return X, it, _max_dev(X, L, metric, lifts, targets) <= dev_budget


def _disk_grad(Y, L, metric, lifts, targets):
    """Energy gradient in the fixed disk chart of the current frame."""
    _, gX = _energy_and_grad(Y, L, metric, lifts, targets)
    z = hyp.hyperboloid_to_disk(Y)
    J = hyp.disk_jacobian(z)
    return np.einsum("nki,nk->ni", J, gX)


def _newton_polish(Y, L, metric, lifts, targets, tol, rounds=14):
    """Damped Newton iteration on the energy in the (fixed, global) disk chart
    of the standard frame, the Hessian assembled by central differences of the
    analytic chart gradient.  Levenberg damping keeps the step usable when the
    bump curvature makes the Hessian nearly indefinite; steps are accepted on
    gradient-norm decrease and convergence is declared on the measured defect."""
    dev_budget = 0.5 * tol.residual_tol * tol.spacing**2
    n = len(Y)
    dev = _max_dev(Y, L, metric, lifts, targets)
    eps = 1e-7
    z = hyp.hyperboloid_to_disk(Y)
    zc = np.stack([z.real, z.imag], axis=1)
    g = _disk_grad(Y, L, metric, lifts, targets).ravel()
    for _ in range(rounds):
        if dev <= dev_budget:
            return Y, dev, True
        H = np.zeros((2 * n, 2 * n))
        for j in range(2 * n):
            zp = zc.copy()
            zp.flat[j] += eps
            zm = zc.copy()
            zm.flat[j] -= eps
            gp = _disk_grad(hyp.disk_to_hyperboloid(zp[:, 0] + 1j * zp[:, 1]), L, metric, lifts, targets)
            gm = _disk_grad(hyp.disk_to_hyperboloid(zm[:, 0] + 1j * zm[:, 1]), L, metric, lifts, targets)
            H[:, j] = (gp - gm).ravel() / (2 * eps)
        H = 0.5 * (H + H.T)
        h_scale = float(np.abs(np.diag(H)).mean()) + 1e-12
        lam = 0.0
        accepted = False
        for _ in range(6):
            try:
                delta = np.linalg.solve(H + (lam + 1e-12 * h_scale) * np.eye(2 * n), -g)
            except np.linalg.LinAlgError:
                lam = max(10.0 * lam, 1e-4 * h_scale)
                continue
            zt = zc + delta.reshape(n, 2)
            if np.abs(zt[:, 0] + 1j * zt[:, 1]).max() >= 1.0:
                lam = max(10.0 * lam, 1e-4 * h_scale)
                continue
            Y_try = hyp.disk_to_hyperboloid(zt[:, 0] + 1j * zt[:, 1])
            g_try = _disk_grad(Y_try, L, metric, lifts, targets).ravel()
            if np.isfinite(g_try).all():
                # Newton may overshoot transiently; quadratic contraction takes
                # over within a round or two, so accept and track the best defect
                Y, zc, g = Y_try, zt, g_try
                accepted = True
                break
            lam = max(10.0 * lam, 1e-4 * h_scale)
        dev = _max_dev(Y, L, metric, lifts, targets)
        if not accepted:
            return Y, dev, dev <= 2.0 * dev_budget
    return Y, dev, dev <= 2.0 * dev_budget


def relax(curve, metric, tolerances=None):
    """Relax a discrete closed curve to the closed geodesic of the metric in
    its free homotopy class (unique in negative curvature; callers audit the
    curvature separately).

    First-order descent handles large displacements; a Newton polish drives
    the node defect below the residual budget.  Raises NoConvergence if the
    defect budget is not reached, SpacingCollapse if adaptive resampling
    cannot restore the spacing bounds.
    """
    tol = tolerances or DEFAULT_TOLERANCES
    lifts, fr, Y = _pulled_lifts(curve, metric)
    L = fr.twist_std()
    targets = np.asarray(curve.targets, dtype=float)
    total_iters = 0
    # cap the first-order phase; the Newton polish owns the stiff tail
    bb_tol = replace(tol, max_iters=min(tol.max_iters, 1500))
    for round_ in range(4):
        Y, iters, converged = _descend(Y, L, metric, lifts, targets, bb_tol)
        total_iters += iters
        if not converged:
            Y, dev, converged = _newton_polish(Y, L, metric, lifts, targets, tol)
        if not converged:
            raise NoConvergence(
                "relaxation of %s: defect tolerance not reached after %d iterations"
                % (getattr(curve.cls, "word", "?"), total_iters)
            )
        YN = np.vstack([Y, (L @ Y[0])[None]])
        d = _chord_dist(YN[:-1], YN[1:])
        if not ((d < targets / 3.0) | (d > 3.0 * targets)).any():
            break
        if round_ == 3:
            raise SpacingCollapse("resampling failed for %s" % (getattr(curve.cls, "word", "?"),))
        Y = _resample(Y, L, targets)
    out_curve = replace(
        curve,
        nodes=hyp.hyperboloid_to_disk(fr.to_world(Y)),
        targets=targets,
        frame=fr,
        std_nodes=Y,
    )
    return ClosedGeodesicNumeric(
        curve=out_curve,
        length=float(curve_length(out_curve, metric)),
        residual=float(geodesic_residual(out_curve, metric)),
        tangents=unit_tangents(out_curve, metric),
        iterations=total_iters,
    )


def _resample(Y, L, targets):
    """Redistribute nodes along the polyline proportionally to target shares."""
    YN = np.vstack([Y, (L @ Y[0])[None]])
    d = _chord_dist(YN[:-1], YN[1:])
    cum = np.concatenate([[0.0], np.cumsum(d)])
    share = np.concatenate([[0.0], np.cumsum(targets / targets.sum())]) * cum[-1]
    Y_out = np.zeros_like(Y)
    seg = 0
    for i, s in enumerate(share[:-1]):
        while seg + 1 < len(cum) - 1 and cum[seg + 1] <= s:
            seg += 1
        t = (s - cum[seg]) / max(cum[seg + 1] - cum[seg], 1e-300)
        Y_out[i] = hyp.slerp(YN[seg], YN[seg + 1], np.array(t))
    return Y_out


# --- measurements -------------------------------------------------------------------

def curve_length(curve, metric):
    """Midpoint-rule length: exact hyperbolic segment distances times the
    conformal factor at hyperbolic segment midpoints; O(spacing^2) quadrature."""
    lifts, fr, Y = _pulled_lifts(curve, metric)
    L = fr.twist_std()
    YN = np.vstack([Y, (L @ Y[0])[None]])
    d = _chord_dist(YN[:-1], YN[1:])
    if not metric.bumps:
        return float(d.sum())
    mids = hyp.midpoint(YN[:-1], YN[1:])
    F = metric.log_factor(mids, lifts)
    return float(np.sum(np.exp(F) * d))


def geodesic_residual(curve, metric):
    """Max over nodes of the deviation from the energy midpoint of the metric's
    geodesic through the node's neighbors, normalized by the nominal spacing
    squared."""
    lifts, fr, Y = _pulled_lifts(curve, metric)
    L = fr.twist_std()
    targets = np.asarray(curve.targets, dtype=float)
    prev_ = np.vstack([np.linalg.solve(L, Y[-1])[None], Y[:-1]])
    nxt = np.vstack([Y[1:], (L @ Y[0])[None]])
    M = _two_segment_midpoint(prev_, nxt, np.roll(targets, 1), targets, metric, lifts)
    dev = _chord_dist(Y, M)
    return float(np.max(dev) / curve.spacing**2)


def _two_segment_midpoint(A, B, tauA, tauB, metric, lifts, iters=120):
    """Minimizer over m of (wbar(A,m) d(A,m))^2/tauA + (wbar(m,B) d(m,B))^2/tauB:
    the interior node position of the two-segment discrete geodesic (the energy
    form pins the along-curve position; plain length is degenerate along it)."""
    M = hyp.midpoint(A, B)
    wA = np.exp(metric.log_factor(A, lifts))
    wB = np.exp(metric.log_factor(B, lifts))
    step = 1e-2
    prev_g = None
    last_move = None
    for _ in range(iters):
        F, G = metric.log_factor_and_grad(M, lifts)
        w = np.exp(F)
        wbA = 0.5 * (wA + w)
        wbB = 0.5 * (w + wB)
        dA, sA = _seg_dist_sinh(A, M)
        dB, sB = _seg_dist_sinh(M, B)
        sA = np.maximum(sA, 1e-300)
        sB = np.maximum(sB, 1e-300)
        cA = 2.0 * wbA * dA / tauA
        cB = 2.0 * wbB * dB / tauB
        gX = (
            -(cA * wbA)[:, None] * (A @ hyp.ETA) / sA[:, None]
            - (cB * wbB)[:, None] * (B @ hyp.ETA) / sB[:, None]
            + (0.5 * w * (cA * dA + cB * dB))[:, None] * G
        )
        e1, e2 = _frames(M)
        g = _local_grad(gX, e1, e2)
        if np.abs(g).max() < 1e-13 * max(1.0, float(np.abs(M).max())):
            break
        if prev_g is not None and last_move is not None:
            y = g - prev_g
            sy = float((last_move * y).sum())
            if sy > 1e-300:
                step = min(max(float((last_move * last_move).sum()) / sy, 1e-12), 1.0)
        move = -step * g
        M = _retract(M, e1, e2, move)
        prev_g = g
        last_move = move
    return M


def unit_tangents(curve, metric):
    """Central-difference tangents, unit norm in the perturbed metric."""
    lifts, fr, Y = _pulled_lifts(curve, metric)
    L = fr.twist_std()
    nxt = np.vstack([Y[1:], (L @ Y[0])[None]])
    prev_ = np.vstack([np.linalg.solve(L, Y[-1])[None], Y[:-1]])
    V = hyp.project_tangent(Y, nxt - prev_)
    V = hyp.normalize_tangent(V)
    F = metric.log_factor(Y, lifts)
    V = V * np.exp(-F)[:, None]
    return fr.to_world(V)


def relaxed_length(cls, metric, spacing=0.01, anchors=(), tolerances=None, root_cls=None):
    """Length of the class's closed geodesic; iterates p^k are relaxed through
    their primitive root and scaled by k (avoids wrapped-curve conditioning)."""
    if not cls.primitive and root_cls is not None:
        base = relax(initial_curve(root_cls, metric, spacing, anchors), metric, tolerances)
        return cls.power * base.length
    return relax(initial_curve(cls, metric, spacing, anchors), metric, tolerances).length
