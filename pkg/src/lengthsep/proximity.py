"""Geometric proximity analysis of a working set of closed geodesics:
almost-intersections, covering segments, self-proximity, phase-space
separation audits, and the safe-point search that feeds bump placement.

All distances are exact quotient distances realized through a bounded set of
deck translates (every pair below the tube scale is realized by a translate
whose displacement is at most twice the domain circumradius plus the tube
radius).  The Euclidean KD-tree query radius eps/2 is exact-safe: the
Euclidean length of any path in the disk is at most half its hyperbolic
length.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import hyperbolic as hyp
from .errors import CountBoundViolated, CoverIncomplete, NoSafeSegment
from .surface_group import R_CIRC, format_word

# largest supported quotient-distance query radius: every audit tube and
# clearance request stays below it, and the minimum over pairs of the phase
# surrogate does too (perpendicular systole crossings give gaps ~ pi/4)
MAX_QUERY = 1.25


@dataclass
class ProximityConstants:
    """Scalar constants for the proximity bounds; eps0_phase is fitted from
    the measured phase-space separation, never assumed."""

    kappa: float = 1.0
    r_m: float = 1.4
    eps0_phase: float = 0.0

    @property
    def kappa0(self):
        return float(np.sqrt(1.0 + self.kappa))

    @property
    def C1(self):
        return self.eps0_phase / 4.0

    @property
    def C2(self):
        return float(self.kappa0 * np.exp(self.kappa * self.r_m / 2.0))

    @property
    def C3(self):
        return 2.0 * (1.0 + self.C2) / max(self.C1, 1e-300)


@dataclass
class AlmostIntersection:
    """Strict local minimum of the pairwise distance field below the tube
    radius; params are arc positions on the two geodesics."""

    s: float
    t: float
    x: np.ndarray            # point on beta (reduced, hyperboloid)
    y: np.ndarray            # point on gamma (reduced, hyperboloid)
    distance: float
    sasaki_gap: float
    i: int = 0               # node indices of the grid minimum
    j: int = 0
    translate: int = 0


@dataclass
class SegmentCover:
    arcs: list               # (s_lo, s_hi) parameter intervals on beta
    count: int
    max_arc: float
    eps: float

    def total_length(self):
        return float(sum(hi - lo for lo, hi in self.arcs))

    def contains(self, s, length):
        s = s % length
        for lo, hi in self.arcs:
            if lo <= s <= hi or lo <= s - length <= hi or lo <= s + length <= hi:
                return True
        return False


@dataclass
class SafePoint:
    geodesic_word: tuple
    arc_position: float
    point: complex           # disk coordinates of the reduced point
    clearance: float         # verified clearance radius (>= requested eps)
    segment: tuple           # free parameter interval the point was taken from

    def __repr__(self):
        return "SafePoint(%s @ %.4f, clearance %.4g)" % (
            format_word(self.geodesic_word),
            self.arc_position,
            self.clearance,
        )


class GeodesicTrace:
    """A relaxed closed geodesic prepared for distance queries: reduced nodes,
    reduced tangents, arc positions, and a translate cloud with a KD-tree."""

    def __init__(self, numeric, surface, cloud_radius=None):
        self.numeric = numeric
        self.cls = numeric.curve.cls
        self.word = self.cls.word
        self.length = numeric.length
        self.surface = surface
        X = numeric.curve.hyperboloid_nodes()
        R, M = surface.reduce_points_with_matrices(X)
        self.nodes = R
        self.tangents = np.einsum("nij,nj->ni", M, numeric.tangents)
        ell = self.cls.base_length
        grid = np.asarray(numeric.curve.targets, dtype=float)
        self.params = (np.concatenate([[0.0], np.cumsum(grid)[:-1]]) - ell / 2.0)
        if cloud_radius is None:
            cloud_radius = 2.0 * R_CIRC + MAX_QUERY + 0.05
        translates = surface.translates(cloud_radius)
        L = np.array([g.so21() for g in translates])
        cloud = np.einsum("gij,nj->gni", L, R)
        n_tr, n_nodes = cloud.shape[0], cloud.shape[1]
        cloud = cloud.reshape(-1, 3)
        cloud_node = np.tile(np.arange(n_nodes), n_tr)
        cloud_translate = np.repeat(np.arange(n_tr), n_nodes)
        # only translate images reachable from the fundamental domain at the
        # largest allowed query radius can ever be hit
        keep = cloud[:, 2] <= np.cosh(R_CIRC + MAX_QUERY + 0.05)
        self.cloud = cloud[keep]
        self.cloud_node = cloud_node[keep]
        self.cloud_translate = cloud_translate[keep]
        self.translate_mats = L
        z = hyp.hyperboloid_to_disk(self.cloud)
        self.tree = cKDTree(np.stack([z.real, z.imag], axis=1))
        zr = hyp.hyperboloid_to_disk(R)
        self._disk_nodes = zr
        self.node_tree = cKDTree(np.stack([zr.real, zr.imag], axis=1))

    def point_at(self, s):
        """Reduced point at arc position s (geodesic interpolation between nodes)."""
        return self.points_at(np.array([s]))[0]

    def points_at(self, s):
        """Vectorized reduced points at arc positions (geodesic interpolation
        between consecutive nodes; intervals wrapped across the reduction
        boundary snap to the nearest node)."""
        s = np.asarray(s, dtype=float)
        ell = self.cls.base_length
        s = (s - self.params[0]) % ell + self.params[0]
        i = np.clip(np.searchsorted(self.params, s) - 1, 0, len(self.params) - 1)
        j = (i + 1) % len(self.params)
        s0 = self.params[i]
        s1 = s0 + (self.params[j] - s0) % ell
        span = np.maximum(s1 - s0, 1e-300)
        t = np.clip((s - s0) / span, 0.0, 1.0)
        A, B = self.nodes[i], self.nodes[j]
        wrapped = hyp.dist(A, B) > 1.0
        out = hyp.slerp(A, np.where(wrapped[:, None], A, B), t)
        snap = np.where(t < 0.5, i, j)
        out[wrapped] = self.nodes[snap[wrapped]]
        return out

    def query_points(self, Q, eps):
        """All cloud points within hyperbolic eps of query points Q (M,3).

        Returns (qi, ci, d): query index, cloud index, exact distance.
        """
        if eps > MAX_QUERY:
            raise ValueError("query radius %.3g exceeds the cloud budget %.3g" % (eps, MAX_QUERY))
        Q = np.atleast_2d(Q)
        z = hyp.hyperboloid_to_disk(Q)
        pts = np.stack([z.real, z.imag], axis=1)
        coo = cKDTree(pts).sparse_distance_matrix(
            self.tree, eps / 2.0, output_type="coo_matrix"
        )
        qi, ci = coo.row, coo.col
        if len(qi) == 0:
            return qi, ci, np.zeros(0)
        d = hyp.dist(Q[qi], self.cloud[ci])
        keep = d < eps
        return qi[keep], ci[keep], d[keep]


def build_traces(numerics, surface, cloud_radius=None):
    return [GeodesicTrace(g, surface, cloud_radius) for g in numerics]


# --- Sasaki-distance surrogate ---------------------------------------------------

def sasaki_gap(rho, rho_prime):
    """Surrogate phase-space distance between unit tangent vectors
    rho = (x, xi), rho' = (x', xi') on the base surface.

    Returns (gap, d, theta, lower, upper): gap = sqrt(d^2 + theta^2) with
    theta the angle between xi and the parallel transport of xi' along the
    minimizing geodesic; [max(d, theta), d + theta] bracket the two-leg bound.
    """
    x, xi = rho
    xp, xip = rho_prime
    d = float(hyp.dist(x, xp))
    if d >= 1.4:
        # ambiguous transport at injectivity scale; callers treat as far
        return np.inf, d, np.pi, max(d, np.pi), d + np.pi
    if d < 1e-14:
        theta = float(hyp.angle_between(xi, xip))
    else:
        transported = hyp.parallel_transport(xp, x, xip)
        theta = float(hyp.angle_between(xi, transported))
    gap = float(np.hypot(d, theta))
    return gap, d, theta, max(d, theta), d + theta


def sasaki_gap_unoriented(rho, rho_prime):
    """Min of the surrogate over the tangent sign choices (unoriented lifts)."""
    x, xi = rho
    xp, xip = rho_prime
    g1 = sasaki_gap((x, xi), (xp, xip))
    g2 = sasaki_gap((x, xi), (xp, -xip))
    return g1 if g1[0] <= g2[0] else g2


# --- almost-intersections -----------------------------------------------------------

def almost_intersections(beta, gamma, eps, constants=None, refine=True):
    """Strict local minima of the pairwise distance field below eps.

    Coarse-to-fine: a subsampled node scan locates candidate basins (local
    minima of the distance field are isolated at the r_m/2 scale, so a coarse
    stride cannot skip one), then each candidate descends on the full grid to
    its strict 3x3-stencil minimum; refined by quadratic fit, with the
    quadratic count bound enforced.
    """
    constants = constants or ProximityConstants()
    same = beta is gamma
    if eps > constants.r_m / 2.0:
        raise ValueError("tube radius %.3g exceeds r_m/2 = %.3g" % (eps, constants.r_m / 2.0))
    spacing = float(np.median(np.diff(beta.params))) if len(beta.params) > 1 else 0.01
    stride = max(1, int(0.06 / spacing))
    coarse = np.arange(0, len(beta.nodes), stride)
    eps_coarse = min(eps + 2.2 * stride * spacing, MAX_QUERY)
    qi, ci, d = gamma.query_points(beta.nodes[coarse], eps_coarse)
    out = []
    if len(qi):
        qi = coarse[qi]
        jn = gamma.cloud_node[ci]
        tr = gamma.cloud_translate[ci]
        if same:
            ds = np.abs(beta.params[qi] - gamma.params[jn])
            ds = np.minimum(ds, beta.cls.base_length - ds)
            keep = ds > constants.r_m / 2.0
            qi, jn, tr, d = qi[keep], jn[keep], tr[keep], d[keep]
        candidates = {}
        for k in range(len(qi)):
            key = (int(qi[k]), int(jn[k]), int(tr[k]))
            if key not in candidates or d[k] < candidates[key]:
                candidates[key] = float(d[k])
        seen_minima = set()
        for (i, j, t), dij in sorted(candidates.items(), key=lambda kv: kv[1]):
            i, j, dij = _descend_to_minimum(beta, gamma, i, j, t, max_steps=4 * stride + 8)
            if dij >= eps:
                continue
            nB, nG = len(beta.nodes), len(gamma.nodes)
            key = (i % nB, j % nG, t)
            if key in seen_minima:
                continue
            seen_minima.add(key)
            if same:
                dsp = abs(beta.params[i % nB] - gamma.params[j % nG])
                dsp = min(dsp, beta.cls.base_length - dsp)
                if dsp <= constants.r_m / 2.0:
                    continue
            if not _is_strict_local_min(beta, gamma, i, j, t, dij):
                continue
            ai = _make_ai(beta, gamma, i, j, t, dij, refine)
            dup = False
            for prev in out:
                dsb = abs(prev.s - ai.s)
                dsb = min(dsb, beta.cls.base_length - dsb)
                dtg = abs(prev.t - ai.t)
                dtg = min(dtg, gamma.cls.base_length - dtg)
                if dsb < constants.r_m / 2.0 and dtg < constants.r_m / 2.0:
                    dup = True
                    break
            if not dup:
                out.append(ai)
    T = max(beta.length, gamma.length)
    bound = 4.0 * (T / constants.r_m) ** 2
    if len(out) > bound:
        raise CountBoundViolated(
            "%d almost-intersections between %s and %s exceed 4(T/r_m)^2 = %.1f"
            % (len(out), format_word(beta.word), format_word(gamma.word), bound)
        )
    return out


def _descend_to_minimum(beta, gamma, i, j, t, max_steps=60):
    """Greedy 3x3 walk on the (i, j) grid to the local minimum of the
    distance field with a fixed translate."""
    d = _stencil_dist(beta, gamma, i, j, t)
    for _ in range(max_steps):
        best = (d, 0, 0)
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                if a == 0 and b == 0:
                    continue
                dd = _stencil_dist(beta, gamma, i + a, j + b, t)
                if dd < best[0] - 1e-15:
                    best = (dd, a, b)
        if best[1] == 0 and best[2] == 0:
            break
        d = best[0]
        i += best[1]
        j += best[2]
    return i, j, d


def _stencil_dist(beta, gamma, i, j, t):
    g = gamma.translate_mats[t]
    nB, nG = len(beta.nodes), len(gamma.nodes)
    P = beta.nodes[i % nB]
    Q = gamma.nodes[j % nG] @ g.T
    return float(hyp.dist(P, Q))


def _is_strict_local_min(beta, gamma, i, j, t, dij):
    nB, nG = len(beta.nodes), len(gamma.nodes)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            if _stencil_dist(beta, gamma, i + di, j + dj, t) < dij - 1e-15:
                return False
    return True


def _make_ai(beta, gamma, i, j, t, dij, refine):
    nB, nG = len(beta.nodes), len(gamma.nodes)
    i, j = i % nB, j % nG
    s0, t0 = beta.params[i], gamma.params[j]
    ds = np.median(np.diff(beta.params)) if nB > 1 else 0.01
    dt = np.median(np.diff(gamma.params)) if nG > 1 else 0.01
    s_ref, t_ref, d_ref = s0, t0, dij
    if refine:
        D = np.zeros((3, 3))
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                D[a + 1, b + 1] = _stencil_dist(beta, gamma, i + a, j + b, t)
        # quadratic fit on the squared distances (smooth through a crossing)
        A = []
        rhs = []
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                A.append([1, a, b, a * a, a * b, b * b])
                rhs.append(D[a + 1, b + 1] ** 2)
        coef, *_ = np.linalg.lstsq(np.array(A, dtype=float), np.array(rhs), rcond=None)
        c0, cs, ct, css, cst, ctt = coef
        Hm = np.array([[2 * css, cst], [cst, 2 * ctt]])
        try:
            ab = np.linalg.solve(Hm, -np.array([cs, ct]))
        except np.linalg.LinAlgError:
            ab = np.zeros(2)
        ab = np.clip(ab, -1.0, 1.0)
        val = c0 + cs * ab[0] + ct * ab[1] + css * ab[0] ** 2 + cst * ab[0] * ab[1] + ctt * ab[1] ** 2
        s_ref = s0 + ab[0] * ds
        t_ref = t0 + ab[1] * dt
        d_ref = float(np.sqrt(max(val, 0.0)))
    x = beta.nodes[i]
    y = gamma.nodes[j % nG] @ gamma.translate_mats[t].T
    rho = (beta.nodes[i], beta.tangents[i])
    g_y = gamma.translate_mats[t]
    rho_p = (y, gamma.tangents[j % nG] @ g_y.T)
    gap = sasaki_gap_unoriented(rho, rho_p)[0]
    return AlmostIntersection(
        s=float(s_ref), t=float(t_ref), x=x, y=y, distance=d_ref, sasaki_gap=gap,
        i=int(i % nB), j=int(j % nG), translate=int(t),
    )


# --- covering segments ---------------------------------------------------------------

def covering_segments(beta, gamma, eps, constants=None, check_complete=True, rng=None):
    """Arcs of beta covering its eps-near approaches to gamma, one arc per
    almost-intersection, each maximal around its minimum."""
    constants = constants or ProximityConstants()
    ais = almost_intersections(beta, gamma, eps, constants)
    arcs = []
    for ai in ais:
        arcs.append(_grow_arc(beta, gamma, ai, eps, constants))
    cover = SegmentCover(
        arcs=arcs,
        count=len(arcs),
        max_arc=max((hi - lo for lo, hi in arcs), default=0.0),
        eps=eps,
    )
    if check_complete:
        _check_cover(beta, gamma, cover, eps, constants, rng=rng)
    return cover


def _grow_arc(beta, gamma, ai, eps, constants):
    """Maximal parameter interval around the almost-intersection whose points
    stay within eps of the segment of gamma around the partner point."""
    band = constants.r_m / 2.0
    ell_b = beta.cls.base_length
    ds = np.median(np.diff(beta.params))
    n = len(beta.params)

    def near(i):
        P = beta.nodes[i % n]
        qi, ci, d = gamma.query_points(P[None], eps)
        if len(qi) == 0:
            return False
        tpar = gamma.params[gamma.cloud_node[ci]]
        dt = np.abs(tpar - ai.t)
        dt = np.minimum(dt, gamma.cls.base_length - dt)
        if beta is gamma:
            spar = beta.params[gamma.cloud_node[ci]]
            dsp = np.abs(spar - beta.params[i % n])
            dsp = np.minimum(dsp, ell_b - dsp)
            ok = (dt <= band) & (dsp > 1e-12)
            return bool(ok.any())
        return bool((dt <= band).any())

    i0 = ai.i
    lo_steps = 0
    while lo_steps < n and near(i0 - lo_steps - 1):
        lo_steps += 1
        if lo_steps * ds > band:
            break
    hi_steps = 0
    while hi_steps < n and near(i0 + hi_steps + 1):
        hi_steps += 1
        if hi_steps * ds > band:
            break
    lo = beta.params[i0] - (lo_steps + 1) * ds
    hi = beta.params[i0] + (hi_steps + 1) * ds
    return (float(lo), float(hi))


def _check_cover(beta, gamma, cover, eps, constants, n_samples=2000, rng=None):
    rng = rng or np.random.default_rng(7)
    ell = beta.cls.base_length
    lo0 = beta.params[0]
    s_samples = rng.uniform(lo0, lo0 + ell, n_samples)
    pts = beta.points_at(s_samples)
    qi, ci, d = gamma.query_points(pts, eps)
    if len(qi) == 0:
        return
    if beta is gamma:
        spar = beta.params[gamma.cloud_node[ci]]
        dsp = np.abs(spar - s_samples[qi])
        dsp = np.minimum(dsp, ell - dsp)
        keep = dsp > constants.r_m / 2.0
        qi = qi[keep]
    for k in set(qi.tolist()):
        if not cover.contains(s_samples[k], ell):
            raise CoverIncomplete(
                "point at parameter %.6f of %s lies within %.3g of %s outside the cover"
                % (s_samples[k], format_word(beta.word), eps, format_word(gamma.word))
            )


def self_cover(beta, eps, constants=None, rng=None):
    """Covering arcs for the almost-intersections of beta with itself,
    excluding the trivial diagonal band |s - t| <= r_m/2."""
    return covering_segments(beta, beta, eps, constants, rng=rng)


# --- safe points ------------------------------------------------------------------------

def safe_point(beta, others, eps, constants=None, rng=None):
    """Point z on beta whose eps-ball misses every other geodesic and meets
    beta itself in a single segment: midpoint of the longest free interval
    after subtracting all covering arcs, clearance verified by direct scan."""
    constants = constants or ProximityConstants()
    ell = beta.cls.base_length
    lo0 = float(beta.params[0])
    excluded = []
    for gamma in others:
        cov = covering_segments(beta, gamma, eps, constants, check_complete=False)
        excluded.extend(cov.arcs)
    excluded.extend(self_cover(beta, eps, constants, rng=rng).arcs)
    free = _free_intervals(excluded, lo0, ell)
    free = [iv for iv in free if iv[1] - iv[0] >= 2.0 * eps]
    if not free:
        raise NoSafeSegment(
            "no free segment of length >= %.3g on %s" % (2.0 * eps, format_word(beta.word))
        )
    free.sort(key=lambda iv: (-(iv[1] - iv[0]), iv[0]))
    seg = free[0]
    s_star = 0.5 * (seg[0] + seg[1])
    z = beta.point_at(s_star)
    # verification by direct distance scan
    clearance = np.inf
    for gamma in others:
        qi, ci, d = gamma.query_points(z[None], min(3.0 * eps, 1.0))
        if len(d):
            clearance = min(clearance, float(d.min()))
    # own geodesic: the eps-ball must meet beta in one segment through z
    qi, ci, d = beta.query_points(z[None], eps)
    if len(d):
        spar = beta.params[beta.cloud_node[ci]]
        dsp = np.abs(spar - s_star)
        dsp = np.minimum(dsp, ell - dsp)
        off_segment = dsp > constants.r_m / 2.0
        if off_segment.any():
            clearance = min(clearance, float(d[off_segment].min()))
    clearance = float(min(clearance, 3.0 * eps))
    if clearance < eps:
        raise NoSafeSegment(
            "verified clearance %.3g < requested %.3g at %s @ %.4f"
            % (clearance, eps, format_word(beta.word), s_star)
        )
    return SafePoint(
        geodesic_word=beta.word,
        arc_position=float(s_star),
        point=complex(hyp.hyperboloid_to_disk(z)),
        clearance=clearance,
        segment=(float(seg[0]), float(seg[1])),
    )


def _free_intervals(excluded, lo0, ell):
    """Complement of the union of arcs on the parameter circle [lo0, lo0+ell)."""
    if not excluded:
        return [(lo0, lo0 + ell)]
    flat = []
    for lo, hi in excluded:
        width = min(max(hi - lo, 0.0), ell)
        start = (lo - lo0) % ell
        if start + width <= ell:
            flat.append((start, start + width))
        else:
            flat.append((start, ell))
            flat.append((0.0, start + width - ell))
    flat.sort()
    merged = []
    for lo, hi in flat:
        if merged and lo <= merged[-1][1] + 1e-12:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    if len(merged) == 1 and merged[0][0] <= 0.0 and merged[0][1] >= ell:
        return []
    free = []
    for k in range(len(merged)):
        hi_k = merged[k][1]
        lo_next = merged[(k + 1) % len(merged)][0] + (ell if k == len(merged) - 1 else 0.0)
        if lo_next - hi_k > 0.0:
            free.append((hi_k + lo0, lo_next + lo0))
    return free


# --- audits -----------------------------------------------------------------------------

def _sasaki_min_batch(x, tx, y, ty, d):
    """Vectorized surrogate minimum over tangent sign choices."""
    transported = hyp.parallel_transport(y, x, ty)
    th1 = hyp.angle_between(tx, transported)
    th2 = np.pi - th1
    theta = np.minimum(th1, th2)
    return float(np.hypot(d, theta).min())


def _pair_min_sasaki(beta, gamma, d_cut=None):
    """Minimum surrogate distance between the lifted node sets of two traces.

    A Euclidean nearest-neighbor pass seeds an upper bound; since the
    surrogate dominates the base distance, one exact ball query at the seed
    radius then certifies the minimum.
    """
    stride = max(1, len(beta.nodes) // 260)
    sub = np.arange(0, len(beta.nodes), stride)
    nodes = beta.nodes[sub]
    tangents = beta.tangents[sub]
    z = hyp.hyperboloid_to_disk(nodes)
    pts = np.stack([z.real, z.imag], axis=1)
    _, nn = gamma.tree.query(pts, k=1)
    y0 = gamma.cloud[nn]
    d0 = hyp.dist(nodes, y0)
    tm = gamma.translate_mats[gamma.cloud_translate[nn]]
    ty0 = np.einsum("nij,nj->ni", tm, gamma.tangents[gamma.cloud_node[nn]])
    seed = _sasaki_min_batch(nodes, tangents, y0, ty0, d0)
    cut = min(seed * 1.0001, 0.45)
    best = seed
    while True:
        qi, ci, d = gamma.query_points(nodes, cut)
        if len(qi):
            jn = gamma.cloud_node[ci]
            tmats = gamma.translate_mats[gamma.cloud_translate[ci]]
            y = np.einsum("nij,nj->ni", tmats, gamma.nodes[jn])
            ty = np.einsum("nij,nj->ni", tmats, gamma.tangents[jn])
            best = min(best, _sasaki_min_batch(nodes[qi], tangents[qi], y, ty, d))
        if best <= cut or cut >= MAX_QUERY:
            return best
        cut = min(max(2.0 * cut, best * 1.0001), MAX_QUERY)


def phase_audit(traces, T, kappa=1.0, d_cut=0.35):
    """Fitted phase-space separation constant: the minimum over distinct pairs
    (and both lift orientations) of the Sasaki surrogate between node lifts,
    scaled by exp(2 kappa T).  Positivity is asserted; per-pair minima reported."""
    assert len(traces) >= 2, "phase audit needs at least two geodesics"
    per_pair = {}
    min_gap = np.inf
    for a in range(len(traces)):
        for b in range(a + 1, len(traces)):
            beta, gamma = traces[a], traces[b]
            best = _pair_min_sasaki(beta, gamma, d_cut)
            per_pair[(beta.word, gamma.word)] = best
            min_gap = min(min_gap, best)
    fitted = float(min_gap * np.exp(2.0 * kappa * T))
    assert fitted > 0.0, "phase-space separation vanished"
    return {
        "T": T,
        "kappa": kappa,
        "min_sasaki_gap": float(min_gap),
        "eps0_phase": fitted,
        "pairs": {"%s|%s" % (format_word(k[0]), format_word(k[1])): float(v) for k, v in per_pair.items()},
    }


def divergence_audit(beta, gamma, ais, constants, T, n_t=25):
    """Check the local divergence bound at each almost-intersection:
    d(gamma(t'), I_x) >= max(C1 |t'| e^{-2 kappa T} - C2 * d_AI, 0), with the
    transport offset C2 e^{-alpha T} of the abstract bound replaced by the
    measured almost-intersection distance (sharper and parameter-free)."""
    violations = []
    band = constants.r_m / 2.0
    fine = np.linspace(-band, band, 4 * n_t + 1)
    for ai in ais:
        I_x = beta.points_at(ai.s + fine)
        tgrid = np.linspace(-band, band, n_t)
        Y = gamma.points_at(ai.t + tgrid)
        for tp, yp in zip(tgrid, Y):
            dist_to_seg = float(hyp.dist(I_x, yp[None]).min())
            bound = max(
                constants.C1 * abs(tp) * np.exp(-2.0 * constants.kappa * T) - constants.C2 * ai.distance,
                0.0,
            )
            if dist_to_seg < bound - 1e-12:
                violations.append(
                    {
                        "pair": "%s|%s" % (format_word(beta.word), format_word(gamma.word)),
                        "s": ai.s,
                        "t_prime": float(tp),
                        "distance": dist_to_seg,
                        "bound": float(bound),
                    }
                )
    return violations


def expansion_audit(n_pairs=1000, t_values=(0.5, 1.0, 2.0, 3.0), seed=11, slack=1.05):
    """Audit of the flow expansion bound on the base surface: for nearby unit
    tangents, the Sasaki separation after time |t| <= 3 stays within
    sqrt(1+kappa) e^{kappa |t|} times the initial separation (kappa = 1),
    plus the configured slack.  The flow is evaluated in closed form."""
    rng = np.random.default_rng(seed)
    kappa, kappa0 = 1.0, np.sqrt(2.0)
    worst = 0.0
    violations = 0
    for _ in range(n_pairs):
        # base point and unit direction near the origin patch
        z = (rng.uniform(-0.4, 0.4) + 1j * rng.uniform(-0.4, 0.4))
        X = hyp.disk_to_hyperboloid(z)
        v = rng.normal(size=3)
        V = hyp.normalize_tangent(hyp.project_tangent(X, v))
        # nearby phase point: small base offset + small angle
        db = rng.uniform(0.0, 1e-4)
        ang = rng.uniform(0.0, 1e-4)
        w = rng.normal(size=3)
        Wdir = hyp.normalize_tangent(hyp.project_tangent(X, w))
        X2, _ = hyp.flow(X, Wdir, db)
        V2 = hyp.parallel_transport(X, X2, _rotate_tangent(X, V, ang))
        g0 = sasaki_gap((X, V), (X2, V2))[0]
        if not np.isfinite(g0) or g0 < 1e-12:
            continue
        for t in t_values:
            for sgn in (1.0, -1.0):
                Xa, Va = hyp.flow(X, V, sgn * t)
                Xb, Vb = hyp.flow(X2, V2, sgn * t)
                gt = sasaki_gap((Xa, Va), (Xb, Vb))[0]
                ratio = gt / (kappa0 * np.exp(kappa * abs(t)) * g0)
                worst = max(worst, ratio)
                if gt > kappa0 * np.exp(kappa * abs(t)) * g0 * slack:
                    violations += 1
    return {"pairs": n_pairs, "worst_ratio": float(worst), "violations": violations, "slack": slack}


def _rotate_tangent(X, V, angle):
    """Rotate tangent V at X by the given angle within the tangent plane."""
    W = hyp.ETA @ np.cross(X, V)
    W = W / np.sqrt(hyp.mink(W, W))
    return V * np.cos(angle) + W * np.sin(angle)
