import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lengthsep import conformal_metric as cm
from lengthsep import geodesic_solver as gs
from lengthsep import hyperbolic as hyp
from lengthsep import proximity as prox
from lengthsep.surface_group import BolzaSurface, enumerate_classes


@pytest.fixture(scope="module")
def surface():
    return BolzaSurface()


@pytest.fixture(scope="module")
def traces(surface):
    spec = enumerate_classes(surface.generators, 5.0, surface=surface)
    metric = cm.ConformalMetric(surface)
    numerics = [
        gs.relax(gs.initial_curve(c, metric, 0.01), metric)
        for c in spec.primitive_classes()
    ]
    return prox.build_traces(numerics, surface)


@pytest.fixture(scope="module")
def constants():
    return prox.ProximityConstants(kappa=1.0, r_m=1.4, eps0_phase=0.1)


def _random_phase_point(rng):
    z = rng.uniform(-0.4, 0.4) + 1j * rng.uniform(-0.4, 0.4)
    X = hyp.disk_to_hyperboloid(z)
    V = hyp.normalize_tangent(hyp.project_tangent(X, rng.normal(size=3)))
    return X, V


def test_sasaki_same_point_same_vector():
    X = hyp.disk_to_hyperboloid(0.2 + 0.1j)
    V = hyp.normalize_tangent(hyp.project_tangent(X, np.array([1.0, 0.0, 0.0])))
    gap, d, theta, lo, hi = prox.sasaki_gap((X, V), (X, V))
    assert gap == pytest.approx(0.0, abs=1e-12)


def test_sasaki_same_point_angle():
    X = hyp.disk_to_hyperboloid(0.1 - 0.3j)
    V = hyp.normalize_tangent(hyp.project_tangent(X, np.array([1.0, 0.2, 0.0])))
    W = prox._rotate_tangent(X, V, 0.4)
    gap, d, theta, lo, hi = prox.sasaki_gap((X, V), (X, W))
    assert d == pytest.approx(0.0, abs=1e-12)
    assert theta == pytest.approx(0.4, abs=1e-12)
    assert gap == pytest.approx(0.4, abs=1e-12)


def test_sasaki_parallel_vectors_give_distance():
    X = hyp.disk_to_hyperboloid(0.0 + 0.0j)
    V = hyp.normalize_tangent(hyp.project_tangent(X, np.array([0.0, 1.0, 0.0])))
    Y, _ = hyp.flow(X, hyp.normalize_tangent(hyp.project_tangent(X, np.array([1.0, 0.0, 0.0]))), 0.25)
    W = hyp.parallel_transport(X, Y, V)
    gap, d, theta, lo, hi = prox.sasaki_gap((X, V), (Y, W))
    assert d == pytest.approx(0.25, abs=1e-12)
    assert theta == pytest.approx(0.0, abs=1e-9)
    assert gap == pytest.approx(0.25, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_sasaki_two_leg_bounds(seed):
    rng = np.random.default_rng(seed)
    r1 = _random_phase_point(rng)
    r2 = _random_phase_point(rng)
    gap, d, theta, lo, hi = prox.sasaki_gap(r1, r2)
    if not np.isfinite(gap):
        return  # beyond the transport scale: treated as far by contract
    assert lo - 1e-12 <= gap <= hi + 1e-12
    assert gap == pytest.approx(np.hypot(d, theta), abs=1e-12)


def test_almost_intersections_crossing_pair(traces, constants):
    # some systolic pair crosses transversally: an almost-intersection with
    # (refined) distance ~ 0 and a definite phase gap
    best = None
    for gamma in traces[1:8]:
        ais = prox.almost_intersections(traces[0], gamma, 0.25, constants)
        T = max(traces[0].length, gamma.length)
        assert len(ais) <= 4 * (T / constants.r_m) ** 2
        for ai in ais:
            assert ai.sasaki_gap > 0.05
        if ais and (best is None or min(a.distance for a in ais) < best):
            best = min(a.distance for a in ais)
    assert best is not None and best < 5e-3


def test_almost_intersections_respect_tube_radius(traces, constants):
    beta, gamma = traces[0], traces[1]
    fat = prox.almost_intersections(beta, gamma, 0.3, constants)
    thin = prox.almost_intersections(beta, gamma, 1e-4, constants)
    assert len(thin) <= len(fat)
    for ai in thin:
        assert ai.distance < 1e-4


def test_cover_count_matches_ai_count(traces, constants):
    beta, gamma = traces[0], traces[2]
    ais = prox.almost_intersections(beta, gamma, 0.2, constants)
    cover = prox.covering_segments(beta, gamma, 0.2, constants, rng=np.random.default_rng(3))
    assert cover.count == len(ais)
    assert cover.max_arc <= constants.r_m + 1e-9
    # free-length accounting: total excluded length is subadditive
    assert cover.total_length() <= sum(hi - lo for lo, hi in cover.arcs) + 1e-12


def test_cover_completeness_is_checked(traces, constants):
    # the cover check samples random parameters; a passing run raises nothing
    beta, gamma = traces[0], traces[3]
    prox.covering_segments(beta, gamma, 0.15, constants, rng=np.random.default_rng(11))


def test_self_cover_simple_geodesic_empty_at_small_tube(traces, constants):
    beta = traces[0]
    # below the self-clearance the self cover is empty
    cover = prox.self_cover(beta, 1e-4, constants, rng=np.random.default_rng(5))
    assert cover.count == 0
    # diagonal band is never reported
    ais = prox.almost_intersections(beta, beta, 0.3, constants)
    ell = beta.cls.base_length
    for ai in ais:
        dsp = abs(ai.s - ai.t)
        assert min(dsp, ell - dsp) > constants.r_m / 2.0


def test_safe_point_no_others(traces, constants):
    beta = traces[0]
    sp = prox.safe_point(beta, [], 0.05, constants, rng=np.random.default_rng(2))
    assert sp.clearance >= 0.05
    assert sp.segment[0] <= sp.arc_position <= sp.segment[1]


def test_safe_point_verified_against_brute_force(traces, constants):
    beta = traces[0]
    others = [t for t in traces[1:6]]
    eps = 0.02
    sp = prox.safe_point(beta, others, eps, constants, rng=np.random.default_rng(2))
    z = hyp.disk_to_hyperboloid(sp.point)
    # independent O(N^2) scan: distance from z to every other geodesic cloud
    for gamma in others:
        d = hyp.dist(z[None], gamma.cloud).min()
        assert d >= eps - 1e-9
    # own geodesic: points beyond the local band stay clear
    ell = beta.cls.base_length
    own = hyp.dist(z[None], beta.cloud)
    par = beta.params[beta.cloud_node]
    dsp = np.abs(par - sp.arc_position)
    dsp = np.minimum(dsp, ell - dsp)
    off = dsp > constants.r_m / 2.0
    assert own[off].min() >= eps - 1e-9


def test_safe_point_raises_when_crowded(traces, constants):
    from lengthsep.errors import NoSafeSegment

    beta = traces[0]
    others = [t for t in traces[1:]]
    with pytest.raises(NoSafeSegment):
        prox.safe_point(beta, others, 0.6, constants, rng=np.random.default_rng(2))


def test_free_intervals_accounting():
    free = prox._free_intervals([(0.5, 1.0), (2.0, 2.5)], 0.0, 6.0)
    total_free = sum(hi - lo for lo, hi in free)
    assert total_free == pytest.approx(6.0 - 1.0)
    assert prox._free_intervals([], 0.0, 6.0) == [(0.0, 6.0)]
    # wraparound arc
    free = prox._free_intervals([(5.5, 6.5)], 0.0, 6.0)
    total_free = sum(hi - lo for lo, hi in free)
    assert total_free == pytest.approx(5.0)


def test_phase_audit_positive_and_monotone(traces):
    audit_small = prox.phase_audit(traces[:6], T=5.0)
    audit_more = prox.phase_audit(traces[:10], T=5.0)
    assert audit_small["eps0_phase"] > 0
    # min over a superset can only shrink
    assert audit_more["min_sasaki_gap"] <= audit_small["min_sasaki_gap"] + 1e-12


def test_divergence_audit_no_violations(traces, constants):
    beta, gamma = traces[0], traces[1]
    ais = prox.almost_intersections(beta, gamma, 0.2, constants)
    cst = prox.ProximityConstants(kappa=1.0, r_m=1.4, eps0_phase=0.05)
    violations = prox.divergence_audit(beta, gamma, ais, cst, T=5.0)
    assert violations == []


def test_expansion_audit():
    report = prox.expansion_audit(n_pairs=200, seed=3)
    assert report["violations"] == 0
    assert report["worst_ratio"] <= 1.0 + 1e-6
