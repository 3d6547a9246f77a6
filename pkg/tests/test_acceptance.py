"""Acceptance gate: every criterion below runs at its stated tolerance and
prints one PASS line.  The heavyweight fixtures (large enumerations, the full
two-window pipeline) are session-scoped and shared.

Budget: the full module takes on the order of an hour on one desktop core
(dominated by the T = 12 enumeration and the pipeline); everything is
deterministic for the pinned seeds.
"""

import json

import numpy as np
import pytest

from lengthsep import cli
from lengthsep import conformal_metric as cm
from lengthsep import geodesic_solver as gs
from lengthsep import hyperbolic as hyp
from lengthsep import proximity as prox
from lengthsep.separation_engine import SeparationEngine, derive_constants, separation_check
from lengthsep.surface_group import BolzaSurface, enumerate_classes

pytestmark = pytest.mark.acceptance


def _ok(name, detail):
    print("\nACCEPTANCE PASS %s: %s" % (name, detail))


@pytest.fixture(scope="session")
def surface():
    return BolzaSurface()


@pytest.fixture(scope="session")
def spectrum8(surface):
    return enumerate_classes(surface.generators, 8.0, surface=surface)


@pytest.fixture(scope="session")
def spectrum10(surface):
    return enumerate_classes(surface.generators, 10.0, surface=surface)


@pytest.fixture(scope="session")
def spectrum12(surface):
    return enumerate_classes(surface.generators, 12.0, surface=surface)


@pytest.fixture(scope="session")
def base_metric(surface):
    return cm.ConformalMetric(surface)


@pytest.fixture(scope="session")
def traces6(surface, spectrum8, base_metric):
    classes = [c for c in spectrum8.primitive_classes() if c.base_length <= 6.0]
    numerics = [gs.relax(gs.initial_curve(c, base_metric, 0.01), base_metric) for c in classes]
    return prox.build_traces(numerics, surface)


@pytest.fixture(scope="session")
def pipeline(surface):
    params = derive_constants((-1.0, -1.0), 0.05, 0.1, 2, 0.18)
    engine = SeparationEngine(params, surface=surface, rng_seed=7, threads=1)
    metric, cert = engine.run(window_count=2, t0_grid=[2.9, 2.95, 3.0, 3.05])
    return params, engine, metric, cert


# -- criterion 1: trace-formula oracle ------------------------------------------------

def test_criterion_1_trace_oracle(spectrum8, base_metric):
    worst = 0.0
    checked = 0
    roots = {c.word: None for c in spectrum8.classes}
    for c in spectrum8.classes:
        if c.primitive:
            res = gs.relax(gs.initial_curve(c, base_metric, 0.01), base_metric)
            roots[c.word] = res.length
            err = abs(res.length - c.base_length) / c.base_length
        else:
            # iterates inherit k times the primitive relaxed length
            err = abs(c.power * roots[c.root_word] - c.base_length) / c.base_length
        worst = max(worst, err)
        checked += 1
    assert worst < 1e-6
    _ok("1 trace oracle", "%d classes <= 8, worst relative error %.2e" % (checked, worst))


# -- criterion 2: counting audit -------------------------------------------------------

def test_criterion_2_counting(spectrum10, spectrum12):
    r10 = spectrum10.counting_ratio
    r12 = spectrum12.counting_ratio
    assert 0.5 <= r10 <= 2.0
    assert abs(r12 - 1.0) < abs(r10 - 1.0)
    _ok("2 counting", "ratio(10) = %.4f in [0.5, 2], ratio(12) = %.4f closer to 1" % (r10, r12))


# -- criterion 3: conformal dilation at a verified safe point --------------------------

def test_criterion_3_dilation(surface, spectrum8, base_metric, traces6):
    constants = prox.ProximityConstants(kappa=1.0, r_m=1.4, eps0_phase=1.0)
    beta = traces6[0]
    others = [t for t in traces6 if t is not beta]
    eps = 0.02
    sp = prox.safe_point(beta, others, eps, constants, rng=np.random.default_rng(7))
    bump = cm.Bump(
        center=sp.point, r0=eps, delta=1e-4,
        geodesic_word=beta.word, arc_position=sp.arc_position,
    )
    metric = cm.ConformalMetric(surface, [bump])
    classes = {c.word: c for c in spectrum8.primitive_classes() if c.base_length <= 6.0}
    own = classes[beta.word]
    res = gs.relax(
        gs.initial_curve(own, metric, 0.01, anchors=[(sp.arc_position, eps)]), metric
    )
    err = abs(res.length - own.base_length - 1e-4)
    assert err < 1e-6
    worst_drift = 0.0
    for w, c in classes.items():
        if w == beta.word:
            continue
        before = gs.relax(gs.initial_curve(c, base_metric, 0.01), base_metric).length
        after = gs.relax(gs.initial_curve(c, metric, 0.01), metric).length
        worst_drift = max(worst_drift, abs(after - before))
    assert worst_drift <= 1e-10
    _ok("3 dilation", "own increment err %.2e < 1e-6; worst other drift %.2e <= 1e-10" % (err, worst_drift))


# -- criterion 4: C^k budget power law --------------------------------------------------

def test_criterion_4_ck_power_law(surface, spectrum8):
    c = spectrum8.classes[0]
    fr = gs._class_frame(c, surface)
    X = fr.to_world(fr.axis_std(np.array([0.55])))[0]
    z = complex(hyp.hyperboloid_to_disk(X))
    delta = 1e-9
    measured = []
    for r0 in (0.02, 0.01, 0.005):
        m = cm.ConformalMetric(surface, [cm.Bump(center=z, r0=r0, delta=delta)])
        measured.append(cm.admissibility(m, 0.05, 2).measured_norm)
    ratio1 = measured[1] / measured[0]
    ratio2 = measured[2] / measured[1]
    assert abs(ratio1 / 8.0 - 1.0) < 0.10
    assert abs(ratio2 / 8.0 - 1.0) < 0.10
    _ok("4 C^k budget", "r0 halving ratios %.3f, %.3f within 10%% of 2^(k+1) = 8" % (ratio1, ratio2))


# -- criterion 5: two-window certificate -------------------------------------------------

def test_criterion_5_window_certificate(pipeline):
    params, engine, metric, cert = pipeline
    assert cert.global_verdict
    for w in cert.windows:
        assert w.gaps_ok and w.drift_ok and w.distortion_guard_ok
        assert w.fixed_drift <= 1e-9
        if w.min_gap > 0:
            assert w.min_gap >= w.required_gap
    _ok(
        "5 window certificate",
        "T0 = %.2f, scale = %.2f, %d windows, min gaps %s >= %s, drift %s"
        % (
            cert.T0,
            params.scale,
            len(cert.windows),
            ["%.3e" % w.min_gap for w in cert.windows],
            ["%.3e" % w.required_gap for w in cert.windows],
            ["%.1e" % w.fixed_drift for w in cert.windows],
        ),
    )


# -- criterion 6: proximity bounds -------------------------------------------------------

def test_criterion_6_proximity_bounds(traces6):
    T = 6.0
    constants = prox.ProximityConstants(kappa=1.0, r_m=1.4)
    audit = prox.phase_audit(traces6, T=T, kappa=1.0)
    constants.eps0_phase = audit["eps0_phase"]
    bound = 4.0 * (T / constants.r_m) ** 2
    count_violations = 0
    divergence_violations = []
    pairs = 0
    for a in range(len(traces6)):
        for b in range(a + 1, len(traces6)):
            beta, gamma = traces6[a], traces6[b]
            ais = prox.almost_intersections(beta, gamma, 0.25, constants)
            pairs += 1
            if len(ais) > bound:
                count_violations += 1
            divergence_violations.extend(
                prox.divergence_audit(beta, gamma, ais, constants, T)
            )
    assert count_violations == 0
    assert divergence_violations == []
    _ok(
        "6 proximity bounds",
        "%d pairs at T = 6: 0 cover-count violations (bound %.0f), 0 divergence violations"
        % (pairs, bound),
    )


# -- criterion 7: phase-space separation --------------------------------------------------

def test_criterion_7_phase_separation(surface, spectrum8, base_metric):
    fits = {}
    for T in (6.0, 7.0, 8.0):
        classes = [c for c in spectrum8.primitive_classes() if c.base_length <= T]
        numerics = [gs.relax(gs.initial_curve(c, base_metric, 0.02), base_metric) for c in classes]
        traces = prox.build_traces(numerics, surface)
        fits[T] = prox.phase_audit(traces, T=T, kappa=1.0)["eps0_phase"]
    assert fits[6.0] > 0
    assert fits[7.0] <= fits[6.0] * (1 + 1e-9)
    assert fits[8.0] <= fits[7.0] * (1 + 1e-9)
    _ok("7 phase separation", "fitted eps0 at T=6,7,8: %.4g >= %.4g >= %.4g > 0" % (fits[6.0], fits[7.0], fits[8.0]))


# -- criterion 8: expansion audit ----------------------------------------------------------

def test_criterion_8_expansion(surface):
    report = prox.expansion_audit(n_pairs=1000, t_values=(0.5, 1.0, 2.0, 3.0), seed=11, slack=1.05)
    assert report["violations"] == 0
    _ok(
        "8 expansion",
        "%d tangent pairs, |t| <= 3: 0 violations, worst ratio %.3f <= 1.05"
        % (report["pairs"], report["worst_ratio"]),
    )


# -- criterion 9: determinism ----------------------------------------------------------------

def _strip_timestamp(text):
    return "\n".join(line for line in text.splitlines() if "generated_at" not in line)


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("window_count = 1\nT0 = 2.9\nscale = 0.18\n")
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["separate", "--config", str(cfg), "--out", str(out1)]) == 0
    assert cli.main(["separate", "--config", str(cfg), "--out", str(out2)]) == 0
    cert1 = _strip_timestamp((out1 / "certificate.json").read_text())
    cert2 = _strip_timestamp((out2 / "certificate.json").read_text())
    assert cert1 == cert2
    assert (out1 / "metric.json").read_text() == (out2 / "metric.json").read_text()
    doc = json.loads((out1 / "certificate.json").read_text())
    assert doc["global_verdict"] is True
    _ok("9 determinism", "two runs byte-identical outside the timestamp; verdict true")
