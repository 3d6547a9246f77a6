"""The windowed separation construction: derive constants, partition the
length range into unit windows, schedule amplitudes, place bumps at safe
points, re-relax, and certify that each window's spectrum is separated while
previously fixed lengths are untouched.

Desk-scale runs rescale the exponents (both alpha and nu by the same factor,
preserving the structural relation nu = h + (k+1) alpha + eps/2): at the
literal values the scheduled gaps sit far below float resolution.  The
certificate states the exponents actually used and records measured gaps and
drifts; scheduled increments are recalibrated against measured ones.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import geodesic_solver as solver
from . import proximity as prox
from .conformal_metric import Bump, ConformalMetric, PROFILE, admissibility
from .errors import CalibrationFailed, AdmissibilityExceeded, NoSafeSegment
from .surface_group import BolzaSurface, enumerate_classes, format_word
from . import __version__


def _c0_distortion(metric, plan):
    """Upper estimate of the sup-norm distance between the metrics before and
    after the window's bumps (conformal factors are pointwise bounded by the
    profile maximum; cross-window overlaps are bounded by compounding)."""
    new = [b for b in metric.bumps if b.window == plan.n]
    if not new:
        return 0.0
    tmax = max(abs(np.log1p(b.amplitude * PROFILE.c_max)) for b in new)
    old = sum(
        abs(np.log1p(b.amplitude * PROFILE.c_max)) for b in metric.bumps if b.window != plan.n
    )
    return float(np.exp(2.0 * old) * (np.exp(2.0 * tmax) - 1.0))


@dataclass
class SeparationParams:
    """All scalar constants of a run in one audited record."""

    k: int = 2
    eps: float = 0.1
    eps0: float = 0.05
    kappa: float = 1.0
    h: float = 0.0                  # derived: h_top sqrt(1+eps0)
    scale: float = 0.18
    alpha: float = 0.0              # derived, includes scale
    nu: float = 0.0                 # derived, includes scale
    r_m: float = 1.4
    T0: float = 0.0                 # 0 = select automatically
    window_count: int = 2
    spacing: float = 0.01
    grad_tol: float = 1e-10
    residual_tol: float = 1e-7
    drift_tol: float = 1e-9
    cal_tol: float = 2e-4
    schedule_margin: float = 0.01    # scheduled gaps exceed the required e^{-nu T} by this factor
    norm_budget: float = 0.0        # 0 = admissibility gate off (report only)
    nu_headline: float = 0.0        # (k+2)h + (k+1)kappa + eps, unscaled
    nu_derived: float = 0.0         # (k+2)h + 2(k+1)kappa + eps, unscaled

    @property
    def kappa0(self):
        return float(np.sqrt(1.0 + self.kappa))

    def tolerances(self):
        return solver.Tolerances(
            spacing=self.spacing,
            grad_tol=self.grad_tol,
            residual_tol=self.residual_tol,
        )


def derive_constants(base_bounds, eps0, eps, k, scale, **overrides):
    """Constants from the curvature bounds of the base metric: kappa from the
    audited curvature range, h from the entropy of the curvature -1 surface
    inflated by the metric-ball radius, then the clearance and separation
    exponents (both rescaled by `scale`); the two published separation rates
    are recorded unscaled for reference."""
    if k < 2:
        raise ValueError("smoothness order k must be >= 2")
    if not 0 < scale <= 1:
        raise ValueError("scale must be in (0, 1]")
    k_min, k_max = base_bounds
    kappa = float(np.sqrt(abs(k_min)))
    h_top = 1.0
    h = h_top * float(np.sqrt(1.0 + eps0))
    alpha_f = 2.0 * kappa + h + eps / (2.0 * (k + 1))
    nu_f = h + (k + 1) * alpha_f + eps / 2.0
    params = SeparationParams(
        k=k,
        eps=eps,
        eps0=eps0,
        kappa=kappa,
        h=h,
        scale=scale,
        alpha=scale * alpha_f,
        nu=scale * nu_f,
        nu_headline=(k + 2) * h + (k + 1) * kappa + eps,
        nu_derived=(k + 2) * h + 2 * (k + 1) * kappa + eps,
    )
    for key, val in overrides.items():
        if not hasattr(params, key):
            raise ValueError("unknown parameter %r" % key)
        setattr(params, key, val)
    return params


@dataclass
class WindowPlan:
    """Schedule for one window (T_{n-1}, T_n]: ordered lengths, split index,
    amplitudes, bump radius, safe points."""

    n: int
    T_lo: float
    T_hi: float
    words: list                     # class words ordered by current length
    lengths: list                   # measured current lengths, ascending
    pinned: list                    # True where the member is an iterate (no bump)
    split: int                      # index m of the maximal-gap split (1-based)
    deltas: list                    # scheduled increments (0 for pinned)
    predicted: list                 # scheduled post-window lengths
    eps_n: float                    # bump radius = clearance request
    safe_points: dict = field(default_factory=dict)   # word -> SafePoint
    empty: bool = False
    paper_schedule: bool = True     # False when pinned members forced adjustment


@dataclass
class WindowReport:
    n: int
    T_lo: float
    T_hi: float
    classes: list
    scheduled: dict
    measured: dict
    min_gap: float
    required_gap: float
    measured_C: float
    fixed_drift: float
    entrained: dict
    distortion: float
    distortion_guard_ok: bool
    gaps_ok: bool
    drift_ok: bool
    verdict: bool


@dataclass
class SeparationCertificate:
    params: dict
    T0: float
    windows: list
    final_lengths: dict
    separation_ok: bool
    global_verdict: bool
    fitted_eps0_phase: float
    version: str = __version__
    meta: dict = field(default_factory=dict)

    def to_json(self, path=None):
        doc = {
            "params": self.params,
            "T0": self.T0,
            "windows": [asdict(w) if not isinstance(w, dict) else w for w in self.windows],
            "final_lengths": {format_word(k): v for k, v in self.final_lengths.items()},
            "separation_ok": self.separation_ok,
            "global_verdict": self.global_verdict,
            "fitted_eps0_phase": self.fitted_eps0_phase,
            "version": self.version,
            "meta": self.meta,
        }
        text = json.dumps(doc, indent=1, sort_keys=True, default=_json_default)
        if path is not None:
            tmp = str(path) + ".tmp"
            with open(tmp, "w") as f:
                f.write(text + "\n")
            os.replace(tmp, path)
        return text


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "__dict__"):
        return obj.__dict__
    raise TypeError("not serializable: %r" % type(obj))


def separation_check(lengths, nu, C=1.0, all_pairs=True):
    """Exponential-separation predicate: every pair of distinct lengths obeys
    |l - l'| >= C exp(-nu max(l, l')).  Returns (ok, worst_pair)."""
    xs = np.sort(np.asarray(lengths, dtype=float))
    ok = True
    worst = None
    worst_margin = np.inf
    if all_pairs:
        pairs = [(i, j) for i in range(len(xs)) for j in range(i + 1, len(xs))]
    else:
        pairs = [(i, i + 1) for i in range(len(xs) - 1)]
    for i, j in pairs:
        gap = xs[j] - xs[i]
        req = C * np.exp(-nu * xs[j])
        margin = gap - req
        if margin < worst_margin:
            worst_margin = margin
            worst = (float(xs[i]), float(xs[j]), float(gap), float(req))
        if gap < req:
            ok = False
    return ok, worst


# --- the engine ------------------------------------------------------------------

class SeparationEngine:
    """Runs the window loop over a working set of the base surface."""

    def __init__(self, params, surface=None, rng_seed=7, threads=1):
        self.params = params
        self.surface = surface if surface is not None else BolzaSurface()
        self.rng_seed = rng_seed
        self.threads = max(1, int(threads))
        self._traces = {}

    # -- working set ----

    def prepare(self, T_max):
        self.spectrum = enumerate_classes(self.surface.generators, T_max, surface=self.surface)
        self.by_word = {c.word: c for c in self.spectrum.classes}
        self.roots = {}
        for c in self.spectrum.classes:
            self.roots[c.word] = self.by_word.get(c.root_word, c) if not c.primitive else c
        # distinct geodesic supports (primitives) for proximity work
        self.primitives = [c for c in self.spectrum.classes if c.primitive]
        # warm the per-class caches sequentially before any thread pool runs
        for c in self.primitives:
            solver.surface_twist(c, self.surface)
            solver._class_frame(c, self.surface)

    def measure_all(self, metric, anchors_by_word=None):
        """Relaxed lengths of every class of the working set under `metric`;
        iterates inherit k times the primitive length.  Classes relax
        independently over the immutable metric, so the optional thread pool
        returns results identical to the sequential loop."""

        def one(c):
            anchors = (anchors_by_word or {}).get(c.word, ())
            cur = solver.initial_curve(c, metric, self.params.spacing, anchors)
            return solver.relax(cur, metric, self.params.tolerances())

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                results = list(ex.map(one, self.primitives))
        else:
            results = [one(c) for c in self.primitives]
        numerics = {c.word: r for c, r in zip(self.primitives, results)}
        lengths = {w: r.length for w, r in numerics.items()}
        for c in self.spectrum.classes:
            if not c.primitive:
                lengths[c.word] = c.power * lengths[c.root_word]
        return lengths, numerics

    # -- window planning ----

    def plan_window(self, n, T0, lengths, traces, constants):
        """Schedule for window n: slice by measured length, split at the
        maximal adjacent gap, assign the signed amplitude ladder, and resolve
        collisions with pinned (iterate) members by an ascending sweep."""
        p = self.params
        T_lo, T_hi = T0 + n - 1, T0 + n
        members = [(w, L) for w, L in lengths.items() if T_lo < L <= T_hi]
        eps_n = np.exp(-p.alpha * (T0 + n + 1)) / 2.0
        if not members:
            return WindowPlan(
                n=n, T_lo=T_lo, T_hi=T_hi, words=[], lengths=[], pinned=[],
                split=0, deltas=[], predicted=[], eps_n=float(eps_n), empty=True,
            )
        members.sort(key=lambda wl: (wl[1], wl[0]))
        words = [w for w, _ in members]
        ls = np.array([L for _, L in members])
        pinned = [not self.by_word[w].primitive for w in words]
        mu = len(words)
        # pad the unit step so measured gaps clear the required e^{-nu T_hi}
        # after calibration-level measurement errors
        u = np.exp(-p.nu * T_hi) * (1.0 + p.schedule_margin)
        # split at the maximal adjacent gap (ties -> smallest index)
        if mu == 1:
            m = 1
        else:
            gaps = np.diff(ls)
            m = int(np.argmax(gaps)) + 1
        deltas = np.zeros(mu)
        for i in range(mu):
            if pinned[i]:
                continue
            if i + 1 <= m:
                deltas[i] = (i + 1) * u
            else:
                deltas[i] = -(mu - i) * u
        predicted = ls + deltas
        paper_schedule = not any(pinned)
        # pinned members (iterates) keep their values; their pairwise gaps must
        # already hold, and free targets sweep upward jumping over pinned bands
        pinned_vals = np.sort(predicted[np.array(pinned, dtype=bool)]) if any(pinned) else np.zeros(0)
        if len(pinned_vals) > 1 and np.diff(pinned_vals).min() < u - 1e-15:
            raise AdmissibilityExceeded("window %d: pinned members cannot be separated" % n)
        free_idx = [i for i in range(mu) if not pinned[i]]
        order = sorted(free_idx, key=lambda i: (predicted[i], i))
        cur = -np.inf
        for idx in order:
            t = max(predicted[idx], cur + u)
            for _ in range(len(pinned_vals) + 1):
                inside = (pinned_vals - u < t) & (t < pinned_vals + u)
                if not inside.any():
                    break
                t = float(pinned_vals[inside][-1] + u)
            if t != predicted[idx]:
                paper_schedule = False
            predicted[idx] = t
            deltas[idx] = t - ls[idx]
            cur = t
        # amplitude cap: keep the conformal factor safely positive
        cap = 0.5 * eps_n
        if np.abs(deltas).max(initial=0.0) > cap:
            raise AdmissibilityExceeded(
                "window %d amplitudes up to %.3g exceed the positivity cap %.3g"
                % (n, np.abs(deltas).max(), cap)
            )
        plan = WindowPlan(
            n=n, T_lo=float(T_lo), T_hi=float(T_hi), words=words,
            lengths=[float(x) for x in ls], pinned=pinned, split=m,
            deltas=[float(x) for x in deltas], predicted=[float(x) for x in predicted],
            eps_n=float(eps_n), empty=False, paper_schedule=paper_schedule,
        )
        if not traces:
            return plan
        # safe points for the free members
        for w, pin in zip(words, pinned):
            if pin:
                continue
            beta = traces[w]
            others = [traces[v] for v in traces if v != w]
            plan.safe_points[w] = prox.safe_point(
                beta, others, eps_n, constants, rng=np.random.default_rng(self.rng_seed)
            )
        return plan

    def apply_window(self, metric, plan):
        """Append one bump per free member at its safe point; measured
        increments are compared against the schedule and recalibrated once per
        round (up to 3 rounds) when they disagree beyond cal_tol."""
        if plan.empty or not plan.safe_points:
            return metric, {}
        p = self.params
        deltas = {w: d for w, d in zip(plan.words, plan.deltas)}
        amplitudes = {w: deltas[w] for w in plan.safe_points}
        base_lengths = {w: L for w, L in zip(plan.words, plan.lengths)}
        for round_ in range(3):
            bumps = []
            for i, (w, sp) in enumerate(sorted(plan.safe_points.items())):
                bumps.append(
                    Bump(
                        center=sp.point,
                        r0=plan.eps_n,
                        delta=amplitudes[w],
                        window=plan.n,
                        index=plan.words.index(w) + 1,
                        geodesic_word=w,
                        arc_position=sp.arc_position,
                    )
                )
            trial = metric.with_bumps(bumps)
            measured = {}
            bad = []
            for w, sp in plan.safe_points.items():
                c = self.by_word[w]
                anchors = [(sp.arc_position, plan.eps_n)]
                res = solver.relax(
                    solver.initial_curve(c, trial, p.spacing, anchors), trial, p.tolerances()
                )
                measured[w] = res.length - base_lengths[w]
                want = deltas[w]
                if want != 0 and abs(measured[w] - want) > p.cal_tol * abs(want):
                    bad.append(w)
            if not bad:
                return trial, measured
            for w in bad:
                ratio = deltas[w] / measured[w] if measured[w] != 0 else 1.0
                amplitudes[w] = amplitudes[w] * ratio
        raise CalibrationFailed(
            "window %d: increments off by more than %.2g after 3 rounds (%s)"
            % (plan.n, p.cal_tol, ", ".join(format_word(w) for w in bad))
        )

    def verify_window(self, before_lengths, after_metric, plan, anchors_by_word):
        """Re-relax the whole working set under the new metric and check the
        window gaps, the fixed-length drift, the untouched band above, and the
        distortion guard for classes beyond the working set."""
        p = self.params
        lengths, numerics = self.measure_all(after_metric, anchors_by_word)
        scheduled = {w: d for w, d in zip(plan.words, plan.deltas)}
        measured_inc = {w: lengths[w] - before_lengths[w] for w in plan.words}
        # (a) gaps within the window
        if plan.empty:
            min_gap, required, gaps_ok = np.inf, float(np.exp(-p.nu * plan.T_hi)), True
        else:
            vals = np.sort([lengths[w] for w in plan.words])
            required = float(np.exp(-p.nu * plan.T_hi))
            min_gap = float(np.diff(vals).min()) if len(vals) > 1 else np.inf
            gaps_ok = bool(min_gap >= required)
        # (b), (c) drift of fixed lengths, exempting iterates entrained by a
        # bumped primitive root (they move k-fold by construction)
        bumped = set(plan.safe_points)
        drift = 0.0
        entrained = {}
        for w, L in lengths.items():
            if w in scheduled and not plan.empty and plan.T_lo < before_lengths[w] <= plan.T_hi:
                continue
            cls = self.by_word[w]
            if not cls.primitive and cls.root_word in bumped:
                expect = cls.power * lengths[cls.root_word]
                entrained[format_word(w)] = {
                    "measured": float(L),
                    "expected": float(expect),
                    "error": float(L - expect),
                }
                continue
            drift = max(drift, abs(L - before_lengths[w]))
        drift_ok = bool(drift <= p.drift_tol)
        # (d) distortion guard: nothing from beyond the working set can enter
        delta_n = _c0_distortion(after_metric, plan)
        T_np1 = plan.T_hi + 1.0
        guard_ok = bool(T_np1 / np.sqrt(1.0 + delta_n) > plan.T_hi)
        measured_C = float(min_gap * np.exp(p.nu * plan.T_hi)) if np.isfinite(min_gap) else np.inf
        report = WindowReport(
            n=plan.n,
            T_lo=plan.T_lo,
            T_hi=plan.T_hi,
            classes=[format_word(w) for w in plan.words],
            scheduled={format_word(w): v for w, v in scheduled.items()},
            measured={format_word(w): float(measured_inc[w]) for w in plan.words},
            min_gap=float(min_gap) if np.isfinite(min_gap) else -1.0,
            required_gap=required,
            measured_C=measured_C if np.isfinite(measured_C) else -1.0,
            fixed_drift=float(drift),
            entrained=entrained,
            distortion=float(delta_n),
            distortion_guard_ok=guard_ok,
            gaps_ok=gaps_ok,
            drift_ok=drift_ok,
            verdict=bool(gaps_ok and drift_ok and guard_ok),
        )
        return report, lengths, numerics

    # -- T0 selection ----

    def select_T0(self, t0_grid, constants, traces):
        """Smallest T0 on the grid for which every window's clearance request
        is available at a safe point for all (free) members of the window."""
        base_lengths = {w: self.by_word[w].base_length for w in self.by_word}
        clearances = self._best_clearances(traces)
        p = self.params
        for T0 in t0_grid:
            ok = True
            for n in range(1, p.window_count + 1):
                eps_n = np.exp(-p.alpha * (T0 + n + 1)) / 2.0
                T_lo, T_hi = T0 + n - 1, T0 + n
                for w, L in base_lengths.items():
                    if not (T_lo < L <= T_hi):
                        continue
                    if not self.by_word[w].primitive:
                        continue
                    if clearances.get(w, 0.0) < eps_n:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                return float(T0)
        raise NoSafeSegment("no T0 on the grid admits safe points for all windows")

    def _best_clearances(self, traces):
        """Sup over each geodesic of its clearance from the rest of the working
        set (and its own distant strands): a cheap feasibility profile for the
        T0 scan; the chosen T0 is then verified by the full safe-point search."""
        out = {}
        words = list(traces)
        for w in words:
            beta = traces[w]
            minded = np.full(len(beta.nodes), np.inf)
            for v in words:
                gamma = traces[v]
                qi, ci, d = gamma.query_points(beta.nodes, 0.5)
                if v == w and len(qi):
                    spar = beta.params[gamma.cloud_node[ci]]
                    dsp = np.abs(spar - beta.params[qi])
                    dsp = np.minimum(dsp, beta.cls.base_length - dsp)
                    keep = dsp > 0.7
                    qi, d = qi[keep], d[keep]
                if len(qi):
                    np.minimum.at(minded, qi, d)
            out[w] = float(minded.max())
        return out

    # -- full run ----

    def run(self, window_count=None, t0_grid=None):
        """Enumerate, relax, then loop plan -> apply -> verify per window;
        emits the certificate and the final metric."""
        p = self.params
        if window_count is None:
            window_count = p.window_count
        metric = ConformalMetric(self.surface)
        if t0_grid is None:
            if p.T0 > 0:
                t0_grid = [p.T0]
            else:
                t0_grid = [round(2.6 + 0.05 * k, 4) for k in range(10)]
        T_max = max(t0_grid) + window_count + 1.0
        self.prepare(T_max)
        lengths, numerics = self.measure_all(metric)
        traces = prox.build_traces(
            [numerics[c.word] for c in self.primitives], self.surface
        )
        traces = {t.word: t for t in traces}
        constants = prox.ProximityConstants(kappa=p.kappa, r_m=p.r_m)
        audit = prox.phase_audit(list(traces.values()), T=T_max, kappa=p.kappa)
        constants.eps0_phase = audit["eps0_phase"]
        T0 = self.select_T0(t0_grid, constants, traces)
        windows = []
        anchors_by_word = {}
        all_ok = True
        for n in range(1, window_count + 1):
            plan = self.plan_window(n, T0, lengths, traces, constants)
            before = dict(lengths)
            metric, _cal = self.apply_window(metric, plan)
            for w, sp in plan.safe_points.items():
                anchors_by_word.setdefault(w, []).append((sp.arc_position, plan.eps_n))
            report, lengths, numerics = self.verify_window(before, metric, plan, anchors_by_word)
            windows.append(report)
            all_ok = all_ok and report.verdict
        certified = {
            w: L for w, L in lengths.items() if T0 <= L <= T0 + window_count
        }
        sep_ok, worst = separation_check(list(certified.values()), p.nu, C=1.0)
        cert = SeparationCertificate(
            params={k: getattr(p, k) for k in vars(p)},
            T0=T0,
            windows=windows,
            final_lengths=certified,
            separation_ok=bool(sep_ok),
            global_verdict=bool(all_ok and sep_ok),
            fitted_eps0_phase=float(constants.eps0_phase),
            meta={"worst_pair": worst},
        )
        return metric, cert
