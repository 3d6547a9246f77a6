"""Batch front-end: enumeration, separation runs, proximity/flow audits, and
separation checks on length files.  All outputs are deterministic for a fixed
config (the only wall-clock content is the isolated generated_at metadata
field) and are written atomically.

Config files are plain key = value lines ('#' comments); unknown keys are
rejected.  Command-line flags override config values.

Exit codes: 0 success, 2 validation error, 3 resource limit.
"""

import argparse
import datetime
import json
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from . import proximity as prox
from .conformal_metric import ConformalMetric, admissibility
from .errors import ConfigError, LengthSepError, NodeBudgetExceeded
from .separation_engine import SeparationEngine, derive_constants, separation_check
from .surface_group import BolzaSurface, enumerate_classes, format_word, spectrum_to_csv
from . import geodesic_solver as solver


@dataclass
class RunConfig:
    surface: str = "genus2-regular-octagon"
    cutoff_T: float = 8.0
    k: int = 2
    eps: float = 0.1
    eps0: float = 0.05
    scale: float = 0.18
    window_count: int = 2
    T0: float = 0.0           # 0 = engine selects from the grid below
    t0_min: float = 2.9
    t0_max: float = 3.05
    t0_step: float = 0.05
    spacing: float = 0.01
    grad_tol: float = 1e-10
    residual_tol: float = 1e-7
    drift_tol: float = 1e-9
    cal_tol: float = 2e-4
    r_m: float = 1.4
    seed: int = 7
    threads: int = 1
    quick: bool = False
    node_budget: int = 40_000_000
    audit_pairs: int = 1000
    out: str = "out"

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def load_config(path=None, overrides=None):
    cfg = RunConfig()
    known = set(RunConfig.field_names())
    def assign(key, value):
        if key not in known:
            raise ConfigError("unknown config key %r" % key)
        current = getattr(cfg, key)
        if isinstance(current, bool):
            value = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        setattr(cfg, key, value)
    if path:
        if not os.path.exists(path):
            raise ConfigError("config file %r not found" % path)
        with open(path) as f:
            for line_no, raw in enumerate(f, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError("line %d: expected key = value" % line_no)
                key, value = (part.strip() for part in line.split("=", 1))
                assign(key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            assign(key, str(value))
    return cfg


def _write_atomic(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _meta(cfg):
    return {
        "version": __version__,
        "config": {k: getattr(cfg, k) for k in RunConfig.field_names()},
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _dump_json(doc, path):
    _write_atomic(path, json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


# --- subcommands ----------------------------------------------------------------

def cmd_enumerate(cfg):
    surface = BolzaSurface()
    spectrum = enumerate_classes(
        surface.generators, cfg.cutoff_T, node_budget=cfg.node_budget, surface=surface
    )
    os.makedirs(cfg.out, exist_ok=True)
    spectrum_to_csv(spectrum, os.path.join(cfg.out, "spectrum.csv"))
    # counting curve: ratio at unit cutoffs up to T (one enumeration reused)
    lengths = np.array([c.base_length for c in spectrum.classes])
    curve = ["T,count,counting_ratio"]
    for t in np.arange(4.0, cfg.cutoff_T + 1e-9, 0.5):
        n = int((lengths <= t).sum())
        curve.append("%r,%d,%r" % (float(t), n, float(n * 2.0 * t * np.exp(-t))))
    _write_atomic(os.path.join(cfg.out, "counting_curve.csv"), "\n".join(curve) + "\n")
    report = {
        "cutoff_T": cfg.cutoff_T,
        "classes": len(spectrum.classes),
        "primitive_classes": len(spectrum.primitive_classes()),
        "counting_ratio": spectrum.counting_ratio,
        "systole": float(lengths.min()) if len(lengths) else None,
        "meta": _meta(cfg),
    }
    _dump_json(report, os.path.join(cfg.out, "counting_report.json"))
    print("enumerated %d classes up to T=%g (ratio %.4f)" % (
        len(spectrum.classes), cfg.cutoff_T, spectrum.counting_ratio))
    return 0


def cmd_separate(cfg):
    params = derive_constants(
        (-1.0, -1.0), cfg.eps0, cfg.eps, cfg.k, cfg.scale,
        r_m=cfg.r_m, T0=cfg.T0, window_count=cfg.window_count, spacing=cfg.spacing,
        grad_tol=cfg.grad_tol, residual_tol=cfg.residual_tol,
        drift_tol=cfg.drift_tol, cal_tol=cfg.cal_tol,
    )
    engine = SeparationEngine(params, rng_seed=cfg.seed, threads=cfg.threads)
    grid = None
    if cfg.T0 <= 0:
        n_steps = max(1, int(round((cfg.t0_max - cfg.t0_min) / cfg.t0_step)) + 1)
        grid = [round(cfg.t0_min + i * cfg.t0_step, 6) for i in range(n_steps)]
    metric, cert = engine.run(window_count=cfg.window_count, t0_grid=grid)
    os.makedirs(cfg.out, exist_ok=True)
    cert.meta.update(_meta(cfg))
    metric.to_json(os.path.join(cfg.out, "metric.json"))
    cert.to_json(os.path.join(cfg.out, "certificate.json"))
    # gap histogram over the certified range
    vals = np.sort(list(cert.final_lengths.values()))
    gaps = np.diff(vals)
    hist = ["lower_length,gap"]
    for v, g in zip(vals[:-1], gaps):
        hist.append("%r,%r" % (float(v), float(g)))
    _write_atomic(os.path.join(cfg.out, "gap_histogram.csv"), "\n".join(hist) + "\n")
    drift_rows = ["window,class,scheduled,measured"]
    for w in cert.windows:
        wd = w if isinstance(w, dict) else vars(w)
        for name in wd["classes"]:
            drift_rows.append(
                "%d,%s,%r,%r" % (wd["n"], name, wd["scheduled"][name], wd["measured"][name])
            )
    _write_atomic(os.path.join(cfg.out, "drift_table.csv"), "\n".join(drift_rows) + "\n")
    print("separation run: T0=%.3f windows=%d verdict=%s" % (
        cert.T0, cfg.window_count, cert.global_verdict))
    return 0


def cmd_audit(cfg):
    surface = BolzaSurface()
    spectrum = enumerate_classes(
        surface.generators, cfg.cutoff_T, node_budget=cfg.node_budget, surface=surface
    )
    metric = ConformalMetric(surface)
    tol = solver.Tolerances(spacing=cfg.spacing, grad_tol=cfg.grad_tol, residual_tol=cfg.residual_tol)
    numerics = []
    for c in spectrum.primitive_classes():
        numerics.append(solver.relax(solver.initial_curve(c, metric, cfg.spacing), metric, tol))
    traces = prox.build_traces(numerics, surface)
    constants = prox.ProximityConstants(kappa=1.0, r_m=cfg.r_m)
    phase = prox.phase_audit(traces, T=cfg.cutoff_T, kappa=1.0)
    constants.eps0_phase = phase["eps0_phase"]
    eps_tube = 0.25 if not cfg.quick else 0.1
    cover_stats = []
    divergence_violations = []
    count_bound = 4.0 * (cfg.cutoff_T / cfg.r_m) ** 2
    n_pairs = 0
    for a in range(len(traces)):
        rng_lim = len(traces) if not cfg.quick else min(len(traces), a + 4)
        for b in range(a + 1, rng_lim):
            beta, gamma = traces[a], traces[b]
            ais = prox.almost_intersections(beta, gamma, eps_tube, constants)
            n_pairs += 1
            cover_stats.append(
                {
                    "pair": "%s|%s" % (format_word(beta.word), format_word(gamma.word)),
                    "almost_intersections": len(ais),
                    "count_bound": count_bound,
                }
            )
            divergence_violations.extend(
                prox.divergence_audit(beta, gamma, ais, constants, cfg.cutoff_T)
            )
    expansion = prox.expansion_audit(n_pairs=cfg.audit_pairs, seed=cfg.seed)
    report = {
        "T": cfg.cutoff_T,
        "phase": phase,
        "constants": {
            "kappa": constants.kappa,
            "kappa0": constants.kappa0,
            "r_m": constants.r_m,
            "eps0_phase": constants.eps0_phase,
            "C1": constants.C1,
            "C2": constants.C2,
            "C3": constants.C3,
        },
        "tube_eps": eps_tube,
        "pairs_scanned": n_pairs,
        "cover": cover_stats,
        "count_violations": sum(1 for c in cover_stats if c["almost_intersections"] > count_bound),
        "divergence_violations": divergence_violations,
        "expansion": expansion,
        "meta": _meta(cfg),
    }
    os.makedirs(cfg.out, exist_ok=True)
    _dump_json(report, os.path.join(cfg.out, "audit.json"))
    print(
        "audit at T=%g: eps0_phase=%.4g, %d pairs, %d count violations, "
        "%d divergence violations, expansion worst ratio %.3f"
        % (
            cfg.cutoff_T,
            phase["eps0_phase"],
            n_pairs,
            report["count_violations"],
            len(divergence_violations),
            expansion["worst_ratio"],
        )
    )
    return 0


def cmd_check(cfg, lengths_file, nu, C):
    if not os.path.exists(lengths_file):
        raise ConfigError("lengths file %r not found" % lengths_file)
    values = []
    with open(lengths_file) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            for tok in line.replace(",", " ").split():
                try:
                    values.append(float(tok))
                except ValueError:
                    pass
    if not values:
        raise ConfigError("no lengths parsed from %r" % lengths_file)
    ok, worst = separation_check(values, nu, C, all_pairs=not cfg.quick)
    doc = {
        "count": len(values),
        "nu": nu,
        "C": C,
        "separated": bool(ok),
        "worst_pair": worst,
        "meta": _meta(cfg),
    }
    os.makedirs(cfg.out, exist_ok=True)
    _dump_json(doc, os.path.join(cfg.out, "check.json"))
    print("separation %s (worst pair %s)" % ("holds" if ok else "FAILS", worst))
    return 0


# --- argument parsing ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="lengthsep",
        description="length-spectrum separation toolkit for the genus-2 octagon surface",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads for relaxations")
        sp.add_argument("--quick", action="store_true", help="cheaper, smaller audits")

    sp = sub.add_parser("enumerate", help="enumerate the base length spectrum")
    common(sp)
    sp.add_argument("-T", "--cutoff", type=float, help="length cutoff")

    sp = sub.add_parser("separate", help="run the windowed separation pipeline")
    common(sp)
    sp.add_argument("--windows", type=int, help="number of unit windows")
    sp.add_argument("--scale", type=float, help="exponent rescale factor")
    sp.add_argument("--T0", type=float, help="fixed window start (0 = auto)")

    sp = sub.add_parser("audit", help="proximity, phase and expansion audits")
    common(sp)
    sp.add_argument("-T", "--cutoff", type=float, help="working-set cutoff")

    sp = sub.add_parser("check", help="separation check on a lengths file")
    common(sp)
    sp.add_argument("lengths_file")
    sp.add_argument("--nu", type=float, required=True)
    sp.add_argument("-C", type=float, default=1.0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = {
            "out": args.out,
            "threads": args.threads,
        }
        if args.quick:
            overrides["quick"] = True
        if getattr(args, "cutoff", None) is not None:
            overrides["cutoff_T"] = args.cutoff
        if getattr(args, "windows", None) is not None:
            overrides["window_count"] = args.windows
        if getattr(args, "scale", None) is not None:
            overrides["scale"] = args.scale
        if getattr(args, "T0", None) is not None:
            overrides["T0"] = args.T0
        cfg = load_config(args.config, overrides)
        if args.command == "enumerate":
            return cmd_enumerate(cfg)
        if args.command == "separate":
            return cmd_separate(cfg)
        if args.command == "audit":
            return cmd_audit(cfg)
        if args.command == "check":
            return cmd_check(cfg, args.lengths_file, args.nu, args.C)
        raise ConfigError("unknown command %r" % args.command)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except NodeBudgetExceeded as exc:
        print("resource limit: %s" % exc, file=sys.stderr)
        return 3
    except LengthSepError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
