"""Command-line driver: ``qpkr simulate | analyze | universality | presets | synth``."""

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from qpkr import __version__, serialization
from qpkr.baselines import CriticalLaw, ScalingFunction, classical_diffusion, synth_scaling_data
from qpkr.configuration import WINDOWS, RunConfig, default_output_root, resolve_window
from qpkr.core import ConfigurationError, ConvergenceError, GridOverflowError, QpkrError
from qpkr.crit import CollapseFitAnalysis, analyze_series, universality_report, window_stability
from qpkr.engine import run_ensemble
from qpkr.model import PRESETS, commensurability_warnings, get_preset, sweep
from qpkr.scaling import lambda_series

logger = logging.getLogger("qpkr")

EXIT_OK = 0
EXIT_CONFIGURATION = 2
EXIT_CONVERGENCE = 3
EXIT_GRID_OVERFLOW = 4

_MANIFEST_CONFIG_KEYS = ("points", "realizations", "n_kicks", "grid_m", "seed", "window", "source", "chunk_size",
                         "random_phases")


def _configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else (logging.INFO if verbosity == 1 else logging.DEBUG)
    logging.basicConfig(format="%(asctime)s - %(levelname)s - %(name)s - %(message)s", level=level)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _resolve_run(args):
    config, parameters = (serialization.import_config(args.config) if args.config else (RunConfig(), None))
    config = config.replace(
        preset=args.preset,
        points=args.points,
        realizations=args.realizations,
        n_kicks=args.kicks,
        grid_m=args.grid_m,
        seed=args.seed,
        window=args.window,
        workers=args.workers,
        chunk_size=args.chunk_size,
        random_phases=False if args.no_random_phases else None,
        output=args.output,
    )
    if config.preset is not None:
        parameters = get_preset(config.preset)
    if parameters is None:
        raise ConfigurationError("give --preset or a configuration file with a 'parameters' section")
    return config, parameters.replace(n_kicks=config.n_kicks)


def _manifest_config(config):
    d = config.to_dict()
    return {key: d[key] for key in _MANIFEST_CONFIG_KEYS}


def _resumable(run_dir, manifest_base):
    """Files of a previous partial run with the same configuration whose digests still match."""
    try:
        previous = serialization.read_manifest(run_dir, validate=False)
    except ConfigurationError:
        return set()
    if previous.get("parameters") != manifest_base["parameters"] or previous.get("config") != manifest_base["config"]:
        raise ConfigurationError(f"{run_dir} holds a run with a different configuration")
    done = set()
    for name, digest in previous.get("files", {}).items():
        target = run_dir / name
        if target.exists() and serialization.sha256(target) == digest:
            done.add(name)
    return done


def cmd_simulate(args):
    config, ps = _resolve_run(args)
    for warning in commensurability_warnings(ps):
        message = f"parameter set {ps.label}: {warning}"
        warnings.warn(message, UserWarning, stacklevel=2)
        logger.warning(message)

    controls = sweep(ps.path, config.points)
    if args.dry_run:
        print(f"# parameter set {ps.label}: kbar={ps.kbar}, path {ps.path}, coordinate {ps.path.coordinate}")
        print("index,K,eps,value")
        for i, c in enumerate(controls):
            print(f"{i},{c.K:.10g},{c.eps:.10g},{c.value:.10g}")
        return EXIT_OK

    run_dir = Path(config.output) if config.output else default_output_root() / f"{ps.label}-seed{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    entries = [{"index": i, "K": c.K, "eps": c.eps, "value": c.value, "file": f"point_{i:03d}.csv"}
               for i, c in enumerate(controls)]
    base = {
        "kind": "quantum",
        "preset": config.preset,
        "parameters": serialization.parameter_set_to_dict(ps),
        "config": _manifest_config(config),
        "sweep": entries,
    }
    base = json.loads(serialization.dumps(base))
    done = _resumable(run_dir, base) if args.resume else set()

    files = []
    for entry, control in zip(entries, controls):
        name = entry["file"]
        sidecar = serialization.sidecar_path(name).name
        if name in done and sidecar in done:
            logger.info("resuming: %s already done", name)
        else:
            obs = run_ensemble(ps, control, n_realizations=config.realizations, seed=config.seed,
                               grid_m=config.grid_m, random_phases=config.random_phases, workers=config.workers,
                               chunk_size=config.chunk_size)
            serialization.write_series(obs, run_dir / name, ps, config.seed, config.grid_m, config.random_phases)
        files += [name, sidecar]
        serialization.write_manifest(run_dir, {**base, "status": "partial"}, files)
    serialization.write_manifest(run_dir, {**base, "status": "complete"}, files)
    print(run_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _load_series(run_dir, manifest, window, source):
    kind = manifest.get("kind")
    series = []
    for entry in manifest["sweep"]:
        path = run_dir / entry["file"]
        if kind == "quantum":
            series.append(lambda_series(serialization.read_series(path), window, source))
        elif kind == "lambda":
            ls = serialization.read_lambda_series(path)
            mask = (ls.times >= window[0]) & (ls.times <= window[1])
            if not mask.any():
                raise ConfigurationError(f"no recorded time of {entry['file']} inside window {window}")
            series.append(type(ls)(ls.control_value, ls.times[mask], ls.values[mask], ls.lambda_err[mask],
                                   ls.source))
        else:
            raise ConfigurationError(f"runs of kind {kind!r} cannot be analysed")
    return series


def _print_fit(label, fit):
    sigma = fit.bootstrap.nu_err if fit.bootstrap is not None else fit.nu_err
    q_sigma = fit.bootstrap.q_c_err if fit.bootstrap is not None else fit.q_c_err
    print(f"{label}: q_c = {fit.q_c:.4f} ± {q_sigma:.4f}, nu = {fit.nu:.3f} ± {sigma:.3f}, "
          f"chi2/dof = {fit.chi2_per_dof:.3g}")


def cmd_analyze(args):
    run_dir = Path(args.run_dir)
    manifest = serialization.read_manifest(run_dir)
    if manifest.get("status", "complete") != "complete":
        raise ConfigurationError(f"{run_dir} is a partial run; finish it with 'qpkr simulate --resume'")
    config = manifest.get("config", {})
    window = resolve_window(args.window if args.window else config.get("window", WINDOWS["default"]))
    source = args.source or config.get("source", "p2")
    series = _load_series(run_dir, manifest, window, source)

    result = analyze_series(series, gauge_ref=args.gauge_ref, n_replicas=args.bootstrap, seed=args.seed,
                            workers=args.workers, progress="bootstrap" if args.bootstrap else None)
    scaling, fit = result.scaling, result.fit

    out_dir = Path(args.output) if args.output else run_dir / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    serialization.write_json(serialization.scaling_result_to_dict(scaling), out_dir / "scaling.json")
    serialization.write_json(serialization.critical_fit_to_dict(fit, result.crossing), out_dir / "critical_fit.json")
    serialization.write_collapse_csv(scaling, out_dir / "collapse.csv")
    serialization.write_xi_csv(scaling, fit, out_dir / "xi.csv")
    files = ["scaling.json", "critical_fit.json", "collapse.csv", "xi.csv"]

    if args.stability:
        narrow = window_stability(fit)
        short = (window[0], int(round(0.8 * window[1])))
        variant = CollapseFitAnalysis(args.gauge_ref)(_load_series(run_dir, manifest, short, source))
        stability = {
            "control_window": {"half_width": narrow.half_width, "nu": narrow.nu_narrow, "q_c": narrow.q_c_narrow,
                               "delta_nu": narrow.delta_nu, "sigma_nu": narrow.sigma_nu, "stable": narrow.stable},
            "time_window": {"window": short, "nu": variant.nu, "q_c": variant.q_c,
                            "delta_nu": variant.nu - fit.nu},
        }
        serialization.write_json(stability, out_dir / "stability.json")
        files.append("stability.json")
        print(f"window stability: delta nu = {narrow.delta_nu:+.3f} (control window ±15%), "
              f"{variant.nu - fit.nu:+.3f} (times {short[0]}-{short[1]})")

    if args.plots:
        from qpkr import plotting

        plotting.plot_collapse(scaling, out_dir / "collapse.svg")
        plotting.plot_xi(scaling, fit, out_dir / "xi.svg")
        files += ["collapse.svg", "xi.svg"]

    serialization.write_manifest(out_dir, {
        "kind": "analysis",
        "run": str(run_dir),
        "window": window,
        "source": source,
        "bootstrap": args.bootstrap,
        "seed": args.seed,
        "weighting": fit.weighting,
        "branches": {repr(q): b.value for q, b in scaling.branches.items()},
        "ambiguous": scaling.ambiguous,
        "excluded": scaling.excluded,
    }, files)
    label = manifest.get("preset") or manifest.get("parameters", {}).get("label", run_dir.name)
    _print_fit(label, fit)
    return EXIT_OK


# ---------------------------------------------------------------------------
# universality
# ---------------------------------------------------------------------------

def cmd_universality(args):
    parameter_sets, critical_values, rows = {}, {}, {}
    if args.from_table:
        for label, ps in PRESETS.items():
            rows[label] = (ps.reference.nu, ps.reference.nu_err)
            parameter_sets[label] = ps
            critical_values[label] = ps.reference.critical_value
    for run in args.runs:
        run_dir = Path(run)
        manifest = serialization.read_manifest(run_dir)
        analysis = run_dir / "analysis"
        serialization.read_manifest(analysis)
        nu, sigma, q_c = serialization.fit_summary(serialization.read_json(analysis / "critical_fit.json"))
        ps = serialization.parameter_set_from_dict(manifest["parameters"]) if "parameters" in manifest else None
        label = manifest.get("preset") or (ps.label if ps is not None else run_dir.name)
        if label in rows:
            logger.warning("%s replaces the earlier entry for set %s", run_dir, label)
        rows[label] = (nu, sigma)
        critical_values[label] = q_c
        if ps is not None:
            parameter_sets[label] = ps

    report = universality_report([(label, nu, sigma) for label, (nu, sigma) in rows.items()])
    out_dir = Path(args.output) if args.output else default_output_root() / "universality"
    out_dir.mkdir(parents=True, exist_ok=True)
    serialization.write_table_csv(report, parameter_sets, critical_values, out_dir / "table.csv")
    serialization.write_exponent_csv(report, out_dir / "exponents.csv")
    serialization.write_json({
        "mean": report.mean,
        "error": report.error,
        "internal_error": report.internal_error,
        "dispersion": report.dispersion,
        "sets": [{"label": lab, "nu": nu, "sigma": s, "deviation": d, "reference_deviation": rd}
                 for lab, nu, s, d, rd in zip(report.labels, report.nu, report.sigma, report.deviation,
                                              report.reference_deviation)],
        "flagged": report.flagged,
        "reference": report.reference,
        "reference_flagged": report.reference_flagged,
    }, out_dir / "report.json")
    if args.plots:
        from qpkr import plotting

        plotting.plot_exponents(report, out_dir / "exponents.svg")

    print(f"weighted mean nu = {report.mean:.3f} ± {report.error:.3f} over {len(report.labels)} sets")
    if report.flagged:
        print(f"outside 2 sigma of the mean: {', '.join(report.flagged)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def cmd_presets(args):
    if args.show:
        d = serialization.parameter_set_to_dict(get_preset(args.show))
        sys.stdout.write(serialization.dumps(d, args.format))
        return EXIT_OK
    print("label  kbar  omega2/2pi  omega3/2pi  path                 fit  q_c     nu")
    for label, ps in PRESETS.items():
        ref = ps.reference
        print(f"{label:<6} {ps.kbar:<5g} {ps.omega2 / (2 * np.pi):<11.6f} {ps.omega3 / (2 * np.pi):<11.6f} "
              f"{str(ps.path):<20} {ps.path.coordinate:<4} {ref.critical_value:<7g} {ref.nu:g} ± {ref.nu_err:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args):
    out_dir = Path(args.output) if args.output else default_output_root() / f"synth-{args.kind}-seed{args.seed}"
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "classical":
        ps = get_preset(args.preset)
        series = classical_diffusion(args.K, ps.kbar, args.eps, (ps.omega2, ps.omega3), (ps.phi2, ps.phi3),
                                     t_max=args.kicks, count=args.count, seed=args.seed, workers=args.workers)
        meta = {"preset": ps.label, "K": args.K, "eps": args.eps, "seed": args.seed}
        serialization.write_classical_series(series, out_dir / "classical.csv", meta)
        serialization.write_manifest(out_dir, {"kind": "classical", **meta}, ["classical.csv", "classical.json"])
        print(out_dir)
        return EXIT_OK

    law = CriticalLaw(args.alpha, args.qc, args.nu, args.beta)
    function = ScalingFunction(args.function)
    window = resolve_window(args.window)
    times = np.unique(np.geomspace(window[0], window[1], args.times).astype(np.int64))
    controls = np.linspace(args.q_min, args.q_max, args.points)
    series = synth_scaling_data(function, law, controls, times, noise=args.noise, seed=args.seed)
    entries, files = [], []
    for i, ls in enumerate(series):
        name = f"point_{i:03d}.csv"
        serialization.write_lambda_series(ls, out_dir / name)
        entries.append({"index": i, "value": ls.control_value, "file": name})
        files += [name, serialization.sidecar_path(name).name]
    serialization.write_manifest(out_dir, {
        "kind": "lambda",
        "truth": {"alpha": law.alpha, "q_c": law.q_c, "nu": law.nu, "beta": law.beta, "function": function.kind},
        "config": {"window": window, "source": "p2", "noise": args.noise, "seed": args.seed},
        "sweep": entries,
    }, files)
    print(out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="qpkr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"qpkr {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debugging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a sweep along a parameter-set path")
    sim.add_argument("--config", help="JSON or YAML run configuration; flags override it")
    sim.add_argument("--preset", help="built-in parameter set A-I")
    sim.add_argument("--points", type=int, help="control points along the path (20)")
    sim.add_argument("--realizations", type=int, help="ensemble size per point (1024)")
    sim.add_argument("--kicks", type=int, help="kicks per realization (1000)")
    sim.add_argument("--grid-m", type=int, help="momentum lattice half width M (1024)")
    sim.add_argument("--seed", type=int, help="run seed (0)")
    sim.add_argument("--window", help="analysis window recorded in the manifest")
    sim.add_argument("--workers", type=int, help="worker processes (all cores)")
    sim.add_argument("--chunk-size", type=int, help="realizations per batched transform (16)")
    sim.add_argument("--no-random-phases", action="store_true", help="keep the parameter set's modulation phases")
    sim.add_argument("--output", help="run directory")
    sim.add_argument("--dry-run", action="store_true", help="print the control grid and exit")
    sim.add_argument("--resume", action="store_true", help="skip points already written by a partial run")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="collapse a run and fit its critical point")
    ana.add_argument("run_dir")
    ana.add_argument("--window", help="default, paper, early, early-short or TMIN,TMAX")
    ana.add_argument("--source", choices=("p2", "pi0"), help="Λ estimator")
    ana.add_argument("--bootstrap", type=int, default=100, help="bootstrap replicas (100)")
    ana.add_argument("--seed", type=int, default=0, help="bootstrap seed (0)")
    ana.add_argument("--workers", type=int, default=None, help="worker processes (all cores)")
    ana.add_argument("--gauge-ref", type=float, help="localized control value with ln xi = 0")
    ana.add_argument("--stability", action="store_true", help="refit with narrower control and time windows")
    ana.add_argument("--plots", action="store_true", help="also write SVG figures")
    ana.add_argument("--output", help="analysis directory (RUN_DIR/analysis)")
    ana.set_defaults(func=cmd_analyze)

    uni = sub.add_parser("universality", help="combine the exponents of analysed runs")
    uni.add_argument("runs", nargs="*", help="analysed run directories")
    uni.add_argument("--from-table", action="store_true", help="use the published exponents of the presets")
    uni.add_argument("--plots", action="store_true", help="also write an SVG figure")
    uni.add_argument("--output", help="output directory")
    uni.set_defaults(func=cmd_universality)

    pre = sub.add_parser("presets", help="list the built-in parameter sets")
    pre.add_argument("--show", help="print one parameter set")
    pre.add_argument("--format", choices=("json", "yaml"), default="json")
    pre.set_defaults(func=cmd_presets)

    syn = sub.add_parser("synth", help="write synthetic scaling data or a classical oracle series")
    syn.add_argument("--kind", choices=("scaling", "classical"), default="scaling")
    syn.add_argument("--output", help="output directory")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--function", choices=ScalingFunction.KINDS, default="crossover")
    syn.add_argument("--alpha", type=float, default=0.05)
    syn.add_argument("--qc", type=float, default=6.67)
    syn.add_argument("--nu", type=float, default=1.58)
    syn.add_argument("--beta", type=float, default=0.01)
    syn.add_argument("--q-min", type=float, default=4.0)
    syn.add_argument("--q-max", type=float, default=9.0)
    syn.add_argument("--points", type=int, default=41)
    syn.add_argument("--times", type=int, default=40, help="log-spaced recording times")
    syn.add_argument("--window", default="default")
    syn.add_argument("--noise", type=float, default=0.02)
    syn.add_argument("--preset", default="A", help="parameter set of the classical oracle")
    syn.add_argument("--K", type=float, default=10.0)
    syn.add_argument("--eps", type=float, default=0.0)
    syn.add_argument("--kicks", type=int, default=1000)
    syn.add_argument("--count", type=int, default=10000)
    syn.add_argument("--workers", type=int, default=1)
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except GridOverflowError as exc:
        logger.error("%s", exc)
        return EXIT_GRID_OVERFLOW
    except ConvergenceError as exc:
        logger.error("%s", exc)
        return EXIT_CONVERGENCE
    except (ConfigurationError, QpkrError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIGURATION
