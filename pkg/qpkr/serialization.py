import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from qpkr import __version__
from qpkr.configuration import RunConfig, timestamp
from qpkr.core import Branch, ConfigurationError, ControlPoint, ManifestError
from qpkr.engine import ObservableSeries
from qpkr.model import ControlPath, ParameterSet, ReferenceResult, radical_frequency
from qpkr.scaling import LambdaSeries


CONFIG_VERSION = 1
MANIFEST_NAME = "manifest.json"
SERIES_COLUMNS = ("t", "p2", "p2_err", "pi0", "pi0_err", "p1", "p1_err")
LAMBDA_COLUMNS = ("t", "lambda", "lambda_err")
CLASSICAL_COLUMNS = ("t", "p2", "p2_err")


def _infer_format(path):
    ext = Path(path).suffix.lower()
    if ext == ".json":
        return "json"
    if ext in (".yaml", ".yml"):
        return "yaml"
    raise ConfigurationError(f"Unsupported config file extension '{ext}'. Use .json, .yaml, or .yml.")


def _get_yaml():
    try:
        import yaml
        return yaml
    except ImportError:
        raise ImportError(
            "PyYAML is required for YAML support. Install it with: pip install pyyaml"
        ) from None


def to_plain(obj):
    """Convert numpy scalars and arrays, enums and tuples into JSON-ready values.

    Examples
    --------
    >>> import numpy as np
    >>> from qpkr.core import Branch
    >>> from qpkr.serialization import to_plain
    >>> to_plain({1.5: (np.float64(2.0), Branch.LOCALIZED)})
    {'1.5': [2.0, 'localized']}
    """
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Branch):
        return obj.value
    return obj


def dumps(d, fmt="json"):
    """Text of *d* in the JSON or YAML layout of the files this module writes."""
    if fmt == "json":
        return json.dumps(to_plain(d), indent=2) + "\n"
    if fmt == "yaml":
        return _get_yaml().safe_dump(to_plain(d), default_flow_style=False, sort_keys=False)
    raise ConfigurationError(f"format must be 'json' or 'yaml', got {fmt!r}")


def _dump(d, path):
    fmt = _infer_format(path)
    with open(path, "w") as f:
        f.write(dumps(d, fmt))


def _load(path):
    fmt = _infer_format(path)
    with open(path) as f:
        if fmt == "json":
            d = json.load(f)
        else:
            yaml = _get_yaml()
            d = yaml.safe_load(f)
    if not isinstance(d, dict):
        raise ConfigurationError(f"{path} does not hold a key-value document")
    version = d.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"Unsupported config version {version}. Expected {CONFIG_VERSION}.")
    return d


def sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Parameter sets
# ---------------------------------------------------------------------------

def _serialize_frequency(omega, radicand):
    if radicand is not None:
        return {"sqrt": radicand}
    return omega


def _parse_frequency(value):
    if isinstance(value, dict):
        radicand = value["sqrt"]
        return radical_frequency(radicand), radicand
    return float(value), None


def parameter_set_to_dict(ps):
    """Key-value form of a parameter set; radical frequencies are written as ``{"sqrt": n}``."""
    d = {
        "label": ps.label,
        "kbar": ps.kbar,
        "omega2": _serialize_frequency(ps.omega2, ps.omega2_radicand),
        "omega3": _serialize_frequency(ps.omega3, ps.omega3_radicand),
        "path": {
            "start": list(ps.path.start),
            "end": list(ps.path.end),
            "coordinate": ps.path.coordinate,
        },
    }
    if ps.phi2 != 0 or ps.phi3 != 0:
        d["phases"] = [ps.phi2, ps.phi3]
    if ps.n_kicks != 1000:
        d["n_kicks"] = ps.n_kicks
    if ps.reference is not None:
        d["reference"] = {
            "critical_value": ps.reference.critical_value,
            "nu": ps.reference.nu,
            "nu_err": ps.reference.nu_err,
        }
    return d


def parameter_set_from_dict(d):
    try:
        omega2, radicand2 = _parse_frequency(d["omega2"])
        omega3, radicand3 = _parse_frequency(d["omega3"])
        path = d["path"]
        phi2, phi3 = d.get("phases", (0.0, 0.0))
        reference = d.get("reference")
        return ParameterSet(
            label=str(d["label"]),
            kbar=float(d["kbar"]),
            omega2=omega2,
            omega3=omega3,
            path=ControlPath(tuple(path["start"]), tuple(path["end"]), path.get("coordinate", "K")),
            phi2=float(phi2),
            phi3=float(phi3),
            n_kicks=int(d.get("n_kicks", 1000)),
            omega2_radicand=radicand2,
            omega3_radicand=radicand3,
            reference=ReferenceResult(**reference) if reference is not None else None,
        )
    except KeyError as exc:
        raise ConfigurationError(f"parameter set is missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid parameter set: {exc}") from None


def export_parameter_set(ps, path):
    _dump({"version": CONFIG_VERSION, **parameter_set_to_dict(ps)}, path)


def import_parameter_set(path):
    d = _load(path)
    d.pop("version", None)
    return parameter_set_from_dict(d)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def export_config(config, path, parameters=None):
    """Write a run configuration file; *parameters* embeds an explicit parameter set."""
    d = {"version": CONFIG_VERSION, **config.to_dict()}
    if parameters is not None:
        d["parameters"] = parameter_set_to_dict(parameters)
    _dump(d, path)


def import_config(path):
    """Read a run configuration file.

    Returns
    -------
    tuple
        ``(RunConfig, ParameterSet or None)``.

    Raises
    ------
    ConfigurationError
        Unknown keys, a bad version or invalid values.
    """
    d = _load(path)
    d.pop("version", None)
    parameters = d.pop("parameters", None)
    if "window" in d and isinstance(d["window"], list):
        d["window"] = tuple(d["window"])
    try:
        config = RunConfig().replace(**d)
    except TypeError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from None
    return config, (parameter_set_from_dict(parameters) if parameters is not None else None)


# ---------------------------------------------------------------------------
# Series files and sidecars
# ---------------------------------------------------------------------------

def _write_rows(path, columns, arrays):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in zip(*arrays):
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _read_columns(path, required):
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except FileNotFoundError:
        raise ManifestError(f"missing series file {path}") from None
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    header = rows[0]
    missing = [c for c in required if c not in header]
    if missing:
        raise ConfigurationError(f"{path} lacks columns {', '.join(missing)}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def control_to_dict(control):
    return {"K": control.K, "eps": control.eps, "value": control.value}


def control_from_dict(d):
    return ControlPoint(float(d["K"]), float(d["eps"]), float(d["value"]))


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def write_series(obs, path, parameters, seed, grid_m, random_phases=True):
    """Write an ensemble series as CSV plus a JSON sidecar next to it."""
    p1 = obs.p1 if obs.p1 is not None else np.zeros(len(obs.times))
    p1_err = obs.p1_err if obs.p1_err is not None else np.zeros(len(obs.times))
    _write_rows(path, SERIES_COLUMNS, (obs.times, obs.p2, obs.p2_err, obs.pi0, obs.pi0_err, p1, p1_err))
    _dump({
        "version": CONFIG_VERSION,
        "kind": "quantum",
        "parameters": parameter_set_to_dict(parameters),
        "control": control_to_dict(obs.control),
        "seed": seed,
        "n_realizations": obs.n_realizations,
        "grid_m": grid_m,
        "random_phases": random_phases,
        "code_version": __version__,
    }, sidecar_path(path))


def read_series(path):
    """Read an ensemble series written by :func:`write_series`."""
    meta = _load(sidecar_path(path)) if sidecar_path(path).exists() else None
    if meta is None:
        raise ManifestError(f"missing sidecar {sidecar_path(path)}")
    cols = _read_columns(path, SERIES_COLUMNS[:5])
    return ObservableSeries(
        control=control_from_dict(meta["control"]),
        times=cols["t"].astype(np.int64),
        p2=cols["p2"],
        p2_err=cols["p2_err"],
        pi0=cols["pi0"],
        pi0_err=cols["pi0_err"],
        n_realizations=int(meta["n_realizations"]),
        p1=cols.get("p1"),
        p1_err=cols.get("p1_err"),
    )


def write_lambda_series(ls, path, meta=None):
    """Write a Λ series (synthetic runs) as CSV plus a JSON sidecar."""
    _write_rows(path, LAMBDA_COLUMNS, (ls.times, ls.values, ls.lambda_err))
    _dump({"version": CONFIG_VERSION, "kind": "lambda", "control_value": ls.control_value,
           "source": ls.source, "code_version": __version__, **(meta or {})}, sidecar_path(path))


def read_lambda_series(path):
    meta = _load(sidecar_path(path))
    cols = _read_columns(path, LAMBDA_COLUMNS)
    return LambdaSeries(float(meta["control_value"]), cols["t"].astype(np.int64), cols["lambda"],
                        cols["lambda_err"], meta.get("source", "p2"))


def write_classical_series(series, path, meta=None):
    _write_rows(path, CLASSICAL_COLUMNS, (series.times, series.p2, series.p2_err))
    _dump({"version": CONFIG_VERSION, "kind": "classical", "count": series.count,
           "code_version": __version__, **(meta or {})}, sidecar_path(path))


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def write_manifest(run_dir, manifest, files):
    """Write ``manifest.json`` with the sha256 digest of every listed file.

    Parameters
    ----------
    run_dir : path-like
    manifest : dict
        Run description; ``version``, ``code_version``, ``created`` and
        ``files`` are filled in.
    files : list of str
        File names relative to *run_dir*.
    """
    run_dir = Path(run_dir)
    d = {"version": CONFIG_VERSION, "code_version": __version__, "created": timestamp(), **manifest}
    d["files"] = {name: sha256(run_dir / name) for name in files}
    _dump(d, run_dir / MANIFEST_NAME)
    return d


def read_manifest(run_dir, validate=True):
    """Load a run manifest and, by default, check every digest.

    Raises
    ------
    ManifestError
        If the manifest or a listed file is missing, or a digest differs.
    """
    run_dir = Path(run_dir)
    path = run_dir / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no manifest in {run_dir}")
    d = _load(path)
    if validate:
        for name, digest in d.get("files", {}).items():
            target = run_dir / name
            if not target.exists():
                raise ManifestError(f"{name} is listed in the manifest but missing from {run_dir}")
            if sha256(target) != digest:
                raise ManifestError(f"{name} does not match its recorded digest")
    return d


# ---------------------------------------------------------------------------
# Analysis results and plot data
# ---------------------------------------------------------------------------

def scaling_result_to_dict(result):
    rows = []
    for q in result.controls:
        slope, slope_err = result.slopes[q]
        rows.append({"q": q, "xi": result.xi[q], "xi_err": result.xi_err[q], "branch": result.branches[q],
                     "slope": slope, "slope_err": slope_err, "ambiguous": q in result.ambiguous})
    return {
        "version": CONFIG_VERSION,
        "source": result.source,
        "gauge_ref": result.gauge_ref,
        "diffusive_gauge_ref": result.diffusive_gauge_ref,
        "residual_rms": result.residual_rms,
        "chi2_per_dof": result.chi2_per_dof,
        "n_sweeps": result.n_sweeps,
        "xi": rows,
        "excluded": result.excluded,
        "curves": {b.value: {"knots": c.knots, "coefficients": c.coefficients}
                   for b, c in result.curves.items()},
        "samples": {"z": result.z, "ln_lambda": result.ln_lambda, "branch": result.sample_branch},
    }


def critical_fit_to_dict(fit, crossing=None):
    d = {
        "version": CONFIG_VERSION,
        "q_c": fit.q_c,
        "q_c_err": fit.q_c_err,
        "nu": fit.nu,
        "nu_err": fit.nu_err,
        "alpha": fit.alpha,
        "beta_cutoff": fit.beta_cutoff,
        "delta": fit.delta,
        "chi2_per_dof": fit.chi2_per_dof,
        "window": fit.window,
        "n_points": fit.n_points,
        "q_c0": fit.q_c0,
        "weighting": fit.weighting,
        "covariance": fit.covariance,
    }
    if crossing is not None:
        d["crossing"] = {"q_c": crossing.q_c, "n_crossings": crossing.n_crossings, "fallback": crossing.fallback}
    if fit.bootstrap is not None:
        b = fit.bootstrap
        d["bootstrap"] = {
            "n_replicas": b.n_replicas,
            "n_dropped": b.n_dropped,
            "q_c_interval": b.q_c_interval,
            "nu_interval": b.nu_interval,
            "nu_err": b.nu_err,
            "q_c": b.q_c,
            "nu": b.nu,
        }
    return d


def write_json(d, path):
    _dump(d, path)


def read_json(path):
    return _load(path)


def fit_summary(d):
    """``(nu, sigma_nu, q_c)`` of a critical-fit document; σ is the bootstrap half width when present."""
    sigma = d["bootstrap"]["nu_err"] if "bootstrap" in d else d["nu_err"]
    return float(d["nu"]), float(sigma), float(d["q_c"])


def _write_table(path, columns, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def write_collapse_csv(result, path):
    """Collapsed samples ``(z, ln Λ, error, branch, q)``."""
    rows = [(repr(float(z)), repr(float(y)), repr(float(e)), b.value, repr(float(q)))
            for z, y, e, b, q in zip(result.z, result.ln_lambda, result.ln_lambda_err, result.sample_branch,
                                     result.sample_control)]
    _write_table(path, ("z", "ln_lambda", "ln_lambda_err", "branch", "q"), rows)


def write_xi_csv(result, fit, path):
    """ξ(q) with errors, branch, whether the point was fitted and the fitted model."""
    rows = []
    for q in result.controls:
        branch = result.branches[q]
        inside = fit.window[0] <= q <= fit.window[1]
        model = 1.0 / float(fit.inverse_xi(q, branch))
        rows.append((repr(q), repr(result.xi[q]), repr(result.xi_err[q]), branch.value, int(inside), repr(model)))
    _write_table(path, ("q", "xi", "xi_err", "branch", "fitted", "xi_model"), rows)


def write_table_csv(report, parameter_sets, critical_values, path):
    """Per-set summary ``(label, kbar, ω₂/2π, ω₃/2π, path, q_c, ν, σ_ν)``."""
    rows = []
    for label, nu, sigma in zip(report.labels, report.nu, report.sigma):
        ps = parameter_sets.get(label)
        q_c = critical_values.get(label)
        rows.append((
            label,
            "" if ps is None else repr(ps.kbar),
            "" if ps is None else f"{ps.omega2 / (2 * np.pi):.6f}",
            "" if ps is None else f"{ps.omega3 / (2 * np.pi):.6f}",
            "" if ps is None else str(ps.path),
            "" if q_c is None else repr(float(q_c)),
            repr(float(nu)),
            repr(float(sigma)),
        ))
    _write_table(path, ("label", "kbar", "omega2_over_2pi", "omega3_over_2pi", "path", "q_c", "nu", "sigma_nu"),
                 rows)


def write_exponent_csv(report, path):
    """Exponents with the reference line ``(label, ν, σ_ν, reference)``."""
    rows = [(label, repr(float(nu)), repr(float(sigma)), repr(report.reference))
            for label, nu, sigma in zip(report.labels, report.nu, report.sigma)]
    _write_table(path, ("label", "nu", "sigma_nu", "reference"), rows)
