import csv
import json

import numpy as np
import pytest

from qpkr.baselines import CriticalLaw, ScalingFunction, synth_scaling_data
from qpkr.configuration import RunConfig
from qpkr.core import Branch, ConfigurationError, ControlPoint, ManifestError
from qpkr.crit import analyze_series, universality_report
from qpkr.engine import ObservableSeries
from qpkr.model import PRESETS, ControlPath, ParameterSet
from qpkr.serialization import (CONFIG_VERSION, _infer_format, critical_fit_to_dict, dumps, export_config,
                                export_parameter_set, fit_summary, import_config, import_parameter_set,
                                read_json, read_lambda_series, read_manifest, read_series, scaling_result_to_dict,
                                sidecar_path, to_plain, write_collapse_csv, write_exponent_csv, write_json,
                                write_lambda_series, write_manifest, write_series, write_table_csv, write_xi_csv)


@pytest.fixture
def observables():
    t = np.arange(1, 6)
    return ObservableSeries(ControlPoint(6.0, 0.45, 6.0), t, 0.1 * t ** 2 + 1 / 3, np.full(5, 0.01),
                            1.0 / (t + 1), np.full(5, 0.001), 16, p1=np.zeros(5), p1_err=np.full(5, 0.002))


@pytest.fixture(scope="module")
def analysis():
    law = CriticalLaw(0.05, 6.67, 1.58, 0.01)
    controls = np.round(np.arange(5.0, 8.35, 0.1), 10)
    series = synth_scaling_data(ScalingFunction.power_law(), law, controls, np.arange(30, 151))
    return analyze_series(series, n_replicas=0)


# ---------------------------------------------------------------------------
# Format inference
# ---------------------------------------------------------------------------

def test_infer_format_json():
    assert _infer_format("config.json") == "json"


def test_infer_format_yaml():
    assert _infer_format("config.yaml") == "yaml"
    assert _infer_format("config.yml") == "yaml"


def test_infer_format_unsupported():
    with pytest.raises(ConfigurationError, match="Unsupported"):
        _infer_format("config.txt")


def test_to_plain_converts_numpy_and_branches():
    plain = to_plain({"x": np.arange(3), 2: (np.int64(4), Branch.DIFFUSIVE)})
    assert plain == {"x": [0, 1, 2], "2": [4, "diffusive"]}
    assert type(plain["2"][0]) is int


def test_dumps_json():
    assert dumps({"a": np.float64(1.5)}) == '{\n  "a": 1.5\n}\n'


def test_dumps_yaml_keeps_key_order():
    pytest.importorskip("yaml")
    assert dumps({"b": [1, 2], "a": Branch.LOCALIZED}, "yaml") == "b:\n- 1\n- 2\na: localized\n"


def test_dumps_unknown_format():
    with pytest.raises(ConfigurationError, match="format must be"):
        dumps({}, "toml")


# ---------------------------------------------------------------------------
# Parameter sets
# ---------------------------------------------------------------------------

def test_parameter_set_roundtrip_keeps_radicals(tmp_path):
    path = tmp_path / "a.json"
    export_parameter_set(PRESETS["A"], path)

    raw = json.loads(path.read_text())
    assert raw["version"] == CONFIG_VERSION
    assert raw["omega2"] == {"sqrt": 5}
    assert raw["path"] == {"start": [4.0, 0.1], "end": [8.0, 0.8], "coordinate": "K"}

    ps = import_parameter_set(path)
    assert ps == PRESETS["A"]


def test_parameter_set_roundtrip_with_plain_frequencies(tmp_path):
    original = ParameterSet("X", 2.5, 1.2345, 6.789, ControlPath((3.0, 0.0), (6.0, 0.4), "arc"),
                            phi2=0.1, phi3=0.2, n_kicks=300)
    path = tmp_path / "x.json"
    export_parameter_set(original, path)
    assert import_parameter_set(path) == original


def test_parameter_set_yaml_roundtrip(tmp_path):
    pytest.importorskip("yaml")
    path = tmp_path / "d.yaml"
    export_parameter_set(PRESETS["D"], path)
    assert "sqrt: 5" in path.read_text()
    assert import_parameter_set(path) == PRESETS["D"]


@pytest.mark.parametrize("label", sorted(PRESETS))
@pytest.mark.parametrize("suffix", [".json", ".yaml"])
def test_every_preset_roundtrips(tmp_path, label, suffix):
    if suffix == ".yaml":
        pytest.importorskip("yaml")
    path = tmp_path / f"{label}{suffix}"
    export_parameter_set(PRESETS[label], path)
    assert import_parameter_set(path) == PRESETS[label]


def test_parameter_set_missing_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"version": 1, "label": "X", "kbar": 2.0}))
    with pytest.raises(ConfigurationError, match="missing key 'omega2'"):
        import_parameter_set(path)


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

def test_config_roundtrip(tmp_path):
    config = RunConfig(preset="B", points=12, window=(30, 150), seed=7)
    path = tmp_path / "run.json"
    export_config(config, path)
    loaded, parameters = import_config(path)
    assert loaded == config
    assert parameters is None


def test_config_with_embedded_parameters(tmp_path):
    path = tmp_path / "run.json"
    export_config(RunConfig(points=4), path, parameters=PRESETS["E"])
    loaded, parameters = import_config(path)
    assert loaded.points == 4
    assert parameters == PRESETS["E"]


def test_config_yaml_roundtrip(tmp_path):
    pytest.importorskip("yaml")
    config = RunConfig(preset="C", source="pi0", random_phases=False)
    path = tmp_path / "run.yaml"
    export_config(config, path)
    assert import_config(path)[0] == config


def test_config_unknown_key(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"version": 1, "points": 4, "kicks": 20}))
    with pytest.raises(ConfigurationError, match="kicks"):
        import_config(path)


def test_config_version_mismatch(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"version": 99}))
    with pytest.raises(ConfigurationError, match="version"):
        import_config(path)


def test_config_invalid_value(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"version": 1, "source": "p4"}))
    with pytest.raises(ConfigurationError, match="source"):
        import_config(path)


# ---------------------------------------------------------------------------
# Series files
# ---------------------------------------------------------------------------

def test_series_roundtrip_is_exact(tmp_path, observables):
    path = tmp_path / "point_000.csv"
    write_series(observables, path, PRESETS["A"], seed=3, grid_m=256)
    assert path.read_text().splitlines()[0] == "t,p2,p2_err,pi0,pi0_err,p1,p1_err"

    meta = json.loads(sidecar_path(path).read_text())
    assert meta["seed"] == 3
    assert meta["grid_m"] == 256
    assert meta["control"] == {"K": 6.0, "eps": 0.45, "value": 6.0}

    loaded = read_series(path)
    assert loaded.control == observables.control
    assert np.array_equal(loaded.times, observables.times)
    assert np.array_equal(loaded.p2, observables.p2)
    assert np.array_equal(loaded.pi0, observables.pi0)
    assert np.array_equal(loaded.p1_err, observables.p1_err)
    assert loaded.n_realizations == 16


def test_series_without_sidecar(tmp_path, observables):
    path = tmp_path / "point_000.csv"
    write_series(observables, path, PRESETS["A"], seed=0, grid_m=64)
    sidecar_path(path).unlink()
    with pytest.raises(ManifestError, match="sidecar"):
        read_series(path)


def test_lambda_series_roundtrip(tmp_path):
    law = CriticalLaw(0.05, 6.67, 1.58, 0.01)
    ls = synth_scaling_data(ScalingFunction.crossover(), law, [6.0], np.arange(30, 41), noise=0.01)[0]
    path = tmp_path / "lambda.csv"
    write_lambda_series(ls, path)
    loaded = read_lambda_series(path)
    assert loaded.control_value == 6.0
    assert np.array_equal(loaded.values, ls.values)
    assert np.array_equal(loaded.lambda_err, ls.lambda_err)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def test_manifest_records_digests(tmp_path, observables, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    write_series(observables, tmp_path / "point_000.csv", PRESETS["A"], seed=0, grid_m=64)
    manifest = write_manifest(tmp_path, {"kind": "quantum"}, ["point_000.csv", "point_000.json"])
    assert manifest["created"] == "1970-01-01T00:00:00+00:00"
    assert set(manifest["files"]) == {"point_000.csv", "point_000.json"}
    assert read_manifest(tmp_path)["kind"] == "quantum"


def test_manifest_detects_tampering(tmp_path, observables):
    write_series(observables, tmp_path / "point_000.csv", PRESETS["A"], seed=0, grid_m=64)
    write_manifest(tmp_path, {"kind": "quantum"}, ["point_000.csv", "point_000.json"])
    with open(tmp_path / "point_000.csv", "a") as f:
        f.write("6,1.0,0.0,0.5,0.0,0.0,0.0\n")
    with pytest.raises(ManifestError, match="digest"):
        read_manifest(tmp_path)
    assert read_manifest(tmp_path, validate=False)["kind"] == "quantum"


def test_manifest_detects_missing_files(tmp_path, observables):
    write_series(observables, tmp_path / "point_000.csv", PRESETS["A"], seed=0, grid_m=64)
    write_manifest(tmp_path, {"kind": "quantum"}, ["point_000.csv"])
    (tmp_path / "point_000.csv").unlink()
    with pytest.raises(ManifestError, match="missing"):
        read_manifest(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="no manifest"):
        read_manifest(tmp_path)


# ---------------------------------------------------------------------------
# Analysis outputs
# ---------------------------------------------------------------------------

def test_scaling_and_fit_documents(tmp_path, analysis):
    write_json(scaling_result_to_dict(analysis.scaling), tmp_path / "scaling.json")
    write_json(critical_fit_to_dict(analysis.fit, analysis.crossing), tmp_path / "critical_fit.json")

    scaling = read_json(tmp_path / "scaling.json")
    assert len(scaling["xi"]) == 34
    assert {row["branch"] for row in scaling["xi"]} == {"localized", "diffusive"}
    assert set(scaling["curves"]) == {"localized", "diffusive"}
    assert scaling["excluded"] == []

    fit = read_json(tmp_path / "critical_fit.json")
    assert fit["weighting"] == "inverse-xi"
    assert fit["crossing"]["fallback"] is False
    nu, sigma, q_c = fit_summary(fit)
    assert nu == pytest.approx(1.58, abs=1e-3)
    assert q_c == pytest.approx(6.67, abs=1e-3)
    assert sigma == fit["nu_err"]


def test_plot_data_tables(tmp_path, analysis):
    write_collapse_csv(analysis.scaling, tmp_path / "collapse.csv")
    write_xi_csv(analysis.scaling, analysis.fit, tmp_path / "xi.csv")

    collapse_rows = (tmp_path / "collapse.csv").read_text().splitlines()
    assert collapse_rows[0] == "z,ln_lambda,ln_lambda_err,branch,q"
    assert len(collapse_rows) == 1 + 34 * 121

    xi_rows = (tmp_path / "xi.csv").read_text().splitlines()
    assert xi_rows[0] == "q,xi,xi_err,branch,fitted,xi_model"
    assert len(xi_rows) == 35


def test_universality_tables(tmp_path):
    report = universality_report([("A", 1.63, 0.06), ("B", 1.57, 0.08)])
    write_table_csv(report, PRESETS, {"A": 6.67}, tmp_path / "table.csv")
    write_exponent_csv(report, tmp_path / "exponents.csv")

    with open(tmp_path / "table.csv", newline="") as f:
        table = list(csv.reader(f))
    assert table[0] == ["label", "kbar", "omega2_over_2pi", "omega3_over_2pi", "path", "q_c", "nu", "sigma_nu"]
    assert table[1][:5] == ["A", "2.89", "2.236068", "3.605551", "4,0.1 -> 8,0.8"]
    assert table[2][5] == ""

    exponents = (tmp_path / "exponents.csv").read_text().splitlines()
    assert exponents[1] == "A,1.63,0.06,1.58"
