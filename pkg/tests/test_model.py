import math

import mpmath
import numpy as np
import pytest

from qpkr.core import ConfigurationError, ControlPoint
from qpkr.model import (PRESETS, REFERENCE_NU, ControlPath, ParameterSet, get_preset, kick_amplitude,
                        kick_schedule, path_point, radical_frequency, sweep, commensurability_warnings)


# ---------------------------------------------------------------------------
# Kick schedule
# ---------------------------------------------------------------------------

def test_kick_amplitude_is_exactly_K_without_modulation():
    ps = PRESETS["A"]
    assert kick_amplitude(ps, 6.0, 0.0, 0) == 6.0
    assert np.all(kick_amplitude(ps, 6.0, 0.0, np.arange(100)) == 6.0)


def test_kick_amplitude_stays_within_modulation_envelope():
    ps = PRESETS["A"]
    n = np.arange(100000)
    kicks = kick_amplitude(ps, 6.0, 0.45, n)
    assert kicks.min() >= 6.0 * (1 - 0.45)
    assert kicks.max() <= 6.0 * (1 + 0.45)


def test_kick_amplitude_first_kick():
    assert kick_amplitude(PRESETS["A"], 4.0, 0.8, 0) == pytest.approx(7.2)


def test_kick_amplitude_matches_high_precision_oracle():
    ps = PRESETS["B"].replace(phi2=0.3, phi3=1.1)
    K, eps = 6.5, 0.6
    for n in (0, 1, 17, 999, 54321):
        with mpmath.workdps(40):
            w2 = 2 * mpmath.pi * mpmath.sqrt(7)
            w3 = 2 * mpmath.pi * mpmath.sqrt(17)
            exact = K * (1 + eps * mpmath.cos(w2 * n + mpmath.mpf(0.3)) * mpmath.cos(w3 * n + mpmath.mpf(1.1)))
        assert kick_amplitude(ps, K, eps, n) == pytest.approx(float(exact), rel=1e-9)


def test_kick_schedule_broadcasts_phases_against_kicks():
    phases = (np.array([[0.0], [1.0]]), np.array([[0.5], [2.0]]))
    out = kick_schedule(5.0, 0.3, (1.0, 2.0), phases, np.arange(7)[None, :])
    assert out.shape == (2, 7)
    assert out[1, 3] == pytest.approx(5.0 * (1 + 0.3 * math.cos(3.0 + 1.0) * math.cos(6.0 + 2.0)))


def test_kick_schedule_rejects_negative_kick_index():
    with pytest.raises(ValueError):
        kick_schedule(5.0, 0.3, (1.0, 2.0), (0.0, 0.0), -1)


# ---------------------------------------------------------------------------
# Paths and sweeps
# ---------------------------------------------------------------------------

def test_control_path_point():
    path = ControlPath((4.0, 0.1), (8.0, 0.8))
    assert path.point(0.5) == pytest.approx((6.0, 0.45))
    assert path_point(path, 0.0) == (4.0, 0.1)
    assert path_point(path, 1.0) == (8.0, 0.8)


def test_path_point_outside_path_raises():
    path = ControlPath((4.0, 0.1), (8.0, 0.8))
    with pytest.raises(ValueError, match="path fraction"):
        path_point(path, 1.5)


@pytest.mark.parametrize("start, end, coordinate", [
    ((4.0, 0.1), (4.0, 0.1), "K"),
    ((0.0, 0.1), (4.0, 0.1), "K"),
    ((4.0, 0.1), (8.0, 1.2), "K"),
    ((7.5, 0.0), (7.5, 0.73), "K"),
    ((3.0, 0.4), (9.0, 0.4), "epsilon"),
    ((3.0, 0.4), (9.0, 0.5), "time"),
])
def test_invalid_control_paths(start, end, coordinate):
    with pytest.raises(ValueError):
        ControlPath(start, end, coordinate)


def test_arc_coordinate():
    path = ControlPath((3.0, 0.0), (6.0, 0.4), "arc")
    assert path.length == pytest.approx(math.hypot(3.0, 0.4))
    assert path.coordinate_value(0.5) == pytest.approx(0.5 * path.length)
    assert path.fraction_at(path.coordinate_value(0.25)) == pytest.approx(0.25)


def test_sweep_includes_endpoints():
    ps = PRESETS["A"]
    points = sweep(ps.path, 5)
    assert len(points) == 5
    assert points[0] == ControlPoint(4.0, 0.1, 4.0)
    assert points[-1] == ControlPoint(8.0, 0.8, 8.0)
    assert points[2].K == pytest.approx(6.0)


def test_sweep_along_epsilon_uses_epsilon_as_control_value():
    points = sweep(PRESETS["D"].path, 3)
    assert [p.K for p in points] == [7.5, 7.5, 7.5]
    assert points[1].value == pytest.approx(0.365)


def test_sweep_needs_two_points():
    with pytest.raises(ConfigurationError):
        sweep(PRESETS["A"].path, 1)


# ---------------------------------------------------------------------------
# Parameter sets and presets
# ---------------------------------------------------------------------------

def test_from_radicals():
    ps = ParameterSet.from_radicals("X", 2.89, 5, 13, ControlPath((4, 0.1), (8, 0.8)))
    assert ps.omega2 == radical_frequency(5)
    assert ps.omega2 / (2 * math.pi) == pytest.approx(math.sqrt(5))
    assert ps.omega3_radicand == 13


def test_parameter_set_validation():
    path = ControlPath((4, 0.1), (8, 0.8))
    with pytest.raises(ValueError, match="kbar"):
        ParameterSet("X", 0.0, 1.0, 2.0, path)
    with pytest.raises(ValueError, match="n_kicks"):
        ParameterSet("X", 2.89, 1.0, 2.0, path, n_kicks=0)
    with pytest.raises(ValueError, match="sqrt"):
        ParameterSet("X", 2.89, 1.0, 2.0, path, omega2_radicand=5)


def test_replace_drops_radicand_with_frequency():
    ps = PRESETS["A"].replace(omega2=3.0)
    assert ps.omega2_radicand is None
    assert ps.omega3_radicand == 13
    assert PRESETS["A"].replace(n_kicks=20).omega2_radicand == 5


def test_presets_table():
    assert sorted(PRESETS) == list("ABCDEFGHI")
    assert PRESETS["A"].kbar == 2.89
    assert PRESETS["D"].path.coordinate == "epsilon"
    assert PRESETS["D"].reference.critical_value == pytest.approx(0.448)
    assert PRESETS["H"].replace(label="H/I", reference=None) == PRESETS["I"].replace(label="H/I", reference=None)
    assert all(abs(ps.reference.nu - REFERENCE_NU) < 0.15 for ps in PRESETS.values())


def test_get_preset_is_case_insensitive():
    assert get_preset("c") is PRESETS["C"]


def test_get_preset_unknown():
    with pytest.raises(ConfigurationError, match="unknown preset"):
        get_preset("Z")


# ---------------------------------------------------------------------------
# Commensurability
# ---------------------------------------------------------------------------

def test_commensurate_kbar_is_reported():
    ps = ParameterSet("X", math.pi / 2, radical_frequency(5), radical_frequency(13),
                      ControlPath((4, 0.1), (8, 0.8)))
    found = commensurability_warnings(ps)
    pairs = {(w.numerator, w.denominator): (w.p, w.q) for w in found}
    assert pairs[("kbar", "pi")] == (1, 2)
    assert any(str(w).startswith("kbar/pi") and str(w).endswith("1/2") for w in found)


def test_commensurate_frequencies_are_reported():
    ps = ParameterSet("X", 2.89, 2.0, 3.0, ControlPath((4, 0.1), (8, 0.8)))
    found = commensurability_warnings(ps)
    assert any((w.numerator, w.denominator, w.p, w.q) == ("omega2", "omega3", 2, 3) for w in found)


@pytest.mark.parametrize("label", sorted(PRESETS))
def test_presets_are_incommensurate(label):
    assert commensurability_warnings(PRESETS[label]) == []


@pytest.mark.parametrize("label", sorted(PRESETS))
def test_path_point_is_linear_along_every_preset(label):
    path = PRESETS[label].path
    (K0, e0), (K1, e1) = path.start, path.end
    for s in np.linspace(0.0, 1.0, 9):
        K, eps = path_point(path, s)
        assert K == pytest.approx(K0 + s * (K1 - K0), abs=1e-12)
        assert eps == pytest.approx(e0 + s * (e1 - e0), abs=1e-12)
