"""Physical parameter sets, the quasi-periodic kick schedule and control paths.

Units follow the experiment: time in kick periods, space in units of
:math:`(2k_L)^{-1}` and momentum :math:`\\tilde p = p/\\bar k` in units of two
recoil momenta.  The laboratory constants are absorbed into the effective
Planck constant :math:`\\bar k`.
"""

import dataclasses
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from qpkr.core import ConfigurationError, ControlPoint

TWO_PI = 2.0 * math.pi

COORDINATES = ("K", "epsilon", "arc")


@dataclass(frozen=True)
class ReferenceResult:
    """Published critical point and exponent of a parameter set.

    Parameters
    ----------
    critical_value : float
        :math:`K_c`, or :math:`\\varepsilon_c` for paths fitted in ε.
    nu : float
        Critical exponent.
    nu_err : float
        One-standard-deviation uncertainty of *nu*.
    """
    critical_value: float
    nu: float
    nu_err: float


@dataclass(frozen=True)
class ControlPath:
    """A straight path through the (K, ε) control plane.

    Parameters
    ----------
    start : tuple of float
        ``(K, eps)`` at fraction ``s = 0``.
    end : tuple of float
        ``(K, eps)`` at fraction ``s = 1``.
    coordinate : {'K', 'epsilon', 'arc'}, optional
        The scalar used as the control value when fitting. ``'arc'`` is the
        Euclidean arc length from *start* in the (K, ε) plane.

    Raises
    ------
    ValueError
        If the endpoints coincide, leave ``K > 0`` or ``0 <= eps <= 1``, or if
        the chosen coordinate is constant along the path.

    Examples
    --------
    >>> from qpkr.model import ControlPath
    >>> path = ControlPath((4.0, 0.1), (8.0, 0.8))
    >>> path.point(0.5)
    (6.0, 0.45)
    """
    start: tuple
    end: tuple
    coordinate: str = "K"

    def __post_init__(self):
        start = (float(self.start[0]), float(self.start[1]))
        end = (float(self.end[0]), float(self.end[1]))
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)
        if self.coordinate not in COORDINATES:
            raise ValueError(f"coordinate must be one of {COORDINATES}, got {self.coordinate!r}")
        if start == end:
            raise ValueError("path start and end must differ")
        for K, eps in (start, end):
            if not K > 0:
                raise ValueError(f"K must be > 0 along the path, got {K}")
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"eps must lie in [0, 1] along the path, got {eps}")
        if self.coordinate == "K" and start[0] == end[0]:
            raise ValueError("K is constant along this path; use coordinate 'epsilon' or 'arc'")
        if self.coordinate == "epsilon" and start[1] == end[1]:
            raise ValueError("eps is constant along this path; use coordinate 'K' or 'arc'")

    @property
    def length(self):
        """Euclidean length of the path in the (K, ε) plane."""
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])

    def point(self, s):
        """Return ``(K, eps)`` at path fraction *s* (no range check)."""
        K0, e0 = self.start
        K1, e1 = self.end
        return (K0 + s * (K1 - K0), e0 + s * (e1 - e0))

    def coordinate_value(self, s):
        """Return the fitted coordinate at path fraction *s*."""
        if self.coordinate == "K":
            return self.point(s)[0]
        if self.coordinate == "epsilon":
            return self.point(s)[1]
        return s * self.length

    def fraction_at(self, value):
        """Inverse of :meth:`coordinate_value`."""
        if self.coordinate == "K":
            return (value - self.start[0]) / (self.end[0] - self.start[0])
        if self.coordinate == "epsilon":
            return (value - self.start[1]) / (self.end[1] - self.start[1])
        return value / self.length

    def control_point(self, s):
        """Return the :class:`~qpkr.core.ControlPoint` at path fraction *s*."""
        K, eps = path_point(self, s)
        return ControlPoint(K, eps, self.coordinate_value(s))

    def __str__(self):
        return f"{self.start[0]:g},{self.start[1]:g} -> {self.end[0]:g},{self.end[1]:g}"


@dataclass(frozen=True)
class ParameterSet:
    """One microscopic realisation of the quasi-periodic kicked rotor.

    Parameters
    ----------
    label : str
        Short identifier, e.g. ``"A"``.
    kbar : float
        Effective Planck constant, ``[x, p] = i kbar``.
    omega2, omega3 : float
        Modulation angular frequencies in radians per kick period.
    path : ControlPath
        Path swept through the (K, ε) plane.
    phi2, phi3 : float, optional
        Modulation phases in radians. Default ``0``.
    n_kicks : int, optional
        Number of kicks simulated. Default ``1000``.
    omega2_radicand, omega3_radicand : int or None, optional
        When set, the frequency is exactly ``2π√radicand`` and is serialized
        symbolically.
    reference : ReferenceResult or None, optional
        Published critical point and exponent, for the built-in presets.

    Raises
    ------
    ValueError
        If ``kbar <= 0``, ``n_kicks < 1`` or a radicand disagrees with its
        frequency.

    Examples
    --------
    >>> from qpkr.model import ParameterSet, ControlPath
    >>> ps = ParameterSet.from_radicals("X", 2.89, 5, 13, ControlPath((4, 0.1), (8, 0.8)))
    >>> import math
    >>> round(ps.omega2 / (2 * math.pi), 6)
    2.236068
    """
    label: str
    kbar: float
    omega2: float
    omega3: float
    path: ControlPath
    phi2: float = 0.0
    phi3: float = 0.0
    n_kicks: int = 1000
    omega2_radicand: int = None
    omega3_radicand: int = None
    reference: ReferenceResult = None

    def __post_init__(self):
        if not self.kbar > 0:
            raise ValueError(f"kbar must be > 0, got {self.kbar}")
        if int(self.n_kicks) != self.n_kicks or self.n_kicks < 1:
            raise ValueError(f"n_kicks must be an integer >= 1, got {self.n_kicks}")
        for omega, radicand in ((self.omega2, self.omega2_radicand), (self.omega3, self.omega3_radicand)):
            if radicand is not None and omega != radical_frequency(radicand):
                raise ValueError(f"frequency {omega} is not 2*pi*sqrt({radicand})")

    @classmethod
    def from_radicals(cls, label, kbar, radicand2, radicand3, path, **kwargs):
        """Build a parameter set with ``omega = 2π√radicand`` frequencies."""
        return cls(label, kbar, radical_frequency(radicand2), radical_frequency(radicand3), path,
                   omega2_radicand=radicand2, omega3_radicand=radicand3, **kwargs)

    def replace(self, **changes):
        """Return a copy with some fields changed (radicands are dropped with their frequency)."""
        if "omega2" in changes and "omega2_radicand" not in changes:
            changes["omega2_radicand"] = None
        if "omega3" in changes and "omega3_radicand" not in changes:
            changes["omega3_radicand"] = None
        return dataclasses.replace(self, **changes)

    def __str__(self):
        return f"ParameterSet '{self.label}': kbar={self.kbar}, path {self.path}"


def radical_frequency(radicand):
    """Return ``2π√radicand`` evaluated once in double precision."""
    if radicand <= 0:
        raise ValueError("radicand must be positive")
    return TWO_PI * math.sqrt(radicand)


def kick_schedule(K, eps, omegas, phases, n):
    """Kick strengths :math:`K_n` for explicit frequencies and phases.

    Parameters
    ----------
    K, eps : float
        Mean kick strength and modulation depth.
    omegas : tuple of float
        ``(omega2, omega3)``.
    phases : tuple of float or array_like
        ``(phi2, phi3)``; each may be an array broadcasting against *n*.
    n : int or array_like of int
        Non-negative kick indices.

    Returns
    -------
    float or numpy.ndarray
        :math:`K[1 + \\varepsilon\\cos(\\omega_2 n + \\phi_2)\\cos(\\omega_3 n + \\phi_3)]`.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ValueError("kick index must be >= 0")
    phi2, phi3 = phases
    if eps == 0:
        if n_arr.ndim == 0 and np.ndim(phi2) == 0 and np.ndim(phi3) == 0:
            return K
        shape = np.broadcast_shapes(n_arr.shape, np.shape(phi2), np.shape(phi3))
        return np.full(shape, K, dtype=float)
    modulation = np.cos(omegas[0] * n_arr + phi2) * np.cos(omegas[1] * n_arr + phi3)
    result = K * (1.0 + eps * modulation)
    if np.ndim(result) == 0:
        return float(result)
    return result


def kick_amplitude(ps, K, eps, n, phases=None):
    """Kick strength of kick *n* for parameter set *ps*.

    Parameters
    ----------
    ps : ParameterSet
        Supplies the modulation frequencies and default phases.
    K, eps : float
        The control point.
    n : int or array_like of int
        Kick index, ``n >= 0``.
    phases : tuple of float or None, optional
        Overrides ``(ps.phi2, ps.phi3)``; used for phase-averaged ensembles.

    Returns
    -------
    float or numpy.ndarray
        Always within ``[K(1 - eps), K(1 + eps)]``; exactly ``K`` when
        ``eps == 0``.

    Examples
    --------
    >>> from qpkr.model import PRESETS, kick_amplitude
    >>> kick_amplitude(PRESETS["A"], 4.0, 0.8, 0)
    7.2
    """
    if phases is None:
        phases = (ps.phi2, ps.phi3)
    return kick_schedule(K, eps, (ps.omega2, ps.omega3), phases, n)


def path_point(path, s):
    """Return ``(K, eps)`` at fraction *s* of *path*.

    Raises
    ------
    ValueError
        If *s* is outside ``[0, 1]``.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"path fraction must lie in [0, 1], got {s}")
    return path.point(s)


def sweep(path, points):
    """Return *points* equally spaced control points along *path*, endpoints included."""
    if points < 2:
        raise ConfigurationError("a sweep needs at least 2 points")
    return [path.control_point(float(s)) for s in np.linspace(0.0, 1.0, int(points))]


@dataclass(frozen=True)
class CommensurabilityWarning:
    """A low-order rational relation between two quantities of a parameter set."""
    numerator: str
    denominator: str
    p: int
    q: int
    error: float

    def __str__(self):
        return (f"{self.numerator}/{self.denominator} is within {self.error:.1e} "
                f"of {self.p}/{self.q}")


def commensurability_warnings(ps, tolerance=1e-6, max_denominator=100):
    """Look for near-rational relations between kbar, ω₂, ω₃ and π.

    The quasi-periodic rotor only maps onto a 3D Anderson model when these
    quantities are incommensurate. Every pairwise ratio, and the ratios of
    ``ω₂ ± ω₃`` to π and kbar, are expanded in continued fractions; a warning is
    produced when a convergent ``p/q`` with ``q <= max_denominator`` is closer
    than *tolerance*. Floating-point numbers are always rational, so this is
    advisory only.

    Parameters
    ----------
    ps : ParameterSet
    tolerance : float, optional
        Default ``1e-6``.
    max_denominator : int, optional
        Default ``100``.

    Returns
    -------
    list of CommensurabilityWarning
    """
    quantities = {"kbar": ps.kbar, "omega2": ps.omega2, "omega3": ps.omega3, "pi": math.pi}
    ratios = [(a, b, quantities[a] / quantities[b]) for a, b in itertools.combinations(quantities, 2)]
    for denominator in ("pi", "kbar"):
        ratios.append(("omega2+omega3", denominator, (ps.omega2 + ps.omega3) / quantities[denominator]))
        ratios.append(("omega2-omega3", denominator, (ps.omega2 - ps.omega3) / quantities[denominator]))

    found = []
    for numerator, denominator, ratio in ratios:
        best = Fraction(abs(ratio)).limit_denominator(max_denominator)
        error = abs(abs(ratio) - float(best))
        if error < tolerance:
            sign = -1 if ratio < 0 else 1
            found.append(CommensurabilityWarning(numerator, denominator, sign * best.numerator,
                                                 best.denominator, error))
    return found


def _preset(label, kbar, radicands, start, end, reference, coordinate="K"):
    return ParameterSet.from_radicals(label, kbar, radicands[0], radicands[1],
                                      ControlPath(start, end, coordinate), reference=reference)


# Sets H and I differ only by the pulse duration, which delta kicks cannot represent.
PRESETS = {
    "A": _preset("A", 2.89, (5, 13), (4, 0.1), (8, 0.8), ReferenceResult(6.67, 1.63, 0.06)),
    "B": _preset("B", 2.89, (7, 17), (4, 0.1), (8, 0.8), ReferenceResult(6.68, 1.57, 0.08)),
    "C": _preset("C", 2.89, (5, 13), (3, 0.435), (10, 0.435), ReferenceResult(5.91, 1.55, 0.25)),
    "D": _preset("D", 2.89, (5, 13), (7.5, 0.0), (7.5, 0.73), ReferenceResult(0.448, 1.67, 0.18),
                 coordinate="epsilon"),
    "E": _preset("E", 2.00, (5, 13), (3, 0.1), (5.7, 0.73), ReferenceResult(4.69, 1.64, 0.08)),
    "F": _preset("F", 2.31, (5, 13), (4, 0.1), (9, 0.8), ReferenceResult(6.07, 1.68, 0.06)),
    "G": _preset("G", 2.47, (5, 13), (4, 0.1), (9, 0.8), ReferenceResult(5.61, 1.55, 0.10)),
    "H": _preset("H", 3.46, (5, 13), (4, 0.1), (9, 0.8), ReferenceResult(6.86, 1.66, 0.12)),
    "I": _preset("I", 3.46, (5, 13), (4, 0.1), (9, 0.8), ReferenceResult(7.06, 1.70, 0.12)),
}

# Exponent obtained by large-scale numerics on the Anderson model and the kicked rotor.
REFERENCE_NU = 1.58
REFERENCE_NU_ERR = 0.02


def get_preset(label):
    """Return the built-in parameter set *label* (case-insensitive).

    Raises
    ------
    ConfigurationError
        If no preset has that label.
    """
    try:
        return PRESETS[label.upper()]
    except (KeyError, AttributeError):
        raise ConfigurationError(f"unknown preset {label!r}; choose one of {', '.join(PRESETS)}") from None
