from dataclasses import dataclass
from enum import Enum


class Branch(Enum):
    """Dynamical regime of a Λ(t) curve.

    ``LOCALIZED`` curves fall like :math:`t^{-2/3}` at long times,
    ``DIFFUSIVE`` curves rise like :math:`t^{1/3}`.  A curve whose slope is
    compatible with zero is ``CRITICAL_AMBIGUOUS``.

    Examples
    --------
    >>> from qpkr.core import Branch
    >>> Branch("localized")
    <Branch.LOCALIZED: 'localized'>
    """
    LOCALIZED = "localized"
    DIFFUSIVE = "diffusive"
    CRITICAL_AMBIGUOUS = "critical-ambiguous"


@dataclass(frozen=True)
class ControlPoint:
    """A point of the (K, ε) control plane.

    Parameters
    ----------
    K : float
        Mean kick strength, dimensionless.
    eps : float
        Modulation depth, dimensionless, in ``[0, 1]``.
    value : float
        The path coordinate of this point (K, ε or arc length, depending on
        the path the point was taken from).

    Examples
    --------
    >>> from qpkr.core import ControlPoint
    >>> ControlPoint(6.0, 0.45, 6.0)
    ControlPoint(K=6.0, eps=0.45, value=6.0)
    """
    K: float
    eps: float
    value: float

    def __str__(self):
        return f"(K={self.K:.6g}, eps={self.eps:.6g})"


class QpkrError(Exception):
    """Base class of every error raised by qpkr."""


class ConfigurationError(QpkrError, ValueError):
    """A run or analysis was configured with inconsistent or insufficient input."""


class ManifestError(ConfigurationError):
    """A run directory is incomplete or one of its files does not match its digest."""


class DegenerateDataError(QpkrError, ValueError):
    """Data for which the requested quantity is undefined, e.g. Π₀ = 0."""


class ConvergenceError(QpkrError, RuntimeError):
    """An iterative fit stopped without converging.

    Parameters
    ----------
    message : str
        What failed.
    last_iterate : object, optional
        The best or last iterate reached before giving up.
    """
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class GridOverflowError(QpkrError, RuntimeError):
    """The momentum lattice is too small for the wavefunction it holds.

    Parameters
    ----------
    control : ControlPoint or None
        The control point being simulated.
    kick : int
        The kick index at which the edge population exceeded the threshold.
    edge_population : float
        The measured probability in the outer lattice sites.
    """
    def __init__(self, control, kick, edge_population):
        where = f" at {control}" if control is not None else ""
        super().__init__(
            f"grid overflow{where} after kick {kick}: edge population {edge_population:.3e}; increase grid_m")
        self.control = control
        self.kick = kick
        self.edge_population = edge_population
