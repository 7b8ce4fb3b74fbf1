"""Independent oracles: the classical standard map and synthetic scaling data."""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from qpkr.core import Branch, ConfigurationError
from qpkr.model import TWO_PI, kick_schedule
from qpkr.scaling import LambdaSeries
from qpkr.utils import chunk_bounds, ordered_map, stream_rng

logger = logging.getLogger(__name__)

MIN_TRAJECTORIES = 1000
INITIAL_MOMENTA = ("quasimomentum", "cell")


@dataclass(frozen=True, eq=False)
class ClassicalEnsemble:
    """Classical trajectories of the kicked rotor.

    Parameters
    ----------
    x : numpy.ndarray
        Positions, wrapped into ``[0, 2π)``.
    p : numpy.ndarray
        Momenta in units of two recoil momenta.
    p0 : numpy.ndarray
        Initial momenta, for displacements.
    """
    x: np.ndarray
    p: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        if len(self.x) < 1 or len(self.x) != len(self.p) or len(self.p) != len(self.p0):
            raise ValueError("an ensemble needs at least one trajectory and matching arrays")

    @property
    def count(self):
        return len(self.x)

    @classmethod
    def sample(cls, count, kbar, rng, initial_momentum="quasimomentum"):
        """Uniform positions; momenta uniform in ``[-1/2, 1/2)`` or over one period ``2π/kbar``."""
        if initial_momentum not in INITIAL_MOMENTA:
            raise ConfigurationError(f"initial_momentum must be one of {INITIAL_MOMENTA}")
        x = rng.uniform(0.0, TWO_PI, count)
        if initial_momentum == "quasimomentum":
            p = rng.uniform(-0.5, 0.5, count)
        else:
            p = rng.uniform(0.0, TWO_PI / kbar, count)
        return cls(x, p, p.copy())

    def kicked(self, K_n, kbar):
        """Apply one period: kick, then drift with the updated momentum."""
        p = self.p + (np.asarray(K_n) / kbar) * np.sin(self.x)
        x = np.mod(self.x + kbar * p, TWO_PI)
        return ClassicalEnsemble(x, p, self.p0)

    def displacement2(self):
        return (self.p - self.p0) ** 2


def standard_map(x, p, K_n, kbar):
    """One unwrapped period of the map: ``p' = p + (K_n/kbar) sin x``, ``x' = x + kbar p'``."""
    p_new = p + (K_n / kbar) * np.sin(x)
    return x + kbar * p_new, p_new


def map_jacobian_det(x, p, K_n, kbar, h=1e-5):
    """Central finite-difference Jacobian determinant of :func:`standard_map` at ``(x, p)``.

    Examples
    --------
    >>> from qpkr.baselines import map_jacobian_det
    >>> abs(map_jacobian_det(0.3, 0.1, 5.0, 2.89) - 1.0) < 1e-8
    True
    """
    xp, pp = standard_map(x + h, p, K_n, kbar)
    xm, pm = standard_map(x - h, p, K_n, kbar)
    dx_dx, dp_dx = (xp - xm) / (2 * h), (pp - pm) / (2 * h)
    xp, pp = standard_map(x, p + h, K_n, kbar)
    xm, pm = standard_map(x, p - h, K_n, kbar)
    dx_dp, dp_dp = (xp - xm) / (2 * h), (pp - pm) / (2 * h)
    return dx_dx * dp_dp - dx_dp * dp_dx


@dataclass(frozen=True, eq=False)
class ClassicalSeries:
    """Ensemble mean of the squared momentum displacement after each kick."""
    times: np.ndarray
    p2: np.ndarray
    p2_err: np.ndarray
    count: int


class _TrajectoryChunk:
    def __init__(self, K, kbar, eps, omegas, phases, t_max, seed, random_phases, initial_momentum):
        self.K = K
        self.kbar = kbar
        self.eps = eps
        self.omegas = omegas
        self.phases = phases
        self.t_max = t_max
        self.seed = seed
        self.random_phases = random_phases
        self.initial_momentum = initial_momentum

    def __call__(self, task):
        index, size = task
        rng = stream_rng(self.seed, index)
        ensemble = ClassicalEnsemble.sample(size, self.kbar, rng, self.initial_momentum)
        if self.random_phases:
            phi = rng.uniform(0.0, TWO_PI, (size, 2))
            phases = (phi[:, :1], phi[:, 1:])
        else:
            phases = self.phases
        kicks = np.broadcast_to(kick_schedule(self.K, self.eps, self.omegas, phases,
                                              np.arange(self.t_max)[None, :]), (size, self.t_max))
        sums = np.empty((2, self.t_max))
        for n in range(self.t_max):
            ensemble = ensemble.kicked(kicks[:, n], self.kbar)
            d2 = ensemble.displacement2()
            sums[0, n] = d2.sum()
            sums[1, n] = (d2 * d2).sum()
        return sums


def classical_diffusion(K, kbar, eps=0.0, omegas=(0.0, 0.0), phases=(0.0, 0.0), t_max=5, count=10000, seed=0,
                        random_phases=False, initial_momentum="quasimomentum", workers=1, chunk_size=4096):
    """Monte Carlo estimate of the classical momentum spread of the kicked rotor.

    Trajectories start at uniform positions with momenta drawn per
    *initial_momentum* and follow the same kick schedule as the quantum
    engine. Chunks of *chunk_size* trajectories draw from the stream keyed by
    ``(seed, chunk index)`` and are reduced in index order.

    Parameters
    ----------
    K, kbar, eps : float
        Mean kick strength, effective Planck constant and modulation depth.
    omegas, phases : tuple of float, optional
        Modulation frequencies and phases.
    t_max : int, optional
        Kicks simulated. Default ``5``.
    count : int, optional
        Trajectories. Default ``10000``; below 1000 a warning is emitted.
    seed : int, optional
    random_phases : bool, optional
        Draw the phases per trajectory. Default ``False``.
    initial_momentum : {'quasimomentum', 'cell'}, optional
        ``'quasimomentum'`` matches the quantum ensemble; ``'cell'`` spreads
        the momenta over a full period of the drift.
    workers : int or None, optional
    chunk_size : int, optional

    Returns
    -------
    ClassicalSeries
        ``p2[t-1]`` is the mean of :math:`(\\tilde p_t - \\tilde p_0)^2`.

    Examples
    --------
    >>> from qpkr.baselines import classical_diffusion
    >>> classical_diffusion(0.0, 2.89, t_max=3, count=1000).p2.tolist()
    [0.0, 0.0, 0.0]
    """
    if count < 1 or t_max < 1:
        raise ConfigurationError("count and t_max must be >= 1")
    if count < MIN_TRAJECTORIES:
        message = f"{count} classical trajectories give noisy averages"
        warnings.warn(message, UserWarning, stacklevel=2)
        logger.warning(message)
    tasks = [(i, stop - start) for i, (start, stop) in enumerate(chunk_bounds(count, chunk_size))]
    worker = _TrajectoryChunk(K, kbar, eps, omegas, phases, t_max, seed, random_phases, initial_momentum)
    sums = np.sum(ordered_map(worker, tasks, workers), axis=0)
    mean = sums[0] / count
    var = np.maximum(sums[1] / count - mean ** 2, 0.0)
    err = np.sqrt(var * count / max(count - 1, 1) / count)
    return ClassicalSeries(np.arange(1, t_max + 1), mean, err, count)


class ScalingFunction:
    """Two-branch scaling function :math:`\\ln\\Lambda = F_{branch}(z)`.

    Parameters
    ----------
    kind : {'crossover', 'power_law'}
        ``'crossover'`` approaches the critical value ``ln_lambda_c`` on both
        branches as z grows; ``'power_law'`` is the pair of asymptotes
        ``2 z`` (localized) and ``-z`` (diffusive), both offset by
        ``ln_lambda_c``.
    ln_lambda_c : float, optional
        Critical value of ln Λ. Default ``0``.

    Examples
    --------
    >>> from qpkr.baselines import ScalingFunction
    >>> from qpkr.core import Branch
    >>> ScalingFunction.power_law()(1.5, Branch.LOCALIZED)
    3.0
    """
    KINDS = ("crossover", "power_law")

    def __init__(self, kind="crossover", ln_lambda_c=0.0):
        if kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}, got {kind!r}")
        self.kind = kind
        self.ln_lambda_c = float(ln_lambda_c)

    @classmethod
    def crossover(cls, ln_lambda_c=0.0):
        return cls("crossover", ln_lambda_c)

    @classmethod
    def power_law(cls, ln_lambda_c=0.0):
        return cls("power_law", ln_lambda_c)

    def __call__(self, z, branch):
        z = np.asarray(z, dtype=float)
        branch = Branch(branch)
        if branch is Branch.CRITICAL_AMBIGUOUS:
            raise ValueError("a scaling function is defined on the localized and diffusive branches only")
        if self.kind == "power_law":
            out = 2.0 * z if branch is Branch.LOCALIZED else -z
        elif branch is Branch.LOCALIZED:
            out = -np.logaddexp(0.0, -2.0 * z)
        else:
            out = np.logaddexp(0.0, -z)
        out = out + self.ln_lambda_c
        return float(out) if out.ndim == 0 else out

    def __repr__(self):
        return f"ScalingFunction({self.kind!r}, ln_lambda_c={self.ln_lambda_c})"


@dataclass(frozen=True)
class CriticalLaw:
    """:math:`\\xi(q) = 1/(\\alpha|q - q_c|^\\nu + \\beta)`.

    Examples
    --------
    >>> from qpkr.baselines import CriticalLaw
    >>> round(CriticalLaw(0.05, 6.67, 1.58, 0.01)(6.67), 6)
    100.0
    """
    alpha: float
    q_c: float
    nu: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.nu > 0 and self.beta >= 0):
            raise ValueError("a critical law needs alpha > 0, nu > 0 and beta >= 0")

    def __call__(self, q):
        out = 1.0 / (self.alpha * np.abs(np.asarray(q, dtype=float) - self.q_c) ** self.nu + self.beta)
        return float(out) if np.ndim(out) == 0 else out


def synth_scaling_data(F, xi, controls, times, noise=0.0, seed=0, q_c=None, localized_below=True):
    """Λ series following an exact scaling law, with optional lognormal noise.

    Parameters
    ----------
    F : ScalingFunction
    xi : callable
        Scale factor as a function of the control value, positive.
    controls : sequence of float
        Control values.
    times : sequence of int
        Recording times.
    noise : float, optional
        Standard deviation of the ln Λ perturbation; also the error bars.
    seed : int, optional
        Series ``i`` draws from the stream keyed by ``(seed, i)``.
    q_c : float or None, optional
        Branch boundary; defaults to ``xi.q_c``.
    localized_below : bool, optional
        Whether control values below *q_c* are localized. Default ``True``.

    Returns
    -------
    list of LambdaSeries

    Raises
    ------
    ConfigurationError
        If ``noise < 0``, no branch boundary is known or ξ is not positive.
    """
    if noise < 0:
        raise ConfigurationError("noise must be >= 0")
    if q_c is None:
        q_c = getattr(xi, "q_c", None)
        if q_c is None:
            raise ConfigurationError("q_c is required when xi carries no critical value")
    times = np.asarray(times)
    ln_t = np.log(times)
    series = []
    for i, q in enumerate(controls):
        xi_q = float(xi(q))
        if not xi_q > 0 or not math.isfinite(xi_q):
            raise ConfigurationError(f"xi({q}) = {xi_q} is not positive and finite")
        below = q < q_c
        branch = Branch.LOCALIZED if below == localized_below else Branch.DIFFUSIVE
        ln_lambda = F(math.log(xi_q) - ln_t / 3.0, branch)
        if noise > 0:
            ln_lambda = ln_lambda + noise * stream_rng(seed, i).standard_normal(len(times))
        series.append(LambdaSeries(float(q), times, np.exp(ln_lambda), np.full(len(times), float(noise))))
    return series
