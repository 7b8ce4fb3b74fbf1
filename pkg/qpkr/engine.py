"""Unitary evolution of the kicked rotor and the seeded ensemble runner.

One period is a kick :math:`e^{-i (K_n/\\bar k)\\cos x}`, applied on the
position grid reached by a fast Fourier transform, followed by the free flight
:math:`e^{-i \\bar k (m+\\beta)^2/2}` applied on the momentum lattice.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft

from qpkr.core import ConfigurationError, ControlPoint, GridOverflowError
from qpkr.model import TWO_PI, kick_schedule
from qpkr.utils import chunk_bounds, ordered_map, stream_rng

logger = logging.getLogger(__name__)

EDGE_THRESHOLD = 1e-8
EDGE_FRACTION = 0.1


@dataclass(frozen=True)
class MomentumGrid:
    """Momentum lattice ``m in [-M, M]`` embedded in a transform grid.

    The transform size ``N`` is the next power of two at or above
    ``2 (2M + 1)``, which keeps the circular kick convolution from wrapping
    before the edge guard trips. Arrays are in FFT order: index ``k`` holds
    ``m = k`` for ``k < N/2`` and ``m = k - N`` above.

    Parameters
    ----------
    M : int
        Half width of the lattice, ``M >= 1``.

    Examples
    --------
    >>> from qpkr.engine import MomentumGrid
    >>> MomentumGrid(1024).N
    8192
    """
    M: int
    N: int = field(init=False)
    m: np.ndarray = field(init=False, repr=False, compare=False)
    cos_x: np.ndarray = field(init=False, repr=False, compare=False)
    edge_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"lattice half width M must be an integer >= 1, got {self.M}")
        N = 1 << (2 * (2 * self.M + 1) - 1).bit_length()
        m = np.fft.fftfreq(N, d=1.0 / N).astype(np.int64)
        inner = self.M - max(1, math.ceil(EDGE_FRACTION * self.M))
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "cos_x", np.cos(TWO_PI * np.arange(N) / N))
        # outermost lattice sites plus all of the padding
        object.__setattr__(self, "edge_mask", (np.abs(m) > inner).astype(float))

    def index(self, m):
        """FFT-order array index of lattice site *m*."""
        return int(m) % self.N


def origin_site(beta):
    """Lattice site closest to zero momentum for quasimomentum *beta*.

    Sites are labelled so that :math:`\\tilde p = m + \\beta`; for
    ``beta >= 1/2`` the site ``m = -1`` is closer to zero.
    """
    return -1 if beta >= 0.5 else 0


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Wavefunction of one quasimomentum fiber.

    Parameters
    ----------
    amplitudes : numpy.ndarray
        Complex amplitudes on ``grid`` in FFT order.
    beta : float
        Quasimomentum in ``[0, 1)``; conserved.
    kbar : float
        Effective Planck constant.
    grid : MomentumGrid
        The lattice the amplitudes live on.
    origin : int, optional
        Initial lattice site; displacements and Π₀ are measured from it.
    """
    amplitudes: np.ndarray
    beta: float
    kbar: float
    grid: MomentumGrid
    origin: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.amplitudes.shape != (self.grid.N,):
            raise ValueError(f"expected {self.grid.N} amplitudes, got shape {self.amplitudes.shape}")

    @classmethod
    def plane_wave(cls, grid, beta, kbar):
        """A single momentum component on the site closest to zero momentum."""
        origin = origin_site(beta)
        amplitudes = np.zeros(grid.N, dtype=complex)
        amplitudes[grid.index(origin)] = 1.0
        return cls(amplitudes, float(beta), float(kbar), grid, origin)

    def probabilities(self):
        """Return ``(m, |a_m|^2)`` over the lattice ``[-M, M]`` in increasing ``m``."""
        m = np.arange(-self.grid.M, self.grid.M + 1)
        return m, np.abs(self.amplitudes[m % self.grid.N]) ** 2

    def norm(self):
        """Euclidean norm of the amplitude vector."""
        return float(np.linalg.norm(self.amplitudes))

    def edge_population(self):
        """Probability held by the outermost 10% of lattice sites and the padding."""
        return float(np.abs(self.amplitudes) ** 2 @ self.grid.edge_mask)


def _free_phase(grid, kbar, betas):
    p = grid.m[None, :] + np.asarray(betas, dtype=float)[:, None]
    return np.exp(-0.5j * kbar * p * p)


def _propagate(amplitudes, kick_strengths, kbar, grid, free_phase):
    """Advance a batch of states by one period, in place where possible."""
    psi = sp_fft.ifft(amplitudes, axis=-1, norm="ortho")
    psi *= np.exp((-1j / kbar) * np.multiply.outer(kick_strengths, grid.cos_x))
    amplitudes = sp_fft.fft(psi, axis=-1, norm="ortho", overwrite_x=True)
    amplitudes *= free_phase
    return amplitudes


def step(state, K_n, kick=None, control=None, check=True):
    """Evolve *state* over one kick period.

    Parameters
    ----------
    state : QuantumState
    K_n : float
        Strength of this kick.
    kick : int or None, optional
        Kick index, only used to label a :class:`~qpkr.core.GridOverflowError`.
    control : ControlPoint or None, optional
        Control point, only used to label a :class:`~qpkr.core.GridOverflowError`.
    check : bool, optional
        Apply the edge-population guard. Default ``True``.

    Returns
    -------
    QuantumState
        The new state; norm and ``beta`` are preserved.

    Raises
    ------
    GridOverflowError
        If the edge population reaches ``1e-8``.
    """
    free = _free_phase(state.grid, state.kbar, [state.beta])
    amplitudes = _propagate(state.amplitudes[None, :].copy(), np.array([K_n], dtype=float),
                            state.kbar, state.grid, free)[0]
    new = QuantumState(amplitudes, state.beta, state.kbar, state.grid, state.origin)
    if check:
        edge = new.edge_population()
        if edge >= EDGE_THRESHOLD:
            raise GridOverflowError(control, kick if kick is not None else 0, edge)
    return new


@dataclass(frozen=True, eq=False)
class RealizationRecord:
    """Per-realization observables at the recording times.

    Arrays have shape ``(B, T)`` for a batch of ``B`` realizations.
    """
    times: np.ndarray
    m2: np.ndarray
    pi0: np.ndarray
    m1: np.ndarray


def _validate_times(times, n_kicks):
    times = np.asarray(times, dtype=np.int64)
    if times.ndim != 1 or times.size == 0:
        raise ConfigurationError("recording times must be a non-empty 1-D sequence")
    if np.any(np.diff(times) <= 0):
        raise ConfigurationError("recording times must be strictly increasing")
    if times[0] < 1 or times[-1] > n_kicks:
        raise ConfigurationError(f"recording times must lie in [1, {n_kicks}]")
    return times


def _run_batch(ps, K, eps, betas, phases, times, grid, control=None, edge_threshold=EDGE_THRESHOLD):
    betas = np.asarray(betas, dtype=float)
    phases = np.asarray(phases, dtype=float).reshape(len(betas), 2)
    batch = len(betas)
    n_last = int(times[-1])

    kicks = np.asarray(kick_schedule(K, eps, (ps.omega2, ps.omega3), (phases[:, :1], phases[:, 1:]),
                                     np.arange(n_last)[None, :]), dtype=float)
    kicks = np.broadcast_to(kicks, (batch, n_last))
    free = _free_phase(grid, ps.kbar, betas)

    origins = np.array([origin_site(b) for b in betas])
    displacement = (grid.m[None, :] - origins[:, None]).astype(float)
    origin_index = origins % grid.N
    rows = np.arange(batch)

    amplitudes = np.zeros((batch, grid.N), dtype=complex)
    amplitudes[rows, origin_index] = 1.0

    m2 = np.empty((batch, len(times)))
    m1 = np.empty((batch, len(times)))
    pi0 = np.empty((batch, len(times)))
    slot = 0
    for n in range(n_last):
        amplitudes = _propagate(amplitudes, kicks[:, n], ps.kbar, grid, free)
        if n + 1 != times[slot]:
            continue
        prob = amplitudes.real ** 2 + amplitudes.imag ** 2
        edge = prob @ grid.edge_mask
        if edge.max() >= edge_threshold:
            raise GridOverflowError(control, n + 1, float(edge.max()))
        m1[:, slot] = np.einsum("bn,bn->b", prob, displacement)
        m2[:, slot] = np.einsum("bn,bn->b", prob, displacement * displacement)
        pi0[:, slot] = prob[rows, origin_index]
        slot += 1
    return RealizationRecord(times, m2, pi0, m1)


def run_realization(ps, K, eps, beta, phases, times, grid_m=1024, control=None):
    """Simulate one quasimomentum fiber from a plane wave.

    Parameters
    ----------
    ps : ParameterSet
    K, eps : float
        Control point.
    beta : float
        Quasimomentum in ``[0, 1)``.
    phases : tuple of float
        ``(phi2, phi3)`` for this realization.
    times : sequence of int
        Strictly increasing recording times in ``[1, ps.n_kicks]``.
    grid_m : int, optional
        Lattice half width. Default ``1024``.
    control : ControlPoint or None, optional
        Used to label overflow errors.

    Returns
    -------
    RealizationRecord
        ``m2`` is the mean squared displacement :math:`\\sum m^2|a_m|^2` and
        ``pi0`` the population of the initial site, both of shape ``(1, T)``.

    Raises
    ------
    GridOverflowError
        Propagated from the edge guard.
    """
    times = _validate_times(times, ps.n_kicks)
    return _run_batch(ps, K, eps, [beta], [phases], times, MomentumGrid(grid_m), control)


@dataclass(frozen=True, eq=False)
class ObservableSeries:
    """Ensemble-averaged observables at one control point.

    Parameters
    ----------
    control : ControlPoint
    times : numpy.ndarray
        Strictly increasing kick indices.
    p2, p2_err : numpy.ndarray
        Mean squared displacement :math:`\\langle \\tilde p^2(t)\\rangle` and its standard error.
    pi0, pi0_err : numpy.ndarray
        Population of the zero-momentum site and its standard error.
    n_realizations : int
    p1, p1_err : numpy.ndarray or None, optional
        Mean displacement and its standard error.
    """
    control: ControlPoint
    times: np.ndarray
    p2: np.ndarray
    p2_err: np.ndarray
    pi0: np.ndarray
    pi0_err: np.ndarray
    n_realizations: int
    p1: np.ndarray = None
    p1_err: np.ndarray = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for name in ("p2", "p2_err", "pi0", "pi0_err"):
            if np.shape(getattr(self, name)) != np.shape(self.times):
                raise ValueError(f"{name} must have the same shape as times")
        if np.any(self.p2 < 0) or np.any(self.pi0 < 0) or np.any(self.pi0 > 1):
            raise ValueError("p2 must be >= 0 and pi0 must lie in [0, 1]")
        if np.any(self.p2_err < 0) or np.any(self.pi0_err < 0):
            raise ValueError("errors must be >= 0")

    def __repr__(self):
        return (f"ObservableSeries at {self.control}: {len(self.times)} times, "
                f"{self.n_realizations} realizations")


class _EnsembleChunk:
    """Picklable worker evaluating one chunk of realizations."""

    def __init__(self, ps, K, eps, times, grid_m, control):
        self.ps = ps
        self.K = K
        self.eps = eps
        self.times = times
        self.grid_m = grid_m
        self.control = control

    def __call__(self, draws):
        betas, phases = draws
        return _run_batch(self.ps, self.K, self.eps, betas, phases, self.times,
                          MomentumGrid(self.grid_m), self.control)


def draw_realization(ps, seed, index, random_phases=True):
    """Return ``(beta, (phi2, phi3))`` of realization *index* of run *seed*."""
    rng = stream_rng(seed, index)
    beta = rng.uniform(0.0, 1.0)
    if random_phases:
        phi2, phi3 = rng.uniform(0.0, TWO_PI, size=2)
    else:
        phi2, phi3 = ps.phi2, ps.phi3
    return beta, (float(phi2), float(phi3))


def control_for(ps, control):
    """Coerce ``(K, eps)`` or a :class:`~qpkr.core.ControlPoint` into a control point of *ps*'s path."""
    if isinstance(control, ControlPoint):
        return control
    K, eps = (float(v) for v in control)
    path = ps.path
    if path.coordinate == "K":
        value = K
    elif path.coordinate == "epsilon":
        value = eps
    else:
        value = math.hypot(K - path.start[0], eps - path.start[1])
    return ControlPoint(K, eps, value)


def run_ensemble(ps, control, times=None, n_realizations=1024, seed=0, grid_m=1024, random_phases=True,
                 workers=1, chunk_size=16):
    """Average the observables over quasimomenta and modulation phases.

    Realization ``r`` draws its quasimomentum (uniform in ``[0, 1)``) and, if
    *random_phases*, its phases (uniform in ``[0, 2π)``) from the stream keyed
    by ``(seed, r)``. Realizations are grouped in chunks of *chunk_size*
    whatever the number of workers, and reduced in index order, so the result
    is bitwise reproducible for any worker count.

    Parameters
    ----------
    ps : ParameterSet
    control : ControlPoint or tuple of float
        ``(K, eps)`` point to simulate.
    times : sequence of int or None, optional
        Recording times; default every kick up to ``ps.n_kicks``.
    n_realizations : int, optional
        Ensemble size, at least 2. Default ``1024``.
    seed : int, optional
        Run seed. Default ``0``.
    grid_m : int, optional
        Lattice half width. Default ``1024``.
    random_phases : bool, optional
        Draw the modulation phases per realization. Default ``True``.
    workers : int or None, optional
        Worker processes; ``None`` uses every core. Default ``1``.
    chunk_size : int, optional
        Realizations per batched transform. Default ``16``.

    Returns
    -------
    ObservableSeries

    Raises
    ------
    ConfigurationError
        If ``n_realizations < 2`` or the times are invalid.
    GridOverflowError
        If the lattice is too small.
    """
    if n_realizations < 2:
        raise ConfigurationError(f"an ensemble needs at least 2 realizations, got {n_realizations}")
    control = control_for(ps, control)
    times = _validate_times(np.arange(1, ps.n_kicks + 1) if times is None else times, ps.n_kicks)

    draws = [draw_realization(ps, seed, r, random_phases) for r in range(n_realizations)]
    chunks = []
    for start, stop in chunk_bounds(n_realizations, chunk_size):
        betas = [d[0] for d in draws[start:stop]]
        phases = [d[1] for d in draws[start:stop]]
        chunks.append((betas, phases))

    started = time.perf_counter()
    records = ordered_map(_EnsembleChunk(ps, control.K, control.eps, times, grid_m, control), chunks, workers)
    m2 = np.concatenate([r.m2 for r in records])
    pi0 = np.concatenate([r.pi0 for r in records])
    m1 = np.concatenate([r.m1 for r in records])
    root = math.sqrt(n_realizations)
    logger.info("ensemble %s of set %s: %d realizations x %d kicks in %.1f s", control, ps.label,
                n_realizations, times[-1], time.perf_counter() - started)

    return ObservableSeries(
        control=control,
        times=times,
        p2=m2.mean(axis=0),
        p2_err=m2.std(axis=0, ddof=1) / root,
        pi0=pi0.mean(axis=0),
        pi0_err=pi0.std(axis=0, ddof=1) / root,
        n_realizations=n_realizations,
        p1=m1.mean(axis=0),
        p1_err=m1.std(axis=0, ddof=1) / root,
    )
