"""Critical point and exponent from the scale factors ξ(q).

The divergence is fitted as

.. math:: 1/\\xi(q) = \\alpha |q - q_c|^\\nu + \\beta

where the cutoff β accounts for the finite observation time. When both
branches are present the diffusive values are compared as
:math:`\\xi e^{\\delta}`, since the collapse fixes each branch's gauge
independently.
"""

import dataclasses
import functools
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from qpkr.core import Branch, ConfigurationError, ConvergenceError, QpkrError
from qpkr.model import REFERENCE_NU
from qpkr.scaling import ScalingResult, classify_branch, collapse
from qpkr.utils import ordered_map, stream_rng

logger = logging.getLogger(__name__)

MIN_POINTS = 6
MIN_REPLICAS = 100
PERCENTILES = (16.0, 84.0)


@dataclass(frozen=True, eq=False)
class BootstrapSummary:
    """Replica cloud of a parametric bootstrap.

    Parameters
    ----------
    q_c, nu : numpy.ndarray
        Critical value and exponent of every kept replica, in replica order.
    q_c_interval, nu_interval : tuple of float
        Central 68% intervals (16th and 84th percentiles).
    n_replicas : int
        Replicas attempted.
    n_dropped : int
        Replicas whose analysis failed.
    ln_xi_spread : dict
        Control value to the standard deviation of ln ξ over replicas.
    """
    q_c: np.ndarray
    nu: np.ndarray
    q_c_interval: tuple
    nu_interval: tuple
    n_replicas: int
    n_dropped: int
    ln_xi_spread: dict

    @property
    def nu_err(self):
        """Half width of the 68% ν interval."""
        return 0.5 * (self.nu_interval[1] - self.nu_interval[0])

    @property
    def q_c_err(self):
        return 0.5 * (self.q_c_interval[1] - self.q_c_interval[0])


@dataclass(frozen=True, eq=False)
class CriticalFit:
    """Fit of the ξ divergence.

    Parameters
    ----------
    q_c : float
        Critical control value in path-coordinate units.
    nu : float
        Critical exponent.
    alpha : float
        Amplitude.
    beta_cutoff : float
        Additive cutoff of 1/ξ.
    chi2_per_dof : float
    window : tuple of float
        Fitted control interval.
    q_c_err, nu_err : float
        Standard errors from the fit covariance.
    covariance : numpy.ndarray
        Covariance of ``(alpha, q_c, nu, beta_cutoff[, delta])``.
    delta : float
        Log offset between the diffusive and localized gauges, 0 when unused.
    n_points : int
        Points inside the window.
    q_c0 : float
        Initial guess.
    q, xi, xi_err : numpy.ndarray
        Every candidate point offered to the fit.
    point_branches : list of Branch or None
        Branch of every candidate point.
    bootstrap : BootstrapSummary or None
        Replica cloud, when a bootstrap was run.
    weighting : str
        Residual convention; 1/ξ residuals weighted by their propagated errors.
    """
    q_c: float
    nu: float
    alpha: float
    beta_cutoff: float
    chi2_per_dof: float
    window: tuple
    q_c_err: float
    nu_err: float
    covariance: np.ndarray
    delta: float
    n_points: int
    q_c0: float
    q: np.ndarray
    xi: np.ndarray
    xi_err: np.ndarray
    point_branches: list = None
    bootstrap: BootstrapSummary = None
    weighting: str = "inverse-xi"

    def __post_init__(self):
        if not (self.nu > 0 and self.alpha > 0 and self.beta_cutoff >= 0):
            raise ValueError("a critical fit needs nu > 0, alpha > 0 and beta_cutoff >= 0")
        if not self.window[0] <= self.q_c <= self.window[1]:
            raise ValueError(f"q_c = {self.q_c} lies outside the fitted window {self.window}")

    def inverse_xi(self, q, branch=Branch.LOCALIZED):
        """Model value of 1/ξ at *q* on the gauge of *branch*."""
        value = self.alpha * np.abs(np.asarray(q) - self.q_c) ** self.nu + self.beta_cutoff
        return value * math.exp(self.delta) if branch is Branch.DIFFUSIVE else value

    def __repr__(self):
        return (f"CriticalFit(q_c={self.q_c:.4g} ± {self.q_c_err:.2g}, nu={self.nu:.4g} ± {self.nu_err:.2g}, "
                f"chi2/dof={self.chi2_per_dof:.3g})")


@dataclass(frozen=True)
class CrossingEstimate:
    """Initial guess of the critical value from crossings of Λ(q, t₁) and Λ(q, t₂)."""
    q_c: float
    n_crossings: int
    fallback: bool


def crossing_estimate(all_series, n_times=5):
    """Median crossing of Λ curves taken at well separated times.

    Early times are taken from the first third of the common ln t range and
    late times from the last third. For each (early, late) pair,
    :math:`\\ln\\Lambda(q, t_2) - \\ln\\Lambda(q, t_1)` is interpolated linearly
    in q and its sign changes are located.

    Parameters
    ----------
    all_series : list of LambdaSeries
    n_times : int, optional
        Times taken from each third. Default ``5``.

    Returns
    -------
    CrossingEstimate
        ``fallback`` is set when no crossing exists; ``q_c`` is then the
        midpoint between adjacent series of opposite branches, or the middle
        of the control range when there is only one branch.

    Raises
    ------
    ConfigurationError
        If fewer than 2 series or 2 common times are given.
    """
    series = sorted(all_series, key=lambda ls: ls.control_value)
    if len(series) < 2:
        raise ConfigurationError("a crossing needs at least 2 series")
    common = functools.reduce(np.intersect1d, [ls.times for ls in series])
    if len(common) < 2:
        raise ConfigurationError("the series share fewer than 2 recording times")

    q = np.array([ls.control_value for ls in series])
    table = np.array([ls.ln_lambda[np.searchsorted(ls.times, common)] for ls in series])
    ln_t = np.log(common)
    third = (ln_t[-1] - ln_t[0]) / 3.0
    early = np.flatnonzero(ln_t <= ln_t[0] + third)
    late = np.flatnonzero(ln_t >= ln_t[-1] - third)
    early = early[np.unique(np.round(np.linspace(0, len(early) - 1, n_times)).astype(int))]
    late = late[np.unique(np.round(np.linspace(0, len(late) - 1, n_times)).astype(int))]

    roots = []
    for i in early:
        for j in late:
            if j <= i:
                continue
            d = table[:, j] - table[:, i]
            roots.extend(q[d == 0])
            change = np.flatnonzero(d[:-1] * d[1:] < 0)
            roots.extend(q[change] - d[change] * (q[change + 1] - q[change]) / (d[change + 1] - d[change]))

    if roots:
        return CrossingEstimate(float(np.median(roots)), len(roots), False)

    labels = [classify_branch(ls).branch for ls in series]
    for k in range(len(series) - 1):
        if {labels[k], labels[k + 1]} == {Branch.LOCALIZED, Branch.DIFFUSIVE}:
            estimate = 0.5 * (q[k] + q[k + 1])
            break
    else:
        estimate = 0.5 * (q[0] + q[-1])
    logger.warning("no crossing of the Λ curves found; using %.6g from the branch labels", estimate)
    return CrossingEstimate(float(estimate), 0, True)


class _DivergenceModel:
    """Weighted residuals of 1/ξ in the parameters (ln α, q_c, ln ν, b[, δ]) with β = b²."""

    def __init__(self, q, y, sigma, diffusive, offset):
        self.q = q
        self.y = y
        self.sigma = sigma
        self.diffusive = diffusive
        self.offset = offset

    @property
    def n_params(self):
        return 5 if self.offset else 4

    def _parts(self, p):
        alpha, q_c, nu, b = math.exp(p[0]), p[1], math.exp(p[2]), p[3]
        d = self.q - q_c
        ad = np.abs(d)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            power = ad ** nu
        model = alpha * power + b * b
        scale = np.where(self.diffusive, math.exp(p[4]), 1.0) if self.offset else np.ones_like(self.q)
        return alpha, nu, b, d, ad, power, model, scale

    def residuals(self, p):
        *_, model, scale = self._parts(p)
        return (self.y - scale * model) / self.sigma

    def jacobian(self, p):
        alpha, nu, b, d, ad, power, model, scale = self._parts(p)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            log_ad = np.where(ad > 0, np.log(np.where(ad > 0, ad, 1.0)), 0.0)
            d_qc = np.where(ad > 0, -alpha * nu * ad ** (nu - 1.0) * np.sign(d), 0.0)
        columns = [alpha * power, d_qc, alpha * power * log_ad * nu, np.full_like(self.q, 2.0 * b)]
        if self.offset:
            columns.append(model)
        return -(scale[:, None] * np.column_stack(columns)) / self.sigma[:, None]

    def start(self, q_c, nu):
        """Parameter vector with α, β (and δ) solved linearly for fixed q_c and ν."""
        rows = ~self.diffusive if self.offset else np.ones_like(self.q, dtype=bool)
        power = np.abs(self.q - q_c) ** nu
        a = np.column_stack([power, np.ones_like(power)])[rows] / self.sigma[rows, None]
        alpha, beta = np.linalg.lstsq(a, self.y[rows] / self.sigma[rows], rcond=None)[0]
        alpha = alpha if alpha > 0 else np.max(self.y) / max(np.max(power), 1e-12)
        beta = max(beta, 1e-6 * float(np.mean(self.y)))
        p = [math.log(alpha), q_c, math.log(nu), math.sqrt(beta)]
        if self.offset:
            ratio = self.y[self.diffusive] / (alpha * power[self.diffusive] + beta)
            p.append(float(np.median(np.log(ratio[ratio > 0]))) if np.any(ratio > 0) else 0.0)
        return np.array(p, dtype=float)


def _window(q, center, half_width, widen):
    """Bounds within ``±half_width`` of *center*, widened by 25% steps until MIN_POINTS controls fall inside."""
    width = half_width
    while True:
        lo, hi = sorted((center - width * abs(center), center + width * abs(center)))
        n = int(np.count_nonzero((q >= lo) & (q <= hi)))
        if n >= MIN_POINTS or not widen or center == 0 or (lo <= q.min() and hi >= q.max()):
            break
        width *= 1.25
    if width > half_width:
        logger.warning("fewer than %d points within ±%.0f%% of %.6g; widened the fit window to ±%.0f%% (%d points)",
                       MIN_POINTS, 100 * half_width, center, 100 * width, n)
    return lo, hi


def _fit_once(q, y, sigma, diffusive, center, half_width, starts, q_c0, xi, xi_err, branches, widen=True):
    lo, hi = _window(q, center, half_width, widen)
    inside = (q >= lo) & (q <= hi)
    offset = bool(np.any(diffusive[inside]) and np.any(~diffusive[inside]))
    model = _DivergenceModel(q[inside], y[inside], sigma[inside], diffusive[inside], offset)
    n = int(inside.sum())
    if n < MIN_POINTS or n <= model.n_params:
        need = max(MIN_POINTS, model.n_params + 1)
        raise ConfigurationError(f"only {n} points inside the window [{lo:.4g}, {hi:.4g}]; at least {need} needed")

    best = None
    for q_start, nu_start in starts:
        p0 = model.start(q_start, nu_start)
        try:
            result = least_squares(model.residuals, p0, jac=model.jacobian, method="lm",
                                   xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        except ValueError as exc:
            logger.debug("start (%.4g, %.3g) rejected: %s", q_start, nu_start, exc)
            continue
        if not np.isfinite(result.cost):
            continue
        if best is None or (result.success, -result.cost) > (best.success, -best.cost):
            best = result
    if best is None or not best.success:
        raise ConvergenceError("critical fit did not converge from any start",
                               last_iterate=None if best is None else best.x)

    p = best.x
    alpha, q_c, nu, b = math.exp(p[0]), p[1], math.exp(p[2]), p[3]
    if not lo <= q_c <= hi:
        raise ConvergenceError(f"fitted q_c = {q_c:.6g} left the window [{lo:.4g}, {hi:.4g}]", last_iterate=p)
    jtj = best.jac.T @ best.jac
    transform = np.diag([alpha, 1.0, nu, 2.0 * b] + ([1.0] if offset else []))
    covariance = transform @ np.linalg.pinv(jtj) @ transform
    return CriticalFit(
        q_c=float(q_c),
        nu=float(nu),
        alpha=float(alpha),
        beta_cutoff=float(b * b),
        chi2_per_dof=float(2.0 * best.cost / (n - model.n_params)),
        window=(float(lo), float(hi)),
        q_c_err=float(math.sqrt(max(covariance[1, 1], 0.0))),
        nu_err=float(math.sqrt(max(covariance[2, 2], 0.0))),
        covariance=covariance,
        delta=float(p[4]) if offset else 0.0,
        n_points=n,
        q_c0=float(q_c0),
        q=q,
        xi=xi,
        xi_err=xi_err,
        point_branches=branches,
    )


def _starts(q_c, nu, half_width, n_starts, seed):
    rng = stream_rng(seed, 0)
    starts = [(q_c, nu)]
    for _ in range(n_starts - 1):
        starts.append((q_c + 0.25 * half_width * abs(q_c) * rng.uniform(-1.0, 1.0),
                       nu * math.exp(rng.uniform(-0.3, 0.3))))
    return starts


def fit_critical(xi, q_c0, xi_err=None, branches=None, half_width=0.2, first_half_width=0.3, two_pass=True,
                 n_starts=5, nu0=1.5, seed=0, widen=True):
    """Fit the divergence of ξ around the critical point.

    Parameters
    ----------
    xi : ScalingResult or dict
        Scale factors keyed by control value. A :class:`ScalingResult` also
        supplies *xi_err* and *branches* when these are not given.
    q_c0 : float
        Initial guess of the critical value.
    xi_err : dict or None, optional
        Standard errors of ξ keyed by control value.
    branches : dict or None, optional
        Branch of every point; with both branches inside the window a log
        gauge offset δ is fitted as well.
    half_width : float, optional
        Relative half width of the final window. Default ``0.2``.
    first_half_width : float, optional
        Relative half width of the first pass around *q_c0*. Default ``0.3``.
    two_pass : bool, optional
        Refit in a window centred on the first-pass q_c. Default ``True``;
        when ``False`` a single pass uses *half_width* around *q_c0*.
    n_starts : int, optional
        Number of starting points. Default ``5``.
    nu0 : float, optional
        Starting exponent. Default ``1.5``.
    seed : int, optional
        Seed of the jittered starts.
    widen : bool, optional
        When fewer than MIN_POINTS controls fall inside a window, widen it in
        25% steps until they do, with a warning. Default ``True``.

    Returns
    -------
    CriticalFit

    Raises
    ------
    ConfigurationError
        Missing errors or too few points in the window.
    ConvergenceError
        If no start converges; ``last_iterate`` holds the best parameters.

    Examples
    --------
    >>> import numpy as np
    >>> from qpkr.crit import fit_critical
    >>> q = np.linspace(5.5, 7.8, 24)
    >>> xi = {float(v): 1 / (abs(v - 6.67) + 0.01) for v in q}
    >>> fit = fit_critical(xi, 6.6, xi_err={k: 0.01 * v for k, v in xi.items()})
    >>> round(fit.q_c, 4), round(fit.nu, 4)
    (6.67, 1.0)
    """
    if isinstance(xi, ScalingResult):
        xi_err = xi.xi_err if xi_err is None else xi_err
        branches = xi.branches if branches is None else branches
        xi = xi.xi
    if xi_err is None:
        raise ConfigurationError("fitting the divergence needs errors on ξ")
    q = np.array(sorted(xi), dtype=float)
    values = np.array([xi[k] for k in q], dtype=float)
    errors = np.array([xi_err[k] for k in q], dtype=float)
    if np.any(values <= 0):
        raise ConfigurationError("ξ must be positive")
    if np.any(errors <= 0):
        raise ConfigurationError("ξ errors must be positive")
    labels = [Branch(branches[k]) for k in q] if branches is not None else None
    diffusive = np.array([b is Branch.DIFFUSIVE for b in labels]) if labels else np.zeros(len(q), dtype=bool)
    y = 1.0 / values
    sigma = errors / values ** 2

    args = (q, y, sigma, diffusive)
    extra = (q_c0, values, errors, labels, widen)
    if not two_pass:
        return _fit_once(*args, q_c0, half_width, _starts(q_c0, nu0, half_width, n_starts, seed), *extra)
    first = _fit_once(*args, q_c0, first_half_width, _starts(q_c0, nu0, first_half_width, n_starts, seed), *extra)
    logger.debug("first pass: q_c = %.6g, nu = %.4g", first.q_c, first.nu)
    fit = _fit_once(*args, first.q_c, half_width, _starts(first.q_c, first.nu, half_width, n_starts, seed), *extra)
    logger.info("critical fit: q_c = %.6g ± %.2g, nu = %.4g ± %.2g, chi2/dof = %.3g",
                fit.q_c, fit.q_c_err, fit.nu, fit.nu_err, fit.chi2_per_dof)
    return fit


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    """A collapse, its crossing estimate and the fit of its divergence."""
    scaling: ScalingResult
    fit: CriticalFit
    crossing: CrossingEstimate

    @property
    def q_c(self):
        return self.fit.q_c

    @property
    def nu(self):
        return self.fit.nu


class CollapseFitAnalysis:
    """Collapse, crossing estimate and divergence fit as one picklable callable.

    Parameters
    ----------
    gauge_ref, diffusive_gauge_ref : float or None, optional
        Passed to :func:`~qpkr.scaling.collapse`.
    branches : dict or None, optional
        Fixed branch assignment keyed by control value.
    xi_err : dict or None, optional
        ξ errors used by the fit instead of the collapse curvature.
    half_width : float, optional
        Relative half width of the final fit window.
    collapse_options, fit_options : dict or None, optional
        Extra keyword arguments.
    """

    def __init__(self, gauge_ref=None, diffusive_gauge_ref=None, branches=None, xi_err=None, half_width=0.2,
                 collapse_options=None, fit_options=None):
        self.gauge_ref = gauge_ref
        self.diffusive_gauge_ref = diffusive_gauge_ref
        self.branches = branches
        self.xi_err = xi_err
        self.half_width = half_width
        self.collapse_options = collapse_options or {}
        self.fit_options = fit_options or {}

    def __call__(self, series):
        scaling = collapse(series, self.gauge_ref, branches=self.branches,
                           diffusive_gauge_ref=self.diffusive_gauge_ref, **self.collapse_options)
        crossing = crossing_estimate(series)
        fit = fit_critical(scaling, crossing.q_c, xi_err=self.xi_err, half_width=self.half_width,
                           **self.fit_options)
        return AnalysisResult(scaling, fit, crossing)


class _Replica:
    def __init__(self, analysis, series, seed):
        self.analysis = analysis
        self.series = series
        self.seed = seed

    def __call__(self, index):
        rng = stream_rng(self.seed, index)
        replica = [ls.perturbed(rng) for ls in self.series]
        try:
            outcome = self.analysis(replica)
        except QpkrError as exc:
            return f"replica {index}: {exc}"
        xi = outcome.scaling.xi if hasattr(outcome, "scaling") else {}
        return outcome.q_c, outcome.nu, xi


def bootstrap(analysis, series, n_replicas=100, seed=0, workers=1, max_drop_fraction=0.1, progress=None):
    """Parametric bootstrap of an analysis of Λ series.

    Every replica shifts each ln Λ point by a normal draw of its standard
    error, from the stream keyed by ``(seed, replica index)``, and reruns
    *analysis*. Replicas that raise a :class:`~qpkr.core.QpkrError` are
    dropped and counted.

    Parameters
    ----------
    analysis : callable
        Maps a list of :class:`~qpkr.scaling.LambdaSeries` to an object with
        ``q_c`` and ``nu`` attributes, e.g. :class:`CollapseFitAnalysis`.
    series : list of LambdaSeries
    n_replicas : int, optional
        Default ``100``; fewer replicas are allowed with a warning.
    seed : int, optional
    workers : int or None, optional
        Worker processes. Default ``1``.
    max_drop_fraction : float, optional
        Largest tolerated fraction of failed replicas. Default ``0.1``.
    progress : str or None, optional
        Description of a progress bar.

    Returns
    -------
    BootstrapSummary

    Raises
    ------
    ConvergenceError
        If more than *max_drop_fraction* of the replicas fail.
    """
    if n_replicas < 1:
        raise ConfigurationError("the bootstrap needs at least one replica")
    if n_replicas < MIN_REPLICAS:
        message = f"{n_replicas} bootstrap replicas are too few for reliable 68% intervals"
        warnings.warn(message, UserWarning, stacklevel=2)
        logger.warning(message)

    outcomes = ordered_map(_Replica(analysis, series, seed), range(n_replicas), workers, progress)
    failures = [o for o in outcomes if isinstance(o, str)]
    kept = [o for o in outcomes if not isinstance(o, str)]
    for failure in failures:
        logger.warning("dropped %s", failure)
    if len(failures) > max_drop_fraction * n_replicas:
        raise ConvergenceError(f"{len(failures)} of {n_replicas} bootstrap replicas failed",
                               last_iterate=failures)

    q_c = np.array([o[0] for o in kept])
    nu = np.array([o[1] for o in kept])
    spread = {}
    for key in kept[0][2] if kept else ():
        ln_xi = np.log([o[2][key] for o in kept if key in o[2]])
        spread[key] = float(np.std(ln_xi, ddof=1)) if len(ln_xi) > 1 else 0.0
    return BootstrapSummary(
        q_c=q_c,
        nu=nu,
        q_c_interval=tuple(float(v) for v in np.percentile(q_c, PERCENTILES)),
        nu_interval=tuple(float(v) for v in np.percentile(nu, PERCENTILES)),
        n_replicas=n_replicas,
        n_dropped=len(failures),
        ln_xi_spread=spread,
    )


def analyze_series(series, gauge_ref=None, n_replicas=100, seed=0, workers=1, half_width=0.2, progress=None):
    """Run the full analysis chain on a sweep of Λ series.

    A central collapse fixes the gauges and branches; bootstrap replicas are
    analysed with that assignment, and the central fit is redone with ξ
    errors taken from the replica spread of ln ξ (the local curvature error
    where the spread vanishes, i.e. at the gauge points).

    Returns
    -------
    AnalysisResult
        ``fit.bootstrap`` holds the replica cloud when ``n_replicas > 0``.
    """
    central = CollapseFitAnalysis(gauge_ref, half_width=half_width)(series)
    if n_replicas <= 0:
        return central
    scaling = central.scaling
    fixed = CollapseFitAnalysis(scaling.gauge_ref, scaling.diffusive_gauge_ref, branches=scaling.assignment,
                                half_width=half_width)
    summary = bootstrap(fixed, series, n_replicas, seed, workers, progress=progress)
    xi_err = {}
    for key, xi in scaling.xi.items():
        spread = summary.ln_xi_spread.get(key, 0.0)
        xi_err[key] = xi * spread if spread > 0 else scaling.xi_err[key]
    fit = fit_critical(scaling, central.crossing.q_c, xi_err=xi_err, half_width=half_width)
    return AnalysisResult(scaling, dataclasses.replace(fit, bootstrap=summary), central.crossing)


@dataclass(frozen=True)
class WindowStability:
    """Change of ν when the fit window is narrowed."""
    half_width: float
    nu: float
    nu_narrow: float
    q_c_narrow: float
    delta_nu: float
    sigma_nu: float

    @property
    def stable(self):
        return abs(self.delta_nu) < self.sigma_nu


def window_stability(fit, half_width=0.15):
    """Refit *fit*'s points in a narrower window centred on its q_c.

    ``sigma_nu`` is the bootstrap half width when available, otherwise the
    covariance error of ν.
    """
    xi = dict(zip(fit.q.tolist(), fit.xi.tolist()))
    xi_err = dict(zip(fit.q.tolist(), fit.xi_err.tolist()))
    branches = dict(zip(fit.q.tolist(), fit.point_branches)) if fit.point_branches else None
    narrow = fit_critical(xi, fit.q_c, xi_err=xi_err, branches=branches, half_width=half_width,
                          two_pass=False, nu0=fit.nu)
    sigma = fit.bootstrap.nu_err if fit.bootstrap is not None else fit.nu_err
    return WindowStability(half_width, fit.nu, narrow.nu, narrow.q_c, narrow.nu - fit.nu, sigma)


@dataclass(frozen=True, eq=False)
class UniversalityReport:
    """Weighted mean of ν over parameter sets and each set's deviation.

    ``error`` is the larger of ``internal_error`` (1/√Σw) and ``dispersion``
    (the weighted scatter of the sets around the mean).
    """
    labels: list
    nu: np.ndarray
    sigma: np.ndarray
    mean: float
    error: float
    internal_error: float
    dispersion: float
    deviation: np.ndarray
    flagged: list
    reference: float
    reference_deviation: np.ndarray
    reference_flagged: list

    def __repr__(self):
        return f"UniversalityReport(nu = {self.mean:.3f} ± {self.error:.3f} over {len(self.labels)} sets)"


def universality_report(fits, reference=REFERENCE_NU, threshold=2.0):
    """Combine the exponents of several parameter sets.

    Parameters
    ----------
    fits : dict or sequence
        ``label -> CriticalFit`` or ``(label, nu, sigma)`` triples. The σ of a
        fit is its bootstrap half width, or its covariance error without a
        bootstrap.
    reference : float, optional
        Reference exponent. Default ``1.58``.
    threshold : float, optional
        Deviation in σ beyond which a set is flagged. Default ``2``.

    Returns
    -------
    UniversalityReport

    Raises
    ------
    ConfigurationError
        With fewer than 2 fits or a non-positive σ.

    Examples
    --------
    >>> from qpkr.crit import universality_report
    >>> report = universality_report([("A", 1.58, 0.02), ("B", 1.58, 0.02)])
    >>> round(report.mean, 3), round(report.error, 5), report.flagged
    (1.58, 0.01414, [])
    """
    if isinstance(fits, dict):
        rows = [(label, fit.nu, fit.bootstrap.nu_err if fit.bootstrap is not None else fit.nu_err)
                for label, fit in fits.items()]
    else:
        rows = [tuple(row) for row in fits]
    if len(rows) < 2:
        raise ConfigurationError("a universality report needs at least 2 fits")
    labels = [str(r[0]) for r in rows]
    nu = np.array([r[1] for r in rows], dtype=float)
    sigma = np.array([r[2] for r in rows], dtype=float)
    if np.any(sigma <= 0):
        raise ConfigurationError("every exponent needs a positive uncertainty")

    w = sigma ** -2
    mean = float(np.sum(w * nu) / np.sum(w))
    internal = float(1.0 / math.sqrt(np.sum(w)))
    n = len(nu)
    dispersion = float(math.sqrt(n / (n - 1) * np.sum(w * (nu - mean) ** 2) / np.sum(w)))
    deviation = (nu - mean) / sigma
    reference_deviation = (nu - reference) / sigma
    return UniversalityReport(
        labels=labels,
        nu=nu,
        sigma=sigma,
        mean=mean,
        error=max(internal, dispersion),
        internal_error=internal,
        dispersion=dispersion,
        deviation=deviation,
        flagged=[lab for lab, d in zip(labels, deviation) if abs(d) > threshold],
        reference=reference,
        reference_deviation=reference_deviation,
        reference_flagged=[lab for lab, d in zip(labels, reference_deviation) if abs(d) > threshold],
    )
