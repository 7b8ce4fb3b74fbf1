"""The scaling observable Λ(q, t) and its one-parameter finite-time collapse.

Each curve :math:`\\ln\\Lambda(t)` at control value ``q`` is slid along
:math:`z = \\ln\\xi(q) - \\tfrac13\\ln t` until all curves of a branch lie on
one smooth function :math:`F_{branch}(z)`. The shifts :math:`\\ln\\xi` are the
scale factors whose divergence is fitted in :mod:`qpkr.crit`.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares

from qpkr.core import Branch, ConfigurationError, ConvergenceError, DegenerateDataError

logger = logging.getLogger(__name__)

ERROR_FLOOR = 1e-4
SOURCES = ("p2", "pi0")
MAX_STEP = 1.0
MAX_INIT_SHIFT = 3.0
AMBIGUOUS_POLICIES = ("exclude", "nearest")
POLISH_MAX_NFEV = 200


@dataclass(frozen=True, eq=False)
class LambdaSeries:
    """Λ(t) at one control value.

    Parameters
    ----------
    control_value : float
        Path coordinate of the series.
    times : numpy.ndarray
        Kick indices inside the analysis window.
    values : numpy.ndarray
        Λ(t), positive.
    lambda_err : numpy.ndarray
        Standard errors of :math:`\\ln\\Lambda`.
    source : {'p2', 'pi0'}
        Estimator that produced the series.
    control : ControlPoint or None, optional
        The full control point, when known.
    """
    control_value: float
    times: np.ndarray
    values: np.ndarray
    lambda_err: np.ndarray
    source: str = "p2"
    control: object = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if not (np.shape(self.times) == np.shape(self.values) == np.shape(self.lambda_err)):
            raise ValueError("times, values and lambda_err must have the same shape")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.values <= 0) or np.any(self.lambda_err < 0):
            raise ValueError("Λ must be positive and its errors non-negative")

    @property
    def ln_lambda(self):
        return np.log(self.values)

    @property
    def ln_t(self):
        return np.log(self.times)

    def perturbed(self, rng):
        """A copy with every ln Λ shifted by a normal draw of its standard error."""
        noise = rng.standard_normal(len(self.values)) * self.lambda_err
        return LambdaSeries(self.control_value, self.times, self.values * np.exp(noise), self.lambda_err,
                            self.source, self.control)

    def __repr__(self):
        return f"LambdaSeries(q={self.control_value:g}, {len(self.times)} times, source={self.source})"


def lambda_series(obs, window, source="p2", error_floor=ERROR_FLOOR):
    """Compute Λ(t) over an analysis window.

    Parameters
    ----------
    obs : ObservableSeries
    window : tuple of int
        ``(t_min, t_max)`` in kicks, inclusive.
    source : {'p2', 'pi0'}, optional
        ``'p2'`` gives :math:`\\langle\\tilde p^2\\rangle t^{-2/3}`,
        ``'pi0'`` gives :math:`\\Pi_0^{-2} t^{-2/3}`.
    error_floor : float, optional
        Lower bound on the ln Λ errors. Default ``1e-4``.

    Returns
    -------
    LambdaSeries

    Raises
    ------
    ConfigurationError
        If the window is empty or reaches beyond the recorded times.
    DegenerateDataError
        If Π₀ (or ⟨p̃²⟩) vanishes at a time inside the window.

    Examples
    --------
    >>> import numpy as np
    >>> from qpkr.core import ControlPoint
    >>> from qpkr.engine import ObservableSeries
    >>> from qpkr.scaling import lambda_series
    >>> t = np.arange(1, 101)
    >>> obs = ObservableSeries(ControlPoint(4, 0.1, 4), t, 2.0 * t ** (2 / 3), 0 * t + 0.01,
    ...                        0 * t + 0.5, 0 * t + 0.01, 100)
    >>> np.allclose(lambda_series(obs, (10, 100)).values, 2.0)
    True
    """
    if source not in SOURCES:
        raise ConfigurationError(f"source must be one of {SOURCES}, got {source!r}")
    t_min, t_max = window
    times = np.asarray(obs.times)
    if t_min < times[0] or t_max > times[-1]:
        raise ConfigurationError(
            f"window {t_min}-{t_max} is not covered by the recorded times {times[0]}-{times[-1]}")
    mask = (times >= t_min) & (times <= t_max)
    if not mask.any():
        raise ConfigurationError(f"no recorded time inside window {t_min}-{t_max}")
    t = times[mask]

    if source == "p2":
        p2 = np.asarray(obs.p2)[mask]
        if np.any(p2 <= 0):
            raise DegenerateDataError(f"<p^2> vanishes inside the window at {obs.control}")
        values = p2 * t ** (-2.0 / 3.0)
        err = np.asarray(obs.p2_err)[mask] / p2
    else:
        pi0 = np.asarray(obs.pi0)[mask]
        if np.any(pi0 <= 0):
            raise DegenerateDataError(f"Pi0 vanishes inside the window at {obs.control}")
        values = pi0 ** -2.0 * t ** (-2.0 / 3.0)
        err = 2.0 * np.asarray(obs.pi0_err)[mask] / pi0

    return LambdaSeries(obs.control.value, t, values, np.maximum(err, error_floor), source, obs.control)


@dataclass(frozen=True)
class BranchFit:
    """Branch label of a series with the fitted slope of ln Λ against ln t."""
    branch: Branch
    slope: float
    slope_err: float


def branch_from_slope(slope, slope_err):
    """Label a slope: negative is localized, positive diffusive, within 2σ of zero ambiguous."""
    if abs(slope) < 2.0 * slope_err:
        return Branch.CRITICAL_AMBIGUOUS
    return Branch.LOCALIZED if slope < 0 else Branch.DIFFUSIVE


def lambda_slope(ls, t_min=None, t_max=None):
    """Weighted straight-line fit of ln Λ against ln t.

    Returns ``(slope, slope_err)``. The formal error is inflated by
    :math:`\\sqrt{\\chi^2/\\mathrm{dof}}` when the line fits worse than the errors allow.
    """
    mask = np.ones(len(ls.times), dtype=bool)
    if t_min is not None:
        mask &= ls.times >= t_min
    if t_max is not None:
        mask &= ls.times <= t_max
    if mask.sum() < 3:
        raise ConfigurationError("a slope needs at least 3 time points")
    x = ls.ln_t[mask]
    y = ls.ln_lambda[mask]
    sigma = np.maximum(ls.lambda_err[mask], ERROR_FLOOR)
    coef, cov = np.polyfit(x, y, 1, w=1.0 / sigma, cov="unscaled")
    chi2 = float(np.sum(((y - np.polyval(coef, x)) / sigma) ** 2))
    inflation = max(1.0, chi2 / (len(x) - 2))
    return float(coef[0]), float(math.sqrt(cov[0, 0] * inflation))


def classify_branch(ls):
    """Classify a series by the sign of d ln Λ / d ln t.

    Examples
    --------
    >>> import numpy as np
    >>> from qpkr.scaling import LambdaSeries, classify_branch
    >>> t = np.arange(30, 300)
    >>> ls = LambdaSeries(4.0, t, 5.0 * t ** (-2 / 3), np.full(len(t), 0.01))
    >>> classify_branch(ls).branch
    <Branch.LOCALIZED: 'localized'>
    """
    slope, slope_err = lambda_slope(ls)
    return BranchFit(branch_from_slope(slope, slope_err), slope, slope_err)


def ordered_labels(controls, labels):
    """Demote definite labels that contradict the branch ordering in control value.

    The two branches occupy the two sides of one boundary. Every split of
    the sorted controls, with either branch below it, is scored by the number
    of definite labels on the wrong side; labels on the wrong side of any
    best-scoring split become ``CRITICAL_AMBIGUOUS``.

    Returns
    -------
    labels : list of Branch
        In the order of *controls*.
    demoted : list of int
        Indices of the demoted labels.

    Examples
    --------
    >>> from qpkr.core import Branch
    >>> from qpkr.scaling import ordered_labels
    >>> L, D = Branch.LOCALIZED, Branch.DIFFUSIVE
    >>> ordered_labels([1.0, 2.0, 3.0, 4.0, 5.0], [L, L, D, L, D])[1]
    [2, 3]
    """
    order = np.argsort(controls, kind="stable")
    ranked = [labels[i] for i in order]
    scores = {}
    for lower, upper in ((Branch.LOCALIZED, Branch.DIFFUSIVE), (Branch.DIFFUSIVE, Branch.LOCALIZED)):
        for k in range(len(ranked) + 1):
            wrong = [r for r in range(k) if ranked[r] is upper] + \
                    [r for r in range(k, len(ranked)) if ranked[r] is lower]
            scores[lower, k] = wrong
    fewest = min(len(w) for w in scores.values())
    demoted = sorted({int(order[r]) for w in scores.values() if len(w) == fewest for r in w})
    out = list(labels)
    for i in demoted:
        out[i] = Branch.CRITICAL_AMBIGUOUS
    return out, demoted


def assign_branches(series, fits=None, ambiguous="exclude"):
    """Give every series a branch.

    Labels that contradict the ordering of the branches in control value are
    first demoted to ``CRITICAL_AMBIGUOUS`` (see :func:`ordered_labels`).

    Parameters
    ----------
    series : list of LambdaSeries
    fits : list of BranchFit or None, optional
        Precomputed :func:`classify_branch` results.
    ambiguous : {'exclude', 'nearest'}, optional
        ``'exclude'`` keeps ambiguous series as ``CRITICAL_AMBIGUOUS`` so that
        :func:`collapse` leaves them out; ``'nearest'`` makes them join the
        branch of the nearest unambiguous series in control value (the lower
        one on a tie).

    Returns
    -------
    list of Branch
        In the order of *series*.

    Raises
    ------
    ConfigurationError
        If no series has a definite branch or the policy is unknown.
    """
    if ambiguous not in AMBIGUOUS_POLICIES:
        raise ConfigurationError(f"ambiguous must be one of {AMBIGUOUS_POLICIES}, got {ambiguous!r}")
    fits = fits if fits is not None else [classify_branch(ls) for ls in series]
    controls = np.array([ls.control_value for ls in series])
    labels, demoted = ordered_labels(controls, [f.branch for f in fits])
    for i in demoted:
        logger.warning("series at q = %.6g contradicts the branch ordering (slope %.3g ± %.2g); "
                       "treating it as critical-ambiguous", controls[i], fits[i].slope, fits[i].slope_err)
    definite = [i for i, b in enumerate(labels) if b is not Branch.CRITICAL_AMBIGUOUS]
    if not definite:
        raise ConfigurationError("every series is critical-ambiguous; no branch can be assigned")
    if ambiguous == "exclude":
        return labels
    assigned = []
    for i, label in enumerate(labels):
        if label is Branch.CRITICAL_AMBIGUOUS:
            nearest = min(definite, key=lambda j: (abs(controls[j] - controls[i]), controls[j]))
            label = labels[nearest]
        assigned.append(label)
    return assigned


def default_gauge_ref(series, branches=None):
    """Control value of the localized series farthest from every diffusive one."""
    branches = branches if branches is not None else assign_branches(series)
    controls = np.array([ls.control_value for ls in series])
    loc = [i for i, b in enumerate(branches) if b is Branch.LOCALIZED]
    dif = [i for i, b in enumerate(branches) if b is Branch.DIFFUSIVE]
    if not loc or not dif:
        raise ConfigurationError("the series do not span both branches")
    best = max(loc, key=lambda i: np.min(np.abs(controls[dif] - controls[i])))
    return float(controls[best])


def _spline_basis(knots, z):
    """Natural cubic spline basis at *z* with linear extrapolation; returns values and slopes."""
    spline = CubicSpline(knots, np.eye(len(knots)), bc_type="natural")
    z = np.asarray(z, dtype=float)
    values = spline(z)
    slopes = spline(z, 1)
    for edge, mask in ((knots[0], z < knots[0]), (knots[-1], z > knots[-1])):
        if mask.any():
            edge_slope = spline(edge, 1)
            values[mask] = spline(edge) + np.outer(z[mask] - edge, edge_slope)
            slopes[mask] = edge_slope
    return values, slopes


def _place_knots(z, count):
    knots = np.quantile(z, np.linspace(0.0, 1.0, count))
    if np.any(np.diff(knots) <= 1e-9 * max(1.0, np.ptp(z))):
        knots = np.linspace(z.min(), z.max(), count)
    return knots


@dataclass(frozen=True, eq=False)
class BranchCurve:
    """One branch of the scaling function, a natural cubic spline in z.

    Outside its knots the curve continues linearly.
    """
    branch: Branch
    knots: np.ndarray
    coefficients: np.ndarray

    def __call__(self, z, derivative=False):
        values, slopes = _spline_basis(self.knots, np.atleast_1d(z))
        out = (slopes if derivative else values) @ self.coefficients
        return out if np.ndim(z) else float(out[0])


def _fit_curve(branch, z, y, weight):
    n = len(z)
    count = min(max(4, math.isqrt(n)), n)
    if np.ptp(z) == 0:
        raise ConfigurationError(f"the {branch.value} branch spans a single scaling variable")
    knots = _place_knots(z, count)
    basis, _ = _spline_basis(knots, z)
    coefficients = np.linalg.lstsq(basis * weight[:, None], y * weight, rcond=None)[0]
    return BranchCurve(branch, knots, coefficients)


@dataclass(frozen=True, eq=False)
class ScalingResult:
    """Outcome of a collapse.

    Parameters
    ----------
    xi : dict
        Control value to scale factor ξ, gauge fixed per branch.
    xi_err : dict
        Control value to the standard error of ξ, marginalised over the
        scaling curve after the joint refinement, otherwise from the local χ²
        curvature.
    gauge_ref : float
        Localized control value with ``ln ξ = 0``.
    diffusive_gauge_ref : float
        Diffusive control value with ``ln ξ = 0``.
    branches : dict
        Control value to the :class:`~qpkr.core.Branch` used in the collapse.
    slopes : dict
        Control value to ``(slope, slope_err)`` of ln Λ against ln t.
    z, ln_lambda, ln_lambda_err : numpy.ndarray
        Collapsed samples sorted by ``z``.
    sample_branch : list of Branch
        Branch of each sample.
    sample_control : numpy.ndarray
        Control value of each sample.
    curves : dict
        :class:`Branch` to :class:`BranchCurve`.
    residual_rms : float
        RMS of the ln Λ deviations from the scaling curve.
    chi2_per_dof : float
    n_sweeps : int
    source : str
    ambiguous : list of float
        Control values whose slope is compatible with zero or contradicts the
        branch ordering.
    excluded : list of float
        Control values left out of the collapse.
    """
    xi: dict
    xi_err: dict
    gauge_ref: float
    diffusive_gauge_ref: float
    branches: dict
    slopes: dict
    z: np.ndarray
    ln_lambda: np.ndarray
    ln_lambda_err: np.ndarray
    sample_branch: list
    sample_control: np.ndarray
    curves: dict
    residual_rms: float
    chi2_per_dof: float
    n_sweeps: int
    source: str = "p2"
    ambiguous: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    @property
    def controls(self):
        return sorted(self.xi)

    @property
    def assignment(self):
        """Branch of every input series keyed by control value, excluded ones as ``CRITICAL_AMBIGUOUS``."""
        return {**{q: Branch.CRITICAL_AMBIGUOUS for q in self.excluded}, **self.branches}

    def ln_xi(self):
        """Return ``(controls, ln ξ)`` arrays in increasing control value."""
        q = np.array(self.controls)
        return q, np.log([self.xi[c] for c in q])

    def __repr__(self):
        return (f"ScalingResult({len(self.xi)} series, chi2/dof={self.chi2_per_dof:.4g}, "
                f"rms={self.residual_rms:.3g}, sweeps={self.n_sweeps})")


def _overlap_shift(u_a, y_a, w_a, u_b, y_b, w_b):
    """ln ξ_b - ln ξ_a from straight lines with a common slope through both series."""
    wa, wb = w_a ** 2, w_b ** 2
    ua, ya = np.average(u_a, weights=wa), np.average(y_a, weights=wa)
    ub, yb = np.average(u_b, weights=wb), np.average(y_b, weights=wb)
    sxx = np.sum(wa * (u_a - ua) ** 2) + np.sum(wb * (u_b - ub) ** 2)
    sxy = np.sum(wa * (u_a - ua) * (y_a - ya)) + np.sum(wb * (u_b - ub) * (y_b - yb))
    if sxx <= 0:
        return 0.0
    slope = sxy / sxx
    if abs(slope) < 1e-3:
        return 0.0
    shift = ((yb - slope * ub) - (ya - slope * ua)) / slope
    return float(np.clip(shift, -MAX_INIT_SHIFT, MAX_INIT_SHIFT))


class _Collapse:
    """Flattened sample arrays and the alternating minimizer working on them."""

    def __init__(self, series, branches):
        self.series = series
        self.branches = branches
        self.owner = np.concatenate([np.full(len(ls.times), i) for i, ls in enumerate(series)])
        self.u = np.concatenate([-ls.ln_t / 3.0 for ls in series])
        self.y = np.concatenate([ls.ln_lambda for ls in series])
        self.sigma = np.maximum(np.concatenate([ls.lambda_err for ls in series]), ERROR_FLOOR)
        self.weight = 1.0 / self.sigma
        self.masks = {b: np.isin(self.owner, [i for i, sb in enumerate(branches) if sb is b])
                      for b in (Branch.LOCALIZED, Branch.DIFFUSIVE)}

    def points(self, i):
        m = self.owner == i
        return self.u[m], self.y[m], self.weight[m]

    def fit_curves(self, ln_xi):
        z = ln_xi[self.owner] + self.u
        return {b: _fit_curve(b, z[m], self.y[m], self.weight[m]) for b, m in self.masks.items()}

    def evaluate(self, curves, ln_xi):
        z = ln_xi[self.owner] + self.u
        f = np.empty_like(z)
        df = np.empty_like(z)
        for b, m in self.masks.items():
            values, slopes = _spline_basis(curves[b].knots, z[m])
            f[m] = values @ curves[b].coefficients
            df[m] = slopes @ curves[b].coefficients
        return f, df

    def series_chi2(self, curves, ln_xi):
        f, _ = self.evaluate(curves, ln_xi)
        r = (self.y - f) * self.weight
        return np.bincount(self.owner, r * r, minlength=len(self.series))

    def refit(self, curves, ln_xi, free, iterations=5):
        """Gauss-Newton steps in every free ln ξ at once, with per-series backtracking."""
        n = len(self.series)
        for _ in range(iterations):
            f, df = self.evaluate(curves, ln_xi)
            r = (self.y - f) * self.weight
            g = df * self.weight
            num = np.bincount(self.owner, r * g, minlength=n)
            den = np.bincount(self.owner, g * g, minlength=n)
            step = np.where(den > 1e-300, num / np.where(den > 1e-300, den, 1.0), 0.0)
            step = np.where(free, np.clip(step, -MAX_STEP, MAX_STEP), 0.0)
            if not np.any(step):
                break
            old = np.bincount(self.owner, r * r, minlength=n)
            scale = np.ones(n)
            for _ in range(20):
                trial = ln_xi + scale * step
                worse = self.series_chi2(curves, trial) > old
                if not worse.any():
                    break
                scale = np.where(worse, 0.5 * scale, scale)
            ln_xi = np.where(worse, ln_xi, trial)
        return ln_xi

    def curvature(self, curves, ln_xi):
        _, df = self.evaluate(curves, ln_xi)
        g = df * self.weight
        return np.bincount(self.owner, g * g, minlength=len(self.series))

    def polish(self, curves, ln_xi, free):
        """Joint least squares over both branch curves and every free ln ξ with the knots held.

        Returns the refined curves and shifts, and the standard errors of the
        free ln ξ marginalised over the curve coefficients. The refinement is
        kept only when it lowers χ².
        """
        blocks = [(b, self.masks[b], curves[b].knots) for b in (Branch.LOCALIZED, Branch.DIFFUSIVE)]
        sizes = [len(knots) for _, _, knots in blocks]
        n_coef = sum(sizes)
        index = np.flatnonzero(free)
        column = n_coef + np.searchsorted(index, self.owner)
        on = free[self.owner]

        def unpack(p):
            x = ln_xi.copy()
            x[index] = p[n_coef:]
            return np.split(p[:n_coef], np.cumsum(sizes)[:-1]), x

        def residuals(p):
            coefs, x = unpack(p)
            z = x[self.owner] + self.u
            f = np.empty_like(z)
            for (_, m, knots), c in zip(blocks, coefs):
                f[m] = _spline_basis(knots, z[m])[0] @ c
            return (self.y - f) * self.weight

        def jacobian(p):
            coefs, x = unpack(p)
            z = x[self.owner] + self.u
            jac = np.zeros((len(z), len(p)))
            df = np.empty_like(z)
            start = 0
            for (_, m, knots), c, size in zip(blocks, coefs, sizes):
                values, slopes = _spline_basis(knots, z[m])
                jac[np.flatnonzero(m), start:start + size] = -values * self.weight[m, None]
                df[m] = slopes @ c
                start += size
            rows = np.flatnonzero(on)
            jac[rows, column[on]] = -df[on] * self.weight[on]
            return jac

        p0 = np.concatenate([curves[b].coefficients for b, _, _ in blocks] + [ln_xi[index]])
        if len(self.y) <= len(p0):
            return curves, ln_xi, None
        cost0 = 0.5 * float(np.sum(residuals(p0) ** 2))
        fit = least_squares(residuals, p0, jac=jacobian, method="lm", max_nfev=POLISH_MAX_NFEV)
        p = fit.x if np.all(np.isfinite(fit.x)) and fit.cost < cost0 else p0
        logger.debug("collapse polish: chi2 %.10g -> %.10g (%s)", 2 * cost0, 2 * min(fit.cost, cost0), fit.message)
        coefs, ln_xi = unpack(p)
        curves = {b: BranchCurve(b, knots, c) for (b, _, knots), c in zip(blocks, coefs)}
        jac = jacobian(p)
        covariance = np.linalg.pinv(jac.T @ jac)
        err = np.sqrt(np.maximum(np.diag(covariance)[n_coef:], 0.0))
        return curves, ln_xi, err


def collapse(all_series, gauge_ref=None, branches=None, diffusive_gauge_ref=None, max_sweeps=200, tol=1e-6,
             init_jitter=0.0, seed=None, ambiguous="exclude", polish=True):
    """Collapse Λ curves onto a two-branch scaling function.

    Alternates between fitting each branch of F as a natural cubic spline
    with the shifts frozen, and refitting every :math:`\\ln\\xi` with F
    frozen, until the relative change of χ² drops below *tol*. The converged
    state is then refined by a joint least-squares fit of the curve
    coefficients and the shifts with the knots held fixed.

    Series labelled ``CRITICAL_AMBIGUOUS`` are left out: their Λ is nearly
    flat in time, so their shift is not constrained by the data.

    Parameters
    ----------
    all_series : list of LambdaSeries
        At least 4 series with distinct control values spanning both branches.
    gauge_ref : float or None, optional
        Localized control value fixed at ``ln ξ = 0``; by default the
        localized series farthest from the diffusive ones.
    branches : sequence or dict of Branch, or None, optional
        Branch of every series, in input order or keyed by control value; by
        default from :func:`assign_branches` with the *ambiguous* policy.
    diffusive_gauge_ref : float or None, optional
        Diffusive control value fixed at ``ln ξ = 0``; by default the one
        farthest from *gauge_ref*.
    max_sweeps : int, optional
        Default ``200``.
    tol : float, optional
        Relative χ² change ending the iteration. Default ``1e-6``.
    init_jitter : float, optional
        Standard deviation of a random perturbation of the initial ln ξ.
    seed : int or None, optional
        Seed of that perturbation.
    ambiguous : {'exclude', 'nearest'}, optional
        Treatment of series whose slope is compatible with zero. Default
        ``'exclude'``.
    polish : bool, optional
        Run the joint refinement. Default ``True``. With it the ξ errors are
        marginalised over the curve coefficients; without it they come from
        the local χ² curvature in each ln ξ alone.

    Returns
    -------
    ScalingResult

    Raises
    ------
    ConfigurationError
        Too few series, duplicate control values, single-branch input or a
        gauge reference that is missing or not localized.
    ConvergenceError
        If *max_sweeps* pass without convergence; ``last_iterate`` holds the
        final :class:`ScalingResult`.
    """
    series = sorted(all_series, key=lambda ls: ls.control_value)
    controls = np.array([ls.control_value for ls in series], dtype=float)
    if len(series) < 4:
        raise ConfigurationError(f"a collapse needs at least 4 control values, got {len(series)}")
    if np.any(np.diff(controls) == 0):
        raise ConfigurationError("control values must be distinct")
    if len({ls.source for ls in series}) > 1:
        raise ConfigurationError("all series must come from the same estimator")

    fits = [classify_branch(ls) for ls in series]
    flagged = [float(controls[i]) for i, b in enumerate(ordered_labels(controls, [f.branch for f in fits])[0])
               if b is Branch.CRITICAL_AMBIGUOUS]
    if branches is None:
        branches = assign_branches(series, fits, ambiguous)
    elif isinstance(branches, dict):
        try:
            branches = [Branch(branches[ls.control_value]) for ls in series]
        except KeyError as exc:
            raise ConfigurationError(f"no branch given for control value {exc.args[0]}") from None
    else:
        order = np.argsort([ls.control_value for ls in all_series], kind="stable")
        branches = [Branch(branches[i]) for i in order]

    keep = [i for i, b in enumerate(branches) if b is not Branch.CRITICAL_AMBIGUOUS]
    excluded = [float(controls[i]) for i in range(len(series)) if i not in keep]
    if excluded:
        logger.info("left %d critical-ambiguous series out of the collapse: q = %s",
                    len(excluded), ", ".join(f"{q:.6g}" for q in excluded))
        series = [series[i] for i in keep]
        fits = [fits[i] for i in keep]
        branches = [branches[i] for i in keep]
        controls = controls[keep]
        if len(series) < 4:
            raise ConfigurationError(
                f"a collapse needs at least 4 control values outside the critical-ambiguous region, got {len(series)}")
    if Branch.LOCALIZED not in branches or Branch.DIFFUSIVE not in branches:
        raise ConfigurationError("the series do not span both branches")

    if gauge_ref is None:
        gauge_ref = default_gauge_ref(series, branches)
    gauge = _find(controls, gauge_ref, "gauge_ref")
    if branches[gauge] is not Branch.LOCALIZED:
        raise ConfigurationError(f"gauge_ref {gauge_ref} is not on the localized branch")
    diffusive = [i for i, b in enumerate(branches) if b is Branch.DIFFUSIVE]
    if diffusive_gauge_ref is None:
        dif_gauge = max(diffusive, key=lambda i: abs(controls[i] - controls[gauge]))
    else:
        dif_gauge = _find(controls, diffusive_gauge_ref, "diffusive_gauge_ref")
        if branches[dif_gauge] is not Branch.DIFFUSIVE:
            raise ConfigurationError(f"diffusive_gauge_ref {diffusive_gauge_ref} is not on the diffusive branch")

    problem = _Collapse(series, branches)
    free = np.ones(len(series), dtype=bool)
    free[[gauge, dif_gauge]] = False
    ln_xi = _initial_ln_xi(problem, branches, (gauge, dif_gauge))
    if init_jitter > 0:
        rng = np.random.default_rng(seed)
        ln_xi = np.where(free, ln_xi + init_jitter * rng.standard_normal(len(series)), ln_xi)

    n_points = len(problem.y)
    previous = np.inf
    converged = False
    for sweep in range(1, max_sweeps + 1):
        curves = problem.fit_curves(ln_xi)
        ln_xi = problem.refit(curves, ln_xi, free)
        chi2 = float(problem.series_chi2(curves, ln_xi).sum())
        logger.debug("collapse sweep %d: chi2 = %.10g", sweep, chi2)
        if chi2 <= 1e-12 * n_points or (np.isfinite(previous) and abs(previous - chi2) <= tol * previous):
            converged = True
            break
        previous = chi2

    curves = problem.fit_curves(ln_xi)
    summary = _Summary(fits, controls, gauge, dif_gauge, sweep, flagged, excluded)
    if not converged:
        raise ConvergenceError(f"collapse did not converge in {max_sweeps} sweeps",
                               last_iterate=_result(problem, curves, ln_xi, summary))
    marginal = None
    if polish:
        curves, ln_xi, marginal = problem.polish(curves, ln_xi, free)
    result = _result(problem, curves, ln_xi, summary, free, marginal)
    logger.info("collapse of %d series converged in %d sweeps: chi2/dof = %.4g, rms = %.3g",
                len(series), sweep, result.chi2_per_dof, result.residual_rms)
    return result


def _find(controls, value, name):
    hits = np.flatnonzero(np.isclose(controls, value, rtol=1e-12, atol=1e-12))
    if len(hits) == 0:
        raise ConfigurationError(f"{name} {value} is not one of the control values")
    return int(hits[0])


def _initial_ln_xi(problem, branches, gauges):
    """Chain pairwise overlap shifts outwards from each branch's gauge series."""
    ln_xi = np.zeros(len(branches))
    for gauge in gauges:
        members = [i for i, b in enumerate(branches) if b is branches[gauge]]
        pos = members.index(gauge)
        for path in (members[pos:], members[pos::-1]):
            for a, b in zip(path, path[1:]):
                ln_xi[b] = ln_xi[a] + _overlap_shift(*problem.points(a), *problem.points(b))
    return ln_xi


@dataclass(frozen=True, eq=False)
class _Summary:
    fits: list
    controls: np.ndarray
    gauge: int
    dif_gauge: int
    sweeps: int
    ambiguous: list
    excluded: list


def _result(problem, curves, ln_xi, summary, free=None, marginal=None):
    f, _ = problem.evaluate(curves, ln_xi)
    resid = problem.y - f
    chi2 = float(np.sum((resid * problem.weight) ** 2))
    n_params = sum(len(c.knots) for c in curves.values()) + len(ln_xi) - 2
    dof = len(problem.y) - n_params
    if dof <= 0:
        raise ConfigurationError(f"{len(problem.y)} points cannot constrain {n_params} collapse parameters")
    ln_xi_err = 1.0 / np.sqrt(np.maximum(problem.curvature(curves, ln_xi), 1e-300))
    if marginal is not None:
        ln_xi_err[free] = np.maximum(marginal, ln_xi_err[free])

    z = ln_xi[problem.owner] + problem.u
    order = np.argsort(z, kind="stable")
    xi = np.exp(ln_xi)
    xi[summary.gauge] = 1.0
    xi[summary.dif_gauge] = 1.0
    keys = [float(c) for c in summary.controls]
    return ScalingResult(
        xi=dict(zip(keys, xi.tolist())),
        xi_err=dict(zip(keys, (xi * ln_xi_err).tolist())),
        gauge_ref=keys[summary.gauge],
        diffusive_gauge_ref=keys[summary.dif_gauge],
        branches=dict(zip(keys, problem.branches)),
        slopes={k: (fit.slope, fit.slope_err) for k, fit in zip(keys, summary.fits)},
        z=z[order],
        ln_lambda=problem.y[order],
        ln_lambda_err=problem.sigma[order],
        sample_branch=[problem.branches[i] for i in problem.owner[order]],
        sample_control=summary.controls[problem.owner[order]],
        curves=curves,
        residual_rms=float(np.sqrt(np.mean(resid ** 2))),
        chi2_per_dof=chi2 / dof,
        n_sweeps=summary.sweeps,
        source=problem.series[0].source,
        ambiguous=summary.ambiguous,
        excluded=summary.excluded,
    )
