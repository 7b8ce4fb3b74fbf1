"""
qpkr
====

A numerical laboratory for the Anderson metal-insulator transition of the
quasi-periodic kicked rotor.

qpkr evolves the kicked rotor exactly with a split-step spectral propagator,
averages the momentum spread over quasimomenta and modulation phases, collapses
the rescaled spread :math:`\\Lambda(t) = \\langle \\tilde p^2 \\rangle t^{-2/3}`
onto a one-parameter scaling function and fits the divergence of the scale
factor to obtain the critical point and the critical exponent ν.

Examples
--------
>>> from qpkr import get_preset, run_ensemble
>>> ps = get_preset("A").replace(n_kicks=20)
>>> obs = run_ensemble(ps, (6.0, 0.45), n_realizations=8, grid_m=128)
>>> obs.p2.shape
(20,)
"""

__version__ = "0.1.0"

from .core import Branch as Branch, ControlPoint as ControlPoint
from .model import ParameterSet as ParameterSet, get_preset as get_preset
from .engine import run_ensemble as run_ensemble
from .scaling import collapse as collapse, lambda_series as lambda_series
from .crit import fit_critical as fit_critical, universality_report as universality_report
