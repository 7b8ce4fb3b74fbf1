import dataclasses
import datetime
import os
from dataclasses import dataclass
from pathlib import Path

import matplotlib

from qpkr.core import ConfigurationError

_STYLES_DIR = Path(__file__).resolve().parent / "styles"
STYLE_PATH = _STYLES_DIR / "qpkr.mplstyle"

OUTPUT_ROOT_ENV = "QPKR_OUTPUT_ROOT"

WINDOWS = {
    "default": (30, 1000),
    "paper": (30, 150),
    "early": (30, 150),
    "early-short": (30, 120),
}

SOURCES = ("p2", "pi0")


def resolve_window(window):
    """Turn a window name, a ``"TMIN,TMAX"`` string or a pair into ``(t_min, t_max)``.

    Examples
    --------
    >>> from qpkr.configuration import resolve_window
    >>> resolve_window("early")
    (30, 150)
    >>> resolve_window("40,400")
    (40, 400)
    """
    if isinstance(window, str):
        if window in WINDOWS:
            return WINDOWS[window]
        try:
            t_min, t_max = (int(part) for part in window.split(","))
        except ValueError:
            raise ConfigurationError(
                f"window must be one of {', '.join(WINDOWS)} or 'TMIN,TMAX', got {window!r}") from None
    else:
        t_min, t_max = (int(v) for v in window)
    if not 1 <= t_min < t_max:
        raise ConfigurationError(f"window must satisfy 1 <= t_min < t_max, got ({t_min}, {t_max})")
    return (t_min, t_max)


def default_output_root():
    """Directory under which run directories are created (``$QPKR_OUTPUT_ROOT`` or ``runs``)."""
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def timestamp():
    """ISO-8601 UTC timestamp; ``$SOURCE_DATE_EPOCH`` pins it for reproducible outputs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.datetime.fromtimestamp(int(epoch), tz=datetime.timezone.utc)
    else:
        moment = datetime.datetime.now(tz=datetime.timezone.utc)
    return moment.replace(microsecond=0).isoformat()


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a simulation or analysis run.

    Parameters
    ----------
    preset : str or None
        Label of a built-in parameter set.
    points : int
        Control points along the path, endpoints included.
    realizations : int
        Ensemble size per control point.
    n_kicks : int
        Kicks simulated per realization.
    grid_m : int
        Momentum lattice half width.
    seed : int
        Run seed.
    window : tuple of int
        Analysis window ``(t_min, t_max)`` in kicks.
    source : {'p2', 'pi0'}
        Λ estimator.
    bootstrap : int
        Bootstrap replica count.
    workers : int or None
        Worker processes, ``None`` for all cores.
    chunk_size : int
        Realizations per batched transform.
    random_phases : bool
        Draw modulation phases per realization.
    output : str or None
        Run directory.

    Examples
    --------
    >>> from qpkr.configuration import RunConfig
    >>> cfg = RunConfig(preset="A").replace(points=10, seed=None)
    >>> cfg.points, cfg.seed
    (10, 0)
    """
    preset: str = None
    points: int = 20
    realizations: int = 1024
    n_kicks: int = 1000
    grid_m: int = 1024
    seed: int = 0
    window: tuple = WINDOWS["default"]
    source: str = "p2"
    bootstrap: int = 100
    workers: int = None
    chunk_size: int = 16
    random_phases: bool = True
    output: str = None

    def __post_init__(self):
        object.__setattr__(self, "window", resolve_window(self.window))
        if self.points < 2:
            raise ConfigurationError(f"points must be >= 2, got {self.points}")
        if self.realizations < 2:
            raise ConfigurationError(f"realizations must be >= 2, got {self.realizations}")
        if self.n_kicks < 1 or self.grid_m < 1 or self.chunk_size < 1:
            raise ConfigurationError("n_kicks, grid_m and chunk_size must be >= 1")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.bootstrap < 0:
            raise ConfigurationError(f"bootstrap must be >= 0, got {self.bootstrap}")
        if self.source not in SOURCES:
            raise ConfigurationError(f"source must be one of {SOURCES}, got {self.source!r}")

    def replace(self, **overrides):
        """Return a copy with the given fields replaced; ``None`` values are ignored."""
        changes = {key: value for key, value in overrides.items() if value is not None}
        unknown = set(changes) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["window"] = list(self.window)
        return d


def _load_base_style():
    """Read the bundled ``.mplstyle`` file and return it as a dict."""
    rc = matplotlib.rc_params_from_file(str(STYLE_PATH), use_default_template=False)
    return dict(rc)


class FigureParams:
    """Matplotlib parameters for the diagnostic figures.

    Parameters
    ----------
    size : tuple of float, optional
        Figure size in inches. Default ``(6.0, 4.5)``.

    Attributes
    ----------
    rcParams : dict
        Overrides passed to :func:`matplotlib.rc_context`.

    Examples
    --------
    >>> from qpkr.configuration import FigureParams
    >>> FigureParams((4.0, 3.0)).rcParams["figure.figsize"]
    [4.0, 3.0]
    """

    def __init__(self, size=(6.0, 4.5)):
        w, h = size
        self.rcParams = _load_base_style()
        self.rcParams.update({"figure.figsize": [w, h]})
