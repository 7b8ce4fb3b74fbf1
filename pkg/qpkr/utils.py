import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from tqdm import tqdm

logger = logging.getLogger(__name__)


def stream_rng(seed, index):
    """Return the random generator owned by stream *index* of run *seed*.

    Every realization, replica or trajectory chunk draws from its own stream,
    so results do not depend on the order in which streams are evaluated.

    Parameters
    ----------
    seed : int
        Non-negative run seed.
    index : int
        Non-negative stream index.

    Returns
    -------
    numpy.random.Generator

    Examples
    --------
    >>> from qpkr.utils import stream_rng
    >>> a = stream_rng(42, 3).uniform()
    >>> b = stream_rng(42, 3).uniform()
    >>> a == b
    True
    """
    if seed < 0 or index < 0:
        raise ValueError("seed and stream index must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def chunk_bounds(count, size):
    """Split ``range(count)`` into consecutive ``(start, stop)`` chunks of *size*."""
    if size < 1:
        raise ValueError("chunk size must be >= 1")
    return [(start, min(start + size, count)) for start in range(0, count, size)]


def resolve_workers(workers):
    """Turn ``None`` or a non-positive count into the number of available cores."""
    if workers is None or workers < 1:
        return os.cpu_count() or 1
    return int(workers)


def ordered_map(func, items, workers=1, progress=None):
    """Apply *func* to every item, possibly in worker processes.

    Results are returned in the order of *items* whatever the number of
    workers, which keeps every reduction downstream deterministic.

    Parameters
    ----------
    func : callable
        A picklable callable taking one item.
    items : sequence
        The work items.
    workers : int or None, optional
        Number of worker processes. ``1`` (default) runs in-process; ``None``
        uses every core.
    progress : str or None, optional
        When given, a tqdm progress bar with this description is shown.

    Returns
    -------
    list
        ``[func(item) for item in items]``.
    """
    items = list(items)
    workers = min(resolve_workers(workers), max(len(items), 1))
    bar = tqdm(total=len(items), desc=progress, leave=False) if progress else None
    try:
        if workers == 1:
            results = []
            for item in items:
                results.append(func(item))
                if bar is not None:
                    bar.update()
            return results
        logger.debug("dispatching %d items to %d worker processes", len(items), workers)
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = []
            for result in executor.map(func, items):
                results.append(result)
                if bar is not None:
                    bar.update()
            return results
    finally:
        if bar is not None:
            bar.close()
