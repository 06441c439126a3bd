"""Non-personalised popularity ranking from recent sales."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .catalog import MINUTES_PER_DAY, Catalog, PurchaseSequence

DEFAULT_WINDOW_DAYS = 7


@dataclass
class PopularityTable:
    scores: dict[str, float]
    window: tuple[int, int]
    eval_start: int
    entering: frozenset[str] = field(default_factory=frozenset)


def popularity_scores(sales: Iterable[PurchaseSequence], catalog: Catalog, window_start: int,
                      window_end: int, eval_start: int, eval_end: int | None = None) -> PopularityTable:
    """Sales counts in ``[window_start, window_end)`` for articles still on offer.

    Articles available at some moment of the evaluation period (from
    ``eval_start``, up to ``eval_end`` if given) are scored. Those that were
    also on offer during the counting window get their sales count, zero
    included. Those that enter inventory only afterwards get the mean of the
    counted scores. Everything else is left out.
    """
    if not window_start < window_end <= eval_start:
        raise ValueError("need window_start < window_end <= eval_start")
    if eval_end is None:
        live = catalog.available_since_mask(eval_start)
    else:
        live = catalog.overlap_mask(eval_start, eval_end)
    seen = catalog.overlap_mask(window_start, eval_start)
    counts = np.zeros(len(catalog))
    for seq in sales:
        for ev in seq.events:
            if window_start <= ev.t < window_end and ev.article in catalog:
                counts[catalog.index[ev.article]] += 1
    counted = live & seen
    entering = live & ~seen
    # entering articles cannot have window sales, their availability says so
    mean = float(counts[counted].mean()) if counted.any() else 0.0
    scores = {catalog.ids[i]: float(counts[i]) for i in np.flatnonzero(counted)}
    scores.update({catalog.ids[i]: mean for i in np.flatnonzero(entering)})
    return PopularityTable(
        scores,
        (window_start, window_end),
        eval_start,
        frozenset(catalog.ids[i] for i in np.flatnonzero(entering)),
    )


def default_window(eval_start: int, days: int = DEFAULT_WINDOW_DAYS) -> tuple[int, int]:
    return eval_start - days * MINUTES_PER_DAY, eval_start


def baseline_rank(table: PopularityTable) -> list[str]:
    return sorted(table.scores, key=lambda a: (-table.scores[a], a))
