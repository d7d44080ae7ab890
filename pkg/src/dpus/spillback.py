"""Spill-back detection on the connecting links between intersections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sim import SimState


@dataclass(frozen=True)
class SpillbackStatus:
    per_link: dict
    any: bool
    threshold_cells: int

    def __post_init__(self):
        if bool(self.any) != any(self.per_link.values()):
            raise ValueError("'any' must be the logical OR of the per-link flags")


@dataclass(frozen=True)
class SpilloverRate:
    decision_steps_total: int
    decision_steps_with_spillback: int

    @property
    def rate(self) -> float:
        if self.decision_steps_total == 0:
            return 0.0
        return self.decision_steps_with_spillback / self.decision_steps_total


def _check_link(state: SimState, link_id: int, threshold_cells: int):
    if link_id not in state.layout.connecting:
        raise KeyError(f"lane {link_id} is not a connecting link")
    n_cells = state.cells.shape[1]
    if not 1 <= threshold_cells <= n_cells:
        raise ValueError(f"threshold_cells must be in [1, {n_cells}], got {threshold_cells}")


def entry_positions(cells: np.ndarray) -> np.ndarray:
    """1-based position of each occupied cell counted from the lane entry.

    The entry cell has position 1 and the stop-line cell ``n_cells``.
    """
    n_cells = len(cells)
    return n_cells - np.flatnonzero(cells)


def detect(state: SimState, link_id: int, threshold_cells: int) -> int:
    """1 if a vehicle on the link sits within ``threshold_cells`` of its entry.

    Computed as the max over per-vehicle indicators ``[p <= threshold]``
    with ``p`` from :func:`entry_positions`.
    """
    _check_link(state, link_id, threshold_cells)
    pos = entry_positions(state.cells[link_id])
    if pos.size == 0:
        return 0
    return int(np.max(pos <= threshold_cells))


def status(state: SimState, threshold_cells: int) -> SpillbackStatus:
    lay = state.layout
    per_link = {}
    for link in lay.connecting:
        _check_link(state, int(link), threshold_cells)
        per_link[int(link)] = int(state.cells[link, -threshold_cells:].any())
    return SpillbackStatus(per_link, any(per_link.values()), threshold_cells)


def episode_rate(history: Sequence) -> SpilloverRate:
    """Fraction of decision steps whose status reports any spill-back.

    ``history`` may hold :class:`SpillbackStatus` objects or plain flags.
    """
    if len(history) == 0:
        raise ValueError("empty spill-back history")
    flags = [bool(h.any) if isinstance(h, SpillbackStatus) else bool(h) for h in history]
    return SpilloverRate(len(flags), sum(flags))
