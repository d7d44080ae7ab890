"""Cell-based simulator of a linear corridor of signalized intersections.

Intersections are indexed west to east.  Every lane is an incoming lane of
exactly one intersection and is stored as a row of ``n_cells`` cells where
cell 0 is the stop line and cell ``n_cells - 1`` is the lane entry.  A cell
holds either 0 (empty) or a positive vehicle id.

Vehicles advance one cell per step.  Queues discharge as platoons: a
vehicle moves if the cell ahead is empty or becomes empty this step.  A
vehicle at the stop line crosses only on green and only if the entry cell
of its downstream lane is empty at the start of the step, which is what
makes queues spill back across intersections.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np


class Movement(enum.IntEnum):
    THROUGH_EW = 0  # westbound, travels towards lower intersection ids
    THROUGH_WE = 1  # eastbound
    CROSS_NS = 2
    CROSS_SN = 3


class Phase(enum.IntEnum):
    NS_GREEN = 0
    EW_GREEN = 1
    YELLOW_TO_NS = 2
    YELLOW_TO_EW = 3


class Action(enum.IntEnum):
    DECREASE = 0
    HOLD = 1
    INCREASE = 2


EXIT = -1

# GREEN[phase, movement]
GREEN = np.zeros((4, 4), dtype=bool)
GREEN[Phase.NS_GREEN, [Movement.CROSS_NS, Movement.CROSS_SN]] = True
GREEN[Phase.EW_GREEN, [Movement.THROUGH_EW, Movement.THROUGH_WE]] = True

ACTION_DELTA = {Action.DECREASE: -5.0, Action.HOLD: 0.0, Action.INCREASE: 5.0}


def _is_multiple(value: float, unit: float) -> bool:
    ratio = value / unit
    return abs(ratio - round(ratio)) < 1e-9


@dataclass(frozen=True)
class CorridorConfig:
    """Static description of the corridor and its demand.

    ``mainline_arrival_rate`` overrides ``arrival_rate`` for the two
    corridor-end entry lanes (through traffic).  Setting it to 0 keeps the
    connecting links empty, which gives a corridor with no spill-back at all.
    """

    n_intersections: int = 2
    link_length: float = 300.0
    cell_length: float = 7.5
    lanes_per_approach: int = 1
    arrival_rate: float = 0.1
    mainline_arrival_rate: float | None = None
    demand_multiplier: float = 1.0
    yellow_duration: float = 3.0
    min_green: float = 5.0
    max_green: float = 60.0
    initial_green: float = 20.0
    decision_interval: float = 5.0
    sim_step: float = 1.0
    spillback_threshold: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_intersections < 1:
            raise ValueError("n_intersections must be >= 1")
        if self.lanes_per_approach != 1:
            raise ValueError("only lanes_per_approach = 1 is supported")
        if self.cell_length <= 0 or self.link_length <= 0:
            raise ValueError("link_length and cell_length must be positive")
        if not _is_multiple(self.link_length, self.cell_length):
            raise ValueError(
                "link_length / cell_length must be a positive integer "
                f"(got {self.link_length} / {self.cell_length})"
            )
        if self.arrival_rate < 0 or self.demand_multiplier < 0:
            raise ValueError("arrival_rate and demand_multiplier must be >= 0")
        if self.mainline_arrival_rate is not None and self.mainline_arrival_rate < 0:
            raise ValueError("mainline_arrival_rate must be >= 0")
        if self.sim_step <= 0:
            raise ValueError("sim_step must be positive")
        if self.min_green > self.max_green:
            raise ValueError(
                f"min_green ({self.min_green}) must be <= max_green ({self.max_green})"
            )
        if self.decision_interval < self.sim_step:
            raise ValueError("decision_interval must be >= sim_step")
        for name in ("yellow_duration", "min_green", "max_green",
                     "initial_green", "decision_interval"):
            value = getattr(self, name)
            if value <= 0 or not _is_multiple(value, self.sim_step):
                raise ValueError(f"{name} must be a positive multiple of sim_step")
        if not self.min_green <= self.initial_green <= self.max_green:
            raise ValueError("initial_green must lie in [min_green, max_green]")
        if not 1 <= self.spillback_threshold <= self.n_cells:
            raise ValueError(
                f"spillback_threshold must be in [1, {self.n_cells}]"
            )

    @property
    def n_cells(self) -> int:
        return int(round(self.link_length / self.cell_length))

    @property
    def steps_per_decision(self) -> int:
        return int(round(self.decision_interval / self.sim_step))

    @property
    def n_lanes(self) -> int:
        return 4 * self.n_intersections

    @property
    def observation_size(self) -> int:
        """Length of one intersection's observation vector."""
        return 4 * self.n_cells + len(Phase)

    def arrival_probability(self, mainline: bool) -> float:
        rate = self.arrival_rate
        if mainline and self.mainline_arrival_rate is not None:
            rate = self.mainline_arrival_rate
        return min(1.0, rate * self.demand_multiplier * self.sim_step)


@dataclass(frozen=True)
class Lane:
    cells: np.ndarray
    movement: Movement
    intersection: int
    downstream: int  # downstream lane index, or EXIT


@dataclass(frozen=True)
class Intersection:
    id: int
    phase: Phase
    phase_elapsed: float
    green_target: float
    incoming: tuple[int, ...]
    outgoing: tuple[int, ...]


class Layout:
    """Lane topology of a corridor; lane index = 4 * intersection + movement."""

    def __init__(self, n_intersections: int):
        n = n_intersections
        self.n_intersections = n
        self.n_lanes = 4 * n
        self.intersection = np.repeat(np.arange(n), 4)
        self.movement = np.tile(np.arange(4), n)
        self.downstream = np.full(self.n_lanes, EXIT, dtype=np.int64)
        for i in range(n):
            if i > 0:
                self.downstream[self.lane(i, Movement.THROUGH_EW)] = self.lane(
                    i - 1, Movement.THROUGH_EW)
            if i < n - 1:
                self.downstream[self.lane(i, Movement.THROUGH_WE)] = self.lane(
                    i + 1, Movement.THROUGH_WE)
        fed = set(int(d) for d in self.downstream if d != EXIT)
        self.entry = np.array([k not in fed for k in range(self.n_lanes)])
        self.connecting = np.array(sorted(fed), dtype=np.int64)
        self.mainline_entry = np.zeros(self.n_lanes, dtype=bool)
        self.mainline_entry[self.lane(0, Movement.THROUGH_WE)] = True
        self.mainline_entry[self.lane(n - 1, Movement.THROUGH_EW)] = True
        self.entry_lanes = np.flatnonzero(self.entry)
        self.has_downstream = self.downstream != EXIT

    @staticmethod
    def lane(intersection: int, movement: int) -> int:
        return 4 * intersection + int(movement)

    def incoming(self, intersection: int) -> tuple[int, ...]:
        return tuple(self.lane(intersection, m) for m in Movement)

    def outgoing(self, intersection: int) -> tuple[int, ...]:
        return tuple(
            int(d) for k, d in enumerate(self.downstream)
            if d != EXIT and self.intersection[k] == intersection
        )


_LAYOUTS: dict[int, Layout] = {}


def get_layout(n_intersections: int) -> Layout:
    if n_intersections not in _LAYOUTS:
        _LAYOUTS[n_intersections] = Layout(n_intersections)
    return _LAYOUTS[n_intersections]


@dataclass
class SimState:
    """Full simulator state.

    ``waiting`` marks vehicles that did not move during the last step.
    ``waiting_total`` accumulates per-intersection waiting counts over all
    steps so far, which lets rewards be computed from two snapshots.
    """

    cells: np.ndarray
    waiting: np.ndarray
    phase: np.ndarray
    phase_elapsed: np.ndarray
    green_target: np.ndarray
    clock: float
    rng: np.random.Generator
    steps: int = 0
    next_id: int = 1
    injected: int = 0
    exited: int = 0
    dropped: int = 0
    waiting_total: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.waiting_total is None:
            self.waiting_total = np.zeros(len(self.phase), dtype=np.int64)

    @property
    def n_intersections(self) -> int:
        return len(self.phase)

    @property
    def layout(self) -> Layout:
        return get_layout(self.n_intersections)

    @property
    def vehicle_count(self) -> int:
        return int(np.count_nonzero(self.cells))

    @property
    def lanes(self) -> list[Lane]:
        lay = self.layout
        return [
            Lane(self.cells[k], Movement(lay.movement[k]),
                 int(lay.intersection[k]), int(lay.downstream[k]))
            for k in range(lay.n_lanes)
        ]

    @property
    def intersections(self) -> list[Intersection]:
        lay = self.layout
        return [
            Intersection(i, Phase(self.phase[i]), float(self.phase_elapsed[i]),
                         float(self.green_target[i]), lay.incoming(i),
                         lay.outgoing(i))
            for i in range(self.n_intersections)
        ]

    def copy(self) -> "SimState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return replace(
            self,
            cells=self.cells.copy(),
            waiting=self.waiting.copy(),
            phase=self.phase.copy(),
            phase_elapsed=self.phase_elapsed.copy(),
            green_target=self.green_target.copy(),
            waiting_total=self.waiting_total.copy(),
            rng=rng,
        )


def initial_state(config: CorridorConfig, rng=None) -> SimState:
    """Empty corridor.  Even-indexed signals start NS-green and odd-indexed
    ones EW-green, so neighbouring signals run offset by half a cycle."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    n = config.n_intersections
    phase = np.full(n, int(Phase.NS_GREEN), dtype=np.int64)
    phase[1::2] = int(Phase.EW_GREEN)
    return SimState(
        cells=np.zeros((4 * n, config.n_cells), dtype=np.int64),
        waiting=np.zeros((4 * n, config.n_cells), dtype=bool),
        phase=phase,
        phase_elapsed=np.zeros(n),
        green_target=np.full(n, float(config.initial_green)),
        clock=0.0,
        rng=rng,
    )


def advance(state: SimState, config: CorridorConfig) -> SimState:
    """In-place version of :func:`step`; returns ``state``."""
    lay = state.layout
    cells = state.cells
    occ = cells > 0

    green = GREEN[state.phase[lay.intersection], lay.movement]
    # downstream entry checked against start-of-step occupancy
    free = np.ones(lay.n_lanes, dtype=bool)
    free[lay.has_downstream] = ~occ[lay.downstream[lay.has_downstream], -1]
    crossing = occ[:, 0] & green & free

    blocked = np.logical_and.accumulate(occ, axis=1)
    blocked &= ~crossing[:, None]
    moved = occ & ~blocked

    new = np.where(blocked, cells, 0)
    new[:, :-1] += np.where(moved[:, 1:], cells[:, 1:], 0)

    crossers = np.flatnonzero(crossing)
    for k in crossers:
        d = lay.downstream[k]
        if d == EXIT:
            state.exited += 1
        else:
            new[d, -1] = cells[k, 0]

    probs = np.where(lay.mainline_entry[lay.entry_lanes],
                     config.arrival_probability(True),
                     config.arrival_probability(False))
    # one draw per entry lane every step keeps the stream aligned
    arrivals = state.rng.random(len(lay.entry_lanes)) < probs
    for k in lay.entry_lanes[arrivals]:
        if new[k, -1]:
            state.dropped += 1
        else:
            new[k, -1] = state.next_id
            state.next_id += 1
            state.injected += 1

    state.cells = new
    state.waiting = blocked
    per_lane = blocked.sum(axis=1)
    state.waiting_total = state.waiting_total + per_lane.reshape(-1, 4).sum(axis=1)

    dt = config.sim_step
    state.phase_elapsed = state.phase_elapsed + dt
    for i in range(state.n_intersections):
        ph = state.phase[i]
        el = state.phase_elapsed[i]
        if ph in (Phase.NS_GREEN, Phase.EW_GREEN):
            if el >= state.green_target[i] - 1e-9:
                state.phase[i] = (Phase.YELLOW_TO_EW if ph == Phase.NS_GREEN
                                  else Phase.YELLOW_TO_NS)
                state.phase_elapsed[i] = 0.0
        elif el >= config.yellow_duration - 1e-9:
            state.phase[i] = (Phase.EW_GREEN if ph == Phase.YELLOW_TO_EW
                              else Phase.NS_GREEN)
            state.phase_elapsed[i] = 0.0

    state.clock += dt
    state.steps += 1
    return state


def step(state: SimState, config: CorridorConfig) -> SimState:
    """Advance the corridor by one ``sim_step`` and return the new state.

    The input state (including its generator) is left untouched.
    """
    return advance(state.copy(), config)


def _check_intersection(state: SimState, intersection_id: int):
    if not 0 <= intersection_id < state.n_intersections:
        raise IndexError(f"unknown intersection id {intersection_id}")


def set_green_target(state: SimState, intersection_id: int, delta, config: CorridorConfig):
    """In-place version of :func:`apply_action`."""
    _check_intersection(state, intersection_id)
    ratio = state.clock / config.decision_interval
    if abs(ratio - round(ratio)) > 1e-9:
        raise RuntimeError(
            f"action applied off a decision boundary (clock={state.clock})"
        )
    target = state.green_target[intersection_id] + ACTION_DELTA[Action(delta)]
    state.green_target[intersection_id] = min(config.max_green,
                                              max(config.min_green, target))
    return state


def apply_action(state: SimState, intersection_id: int, delta, config: CorridorConfig) -> SimState:
    """Adjust an intersection's commanded green duration by -5, 0 or +5 s.

    Raises ``RuntimeError`` when the clock is not on a decision boundary.
    """
    new = state.copy()
    return set_green_target(new, intersection_id, delta, config)


def waiting_count(state: SimState, intersection_id: int) -> np.ndarray:
    """Stationary vehicles on each incoming lane, in movement order."""
    _check_intersection(state, intersection_id)
    rows = slice(4 * intersection_id, 4 * intersection_id + 4)
    return (state.waiting[rows] & (state.cells[rows] > 0)).sum(axis=1)


def encode_observation(state: SimState, intersection_id: int, config: CorridorConfig = None) -> np.ndarray:
    """Binary occupancy of the incoming lanes followed by a phase one-hot."""
    _check_intersection(state, intersection_id)
    rows = state.cells[4 * intersection_id:4 * intersection_id + 4]
    obs = np.zeros(rows.size + len(Phase))
    obs[:rows.size] = (rows > 0).ravel()
    obs[rows.size + state.phase[intersection_id]] = 1.0
    return obs
