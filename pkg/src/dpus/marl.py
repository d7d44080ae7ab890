"""Multi-agent view of the corridor: observations, actions, rewards."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import sim
from .sim import Action, CorridorConfig, SimState
from .spillback import SpillbackStatus, status as spillback_status

N_ACTIONS = len(Action)


@dataclass(frozen=True)
class AgentObservation:
    occupancy: np.ndarray
    agent_id: int


@dataclass(frozen=True)
class JointAction:
    per_agent: tuple

    def __post_init__(self):
        object.__setattr__(self, "per_agent", tuple(Action(a) for a in self.per_agent))

    def __len__(self):
        return len(self.per_agent)

    def as_array(self) -> np.ndarray:
        return np.array([int(a) for a in self.per_agent], dtype=np.int64)


@dataclass(frozen=True)
class RewardVector:
    per_agent: np.ndarray

    @property
    def team(self) -> float:
        return float(np.sum(self.per_agent))


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray  # per-agent rewards
    next_obs: np.ndarray
    terminal: bool = False
    spillback: bool = False
    priority: float = 1.0

    def __post_init__(self):
        if self.priority < 0:
            raise ValueError("priority must be non-negative")
        if np.shape(self.obs) != np.shape(self.next_obs):
            raise ValueError("obs and next_obs must have identical shapes")

    @property
    def team_reward(self) -> float:
        return float(np.sum(self.reward))


def compute_reward(state_before: SimState, state_after: SimState) -> RewardVector:
    """Negative waiting count per agent, averaged over the elapsed sim steps."""
    if state_before.n_intersections != state_after.n_intersections:
        raise ValueError("states come from different corridor configurations")
    steps = state_after.steps - state_before.steps
    if steps <= 0:
        raise ValueError("state_after must be later than state_before")
    waited = state_after.waiting_total - state_before.waiting_total
    return RewardVector(-waited / steps)


def agent_boundaries(config: CorridorConfig) -> list[int]:
    size = config.observation_size
    return [i * size for i in range(config.n_intersections + 1)]


def joint_observe(state: SimState, config: CorridorConfig = None) -> np.ndarray:
    """Per-agent observations concatenated in agent order.

    Block boundaries are given by :func:`agent_boundaries`.
    """
    return np.concatenate([
        sim.encode_observation(state, i, config) for i in range(state.n_intersections)
    ])


class CorridorEnv:
    """Steps the simulator one decision interval at a time."""

    def __init__(self, config: CorridorConfig):
        self.config = config
        self.n_agents = config.n_intersections
        self.obs_size = config.observation_size
        self.boundaries = agent_boundaries(config)
        self.state = None

    def reset(self, rng) -> np.ndarray:
        self.state = sim.initial_state(self.config, rng)
        return self.observe()

    def observe(self) -> np.ndarray:
        return joint_observe(self.state, self.config)

    def split(self, joint_obs: np.ndarray) -> list[np.ndarray]:
        b = self.boundaries
        return [joint_obs[..., b[i]:b[i + 1]] for i in range(self.n_agents)]

    def spillback(self) -> SpillbackStatus:
        return spillback_status(self.state, self.config.spillback_threshold)

    def spillback_flag(self) -> bool:
        # fast path of spillback().any
        lay = self.state.layout
        th = self.config.spillback_threshold
        return bool(self.state.cells[lay.connecting, -th:].any())

    def step(self, actions: Sequence[int]) -> tuple[np.ndarray, RewardVector]:
        if len(actions) != self.n_agents:
            raise ValueError(f"expected {self.n_agents} actions, got {len(actions)}")
        state = self.state
        for i, a in enumerate(actions):
            sim.set_green_target(state, i, int(a), self.config)
        steps0 = state.steps
        waited0 = state.waiting_total.copy()
        for _ in range(self.config.steps_per_decision):
            sim.advance(state, self.config)
        reward = RewardVector(-(state.waiting_total - waited0) / (state.steps - steps0))
        return self.observe(), reward
