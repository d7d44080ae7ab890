"""Proportional prioritized replay without importance weights."""

from __future__ import annotations

import numpy as np

from .marl import Transition


class ReplayBuffer:
    """Ring buffer of transitions with per-entry priorities.

    Entry ``k`` is drawn with probability proportional to
    ``(priority[k] + priority_floor) ** priority_exponent``.
    """

    def __init__(self, capacity: int, obs_size: int, n_agents: int,
                 priority_exponent: float = 0.6, priority_floor: float = 1e-3):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if priority_exponent < 0 or priority_floor < 0:
            raise ValueError("priority exponent and floor must be non-negative")
        self.capacity = int(capacity)
        self.priority_exponent = float(priority_exponent)
        self.priority_floor = float(priority_floor)
        self.obs = np.zeros((capacity, obs_size))
        self.next_obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros((capacity, n_agents))
        self.terminal = np.zeros(capacity, dtype=bool)
        self.spillback = np.zeros(capacity, dtype=bool)
        self.priorities = np.zeros(capacity)
        self.size = 0
        self.next_index = 0

    def __len__(self):
        return self.size

    def add(self, transition: Transition, priority: float | None = None) -> int:
        """Store a transition, evicting the oldest when full.

        Without an explicit priority the entry gets the current maximum
        priority (1.0 for an empty buffer).
        """
        if priority is None:
            priority = self.max_priority()
        if not np.isfinite(priority) or priority < 0:
            raise ValueError(f"invalid priority {priority}")
        k = self.next_index
        self.obs[k] = transition.obs
        self.next_obs[k] = transition.next_obs
        self.actions[k] = transition.action
        self.rewards[k] = transition.reward
        self.terminal[k] = transition.terminal
        self.spillback[k] = transition.spillback
        self.priorities[k] = priority
        self.next_index = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return k

    def max_priority(self) -> float:
        if self.size == 0:
            return 1.0
        return float(self.priorities[:self.size].max())

    def __getitem__(self, k) -> Transition:
        if not 0 <= k < self.size:
            raise IndexError(f"replay index {k} out of range")
        return Transition(self.obs[k].copy(), self.actions[k].copy(),
                          self.rewards[k].copy(), self.next_obs[k].copy(),
                          bool(self.terminal[k]), bool(self.spillback[k]),
                          float(self.priorities[k]))

    def probabilities(self) -> np.ndarray:
        w = (self.priorities[:self.size] + self.priority_floor) ** self.priority_exponent
        return w / w.sum()

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        w = (self.priorities[:self.size] + self.priority_floor) ** self.priority_exponent
        cdf = np.cumsum(w)
        if not cdf[-1] > 0:
            raise ValueError("all sampling weights are zero")
        u = rng.random(batch_size) * cdf[-1]
        idx = np.searchsorted(cdf, u, side="right")
        # u can round up to the total; fall back to the last drawable entry
        return np.minimum(idx, np.flatnonzero(w)[-1])

    def gather(self, idx: np.ndarray):
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.terminal[idx])

    def update_priority(self, index: int, td_error: float):
        if not 0 <= index < self.size:
            raise IndexError(f"replay index {index} out of range")
        self.priorities[index] = abs(float(td_error))

    def update_priorities(self, idx, td_errors):
        for k, d in zip(np.asarray(idx).tolist(), np.asarray(td_errors).tolist()):
            self.update_priority(k, d)


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> list[Transition]:
    """Priority-proportional draws with replacement."""
    return [buffer[k] for k in buffer.sample_indices(batch_size, rng)]


def update_priority(buffer: ReplayBuffer, index: int, td_error: float) -> None:
    buffer.update_priority(index, td_error)
