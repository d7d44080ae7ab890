"""Exact checks of decentralized vs centralized Q-values on small MDPs.

A :class:`FactoredMDP` has one local MDP per agent.  Without coupling the
joint MDP is the product of the local ones and the joint reward is the sum
of local rewards, so the centralized optimal Q-function must equal the sum
of the local optimal Q-functions.  A coupling replaces local transition
rows as a function of the joint state (the spill-back mechanism) while
keeping rewards additive; the additive decomposition then breaks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

# joint state (tuple of local states) -> {agent: (A_i, S_i) replacement rows}
Coupling = Callable[[tuple], Optional[dict]]


@dataclass
class LocalMDP:
    transitions: np.ndarray  # (S, A, S)
    rewards: np.ndarray  # (S, A)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


@dataclass
class FactoredMDP:
    agents: list
    gamma: float
    coupling: Optional[Coupling] = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        for i, m in enumerate(self.agents):
            _check_stochastic(m.transitions, f"agent {i}")
            if m.rewards.shape != m.transitions.shape[:2]:
                raise ValueError(f"agent {i}: reward table shape mismatch")

    @property
    def joint_states(self) -> list[tuple]:
        return list(itertools.product(*(range(m.n_states) for m in self.agents)))

    @property
    def joint_actions(self) -> list[tuple]:
        return list(itertools.product(*(range(m.n_actions) for m in self.agents)))

    def product(self, with_coupling: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Joint transition ``(S, A, S)`` and reward ``(S, A)`` tables.

        States and actions are enumerated in ``itertools.product`` order.
        """
        states, actions = self.joint_states, self.joint_actions
        S, A = len(states), len(actions)
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for si, s in enumerate(states):
            rows = [m.transitions[s[i]] for i, m in enumerate(self.agents)]
            if with_coupling and self.coupling is not None:
                override = self.coupling(s) or {}
                for i, r in override.items():
                    r = np.asarray(r, dtype=float)
                    _check_stochastic(r[None], f"coupling at {s}")
                    rows[i] = r
            for ai, a in enumerate(actions):
                R[si, ai] = sum(m.rewards[s[i], a[i]] for i, m in enumerate(self.agents))
                dist = rows[0][a[0]]
                for i in range(1, len(rows)):
                    dist = np.multiply.outer(dist, rows[i][a[i]])
                P[si, ai] = np.ravel(dist)
        return P, R


def _check_stochastic(P: np.ndarray, what: str):
    if np.any(P < 0) or not np.allclose(P.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
        raise ValueError(f"{what}: transition rows must be non-negative and sum to 1")


@dataclass
class QTable:
    values: np.ndarray  # (S, A)
    sweeps: int
    deltas: list = field(default_factory=list)

    def greedy(self) -> np.ndarray:
        return np.argmax(self.values, axis=1)


def value_iterate(mdp, tolerance: float = 1e-10, max_sweeps: int = 100_000) -> QTable:
    """Synchronous Bellman-optimality sweeps on Q.

    ``mdp`` is a :class:`FactoredMDP` (solved on its joint product,
    including coupling) or a ``(P, R, gamma)`` tuple.
    Stops after the first sweep whose sup-norm change is below
    ``tolerance``.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if isinstance(mdp, FactoredMDP):
        P, R = mdp.product()
        gamma = mdp.gamma
    elif isinstance(mdp, tuple):
        P, R, gamma = mdp
    else:
        raise TypeError("pass a FactoredMDP or a (P, R, gamma) tuple")
    _check_stochastic(P, "mdp")
    Q = np.zeros_like(R, dtype=float)
    deltas = []
    for sweep in range(1, max_sweeps + 1):
        Q_new = R + gamma * P @ Q.max(axis=1)
        delta = float(np.max(np.abs(Q_new - Q)))
        deltas.append(delta)
        Q = Q_new
        if delta < tolerance:
            return QTable(Q, sweep, deltas)
    raise RuntimeError(f"value iteration did not converge in {max_sweeps} sweeps")


def solve_local(mdp: FactoredMDP, agent: int, tolerance: float) -> QTable:
    m = mdp.agents[agent]
    return value_iterate((m.transitions, m.rewards, mdp.gamma), tolerance)


@dataclass
class DecompositionReport:
    max_discrepancy: float
    witness_state: tuple
    witness_action: tuple
    policy_mismatches: list  # joint states where greedy policies differ
    tolerance: float
    centralized: QTable
    decentralized: list

    @property
    def passed(self) -> bool:
        return self.max_discrepancy < self.tolerance


def reachable_states(mdp: FactoredMDP, start_states) -> list[tuple]:
    """Joint states reachable from ``start_states`` under any actions."""
    P, _ = mdp.product()
    states = mdp.joint_states
    index = {s: k for k, s in enumerate(states)}
    seen = {index[tuple(s)] for s in start_states}
    frontier = list(seen)
    while frontier:
        k = frontier.pop()
        for nxt in np.flatnonzero(P[k].sum(axis=0) > 0):
            if nxt not in seen:
                seen.add(int(nxt))
                frontier.append(int(nxt))
    return [states[k] for k in sorted(seen)]


def _compare(mdp, vi_tolerance, tolerance, start_states=None) -> DecompositionReport:
    cen = value_iterate(mdp, vi_tolerance)
    dec = [solve_local(mdp, i, vi_tolerance) for i in range(len(mdp.agents))]
    states, actions = mdp.joint_states, mdp.joint_actions
    summed = np.zeros_like(cen.values)
    for si, s in enumerate(states):
        for ai, a in enumerate(actions):
            summed[si, ai] = sum(d.values[s[i], a[i]] for i, d in enumerate(dec))
    gap = np.abs(cen.values - summed)
    if start_states is not None:
        keep = set(reachable_states(mdp, start_states))
        gap[[k for k, s in enumerate(states) if s not in keep]] = 0.0
    else:
        keep = set(states)
    si, ai = np.unravel_index(np.argmax(gap), gap.shape)
    dec_policy = [d.greedy() for d in dec]
    cen_policy = cen.greedy()
    mismatches = [
        s for k, s in enumerate(states)
        if s in keep
        and actions[cen_policy[k]] != tuple(int(p[s[i]]) for i, p in enumerate(dec_policy))
    ]
    return DecompositionReport(float(gap.max()), states[si], actions[ai], mismatches,
                               tolerance, cen, dec)


def check_additivity(mdp: FactoredMDP, tolerance: float = 1e-8,
                     vi_tolerance: float = 1e-12) -> DecompositionReport:
    """Compare centralized Q with the sum of local Qs on an uncoupled MDP."""
    if mdp.coupling is not None:
        raise ValueError("check_additivity needs an uncoupled MDP")
    return _compare(mdp, vi_tolerance, tolerance)


def check_coupling_gap(mdp: FactoredMDP, tolerance: float = 1e-8,
                       vi_tolerance: float = 1e-12, start_states=None) -> DecompositionReport:
    """Same comparison on a coupled MDP; a large gap is the expected outcome.

    With ``start_states`` the comparison is limited to the joint states
    reachable from them.
    """
    return _compare(mdp, vi_tolerance, tolerance, start_states)


def random_factored_mdp(rng, n_states=(2, 2), n_actions=(2, 2), gamma=0.9) -> FactoredMDP:
    """Flat-Dirichlet transition rows, rewards uniform on [-1, 0]."""
    agents = []
    for S, A in zip(n_states, n_actions):
        P = rng.dirichlet(np.ones(S), size=(S, A))
        P /= P.sum(axis=-1, keepdims=True)
        agents.append(LocalMDP(P, rng.uniform(-1.0, 0.0, size=(S, A))))
    return FactoredMDP(agents, gamma)


FREE, CONGESTED = 0, 1
WAIT, FLUSH = 0, 1


def canonical_coupled_mdp(gamma: float = 0.9, reachable: bool = True) -> FactoredMDP:
    """Two intersections, each free or congested, each able to wait or flush.

    Locally, a congested intersection costs 1 per step and flushing costs
    0.3 on top; flushing clears congestion with probability 0.9, waiting
    with probability 0.3.  Arrivals congest a free intersection with
    probability 0.2 (0.15 when it flushes).

    The coupling models spill-back from intersection 0 into intersection 1:
    while 0 is congested, 1 cannot clear and becomes congested whatever it
    does.  Decentralized, flushing 0 is not worth its cost; centralized, it
    is, because it also frees intersection 1.

    With ``reachable=False`` the coupling is attached to a third local
    state of agent 0 that no transition ever enters, so it is vacuous.
    """
    P = np.zeros((2, 2, 2))
    P[FREE, WAIT] = [0.8, 0.2]
    P[FREE, FLUSH] = [0.85, 0.15]
    P[CONGESTED, WAIT] = [0.3, 0.7]
    P[CONGESTED, FLUSH] = [0.9, 0.1]
    R = np.array([[0.0, -0.3], [-1.0, -1.3]])
    blocked = np.array([[0.0, 1.0], [0.0, 1.0]])

    if reachable:
        upstream = LocalMDP(P.copy(), R.copy())
        trigger = CONGESTED
    else:
        P3 = np.zeros((3, 2, 3))
        P3[:2, :, :2] = P
        P3[2, :, 2] = 1.0
        R3 = np.vstack([R, [-1.0, -1.3]])
        upstream = LocalMDP(P3, R3)
        trigger = 2

    def coupling(s):
        if s[0] == trigger:
            return {1: blocked}
        return None

    return FactoredMDP([upstream, LocalMDP(P.copy(), R.copy())], gamma, coupling)
