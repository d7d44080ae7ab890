"""DQN learners for the corridor: DPUS and the three baselines.

All learners are scikit-learn style estimators.  ``fit`` takes a
:class:`~dpus.sim.CorridorConfig` (the environment plays the role of the
training data), and ``predict`` maps joint observations to greedy joint
actions.

Random streams are laid out identically for every learner: one generator
for the simulator, one for replay sampling (each private buffer gets its
own generator built from the same seed), and one exploration generator per
agent.  Together with the fixed accumulation order in :mod:`dpus.qnet`
this makes DPUS with zero cross-agent blocks and no spill-back reproduce
independent per-agent DQN bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .marl import N_ACTIONS, CorridorEnv, Transition
from .qnet import (BlockParams, QNetwork, UpdateMask, apply_update_, backward,
                   clip_by_agent, forward, greedy, layer_sizes, mask_gradient,
                   td_targets)
from .replay import ReplayBuffer
from .sim import Action, CorridorConfig
from .spillback import episode_rate
from .validation import (check_corridor, check_observations, check_positive_int,
                         check_probability)

HOLD = int(Action.HOLD)


class TrainingDivergence(RuntimeError):
    def __init__(self, episode: int, loss: float):
        super().__init__(f"non-finite loss {loss} in episode {episode}")
        self.episode = episode
        self.loss = loss


@dataclass
class TrainConfig:
    gamma: float = 0.95
    learning_rate: float = 1e-3
    learning_rate_decay: float = 0.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.6
    buffer_capacity: int = 50_000
    batch_size: int = 32
    update_frequency: int = 4
    target_sync_period: int = 200
    updates_per_trigger: int = 1
    episodes: int = 800
    horizon: int = 720
    seed: int = 0
    hidden_sizes: tuple = (64, 64)
    priority_exponent: float = 0.6
    priority_floor: float = 1e-3
    grad_clip: float = 10.0
    offdiag_init: str = "uniform"

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.validate()

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.learning_rate_decay < 0:
            raise ValueError("learning_rate_decay must be >= 0")
        check_probability(self.epsilon_start, "epsilon_start")
        check_probability(self.epsilon_end, "epsilon_end")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must be <= epsilon_start")
        if not 0.0 < self.epsilon_decay_fraction <= 1.0:
            raise ValueError("epsilon_decay_fraction must lie in (0, 1]")
        for name in ("buffer_capacity", "batch_size", "update_frequency",
                     "target_sync_period", "updates_per_trigger", "episodes", "horizon"):
            check_positive_int(getattr(self, name), name)
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be a non-empty list of positive widths")
        if self.priority_exponent < 0 or self.priority_floor < 0:
            raise ValueError("priority_exponent and priority_floor must be >= 0")
        if self.offdiag_init not in ("uniform", "zero"):
            raise ValueError("offdiag_init must be 'uniform' or 'zero'")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def estimator_params(self) -> dict:
        params = asdict(self)
        params["random_state"] = params.pop("seed")
        return params


@dataclass
class EpisodeMetrics:
    episode: int
    team_reward: float
    agent_rewards: tuple
    spillover_rate: float
    epsilon: float
    dropped_arrivals: int
    wall_seconds: float = field(default=0.0, compare=False)


def epsilon_at(episode: int, episodes: int, start: float, end: float, fraction: float) -> float:
    """Linear decay that reaches ``end`` exactly at episode ``round(fraction * episodes)``."""
    decay = max(1, int(round(fraction * episodes)))
    if episode >= decay:
        return end
    return start + (end - start) * episode / decay


def explore(greedy_actions, epsilon: float, rngs) -> np.ndarray:
    """Per-agent epsilon-greedy: agent ``i`` draws only from ``rngs[i]``."""
    out = np.array(greedy_actions, dtype=np.int64)
    for i, rng in enumerate(rngs):
        if rng.random() < epsilon:
            out[i] = rng.integers(N_ACTIONS)
    return out


def select_action(net: QNetwork, joint_obs, epsilon: float, rng) -> np.ndarray:
    """Epsilon-greedy joint action from the additive Q-heads.

    ``rng`` is a single generator shared by the agents or a list with one
    generator per agent.
    """
    check_probability(epsilon, "epsilon")
    g = greedy(forward(net.online, joint_obs))
    rngs = rng if isinstance(rng, (list, tuple)) else [rng] * net.n_agents
    return explore(g, epsilon, rngs)


class BaseDQNLearner(BaseEstimator):
    """Shared act-store-update training loop for all learners."""

    def __init__(self, gamma=0.95, learning_rate=1e-3, learning_rate_decay=0.0,
                 epsilon_start=1.0, epsilon_end=0.05, epsilon_decay_fraction=0.6,
                 buffer_capacity=50_000, batch_size=32, update_frequency=4,
                 target_sync_period=200, updates_per_trigger=1, episodes=800, horizon=720,
                 hidden_sizes=(64, 64), priority_exponent=0.6, priority_floor=1e-3,
                 grad_clip=10.0,
                 offdiag_init="uniform", random_state=0, callback=None):
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.learning_rate_decay = learning_rate_decay
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_fraction = epsilon_decay_fraction
        self.buffer_capacity = buffer_capacity
        self.batch_size = batch_size
        self.update_frequency = update_frequency
        self.target_sync_period = target_sync_period
        self.updates_per_trigger = updates_per_trigger
        self.episodes = episodes
        self.horizon = horizon
        self.hidden_sizes = hidden_sizes
        self.priority_exponent = priority_exponent
        self.priority_floor = priority_floor
        self.grad_clip = grad_clip
        self.offdiag_init = offdiag_init
        self.random_state = random_state
        self.callback = callback

    @classmethod
    def from_config(cls, config: TrainConfig, **extra):
        return cls(**config.estimator_params(), **extra)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        params = self.get_params()
        kwargs = {k: v for k, v in params.items() if k in names}
        return TrainConfig(seed=params["random_state"], **kwargs)

    # hooks ---------------------------------------------------------------
    def _setup(self, env: CorridorEnv, replay_seed):
        raise NotImplementedError

    def _begin_episode(self):
        pass

    def _greedy(self, joint_obs) -> np.ndarray:
        raise NotImplementedError

    def _store(self, obs, actions, rewards, next_obs, terminal, spill):
        raise NotImplementedError

    def _use_full_update(self, env: CorridorEnv) -> bool:
        return True

    def _update(self, full: bool) -> float:
        raise NotImplementedError

    # ---------------------------------------------------------------------
    def fit(self, corridor, y=None):
        corridor = check_corridor(corridor)
        config = self.train_config()
        env = CorridorEnv(corridor)
        self.n_agents_ = env.n_agents
        self.n_features_in_ = env.n_agents * env.obs_size

        root = np.random.SeedSequence(config.seed)
        sim_seed, replay_seed, explore_seed = root.spawn(3)
        sim_rng = np.random.default_rng(sim_seed)
        explore_rngs = [np.random.default_rng(s) for s in explore_seed.spawn(env.n_agents)]
        self._setup(env, replay_seed)

        self.metrics_ = []
        self.update_log_ = []  # (episode, step, env flag, full update)
        self.loss_history_ = []
        self.n_updates_ = 0
        T, f = config.horizon, config.update_frequency
        for ep in range(config.episodes):
            t0 = time.perf_counter()
            eps = epsilon_at(ep, config.episodes, config.epsilon_start,
                             config.epsilon_end, config.epsilon_decay_fraction)
            obs = env.reset(sim_rng)
            self._begin_episode()
            flags = []
            rewards = np.zeros(env.n_agents)
            for t in range(1, T + 1):
                spill = env.spillback_flag()
                flags.append(spill)
                actions = explore(self._greedy(obs), eps, explore_rngs)
                next_obs, reward = env.step(actions)
                rewards += reward.per_agent
                self._store(obs, actions, reward.per_agent, next_obs, t == T, spill)
                if t % f == 0:
                    flag_now = env.spillback_flag()
                    full = self._use_full_update(env)
                    for _ in range(config.updates_per_trigger):
                        loss = self._update(full)
                        if not math.isfinite(loss):
                            raise TrainingDivergence(ep, loss)
                        self.n_updates_ += 1
                        self.loss_history_.append(loss)
                        self.update_log_.append((ep, t, flag_now, full))
                obs = next_obs
            self.metrics_.append(EpisodeMetrics(
                episode=ep,
                team_reward=float(rewards.sum()),
                agent_rewards=tuple(float(r) for r in rewards),
                spillover_rate=episode_rate(flags).rate,
                epsilon=eps,
                dropped_arrivals=env.state.dropped,
                wall_seconds=time.perf_counter() - t0,
            ))
            if self.callback is not None:
                self.callback(self, ep)
        return self

    def predict(self, X, prev_actions=None) -> np.ndarray:
        """Greedy joint actions, one row per joint observation."""
        check_is_fitted(self, "metrics_")
        X = check_observations(X, self.n_features_in_)
        if prev_actions is None:
            return np.stack([self._greedy(x) for x in X])
        prev = np.atleast_2d(prev_actions)
        return np.stack([self._greedy(x, p) for x, p in zip(X, prev)])

    def evaluate(self, corridor, episodes=1, seed=0, horizon=None):
        check_is_fitted(self, "metrics_")
        return evaluate(self, corridor, episodes, seed, horizon or self.horizon)

    def _step_size(self) -> float:
        """``learning_rate / (1 + learning_rate_decay * n_updates_)``.

        A positive decay gives a Robbins-Monro schedule (steps sum to
        infinity, squared steps do not); 0 keeps the rate constant.
        """
        return self.learning_rate / (1.0 + self.learning_rate_decay * self.n_updates_)

    def _make_buffer(self, obs_size, n_agents):
        return ReplayBuffer(self.buffer_capacity, obs_size, n_agents,
                            self.priority_exponent, self.priority_floor)


class _BlockLearner(BaseDQNLearner):
    """One block-partitioned network over the joint observation."""

    def _setup(self, env, replay_seed):
        sizes = layer_sizes([env.obs_size] * env.n_agents, self.hidden_sizes, N_ACTIONS)
        online = BlockParams.initialize(sizes, self.random_state, self.offdiag_init)
        self.network_ = QNetwork(online)
        self.initial_params_ = online.copy()
        self.buffer_ = self._make_buffer(env.n_agents * env.obs_size, env.n_agents)
        self._replay_rng = np.random.default_rng(replay_seed)

    def _greedy(self, joint_obs, prev=None):
        return greedy(forward(self.network_.online, joint_obs))

    def _store(self, obs, actions, rewards, next_obs, terminal, spill):
        self.buffer_.add(Transition(obs, actions, rewards, next_obs, terminal, spill))

    def _update(self, full):
        net = self.network_
        idx = self.buffer_.sample_indices(self.batch_size, self._replay_rng)
        obs, act, rew, nobs, term = self.buffer_.gather(idx)
        y = td_targets(net, rew, nobs, term, self.gamma)
        mask = UpdateMask.FULL if full else UpdateMask.DIAGONAL
        grad, loss, td = backward(net.online, obs, act, y)
        self.buffer_.update_priorities(idx, td.sum(axis=1))
        mask_gradient(grad, mask)
        clip_by_agent(grad, self.grad_clip, mask)
        apply_update_(net.online, grad, self._step_size(), mask)
        if (self.n_updates_ + 1) % self.target_sync_period == 0:
            net.sync_target()
        return loss


class DPUSLearner(_BlockLearner):
    """DQN with the dynamic parameter update strategy.

    Updates touch every weight block while the corridor shows spill-back
    and only the per-agent diagonal blocks (plus biases) otherwise.
    ``spillback_override`` forces the flag (``True``/``False``) for
    controlled experiments; ``None`` reads it from the simulator.
    """

    def __init__(self, gamma=0.95, learning_rate=1e-3, learning_rate_decay=0.0,
                 epsilon_start=1.0, epsilon_end=0.05, epsilon_decay_fraction=0.6,
                 buffer_capacity=50_000, batch_size=32, update_frequency=4,
                 target_sync_period=200, updates_per_trigger=1, episodes=800, horizon=720,
                 hidden_sizes=(64, 64), priority_exponent=0.6, priority_floor=1e-3,
                 grad_clip=10.0,
                 offdiag_init="uniform", random_state=0, callback=None,
                 spillback_override=None):
        super().__init__(
            gamma=gamma, learning_rate=learning_rate,
            learning_rate_decay=learning_rate_decay, epsilon_start=epsilon_start,
            epsilon_end=epsilon_end, epsilon_decay_fraction=epsilon_decay_fraction,
            buffer_capacity=buffer_capacity, batch_size=batch_size,
            update_frequency=update_frequency, target_sync_period=target_sync_period,
            updates_per_trigger=updates_per_trigger, episodes=episodes, horizon=horizon,
            hidden_sizes=hidden_sizes, priority_exponent=priority_exponent,
            priority_floor=priority_floor, grad_clip=grad_clip, offdiag_init=offdiag_init,
            random_state=random_state, callback=callback)
        self.spillback_override = spillback_override

    def _use_full_update(self, env):
        if self.spillback_override is not None:
            return bool(self.spillback_override)
        return env.spillback_flag()


class CentralizedDQN(_BlockLearner):
    """Same block network as DPUS, but every update is a full update."""


class IndependentDQN(BaseDQNLearner):
    """One private network and buffer per agent, fed only local data."""

    def _agent_input_size(self, env):
        return env.obs_size

    def _agent_inputs(self, joint_obs, prev=None):
        return self._env_split(joint_obs)

    def _setup(self, env, replay_seed):
        self._env_split = env.split
        self.networks_ = []
        self.buffers_ = []
        self._replay_rngs = []
        size = self._agent_input_size(env)
        for i in range(env.n_agents):
            sizes = layer_sizes([size], self.hidden_sizes, N_ACTIONS)
            online = BlockParams.initialize(sizes, self.random_state, agent_offset=i)
            self.networks_.append(QNetwork(online))
            self.buffers_.append(self._make_buffer(size, 1))
            self._replay_rngs.append(np.random.default_rng(replay_seed))

    def _greedy(self, joint_obs, prev=None):
        inputs = self._agent_inputs(joint_obs, prev)
        return np.array([
            int(np.argmax(forward(net.online, x)[0]))
            for net, x in zip(self.networks_, inputs)
        ])

    def _store(self, obs, actions, rewards, next_obs, terminal, spill):
        xs = self._agent_inputs(obs)
        nxs = self._agent_inputs(next_obs, actions)
        for i, buf in enumerate(self.buffers_):
            buf.add(Transition(xs[i], actions[i:i + 1], rewards[i:i + 1], nxs[i],
                               terminal, spill))

    def _update(self, full):
        total = 0.0
        for net, buf, rng in zip(self.networks_, self.buffers_, self._replay_rngs):
            idx = buf.sample_indices(self.batch_size, rng)
            obs, act, rew, nobs, term = buf.gather(idx)
            y = td_targets(net, rew, nobs, term, self.gamma)
            grad, loss, td = backward(net.online, obs, act, y)
            buf.update_priorities(idx, td[:, 0])
            clip_by_agent(grad, self.grad_clip)
            apply_update_(net.online, grad, self._step_size())
            if (self.n_updates_ + 1) % self.target_sync_period == 0:
                net.sync_target()
            total += loss
        return total


class CooperativeDQN(IndependentDQN):
    """Per-agent DQN whose input also carries the neighbours' observations
    and their most recent actions (one-hot)."""

    def _setup(self, env, replay_seed):
        n = env.n_agents
        self._neighbors = [[j for j in (i - 1, i + 1) if 0 <= j < n] for i in range(n)]
        super()._setup(env, replay_seed)

    def _agent_input_size(self, env):
        return env.obs_size * (1 + len(self._neighbors[0])) + N_ACTIONS * len(self._neighbors[0])

    def _begin_episode(self):
        self._last_actions = np.full(self.n_agents_, HOLD)

    def _agent_inputs(self, joint_obs, prev=None):
        parts = self._env_split(joint_obs)
        if prev is None:
            prev = self._last_actions
        out = []
        for i, nbrs in enumerate(self._neighbors):
            pieces = [parts[i]] + [parts[j] for j in nbrs]
            for j in nbrs:
                onehot = np.zeros(N_ACTIONS)
                onehot[int(prev[j])] = 1.0
                pieces.append(onehot)
            out.append(np.concatenate(pieces))
        return out

    def _store(self, obs, actions, rewards, next_obs, terminal, spill):
        super()._store(obs, actions, rewards, next_obs, terminal, spill)
        self._last_actions = np.asarray(actions).copy()

    def fit(self, corridor, y=None):
        corridor = check_corridor(corridor)
        n = corridor.n_intersections
        degrees = {len([j for j in (i - 1, i + 1) if 0 <= j < n]) for i in range(n)}
        if len(degrees) > 1:
            raise ValueError("CooperativeDQN needs every agent to have the same "
                             "number of neighbours (n_intersections <= 2)")
        self.n_agents_ = n
        self._last_actions = np.full(n, HOLD)
        return super().fit(corridor, y)


LEARNERS = {
    "dpus": DPUSLearner,
    "in_dqn": IndependentDQN,
    "cen_dqn": CentralizedDQN,
    "co_dqn": CooperativeDQN,
}


def _train(name, config, corridor, **extra):
    learner = LEARNERS[name].from_config(config, **extra).fit(corridor)
    return learner, learner.metrics_


def train_dpus(config: TrainConfig, corridor: CorridorConfig, **extra):
    learner, metrics = _train("dpus", config, corridor, **extra)
    return learner.network_, metrics


def train_cen_dqn(config: TrainConfig, corridor: CorridorConfig):
    learner, metrics = _train("cen_dqn", config, corridor)
    return learner.network_, metrics


def train_in_dqn(config: TrainConfig, corridor: CorridorConfig):
    learner, metrics = _train("in_dqn", config, corridor)
    return learner.networks_, metrics


def train_co_dqn(config: TrainConfig, corridor: CorridorConfig):
    learner, metrics = _train("co_dqn", config, corridor)
    return learner.networks_, metrics


def _as_policy(model):
    if isinstance(model, QNetwork):
        return lambda obs, prev: greedy(forward(model.online, obs))
    if isinstance(model, BaseDQNLearner):
        check_is_fitted(model, "metrics_")
        if isinstance(model, CooperativeDQN):
            return lambda obs, prev: model._greedy(obs, prev)
        return lambda obs, prev: model._greedy(obs)
    raise TypeError(f"cannot evaluate a {type(model).__name__}")


def evaluate(model, corridor, episodes: int = 1, seed: int = 0, horizon: int = 720):
    """Greedy rollouts without learning; returns one metrics row per episode."""
    corridor = check_corridor(corridor)
    policy = _as_policy(model)
    env = CorridorEnv(corridor)
    sim_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    out = []
    for ep in range(episodes):
        t0 = time.perf_counter()
        obs = env.reset(sim_rng)
        prev = np.full(env.n_agents, HOLD)
        flags, rewards = [], np.zeros(env.n_agents)
        for _ in range(horizon):
            flags.append(env.spillback_flag())
            actions = policy(obs, prev)
            obs, reward = env.step(actions)
            rewards += reward.per_agent
            prev = actions
        out.append(EpisodeMetrics(ep, float(rewards.sum()), tuple(rewards.tolist()),
                                  episode_rate(flags).rate, 0.0, env.state.dropped,
                                  time.perf_counter() - t0))
    return out


def run_fixed_policy(corridor, episodes: int = 1, seed: int = 0, horizon: int = 720,
                     action: int = HOLD):
    """Rollouts that apply the same action everywhere (default: hold)."""
    corridor = check_corridor(corridor)
    env = CorridorEnv(corridor)
    sim_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    actions = np.full(env.n_agents, int(action))
    out = []
    for ep in range(episodes):
        t0 = time.perf_counter()
        env.reset(sim_rng)
        flags, rewards = [], np.zeros(env.n_agents)
        for _ in range(horizon):
            flags.append(env.spillback_flag())
            _, reward = env.step(actions)
            rewards += reward.per_agent
        out.append(EpisodeMetrics(ep, float(rewards.sum()), tuple(rewards.tolist()),
                                  episode_rate(flags).rate, 0.0, env.state.dropped,
                                  time.perf_counter() - t0))
    return out
