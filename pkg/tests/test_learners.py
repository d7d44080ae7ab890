import numpy as np
import pytest
from sklearn.base import clone

from dpus.learners import (CentralizedDQN, CooperativeDQN, DPUSLearner, IndependentDQN,
                           TrainConfig, TrainingDivergence, epsilon_at, evaluate, explore,
                           run_fixed_policy, select_action, train_cen_dqn, train_co_dqn,
                           train_dpus, train_in_dqn)
from dpus.marl import CorridorEnv
from dpus.qnet import BlockParams, QNetwork
from dpus.sim import CorridorConfig

from conftest import params_digest, recording

EMPTY = CorridorConfig(arrival_rate=0.0)


def bias_net(head_values):
    n = len(head_values)
    p = BlockParams.initialize([(1,) * n, (3,) * n], 0).zeros_like()
    for r, v in enumerate(head_values):
        p.biases[0][r][:] = v
    return QNetwork(p)


class TestSelectAction:
    def test_greedy(self):
        net = bias_net([(0.1, 0.9, 0.3), (-1, -2, -3)])
        assert select_action(net, np.zeros(2), 0.0, np.random.default_rng(0)).tolist() == [1, 0]

    def test_tie(self):
        net = bias_net([(0.5, 0.5, 0.2)])
        assert select_action(net, np.zeros(1), 0.0, np.random.default_rng(0)).tolist() == [0]

    def test_uniform_at_one(self):
        net = bias_net([(0.1, 0.9, 0.3), (-1, -2, -3)])
        rngs = [np.random.default_rng(1), np.random.default_rng(2)]
        n = 100_000
        draws = np.array([select_action(net, np.zeros(2), 1.0, rngs) for _ in range(n)])
        sd = np.sqrt(n * (1 / 3) * (2 / 3))
        for i in range(2):
            counts = np.bincount(draws[:, i], minlength=3)
            assert np.all(np.abs(counts - n / 3) <= 3 * sd)

    def test_invalid_epsilon(self):
        with pytest.raises(ValueError):
            select_action(bias_net([(0, 0, 0)]), np.zeros(1), 1.5, np.random.default_rng(0))

    def test_agents_use_private_streams(self):
        a = explore([0, 0], 0.5, [np.random.default_rng(3), np.random.default_rng(4)])
        b = explore([0, 0], 0.5, [np.random.default_rng(3), np.random.default_rng(99)])
        assert a[0] == b[0]


class TestEpsilon:
    def test_schedule(self):
        eps = [epsilon_at(e, 50, 1.0, 0.05, 0.6) for e in range(50)]
        assert eps[0] == 1.0 and eps[30] == 0.05 and eps[29] > 0.05
        assert all(a >= b for a, b in zip(eps, eps[1:]))
        assert all(0.0 <= e <= 1.0 for e in eps)

    def test_recorded(self, small_train, corridor):
        m = DPUSLearner(**{**small_train, "episodes": 5}).fit(corridor)
        assert [x.epsilon for x in m.metrics_] == [epsilon_at(e, 5, 1.0, 0.05, 0.6) for e in range(5)]


class TestTrainConfig:
    @pytest.mark.parametrize("bad", [dict(gamma=1.0), dict(learning_rate=0.0),
                                     dict(epsilon_end=1.5), dict(update_frequency=0),
                                     dict(episodes=0), dict(hidden_sizes=()),
                                     dict(offdiag_init="gaussian"), dict(learning_rate_decay=-1)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.gamma, c.learning_rate, c.batch_size, c.update_frequency,
                c.target_sync_period, c.episodes, c.horizon) == (0.95, 1e-3, 32, 4, 200, 800, 720)

    def test_fit_validates(self, corridor):
        with pytest.raises(ValueError):
            DPUSLearner(gamma=2.0, episodes=1, horizon=1).fit(corridor)


class TestDegenerate:
    def test_single_step(self):
        m = DPUSLearner(episodes=1, horizon=1, update_frequency=1, batch_size=4,
                        hidden_sizes=(8,)).fit(EMPTY)
        assert len(m.buffer_) == 1
        assert m.buffer_[0].reward.tolist() == [0.0, 0.0]
        assert m.n_updates_ == 1 and np.isfinite(m.loss_history_[0])
        assert m.metrics_[0].team_reward == 0.0

    @pytest.mark.parametrize("cls", [DPUSLearner, CentralizedDQN, IndependentDQN, CooperativeDQN])
    def test_all_learners_run(self, cls, small_train, corridor):
        m = cls(**small_train).fit(corridor)
        assert len(m.metrics_) == 3
        assert all(x.team_reward <= 0 for x in m.metrics_)
        assert m.n_updates_ == 3 * (20 // 4)


class TestBranchFidelity:
    def test_mode_follows_flag(self, small_train):
        c = CorridorConfig(demand_multiplier=4.0)
        m = DPUSLearner(**{**small_train, "episodes": 4, "horizon": 60}).fit(c)
        log = m.update_log_
        assert len(log) == m.n_updates_
        assert all(full == flag for _, _, flag, full in log)
        modes = {full for *_, full in log}
        assert modes == {True, False}

    def test_no_spillback_keeps_offdiag(self, small_train, no_spill_corridor):
        m = DPUSLearner(**small_train)
        m.fit(no_spill_corridor)
        init = BlockParams.initialize(m.network_.online.sizes, m.random_state)
        assert not any(full for *_, full in m.update_log_)
        for (l, r, c, w0), (_, _, _, w1) in zip(init.blocks(), m.network_.online.blocks()):
            if r != c:
                assert np.array_equal(w0, w1)
        assert all(x.spillover_rate == 0.0 for x in m.metrics_)

    def test_cen_changes_offdiag(self, small_train, corridor):
        m = CentralizedDQN(**{**small_train, "episodes": 1}).fit(corridor)
        init = BlockParams.initialize(m.network_.online.sizes, m.random_state)
        assert all(full for *_, full in m.update_log_)
        assert not np.array_equal(init.weights[-1][0][1], m.network_.online.weights[-1][0][1])

    def test_permanent_spillback_matches_cen(self, small_train, corridor):
        a = recording(DPUSLearner)(spillback_override=True, **small_train).fit(corridor)
        b = recording(CentralizedDQN)(**small_train).fit(corridor)
        assert a.trace_ == b.trace_
        assert a.network_.online.equals(b.network_.online)


class TestDecoupling:
    def test_dpus_matches_independent(self, no_spill_corridor):
        kw = dict(episodes=2, horizon=40, buffer_capacity=500, batch_size=8,
                  target_sync_period=10, hidden_sizes=(16,), offdiag_init="zero",
                  priority_exponent=0.0)
        a = recording(DPUSLearner)(**kw).fit(no_spill_corridor)
        b = recording(IndependentDQN)(**kw).fit(no_spill_corridor)
        assert len(a.trace_) == 20
        assert a.trace_ == b.trace_

    def test_in_dqn_agent_ignores_other_agent_data(self, corridor):
        kw = dict(batch_size=4, hidden_sizes=(8,), buffer_capacity=50)
        env = CorridorEnv(corridor)
        seed = np.random.SeedSequence(0)
        learners = [IndependentDQN(**kw), IndependentDQN(**kw)]
        for m in learners:
            m.n_updates_ = 0
            m._setup(env, seed)
        rng = np.random.default_rng(0)
        L = env.obs_size
        for _ in range(12):
            obs, nobs = rng.random(2 * L), rng.random(2 * L)
            act = rng.integers(0, 3, size=2)
            rew = -rng.random(2)
            other = obs.copy()
            other[L:] = rng.permutation(other[L:])
            for m, o in zip(learners, (obs, other)):
                r = rew.copy()
                if m is learners[1]:
                    r[1] = -5.0
                m._store(o, act, r, nobs, False, False)
            for m in learners:
                m._update(True)
                m.n_updates_ += 1
        assert learners[0].networks_[0].online.equals(learners[1].networks_[0].online)
        assert not learners[0].networks_[1].online.equals(learners[1].networks_[1].online)


class TestCooperative:
    def test_single_agent_reduces_to_independent(self, small_train):
        c = CorridorConfig(n_intersections=1, demand_multiplier=2.0)
        a = recording(CooperativeDQN)(**small_train).fit(c)
        b = recording(IndependentDQN)(**small_train).fit(c)
        assert a.trace_ == b.trace_

    def test_neighbour_one_hot(self, small_train, corridor):
        m = CooperativeDQN(**{**small_train, "episodes": 1}).fit(corridor)
        L = corridor.observation_size
        for x in m.buffers_[0].obs[:len(m.buffers_[0])]:
            assert x.shape == (2 * L + 3,)
            tail = x[2 * L:]
            assert np.count_nonzero(tail) == 1 and tail.sum() == 1.0

    def test_rejects_uneven_neighbourhoods(self, small_train):
        with pytest.raises(ValueError):
            CooperativeDQN(**small_train).fit(CorridorConfig(n_intersections=3))


class TestDeterminism:
    @pytest.mark.parametrize("cls", [DPUSLearner, CentralizedDQN, IndependentDQN, CooperativeDQN])
    def test_same_seed(self, cls, small_train, corridor):
        a = cls(**small_train).fit(corridor)
        b = cls(**small_train).fit(corridor)
        assert a.metrics_ == b.metrics_
        assert a.loss_history_ == b.loss_history_

    def test_different_seed(self, small_train, corridor):
        a = DPUSLearner(**small_train).fit(corridor)
        b = DPUSLearner(**small_train, random_state=1).fit(corridor)
        assert a.metrics_ != b.metrics_


class TestEvaluate:
    def test_empty_traffic(self, small_train):
        m = DPUSLearner(**{**small_train, "episodes": 1}).fit(EMPTY)
        out = evaluate(m, EMPTY, episodes=2, horizon=10)
        assert [x.team_reward for x in out] == [0.0, 0.0]

    def test_no_mutation_and_determinism(self, small_train, corridor):
        m = DPUSLearner(**small_train).fit(corridor)
        before = params_digest(m.network_.online), params_digest(m.network_.target)
        a = m.evaluate(corridor, episodes=2, seed=5, horizon=30)
        assert (params_digest(m.network_.online), params_digest(m.network_.target)) == before
        assert a == evaluate(m.network_, corridor, episodes=2, seed=5, horizon=30)
        assert all(x.epsilon == 0.0 for x in a)

    def test_co_dqn_evaluate(self, small_train, corridor):
        m = CooperativeDQN(**small_train).fit(corridor)
        assert len(m.evaluate(corridor, horizon=10)) == 1

    def test_unfitted(self, corridor):
        with pytest.raises(Exception):
            DPUSLearner().predict(np.zeros((1, 328)))
        with pytest.raises(TypeError):
            evaluate(object(), corridor)

    def test_fixed_policy(self, corridor):
        a = run_fixed_policy(corridor, episodes=2, seed=0, horizon=20)
        assert a == run_fixed_policy(corridor, episodes=2, seed=0, horizon=20)
        assert all(x.team_reward <= 0 for x in a)


class TestEstimatorApi:
    def test_get_params_and_clone(self):
        m = DPUSLearner(episodes=7, spillback_override=False)
        p = m.get_params()
        assert p["episodes"] == 7 and p["spillback_override"] is False
        c = clone(m)
        assert c.get_params() == p and c is not m

    def test_set_params(self):
        m = IndependentDQN().set_params(batch_size=64)
        assert m.batch_size == 64

    def test_predict_shape(self, small_train, corridor):
        m = DPUSLearner(**small_train).fit(corridor)
        X = np.zeros((5, m.n_features_in_))
        assert m.predict(X).shape == (5, 2)
        with pytest.raises(ValueError):
            m.predict(np.zeros((5, 3)))

    def test_train_wrappers(self, small_train, corridor):
        cfg = TrainConfig(**{**small_train, "episodes": 1})
        net, metrics = train_dpus(cfg, corridor)
        assert isinstance(net, QNetwork) and len(metrics) == 1
        assert isinstance(train_cen_dqn(cfg, corridor)[0], QNetwork)
        assert len(train_in_dqn(cfg, corridor)[0]) == 2
        assert len(train_co_dqn(cfg, corridor)[0]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
class TestDivergence:
    def test_abort_reports_episode(self, small_train):
        c = CorridorConfig(demand_multiplier=4.0)
        with pytest.raises(TrainingDivergence) as err:
            DPUSLearner(**{**small_train, "learning_rate": 1e200, "episodes": 2}).fit(c)
        assert err.value.episode in (0, 1)
        assert "episode" in str(err.value)


class TestBuffer:
    def test_capacity_and_priorities(self, small_train, corridor):
        m = DPUSLearner(**{**small_train, "buffer_capacity": 25}).fit(corridor)
        assert len(m.buffer_) == 25
        pr = m.buffer_.priorities[:25]
        assert np.all(np.isfinite(pr)) and np.all(pr >= 0)
