import numpy as np
import pytest

from dpus.theory import (FactoredMDP, LocalMDP, canonical_coupled_mdp, check_additivity,
                         check_coupling_gap, random_factored_mdp, reachable_states,
                         value_iterate)


def single(P, R, gamma):
    return value_iterate((np.asarray(P, float), np.asarray(R, float), gamma), 1e-12)


class TestValueIteration:
    def test_geometric_series(self):
        q = single([[[1.0]]], [[1.0]], 0.5)
        assert q.values[0, 0] == pytest.approx(2.0, abs=1e-11)

    def test_gamma_zero(self):
        rng = np.random.default_rng(0)
        P = rng.dirichlet(np.ones(3), size=(3, 2))
        R = rng.uniform(-1, 0, size=(3, 2))
        np.testing.assert_array_equal(single(P, R, 0.0).values, R)

    def test_two_state_chain(self):
        # A -> B -> A, reward 0 in A and 1 in B:
        # Q(A) = 0.9 Q(B), Q(B) = 1 + 0.9 Q(A)  =>  Q(A) = 0.9 / 0.19, Q(B) = 1 / 0.19
        P = [[[0.0, 1.0]], [[1.0, 0.0]]]
        q = single(P, [[0.0], [1.0]], 0.9)
        np.testing.assert_allclose(q.values[:, 0], [0.9 / 0.19, 1 / 0.19], atol=1e-10)

    def test_contraction(self):
        mdp = random_factored_mdp(np.random.default_rng(3), (3, 2), (2, 3), gamma=0.8)
        q = value_iterate(mdp, 1e-12)
        d = q.deltas
        ulps = 8 * np.spacing(np.abs(q.values).max())  # rounding near the fixed point
        assert all(b <= 0.8 * a + ulps for a, b in zip(d, d[1:]))
        assert d[-1] < 1e-12 and q.sweeps == len(d)

    def test_errors(self):
        with pytest.raises(ValueError):
            single([[[0.5, 0.4]], [[1.0, 0.0]]], [[0.0], [0.0]], 0.9)
        with pytest.raises(ValueError):
            value_iterate((np.ones((1, 1, 1)), np.zeros((1, 1)), 0.5), 0.0)
        with pytest.raises(TypeError):
            value_iterate([1, 2, 3])
        with pytest.raises(RuntimeError):
            value_iterate((np.ones((1, 1, 1)), np.ones((1, 1)), 0.99), 1e-12, max_sweeps=5)

    def test_factored_validation(self):
        with pytest.raises(ValueError):
            FactoredMDP([LocalMDP(np.ones((1, 1, 1)), np.zeros((1, 1)))], 1.0)
        with pytest.raises(ValueError):
            FactoredMDP([LocalMDP(np.ones((1, 1, 1)), np.zeros((2, 1)))], 0.5)


class TestAdditivity:
    def test_two_by_two(self):
        rep = check_additivity(random_factored_mdp(np.random.default_rng(0)))
        assert rep.passed and rep.max_discrepancy < 1e-8
        assert rep.policy_mismatches == [] or rep.max_discrepancy < 1e-8

    def test_gamma_zero_exact(self):
        rep = check_additivity(random_factored_mdp(np.random.default_rng(1), gamma=0.0))
        assert rep.max_discrepancy == 0.0

    def test_symmetric_factors(self):
        m = random_factored_mdp(np.random.default_rng(2), (3,), (2,))
        mdp = FactoredMDP([m.agents[0], m.agents[0]], 0.9)
        rep = check_additivity(mdp)
        np.testing.assert_array_equal(rep.decentralized[0].values, rep.decentralized[1].values)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        sizes = tuple(int(x) for x in rng.integers(2, 5, size=2))
        acts = tuple(int(x) for x in rng.integers(2, 4, size=2))
        mdp = random_factored_mdp(rng, sizes, acts, gamma=float(rng.uniform(0.5, 0.95)))
        assert check_additivity(mdp).max_discrepancy < 1e-8

    def test_rejects_coupled(self):
        with pytest.raises(ValueError):
            check_additivity(canonical_coupled_mdp())


class TestCouplingGap:
    def test_canonical_gap(self):
        rep = check_coupling_gap(canonical_coupled_mdp())
        assert rep.max_discrepancy > 0.1
        assert not rep.passed
        assert len(rep.policy_mismatches) >= 1
        assert rep.witness_state[0] == 1  # upstream congested

    def test_unreachable_coupling(self):
        mdp = canonical_coupled_mdp(reachable=False)
        starts = [(a, b) for a in (0, 1) for b in (0, 1)]
        assert set(reachable_states(mdp, starts)) == set(starts)
        rep = check_coupling_gap(mdp, start_states=starts)
        assert rep.max_discrepancy < 1e-8 and rep.policy_mismatches == []

    def test_zero_reward(self):
        mdp = canonical_coupled_mdp()
        for m in mdp.agents:
            m.rewards[:] = 0.0
        assert check_coupling_gap(mdp).max_discrepancy == 0.0

    def test_bad_coupling_rows(self):
        mdp = canonical_coupled_mdp()
        mdp.coupling = lambda s: {1: np.full((2, 2), 0.7)}
        with pytest.raises(ValueError):
            value_iterate(mdp)
