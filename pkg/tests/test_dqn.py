import numpy as np
import pytest

from fittedq import dqn, envs, exact
from fittedq.approximators import TabularQ


@pytest.fixture(scope="module")
def gridworld():
    return envs.make_gridworld(3, 3, (2, 2), -0.05, 1.0, 0.1, 0.9)


class TestReplayBuffer:
    def test_never_exceeds_capacity_and_evicts_fifo(self):
        buf = dqn.ReplayBuffer(5)
        for tag in range(12):
            buf.push(tag)
            assert len(buf) <= 5
        assert 6 not in buf  # oldest surviving element is 7
        assert all(tag in buf for tag in range(7, 12))

    def test_uniform_sampling_frequencies(self):
        buf = dqn.ReplayBuffer(8)
        for tag in range(8):
            buf.push(tag)
        rng = np.random.default_rng(0)
        n = 100_000
        draws = buf.sample(n, rng)
        counts = np.bincount(np.array(draws), minlength=8) / n
        sigma = np.sqrt((1 / 8) * (7 / 8) / n)
        assert np.abs(counts - 1 / 8).max() <= 3 * sigma

    def test_empty_buffer_rejects_sampling(self):
        with pytest.raises(ValueError):
            dqn.ReplayBuffer(3).sample(1, np.random.default_rng(0))

    def test_capacity_one_returns_latest(self):
        buf = dqn.ReplayBuffer(1)
        buf.push("a")
        buf.push("b")
        draws = buf.sample(16, np.random.default_rng(0))
        assert draws == ["b"] * 16


class TestEpsilonGreedy:
    def make_q(self, row):
        q = TabularQ(1, len(row))
        q.values[0] = row
        return q

    def test_zero_epsilon_always_argmax(self):
        q = self.make_q([0.0, 5.0, 2.0])
        rng = np.random.default_rng(0)
        for _ in range(200):
            assert dqn.epsilon_greedy_action(q, 0, 0.0, rng) == 1

    def test_full_exploration_uniform(self):
        q = self.make_q([0.0, 5.0])
        rng = np.random.default_rng(1)
        n = 100_000
        counts = np.bincount([dqn.epsilon_greedy_action(q, 0, 1 - 1e-12, rng)
                              for _ in range(n)], minlength=2) / n
        sigma = np.sqrt(0.25 / n)
        assert np.abs(counts - 0.5).max() <= 3 * sigma

    def test_half_epsilon_mixture_frequency(self):
        q = self.make_q([0.0, 5.0])
        rng = np.random.default_rng(2)
        n = 100_000
        hits = sum(dqn.epsilon_greedy_action(q, 0, 0.5, rng) == 1
                   for _ in range(n)) / n
        # P(action 1) = 0.5 (greedy) + 0.5 * 0.5 (uniform) = 0.75
        sigma = np.sqrt(0.75 * 0.25 / n)
        assert abs(hits - 0.75) <= 3 * sigma


class CloneCountingQ(TabularQ):
    clones = 0

    def clone(self):
        type(self).clones += 1
        out = CloneCountingQ(self.n_states, self.n_actions, self.n_actions2)
        out.values = self.values.copy()
        return out


class TestDqnTrain:
    def test_no_sync_before_period(self, gridworld):
        config = dqn.DqnConfig(total_steps=49, target_sync_period=50, seed=0,
                               minibatch_size=4)
        result = dqn.dqn_train(gridworld, config)
        assert result.sync_count == 0

    def test_sync_counter_exact(self, gridworld):
        config = dqn.DqnConfig(total_steps=230, target_sync_period=50, seed=0,
                               minibatch_size=4)
        result = dqn.dqn_train(gridworld, config)
        assert result.sync_count == 230 // 50

    def test_target_cloned_only_on_sync(self, gridworld, monkeypatch):
        CloneCountingQ.clones = 0
        monkeypatch.setattr("fittedq.fqi.TabularQ", TabularQ)

        def build(spec, model, rng):
            return CloneCountingQ(model.n_states, model.n_actions)

        monkeypatch.setattr("fittedq.dqn.build_approximator", build)
        config = dqn.DqnConfig(total_steps=120, target_sync_period=50, seed=0,
                               minibatch_size=4)
        dqn.dqn_train(gridworld, config)
        # one clone at initialization plus one per sync
        assert CloneCountingQ.clones == 1 + 120 // 50

    def test_capacity_one_buffer_trains_on_latest(self, gridworld):
        config = dqn.DqnConfig(total_steps=30, buffer_capacity=1, seed=1,
                               minibatch_size=8)
        result = dqn.dqn_train(gridworld, config)
        assert len(result.step_records) == 30

    def test_coverage_of_state_actions(self):
        mdp = envs.make_random_mdp(3, 2, 0.9, 1.0, seed=4)
        seen = set()
        rng = np.random.default_rng(0)
        from fittedq.envs import sample_transition
        state = 0
        from fittedq.approximators import TabularQ as TQ
        q = TQ(3, 2)
        for _ in range(2000):
            action = dqn.epsilon_greedy_action(q, state, 0.5, rng)
            seen.add((state, action))
            state = sample_transition(mdp, state, action, rng=rng).next_state
        assert seen == {(s, a) for s in range(3) for a in range(2)}

    def test_determinism(self, gridworld):
        config = dqn.DqnConfig(total_steps=200, seed=11, minibatch_size=8)
        a = dqn.dqn_train(gridworld, config)
        b = dqn.dqn_train(gridworld, config)
        assert np.array_equal(a.q_final.values, b.q_final.values)
        assert [r.loss for r in a.step_records] == [r.loss for r in b.step_records]

    def test_learns_small_gridworld(self, gridworld):
        config = dqn.DqnConfig(total_steps=6000, minibatch_size=16,
                               epsilon=0.25, target_sync_period=50,
                               learning_rate=0.3, seed=1,
                               buffer_capacity=2000)
        result = dqn.dqn_train(gridworld, config)
        q_star, _ = exact.value_iteration(gridworld, tol=1e-10)
        v_star = (exact.greedy_policy(q_star) * q_star).sum(axis=1).mean()
        assert result.trace.summary["eval_value"] >= 0.9 * v_star

    def test_stepsize_schedule_callable(self, gridworld):
        seen = []

        def schedule(t):
            seen.append(t)
            return 0.5 / t

        config = dqn.DqnConfig(total_steps=20, learning_rate=schedule, seed=0,
                               minibatch_size=4)
        dqn.dqn_train(gridworld, config)
        assert seen == list(range(1, 21))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            dqn.DqnConfig(total_steps=10, epsilon=0.0)
        with pytest.raises(ValueError):
            dqn.DqnConfig(total_steps=10, epsilon=1.0)
        with pytest.raises(ValueError):
            dqn.DqnConfig(total_steps=10, target_sync_period=0)


class TestMinimaxDqnTrain:
    def test_degenerate_first_player_reduces_to_dqn(self):
        # |A| = 1: the stage matrices are single-column; the second player's
        # loop must reproduce reward-negated single-agent learning on the
        # induced MDP.  epsilon ~ 1 keeps both action streams uniform.
        game = envs.make_random_game(3, 1, 2, 0.9, 1.0, seed=8)
        opponent = np.ones((3, 1))
        eps = 1 - 1e-12
        config = dqn.DqnConfig(total_steps=300, minibatch_size=8, epsilon=eps,
                               target_sync_period=40, learning_rate=0.2, seed=5)
        game_run = dqn.minimax_dqn_train(game, config, opponent)

        induced = exact.induced_opponent_mdp(game, opponent)
        mdp_run = dqn.dqn_train(induced, config)
        assert np.abs(game_run.q_final.values[:, 0, :]
                      - mdp_run.q_final.values).max() <= 1e-9
        game_losses = [r.loss for r in game_run.step_records]
        mdp_losses = [r.loss for r in mdp_run.step_records]
        assert np.allclose(game_losses, mdp_losses, atol=1e-9)

    def test_matching_pennies_value_near_zero(self):
        game = envs.make_matching_pennies_game(gamma=0.9)
        opponent = np.full((1, 2), 0.5)
        config = dqn.DqnConfig(total_steps=4000, minibatch_size=16,
                               epsilon=0.2, target_sync_period=50,
                               learning_rate=0.1, seed=2)
        result = dqn.minimax_dqn_train(game, config, opponent)
        learned_value = dqn.second_player_strategy(result.q_final.values[0]).value
        assert abs(learned_value) <= 0.05

    def test_sync_counter_exact(self):
        game = envs.make_random_game(2, 2, 2, 0.9, 1.0, seed=3)
        config = dqn.DqnConfig(total_steps=170, target_sync_period=60, seed=0,
                               minibatch_size=4)
        result = dqn.minimax_dqn_train(game, config, np.full((2, 2), 0.5))
        assert result.sync_count == 170 // 60

    def test_rejects_bad_opponent_shape(self):
        game = envs.make_random_game(2, 2, 2, 0.9, 1.0, seed=3)
        config = dqn.DqnConfig(total_steps=10, seed=0)
        with pytest.raises(ValueError):
            dqn.minimax_dqn_train(game, config, np.full((3, 2), 0.5))
