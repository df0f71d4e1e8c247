import numpy as np
import pytest

from fittedq import approximators as ap


def relu_reference(head, x):
    """Straight-line re-implementation of the head forward pass, kept
    independent of the library code path."""
    h = list(x)
    for layer in range(len(head.weights) - 1):
        w = head.weights[layer]
        b = head.biases[layer]
        nxt = []
        for i in range(w.shape[0]):
            acc = b[i]
            for j in range(w.shape[1]):
                acc += w[i, j] * h[j]
            nxt.append(acc if acc > 0 else 0.0)
        h = nxt
    w = head.weights[-1]
    acc = 0.0
    for j in range(w.shape[1]):
        acc += w[0, j] * h[j]
    return acc


class TestReluForward:
    def test_zero_weights_give_zero(self):
        net = ap.SparseReluQ(2, 2, hidden=(4,), v_max=None,
                             rng=np.random.default_rng(0))
        for head in net.heads:
            for p in head.parameters():
                p[...] = 0.0
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert ap.relu_forward(net, rng.uniform(0, 1, 2), 1) == 0.0

    def test_single_unit_identity(self):
        net = ap.SparseReluQ(1, 1, hidden=(1,), v_max=None,
                             rng=np.random.default_rng(0))
        head = net.heads[0]
        head.weights[0][...] = 1.0
        head.biases[0][...] = 0.0
        head.weights[1][...] = 1.0
        assert net.evaluate([0.5], 0) == 0.5
        assert net.evaluate([-0.3], 0) == 0.0

    def test_agrees_with_independent_interpreter(self):
        net = ap.SparseReluQ(3, 2, hidden=(5, 4), v_max=None,
                             rng=np.random.default_rng(42))
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = rng.uniform(-1, 1, 3)
            a = int(rng.integers(2))
            expected = relu_reference(net.heads[a], x)
            assert abs(net.evaluate(x, a) - expected) <= 1e-12

    def test_dimension_mismatch(self):
        net = ap.SparseReluQ(3, 2, hidden=(4,), rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            net.evaluate([0.1, 0.2], 0)

    def test_output_truncation(self):
        net = ap.SparseReluQ(1, 1, hidden=(1,), v_max=0.25,
                             rng=np.random.default_rng(0))
        head = net.heads[0]
        head.weights[0][...] = 1.0
        head.biases[0][...] = 1.0
        head.weights[1][...] = 1.0
        assert net.evaluate([1.0], 0) == 0.25
        assert np.all(np.abs(net.evaluate_states(np.linspace(0, 1, 7)[:, None]))
                      <= 0.25)


class TestFitLeastSquares:
    def test_tabular_mean_of_targets(self):
        q = ap.TabularQ(2, 2)
        ds = ap.RegressionDataset(states=np.array([0, 0]),
                                  actions=np.array([1, 1]),
                                  targets=np.array([3.0, 5.0]))
        ap.fit_least_squares(q, ds)
        assert q.values[0, 1] == 4.0
        assert q.values[1, 0] == 0.0  # untouched cell keeps its value

    def test_tabular_is_exact_minimizer(self):
        rng = np.random.default_rng(3)
        q = ap.TabularQ(3, 2)
        states = rng.integers(3, size=200)
        actions = rng.integers(2, size=200)
        targets = rng.normal(size=200)
        ap.fit_least_squares(q, ap.RegressionDataset(states=states,
                                                     actions=actions,
                                                     targets=targets))
        for s in range(3):
            for a in range(2):
                mask = (states == s) & (actions == a)
                if mask.any():
                    assert abs(q.values[s, a] - targets[mask].mean()) <= 1e-15

    def test_linear_recovers_noiseless_coefficients(self):
        rng = np.random.default_rng(5)
        true_w = np.array([[1.5, -2.0, 0.25], [0.0, 3.0, -1.0]])
        states = rng.uniform(-1, 1, size=(100, 2))
        actions = rng.integers(2, size=100)
        feats = np.hstack([states, np.ones((100, 1))])
        targets = (feats * true_w[actions]).sum(axis=1)
        q = ap.LinearQ(2, 2)
        ap.fit_least_squares(q, ap.RegressionDataset(states=states,
                                                     actions=actions,
                                                     targets=targets))
        assert np.abs(q.weights - true_w).max() <= 1e-8

    def test_relu_sine_regression_golden_config(self):
        # Golden config: width-32 depth-2 heads, default trainer
        # (lr 1e-2, momentum 0.9, 2000 full-batch epochs).
        rng = np.random.default_rng(7)
        xs = rng.uniform(0, 1, (500, 1))
        ys = np.sin(2 * np.pi * xs[:, 0])
        net = ap.SparseReluQ(1, 1, hidden=(32, 32), v_max=None,
                             rng=np.random.default_rng(8))
        report = net.fit(ap.RegressionDataset(states=xs,
                                              actions=np.zeros(500, dtype=int),
                                              targets=ys),
                         ap.TrainerConfig(), rng=np.random.default_rng(9))
        assert report.final_mse <= 1e-2
        assert not report.diverged

    def test_empty_dataset_rejected(self):
        q = ap.TabularQ(2, 2)
        ds = ap.RegressionDataset(states=np.array([], dtype=int),
                                  actions=np.array([], dtype=int),
                                  targets=np.array([]))
        with pytest.raises(ValueError):
            ap.fit_least_squares(q, ds)

    def test_non_finite_targets_rejected(self):
        with pytest.raises(ValueError):
            ap.RegressionDataset(states=np.array([0]), actions=np.array([0]),
                                 targets=np.array([np.nan]))


class TestEnforceConstraints:
    def make_net(self):
        return ap.SparseReluQ(2, 1, hidden=(3,), v_max=None, sparsity=None,
                              rng=np.random.default_rng(2))

    def test_no_op_when_satisfied(self):
        net = self.make_net()
        report = ap.enforce_constraints(net)
        assert report.clipped_count == 0
        assert report.pruned_count == 0

    def test_clips_oversized_weight(self):
        net = self.make_net()
        net.heads[0].weights[0][0, 0] = 2.5
        report = ap.enforce_constraints(net)
        assert report.clipped_count == 1
        assert net.heads[0].weights[0][0, 0] == 1.0

    def test_prunes_to_budget_keeping_largest(self):
        net = ap.SparseReluQ(2, 1, hidden=(3,), v_max=None, sparsity=4,
                             rng=np.random.default_rng(2))
        head = net.heads[0]
        # 12 parameter slots; make exactly 10 nonzero with distinct magnitudes
        values = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
                           0.0, 0.0])
        head.weights[0][...] = values[:6].reshape(3, 2)
        head.biases[0][...] = values[6:9]
        head.weights[1][...] = values[9:12].reshape(1, 3)
        report = ap.enforce_constraints(net)
        flat = np.concatenate([p.ravel() for p in head.parameters()])
        assert np.count_nonzero(flat) == 4
        assert report.pruned_count == 6
        assert sorted(v for v in flat if v != 0.0) == [0.7, 0.8, 0.9, 1.0]

    def test_constraints_hold_after_every_epoch(self):
        rng = np.random.default_rng(1)
        xs = rng.uniform(0, 1, (64, 2))
        ys = rng.normal(size=64) * 3
        net = ap.SparseReluQ(2, 2, hidden=(8,), v_max=1.0, sparsity=20,
                             rng=np.random.default_rng(3))
        ds = ap.RegressionDataset(states=xs, actions=rng.integers(2, size=64),
                                  targets=ys)
        net.fit(ds, ap.TrainerConfig(epochs=50, learning_rate=0.05),
                rng=np.random.default_rng(4))
        magnitude_excess, count_excess = net.constraint_violations()
        assert magnitude_excess == 0.0
        assert count_excess == 0


class TestSymmetricInit:
    def test_exactly_zero_on_random_inputs(self):
        rng = np.random.default_rng(0)
        net = ap.symmetric_init(64, 4, 3, rng)
        probe = np.random.default_rng(1)
        for _ in range(100):
            value = net.evaluate(probe.uniform(0, 1, 4), int(probe.integers(3)))
            assert value == 0.0

    def test_seed_determinism(self):
        a = ap.symmetric_init(16, 2, 2, np.random.default_rng(5))
        b = ap.symmetric_init(16, 2, 2, np.random.default_rng(5))
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.signs, b.signs)

    def test_weight_variance_matches_dimension(self):
        d = 8
        net = ap.symmetric_init(4096, d - 2, 2, np.random.default_rng(9))
        variance = net.w[:, :4096].var()
        assert abs(variance - 1.0 / d) <= 0.2 / d

    def test_mirror_structure(self):
        net = ap.symmetric_init(8, 2, 2, np.random.default_rng(3))
        assert np.array_equal(net.signs[8:], -net.signs[:8])
        assert np.array_equal(net.w[:, 8:], net.w[:, :8])


class TestProjectedSgdStep:
    def make_net(self, m=8, radius=5.0):
        return ap.symmetric_init(m, 3, 2, np.random.default_rng(11),
                                 ball_radius=radius)

    def test_zero_residual_leaves_weights(self):
        net = self.make_net()
        net.w = net.w + 0.01
        state = np.array([0.2, 0.4, 0.6])
        target = net.evaluate(state, 1)
        before = net.w.copy()
        ap.projected_sgd_step(net, (state, 1, target), 0.5)
        assert np.array_equal(net.w, before)

    def test_projection_rescales_to_radius(self):
        net = self.make_net(radius=2.0)
        direction = np.ones_like(net.w)
        net.w = net.w0 + 4.0 * direction / np.linalg.norm(direction)
        state = np.array([0.1, 0.2, 0.3])
        ap.projected_sgd_step(net, (state, 0, net.evaluate(state, 0)), 1e-12)
        assert abs(net.distance_from_anchor() - 2.0) <= 1e-12

    def test_gradient_matches_central_differences(self):
        net = self.make_net()
        rng = np.random.default_rng(4)
        net.w = net.w + rng.normal(0, 0.05, net.w.shape)
        state = rng.uniform(0, 1, 3)
        action = 1
        grad = net.gradient(state, action)
        h = 1e-6
        fd = np.zeros_like(net.w)
        for i in range(net.w.shape[0]):
            for j in range(net.w.shape[1]):
                up = net.w.copy()
                up[i, j] += h
                down = net.w.copy()
                down[i, j] -= h
                fd[i, j] = (net.with_weights(up).evaluate(state, action)
                            - net.with_weights(down).evaluate(state, action)) / (2 * h)
        scale = max(np.abs(fd).max(), 1e-12)
        assert np.abs(grad - fd).max() / scale <= 1e-5

    def test_rejects_nonpositive_step(self):
        net = self.make_net()
        with pytest.raises(ValueError):
            ap.projected_sgd_step(net, (np.zeros(3), 0, 1.0), 0.0)


class TestAverageIterates:
    def test_constant_history(self):
        w = np.random.default_rng(0).normal(size=(3, 4))
        assert np.array_equal(ap.average_iterates([w]), w)
        assert np.allclose(ap.average_iterates([w, w, w]), w,
                           rtol=1e-12, atol=1e-15)

    def test_symmetric_pair_cancels(self):
        rng = np.random.default_rng(1)
        w0 = rng.normal(size=(3, 4))
        u = rng.normal(size=(3, 4))
        assert np.allclose(ap.average_iterates([w0 + u, w0 - u]), w0, atol=1e-15)

    def test_mean_stays_in_ball(self):
        rng = np.random.default_rng(2)
        w0 = rng.normal(size=(4, 6))
        radius = 2.0
        history = []
        for _ in range(100):
            step = rng.normal(size=(4, 6))
            step *= rng.uniform(0, radius) / np.linalg.norm(step)
            history.append(w0 + step)
        mean = ap.average_iterates(history)
        assert np.linalg.norm(mean - w0) <= radius

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            ap.average_iterates([])


class TestBackpropGradients:
    def test_relu_head_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        net = ap.SparseReluQ(2, 1, hidden=(5, 4), v_max=None,
                             rng=np.random.default_rng(3))
        head = net.heads[0]
        x = rng.uniform(0, 1, (6, 2))
        y = rng.normal(size=6)

        def loss():
            pred = head.forward(x)
            return float(np.mean((pred - y) ** 2))

        pred = head.forward(x)
        grads_w, grads_b = head.forward_backward(x, 2.0 * (pred - y) / len(y))
        h = 1e-6
        worst = 0.0
        for params, grads in ((head.weights, grads_w), (head.biases, grads_b)):
            for p, g in zip(params, grads):
                it = np.nditer(p, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = p[idx]
                    p[idx] = orig + h
                    up = loss()
                    p[idx] = orig - h
                    down = loss()
                    p[idx] = orig
                    fd = (up - down) / (2 * h)
                    denom = max(abs(fd), abs(g[idx]), 1e-10)
                    if denom > 1e-8:
                        worst = max(worst, abs(fd - g[idx]) / denom)
        assert worst <= 1e-5


class TestCheckpoints:
    def test_relu_round_trip_bit_exact(self, tmp_path):
        net = ap.SparseReluQ(2, 3, hidden=(6, 5), v_max=4.0, sparsity=40,
                             rng=np.random.default_rng(21))
        path = tmp_path / "net.json"
        ap.save_checkpoint(net, path)
        loaded = ap.load_checkpoint(path)
        rng = np.random.default_rng(2)
        for _ in range(30):
            x = rng.uniform(0, 1, 2)
            a = int(rng.integers(3))
            assert loaded.evaluate(x, a) == net.evaluate(x, a)
        for h_new, h_old in zip(loaded.heads, net.heads):
            for p_new, p_old in zip(h_new.parameters(), h_old.parameters()):
                assert np.array_equal(p_new, p_old)

    def test_two_layer_round_trip_bit_exact(self, tmp_path):
        net = ap.symmetric_init(16, 3, 2, np.random.default_rng(6),
                                ball_radius=2.0)
        net.w = net.w + np.random.default_rng(7).normal(0, 0.01, net.w.shape)
        path = tmp_path / "ntk.json"
        ap.save_checkpoint(net, path)
        loaded = ap.load_checkpoint(path)
        assert np.array_equal(loaded.w, net.w)
        assert np.array_equal(loaded.w0, net.w0)
        assert np.array_equal(loaded.signs, net.signs)
        rng = np.random.default_rng(8)
        for _ in range(20):
            x = rng.uniform(0, 1, 3)
            a = int(rng.integers(2))
            assert loaded.evaluate(x, a) == net.evaluate(x, a)


class TestZeroQ:
    def test_zero_everywhere(self):
        q = ap.ZeroQ(3)
        assert q.evaluate(None, 2) == 0.0
        assert q.evaluate_all(None).tolist() == [0.0, 0.0, 0.0]
        game_q = ap.ZeroQ(2, 3)
        assert game_q.evaluate_all(None).shape == (2, 3)
