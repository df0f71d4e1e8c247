"""Function-approximation backends behind a common Q-function contract.

Four families share the ``evaluate`` / ``evaluate_all`` / ``fit`` surface:

* :class:`TabularQ` -- a dense table whose least-squares fit is the exact
  per-cell mean of the targets.
* :class:`LinearQ` -- per-action linear heads fit by ridge-regularized
  normal equations.
* :class:`SparseReluQ` -- one scalar ReLU network per action (per action
  pair for games) trained by hand-rolled backpropagation, with weights
  clipped to ``[-1, 1]``, a global nonzero budget enforced by magnitude
  pruning, and outputs optionally clamped to ``[-v_max, v_max]``.
* :class:`NtkQ` -- a width-``2m`` two-layer ReLU network under the
  symmetric initialization (mirrored signs and duplicated rows), trained
  by single-sample projected SGD inside a Frobenius ball around the
  anchor weights.  At initialization it is exactly the zero function.

Gradients are written out explicitly; there is no autodiff anywhere.
Networks are single-owner mutable objects while training and safe for
concurrent reads once training stops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import serialize


@dataclass
class TrainerConfig:
    """Gradient-descent settings for the trainable backends.

    ``batch_size=None`` means full-batch; the defaults were fixed by one
    calibration run on the sine regression task and are overridable
    everywhere a trainer is accepted.
    """

    learning_rate: float = 1e-2
    epochs: int = 2000
    batch_size: int | None = None
    momentum: float = 0.9
    divergence_threshold: float = 1e8


@dataclass
class FitReport:
    final_mse: float
    epochs_run: int
    diverged: bool = False


@dataclass
class EnforcementReport:
    clipped_count: int
    pruned_count: int


@dataclass(frozen=True)
class RegressionDataset:
    """Supervised pairs for one fitted-Q regression step.

    ``states`` is an int vector for tabular models or an (n, d) float
    matrix for vector states.  ``actions2`` is None outside Markov games.
    """

    states: np.ndarray
    actions: np.ndarray
    targets: np.ndarray
    actions2: np.ndarray | None = None

    def __post_init__(self):
        targets = np.asarray(self.targets, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.int64)
        if len(targets) != len(actions):
            raise ValueError("inputs and targets have different lengths")
        if self.actions2 is not None and len(np.asarray(self.actions2)) != len(targets):
            raise ValueError("actions2 length mismatch")
        if len(targets) and not np.all(np.isfinite(targets)):
            raise ValueError("targets contain non-finite values")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "actions", actions)
        if self.actions2 is not None:
            object.__setattr__(self, "actions2",
                               np.asarray(self.actions2, dtype=np.int64))

    def __len__(self):
        return len(self.targets)


class ZeroQ:
    """The constant-zero Q-function used as the initial fitted-Q estimate."""

    def __init__(self, n_actions, n_actions2=None):
        self.n_actions = n_actions
        self.n_actions2 = n_actions2

    def evaluate(self, state, action, action2=None):
        return 0.0

    def evaluate_all(self, state):
        if self.n_actions2 is None:
            return np.zeros(self.n_actions)
        return np.zeros((self.n_actions, self.n_actions2))

    def evaluate_states(self, states):
        if self.n_actions2 is None:
            return np.zeros((len(states), self.n_actions))
        return np.zeros((len(states), self.n_actions, self.n_actions2))


class TabularQ:
    """Dense Q table over (S, A) or (S, A, B)."""

    def __init__(self, n_states, n_actions, n_actions2=None):
        self.n_states = n_states
        self.n_actions = n_actions
        self.n_actions2 = n_actions2
        shape = ((n_states, n_actions) if n_actions2 is None
                 else (n_states, n_actions, n_actions2))
        self.values = np.zeros(shape)

    def evaluate(self, state, action, action2=None):
        if self.n_actions2 is None:
            return float(self.values[state, action])
        return float(self.values[state, action, action2])

    def evaluate_all(self, state):
        return self.values[state].copy()

    def fit(self, dataset, trainer=None):
        """Exact empirical minimizer: each touched cell becomes the mean of
        its targets; untouched cells keep their current value."""
        if len(dataset) == 0:
            raise ValueError("cannot fit an empty dataset")
        idx = self._indices(dataset)
        sums = np.zeros_like(self.values)
        counts = np.zeros_like(self.values)
        np.add.at(sums, idx, dataset.targets)
        np.add.at(counts, idx, 1.0)
        touched = counts > 0
        self.values[touched] = sums[touched] / counts[touched]
        mse = float(np.mean((dataset.targets - self.values[idx]) ** 2))
        return FitReport(final_mse=mse, epochs_run=1)

    def _indices(self, dataset):
        states = np.asarray(dataset.states, dtype=np.int64)
        if self.n_actions2 is None:
            return states, dataset.actions
        if dataset.actions2 is None:
            raise ValueError("game-shaped table needs actions2")
        return states, dataset.actions, dataset.actions2

    def minibatch_step(self, dataset, learning_rate):
        """One semi-gradient step on the mean squared error of the batch."""
        idx = self._indices(dataset)
        residual = dataset.targets - self.values[idx]
        grad = np.zeros_like(self.values)
        np.add.at(grad, idx, residual)
        self.values += learning_rate * grad / len(dataset)
        return float(np.mean(residual ** 2))

    def clone(self):
        out = TabularQ(self.n_states, self.n_actions, self.n_actions2)
        out.values = self.values.copy()
        return out


class LinearQ:
    """Per-action linear heads over a state feature map.

    The default feature map appends a bias term to the raw state vector.
    """

    def __init__(self, state_dim, n_actions, features=None):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.n_actions2 = None
        self._features = features or (lambda s: np.append(np.asarray(s, dtype=np.float64), 1.0))
        self.n_features = len(self._features(np.zeros(state_dim)))
        self.weights = np.zeros((n_actions, self.n_features))

    def evaluate(self, state, action, action2=None):
        return float(self.weights[action] @ self._features(state))

    def evaluate_all(self, state):
        return self.weights @ self._features(state)

    def fit(self, dataset, trainer=None, ridge=1e-8):
        """Normal equations per action head with a tiny ridge term."""
        if len(dataset) == 0:
            raise ValueError("cannot fit an empty dataset")
        phi = np.stack([self._features(s) for s in dataset.states])
        for a in range(self.n_actions):
            mask = dataset.actions == a
            if not mask.any():
                continue
            x = phi[mask]
            y = dataset.targets[mask]
            gram = x.T @ x + ridge * np.eye(self.n_features)
            self.weights[a] = np.linalg.solve(gram, x.T @ y)
        preds = (phi * self.weights[dataset.actions]).sum(axis=1)
        mse = float(np.mean((dataset.targets - preds) ** 2))
        return FitReport(final_mse=mse, epochs_run=1)


class ReluHead:
    """One scalar ReLU network ``x -> W_{L+1} relu(... relu(W_1 x + v_1))``.

    Hidden layers carry biases; the output layer does not.  ``weights[l]``
    maps width ``d_l`` to ``d_{l+1}``, ``biases[l]`` exists for hidden
    layers only.
    """

    def __init__(self, widths, rng):
        # widths = (d_0, d_1, ..., d_L, 1)
        self.widths = tuple(widths)
        self.weights = []
        self.biases = []
        n_layers = len(widths) - 1
        for layer in range(n_layers):
            fan_in = widths[layer]
            scale = min(1.0, math.sqrt(2.0 / fan_in))
            w = rng.normal(0.0, scale, size=(widths[layer + 1], widths[layer]))
            self.weights.append(np.clip(w, -1.0, 1.0))
            if layer < n_layers - 1:
                # Nonzero bias init spreads the ReLU kinks over the input
                # range; with zero biases the net starts piecewise linear
                # around the origin and full-batch descent stalls there.
                bound = min(1.0, 1.0 / math.sqrt(fan_in))
                self.biases.append(rng.uniform(-bound, bound, size=widths[layer + 1]))

    def forward(self, x):
        """Batched raw forward pass; x has shape (n, d_0)."""
        h = x
        for layer in range(len(self.weights) - 1):
            h = np.maximum(h @ self.weights[layer].T + self.biases[layer], 0.0)
        return (h @ self.weights[-1].T)[:, 0]

    def forward_backward(self, x, residual_grad):
        """Gradients of the loss given d(loss)/d(output) per sample."""
        activations = [x]
        h = x
        for layer in range(len(self.weights) - 1):
            h = np.maximum(h @ self.weights[layer].T + self.biases[layer], 0.0)
            activations.append(h)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = residual_grad[:, None]            # (n, 1)
        grads_w[-1] = delta.T @ activations[-1]
        for layer in range(len(self.weights) - 2, -1, -1):
            delta = (delta @ self.weights[layer + 1]) * (activations[layer + 1] > 0)
            grads_w[layer] = delta.T @ activations[layer]
            grads_b[layer] = delta.sum(axis=0)
        return grads_w, grads_b

    def parameters(self):
        return self.weights + self.biases

    def nonzero_count(self):
        return int(sum(np.count_nonzero(p) for p in self.parameters()))


class SparseReluQ:
    """Per-action sparse ReLU heads with a shared architecture.

    Each head obeys three constraints after every enforcement pass: every
    weight and bias lies in ``[-1, 1]``, the head's total nonzero count is
    at most ``sparsity``, and (when ``v_max`` is set) evaluated outputs
    are clamped to ``[-v_max, v_max]``.  Training minimizes the empirical
    mean squared error of the raw (unclamped) output; the clamp applies at
    evaluation time.
    """

    def __init__(self, state_dim, n_actions, hidden=(32, 32), n_actions2=None,
                 v_max=None, sparsity=None, rng=None):
        rng = rng or np.random.default_rng(0)
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.n_actions2 = n_actions2
        self.v_max = v_max
        self.sparsity = sparsity
        widths = (state_dim, *hidden, 1)
        n_heads = n_actions if n_actions2 is None else n_actions * n_actions2
        self.heads = [ReluHead(widths, rng) for _ in range(n_heads)]
        enforce_constraints(self)

    def _head_index(self, action, action2):
        if self.n_actions2 is None:
            return action
        if action2 is None:
            raise ValueError("game-shaped network needs action2")
        return action * self.n_actions2 + action2

    def _clamp(self, raw):
        if self.v_max is None:
            return raw
        return np.clip(raw, -self.v_max, self.v_max)

    def evaluate(self, state, action, action2=None):
        x = np.asarray(state, dtype=np.float64).reshape(1, -1)
        if x.shape[1] != self.state_dim:
            raise ValueError(f"state has dimension {x.shape[1]}, expected {self.state_dim}")
        raw = self.heads[self._head_index(action, action2)].forward(x)[0]
        return float(self._clamp(raw))

    def evaluate_all(self, state):
        x = np.asarray(state, dtype=np.float64).reshape(1, -1)
        raw = np.array([head.forward(x)[0] for head in self.heads])
        out = self._clamp(raw)
        if self.n_actions2 is None:
            return out
        return out.reshape(self.n_actions, self.n_actions2)

    def evaluate_states(self, states):
        """Vectorized ``evaluate_all`` over an (n, d) batch of states."""
        states = np.asarray(states, dtype=np.float64)
        raw = np.stack([head.forward(states) for head in self.heads], axis=1)
        out = self._clamp(raw)
        if self.n_actions2 is None:
            return out
        return out.reshape(len(states), self.n_actions, self.n_actions2)

    def fit(self, dataset, trainer=None, rng=None):
        """Minibatch gradient descent per head, constraints enforced after
        every epoch.  Reports the post-enforcement empirical MSE."""
        if len(dataset) == 0:
            raise ValueError("cannot fit an empty dataset")
        trainer = trainer or TrainerConfig()
        rng = rng or np.random.default_rng(0)
        states = np.asarray(dataset.states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if self.n_actions2 is None:
            head_of = dataset.actions
        else:
            head_of = dataset.actions * self.n_actions2 + dataset.actions2
        groups = [np.nonzero(head_of == h)[0] for h in range(len(self.heads))]
        velocity = [[np.zeros_like(p) for p in head.parameters()]
                    for head in self.heads]
        diverged = False
        epochs_run = 0
        for _ in range(trainer.epochs):
            epochs_run += 1
            epoch_loss = 0.0
            for head, rows, vel in zip(self.heads, groups, velocity):
                if len(rows) == 0:
                    continue
                if trainer.batch_size is not None and trainer.batch_size < len(rows):
                    rows = rng.choice(rows, size=trainer.batch_size, replace=False)
                x = states[rows]
                y = dataset.targets[rows]
                pred = head.forward(x)
                residual = pred - y
                epoch_loss += float(residual @ residual)
                grad_out = 2.0 * residual / len(rows)
                grads_w, grads_b = head.forward_backward(x, grad_out)
                for p, v, g in zip(head.parameters(), vel, grads_w + grads_b):
                    v *= trainer.momentum
                    v -= trainer.learning_rate * g
                    p += v
            enforce_constraints(self)
            if not np.isfinite(epoch_loss) or epoch_loss > trainer.divergence_threshold:
                diverged = True
                break
        preds = np.zeros(len(dataset))
        for h, rows in enumerate(groups):
            if len(rows):
                preds[rows] = self.heads[h].forward(states[rows])
        mse = float(np.mean((dataset.targets - self._clamp(preds)) ** 2))
        return FitReport(final_mse=mse, epochs_run=epochs_run, diverged=diverged)

    def constraint_violations(self):
        """(max weight magnitude excess, nonzero count excess); zero when
        the network satisfies its class constraints."""
        worst = max(np.abs(p).max(initial=0.0) for head in self.heads
                    for p in head.parameters())
        excess = 0
        if self.sparsity is not None:
            excess = max(0, max(head.nonzero_count() for head in self.heads)
                         - self.sparsity)
        return max(0.0, worst - 1.0), excess

    def clone(self):
        import copy
        return copy.deepcopy(self)

    def checkpoint(self):
        """Serializable document; round-trips bit-exactly."""
        return {
            "kind": "sparse-relu",
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "n_actions2": self.n_actions2,
            "v_max": self.v_max,
            "sparsity": self.sparsity,
            "widths": list(self.heads[0].widths),
            "heads": [{
                "weights": [w.tolist() for w in head.weights],
                "biases": [b.tolist() for b in head.biases],
            } for head in self.heads],
        }

    @classmethod
    def from_checkpoint(cls, doc):
        net = cls(doc["state_dim"], doc["n_actions"],
                  hidden=tuple(doc["widths"][1:-1]),
                  n_actions2=doc["n_actions2"], v_max=doc["v_max"],
                  sparsity=doc["sparsity"])
        for head, saved in zip(net.heads, doc["heads"]):
            head.weights = [np.asarray(w, dtype=np.float64) for w in saved["weights"]]
            head.biases = [np.asarray(b, dtype=np.float64) for b in saved["biases"]]
        return net


def relu_forward(net, state, action, action2=None):
    """Raw-then-clamped forward pass of one head of a :class:`SparseReluQ`."""
    return net.evaluate(state, action, action2)


def enforce_constraints(net):
    """Project a :class:`SparseReluQ` back into its constraint set.

    Every weight is clipped to ``[-1, 1]``; if a head's nonzero count
    exceeds the budget, the smallest-magnitude entries are zeroed first
    (ties broken by parameter order).  Returns counts of touched entries.
    """
    clipped = 0
    pruned = 0
    for head in net.heads:
        for p in head.parameters():
            over = np.abs(p) > 1.0
            clipped += int(over.sum())
            np.clip(p, -1.0, 1.0, out=p)
        if net.sparsity is None:
            continue
        params = head.parameters()
        flat = np.concatenate([p.ravel() for p in params])
        nonzero = np.nonzero(flat)[0]
        excess = len(nonzero) - net.sparsity
        if excess <= 0:
            continue
        order = np.argsort(np.abs(flat[nonzero]), kind="stable")
        kill = nonzero[order[:excess]]
        flat[kill] = 0.0
        pruned += excess
        offset = 0
        for p in params:
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
    return EnforcementReport(clipped_count=clipped, pruned_count=pruned)


class NtkQ:
    """Two-layer ReLU network of width 2m with frozen mirrored output signs.

    Inputs pack the state with a one-hot action and are scaled by
    ``1/sqrt(state_dim + 1)`` so their Euclidean norm never exceeds one.
    Only the input weights ``w`` train; ``w0`` anchors the Frobenius ball
    of radius ``ball_radius`` that every projected step returns into.
    The mirrored halves are summed pairwise so the initial network output
    is exactly zero in floating point, not merely close to it.
    """

    def __init__(self, state_dim, n_actions, m, signs, w, ball_radius):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.n_actions2 = None
        self.m = m
        self.signs = signs
        self.w = w
        self.w0 = w.copy()
        self.ball_radius = float(ball_radius)
        self._input_scale = 1.0 / math.sqrt(state_dim + 1)
        self._norm = 1.0 / math.sqrt(2 * m)

    @property
    def input_dim(self):
        return self.state_dim + self.n_actions

    def pack_input(self, state, action):
        x = np.zeros(self.input_dim)
        x[:self.state_dim] = np.asarray(state, dtype=np.float64)
        x[self.state_dim + action] = 1.0
        return x * self._input_scale

    def _forward_packed(self, x):
        pre = self.w.T @ x
        contrib = self.signs * np.maximum(pre, 0.0)
        return self._norm * float((contrib[:self.m] + contrib[self.m:]).sum())

    def evaluate(self, state, action, action2=None):
        return self._forward_packed(self.pack_input(state, action))

    def evaluate_all(self, state):
        return np.array([self.evaluate(state, a) for a in range(self.n_actions)])

    def evaluate_states(self, states):
        """Vectorized ``evaluate_all`` over an (n, state_dim) batch."""
        states = np.asarray(states, dtype=np.float64)
        n = len(states)
        out = np.empty((n, self.n_actions))
        for action in range(self.n_actions):
            x = np.zeros((n, self.input_dim))
            x[:, :self.state_dim] = states
            x[:, self.state_dim + action] = 1.0
            x *= self._input_scale
            pre = x @ self.w
            contrib = self.signs * np.maximum(pre, 0.0)
            out[:, action] = self._norm * (contrib[:, :self.m]
                                           + contrib[:, self.m:]).sum(axis=1)
        return out

    def gradient(self, state, action):
        """d(output)/d(w): column j is ``sign_j 1{w_j'x > 0} x / sqrt(2m)``."""
        x = self.pack_input(state, action)
        active = (self.w.T @ x) > 0.0
        return self._norm * np.outer(x, self.signs * active)

    def distance_from_anchor(self):
        return float(np.linalg.norm(self.w - self.w0))

    def with_weights(self, w):
        """Read-only evaluation copy sharing signs and anchor."""
        out = NtkQ(self.state_dim, self.n_actions, self.m, self.signs,
                   w.copy(), self.ball_radius)
        out.w0 = self.w0.copy()
        return out

    def clone(self):
        return self.with_weights(self.w)

    def checkpoint(self):
        """Serializable document; round-trips bit-exactly."""
        return {
            "kind": "two-layer-symmetric",
            "state_dim": self.state_dim,
            "n_actions": self.n_actions,
            "m": self.m,
            "ball_radius": self.ball_radius,
            "signs": self.signs.tolist(),
            "w": self.w.tolist(),
            "w0": self.w0.tolist(),
        }

    @classmethod
    def from_checkpoint(cls, doc):
        net = cls(doc["state_dim"], doc["n_actions"], doc["m"],
                  np.asarray(doc["signs"], dtype=np.float64),
                  np.asarray(doc["w"], dtype=np.float64), doc["ball_radius"])
        net.w0 = np.asarray(doc["w0"], dtype=np.float64)
        return net


def symmetric_init(m, state_dim, n_actions, rng, ball_radius=10.0):
    """Width-2m network that is identically zero at initialization.

    Signs are uniform on {-1, +1} with the second half negated; input rows
    are N(0, I/d) with the second half duplicated, so mirrored units cancel
    exactly on every input.
    """
    if m < 1:
        raise ValueError("m must be positive")
    d = state_dim + n_actions
    half_signs = rng.choice([-1.0, 1.0], size=m)
    half_w = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, m))
    signs = np.concatenate([half_signs, -half_signs])
    w = np.concatenate([half_w, half_w], axis=1)
    return NtkQ(state_dim, n_actions, m, signs, w, ball_radius)


def projected_sgd_step(net, sample, eta):
    """Single-sample squared-loss descent step followed by projection onto
    the Frobenius ball around the anchor weights."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    state, action, target = sample
    prediction = net.evaluate(state, action)
    residual = target - prediction
    if residual != 0.0:
        grad = net.gradient(state, action)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient in projected SGD step")
        net.w = net.w + eta * residual * grad
    distance = np.linalg.norm(net.w - net.w0)
    if distance > net.ball_radius:
        net.w = net.w0 + (net.ball_radius / distance) * (net.w - net.w0)
    return net


def average_iterates(history):
    """Arithmetic mean of weight iterates; convexity keeps it in the ball."""
    history = list(history)
    if not history:
        raise ValueError("empty iterate history")
    return np.mean(np.stack(history, axis=0), axis=0)


def fit_least_squares(q, dataset, trainer=None, rng=None):
    """Least-squares fit dispatched to the approximator's own routine."""
    if len(dataset) == 0:
        raise ValueError("cannot fit an empty dataset")
    if isinstance(q, SparseReluQ):
        return q.fit(dataset, trainer=trainer, rng=rng)
    return q.fit(dataset, trainer=trainer)


def save_checkpoint(net, path):
    serialize.dump(net.checkpoint(), path)


def load_checkpoint(path):
    doc = serialize.load(path)
    kind = doc.get("kind")
    if kind == "sparse-relu":
        return SparseReluQ.from_checkpoint(doc)
    if kind == "two-layer-symmetric":
        return NtkQ.from_checkpoint(doc)
    raise ValueError(f"unknown checkpoint kind {kind!r}")
