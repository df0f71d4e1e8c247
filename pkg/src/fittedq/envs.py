"""Decision-process models: tabular MDPs, zero-sum Markov games, and a
continuous-state family.

Tabular models carry dense transition tensors so Bellman operators can be
applied exactly; the continuous family backs the neural experiments where
only sampling is available.  Models are immutable after construction and
safe for concurrent read-only use.  All sampling goes through a
caller-owned ``numpy.random.Generator``.

Reward distributions are mean plus clipped uniform noise: the mean tensor
stays exact for the dynamic-programming oracles while realized rewards
remain inside ``[-r_max, r_max]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize

ROW_SUM_TOL = 1e-12


def _frozen(array, dtype=np.float64):
    out = np.ascontiguousarray(np.asarray(array, dtype=dtype))
    out.setflags(write=False)
    return out


def _check_rows_stochastic(rows, label):
    if np.any(rows < 0.0):
        raise ValueError(f"{label}: negative transition probability")
    err = np.abs(rows.sum(axis=-1) - 1.0).max()
    if err > ROW_SUM_TOL:
        raise ValueError(f"{label}: row sums deviate from 1 by {err:.3e}")


def _check_discount(gamma):
    # gamma == 0 is accepted at the type level so the Bellman operators can
    # be exercised at the undiscounted boundary; the random generators below
    # still insist on gamma in (0, 1).
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with dense transition tensor and bounded mean rewards.

    Attributes
    ----------
    n_states, n_actions : int
    transition : ndarray, shape (S, A, S)
        Row-stochastic next-state distributions.
    reward_mean : ndarray, shape (S, A)
        Mean rewards, all within ``[-r_max, r_max]``.
    gamma : float
        Discount factor.
    r_max : float
        Uniform bound on realized rewards.
    reward_noise_halfwidth : float
        Half-width of the additive uniform reward noise; realized rewards
        are clipped back into ``[-r_max, r_max]``.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray
    reward_mean: np.ndarray
    gamma: float
    r_max: float
    reward_noise_halfwidth: float = 0.0

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        _check_discount(self.gamma)
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        if self.reward_noise_halfwidth < 0:
            raise ValueError("reward_noise_halfwidth must be nonnegative")
        transition = _frozen(self.transition)
        reward = _frozen(self.reward_mean)
        if transition.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"transition has shape {transition.shape}, "
                             f"expected {(self.n_states, self.n_actions, self.n_states)}")
        if reward.shape != (self.n_states, self.n_actions):
            raise ValueError(f"reward_mean has shape {reward.shape}")
        _check_rows_stochastic(transition, "transition")
        if np.abs(reward).max() > self.r_max + 1e-15:
            raise ValueError("reward_mean exceeds r_max in absolute value")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward_mean", reward)

    @property
    def v_max(self):
        return self.r_max / (1.0 - self.gamma)


@dataclass(frozen=True)
class TabularMarkovGame:
    """Two-player zero-sum Markov game over joint actions.

    ``transition`` has shape (S, A, B, S) and ``reward_mean`` (player one's
    mean payoff; player two receives its negation) has shape (S, A, B).
    """

    n_states: int
    n_actions_p1: int
    n_actions_p2: int
    transition: np.ndarray
    reward_mean: np.ndarray
    gamma: float
    r_max: float
    reward_noise_halfwidth: float = 0.0

    def __post_init__(self):
        if min(self.n_states, self.n_actions_p1, self.n_actions_p2) < 1:
            raise ValueError("state and action counts must be positive")
        _check_discount(self.gamma)
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        if self.reward_noise_halfwidth < 0:
            raise ValueError("reward_noise_halfwidth must be nonnegative")
        shape = (self.n_states, self.n_actions_p1, self.n_actions_p2)
        transition = _frozen(self.transition)
        reward = _frozen(self.reward_mean)
        if transition.shape != shape + (self.n_states,):
            raise ValueError(f"transition has shape {transition.shape}")
        if reward.shape != shape:
            raise ValueError(f"reward_mean has shape {reward.shape}")
        _check_rows_stochastic(transition, "transition")
        if np.abs(reward).max() > self.r_max + 1e-15:
            raise ValueError("reward_mean exceeds r_max in absolute value")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward_mean", reward)

    @property
    def v_max(self):
        return self.r_max / (1.0 - self.gamma)


@dataclass(frozen=True)
class ContinuousMDP:
    """MDP on the unit cube ``[0, 1]^state_dim`` with finitely many actions.

    Rewards are a deterministic tanh-squashed mixture of Gaussian bumps per
    action, so they are smooth and strictly inside ``[-r_max, r_max]``.
    Transitions apply a contractive affine map plus uniform noise and clip
    back into the cube.
    """

    state_dim: int
    n_actions: int
    gamma: float
    r_max: float
    bump_weights: np.ndarray     # (A, n_bumps)
    bump_centers: np.ndarray     # (A, n_bumps, state_dim)
    bump_widths: np.ndarray      # (A, n_bumps)
    trans_matrix: np.ndarray     # (A, state_dim, state_dim)
    trans_offset: np.ndarray     # (A, state_dim)
    noise_scale: float

    def __post_init__(self):
        if self.state_dim < 1 or self.n_actions < 1:
            raise ValueError("state_dim and n_actions must be positive")
        _check_discount(self.gamma)
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        for name in ("bump_weights", "bump_centers", "bump_widths",
                     "trans_matrix", "trans_offset"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def v_max(self):
        return self.r_max / (1.0 - self.gamma)

    def reward(self, state, action):
        """Deterministic reward in (-r_max, r_max)."""
        state = np.asarray(state, dtype=np.float64)
        diff = state[None, :] - self.bump_centers[action]
        sq = (diff * diff).sum(axis=1)
        z = self.bump_weights[action] * np.exp(-sq / (2.0 * self.bump_widths[action] ** 2))
        return float(self.r_max * np.tanh(z.sum()))

    def next_state(self, state, action, noise):
        """Affine drift plus scaled noise, clipped into the unit cube."""
        state = np.asarray(state, dtype=np.float64)
        raw = self.trans_matrix[action] @ state + self.trans_offset[action]
        raw = raw + self.noise_scale * np.asarray(noise, dtype=np.float64)
        return np.clip(raw, 0.0, 1.0)

    def reward_batch(self, states, action):
        """Vectorized :meth:`reward` over an (n, state_dim) batch."""
        states = np.asarray(states, dtype=np.float64)
        diff = states[:, None, :] - self.bump_centers[action][None, :, :]
        sq = (diff * diff).sum(axis=2)
        z = (self.bump_weights[action]
             * np.exp(-sq / (2.0 * self.bump_widths[action] ** 2))).sum(axis=1)
        return self.r_max * np.tanh(z)

    def next_state_batch(self, states, action, noise):
        """Vectorized :meth:`next_state` over an (n, state_dim) batch."""
        states = np.asarray(states, dtype=np.float64)
        raw = states @ self.trans_matrix[action].T + self.trans_offset[action]
        raw = raw + self.noise_scale * np.asarray(noise, dtype=np.float64)
        return np.clip(raw, 0.0, 1.0)


@dataclass(frozen=True)
class TransitionSample:
    """One observed transition; ``action2`` is None outside Markov games."""

    state: object
    action: int
    reward: float
    next_state: object
    action2: int | None = None


def make_random_mdp(n_states, n_actions, gamma, r_max, concentration=1.0,
                    seed=0, reward_noise_halfwidth=0.0):
    """Random MDP: Dirichlet transition rows, uniform mean rewards.

    The same seed reproduces the model bit for bit.
    """
    if n_states < 1 or n_actions < 1:
        raise ValueError("n_states and n_actions must be positive")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    gen = np.random.default_rng(seed)
    alpha = np.full(n_states, float(concentration))
    transition = gen.dirichlet(alpha, size=(n_states, n_actions))
    reward = gen.uniform(-r_max, r_max, size=(n_states, n_actions))
    return TabularMDP(n_states, n_actions, transition, reward, gamma, r_max,
                      reward_noise_halfwidth)


GRID_ACTIONS = ((0, -1), (0, 1), (1, 0), (-1, 0))  # N, S, E, W


def make_gridworld(width, height, goal_cell, step_reward, goal_reward,
                   slip_prob, gamma):
    """Four-action gridworld with an absorbing goal.

    Arriving at the goal pays ``goal_reward``, every other arrival pays
    ``step_reward``, and the goal self-loops with zero reward; the mean
    reward tensor carries the arrival expectation under slip.  With
    probability ``slip_prob`` the chosen action is replaced by a uniformly
    random one.  Bumping into a wall leaves the position unchanged.
    """
    gx, gy = goal_cell
    if not (0 <= gx < width and 0 <= gy < height):
        raise ValueError(f"goal cell {goal_cell} outside {width}x{height} grid")
    if not (0.0 <= slip_prob < 1.0):
        raise ValueError(f"slip_prob must lie in [0, 1), got {slip_prob}")
    _check_discount(gamma)
    n_states = width * height
    n_actions = 4
    goal = gy * width + gx
    transition = np.zeros((n_states, n_actions, n_states))
    arrival = np.full(n_states, float(step_reward))
    arrival[goal] = float(goal_reward)

    def move(x, y, dx, dy):
        nx, ny = x + dx, y + dy
        if not (0 <= nx < width and 0 <= ny < height):
            return x, y
        return nx, ny

    for y in range(height):
        for x in range(width):
            s = y * width + x
            if s == goal:
                transition[s, :, s] = 1.0
                continue
            for a in range(n_actions):
                for eff, (dx, dy) in enumerate(GRID_ACTIONS):
                    prob = slip_prob / n_actions + (1.0 - slip_prob) * (eff == a)
                    nx, ny = move(x, y, dx, dy)
                    transition[s, a, ny * width + nx] += prob

    reward_mean = transition @ arrival
    reward_mean[goal, :] = 0.0
    r_max = max(abs(step_reward), abs(goal_reward), 1e-12)
    return TabularMDP(n_states, n_actions, transition, reward_mean, gamma, r_max)


def gridworld_state(width, cell):
    """Index of grid cell (x, y)."""
    x, y = cell
    return y * width + x


def make_random_game(n_states, n_actions_p1, n_actions_p2, gamma, r_max,
                     seed=0, concentration=1.0, reward_noise_halfwidth=0.0):
    """Random zero-sum Markov game, the joint-action analogue of
    :func:`make_random_mdp`."""
    if min(n_states, n_actions_p1, n_actions_p2) < 1:
        raise ValueError("state and action counts must be positive")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    gen = np.random.default_rng(seed)
    alpha = np.full(n_states, float(concentration))
    transition = gen.dirichlet(alpha, size=(n_states, n_actions_p1, n_actions_p2))
    reward = gen.uniform(-r_max, r_max, size=(n_states, n_actions_p1, n_actions_p2))
    return TabularMarkovGame(n_states, n_actions_p1, n_actions_p2, transition,
                             reward, gamma, r_max, reward_noise_halfwidth)


def make_matching_pennies_game(gamma=0.9):
    """Single-state repeated matching pennies; the stage value is zero."""
    payoff = np.array([[1.0, -1.0], [-1.0, 1.0]])
    transition = np.ones((1, 2, 2, 1))
    return TabularMarkovGame(1, 2, 2, transition, payoff[None, :, :], gamma, 1.0)


def make_random_continuous_mdp(state_dim, n_actions, gamma, r_max, seed=0,
                               n_bumps=4, noise_scale=0.1, drift=0.5):
    """Continuous-state MDP with smooth bump rewards and affine dynamics."""
    if state_dim < 1 or n_actions < 1:
        raise ValueError("state_dim and n_actions must be positive")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    gen = np.random.default_rng(seed)
    weights = gen.uniform(-2.0, 2.0, size=(n_actions, n_bumps))
    centers = gen.uniform(0.0, 1.0, size=(n_actions, n_bumps, state_dim))
    widths = gen.uniform(0.15, 0.45, size=(n_actions, n_bumps))
    mats = gen.uniform(-1.0, 1.0, size=(n_actions, state_dim, state_dim))
    for a in range(n_actions):
        norm = np.linalg.norm(mats[a], 2)
        if norm > 0:
            mats[a] *= drift / norm
    offsets = gen.uniform(0.15, 0.55, size=(n_actions, state_dim))
    return ContinuousMDP(state_dim, n_actions, gamma, r_max, weights, centers,
                         widths, mats, offsets, float(noise_scale))


def _sample_reward(mean, halfwidth, r_max, gen):
    if halfwidth == 0.0:
        return float(mean)
    noise = gen.uniform(-halfwidth, halfwidth)
    return float(np.clip(mean + noise, -r_max, r_max))


def sample_transition(model, state, action, action2=None, *, rng):
    """Draw one transition from the model's law.

    For tabular models the reward is mean plus clipped uniform noise; for
    the continuous family the reward is deterministic and the transition
    noise is uniform on ``[-1, 1]^state_dim`` before scaling.
    """
    if isinstance(model, TabularMDP):
        if not (0 <= state < model.n_states and 0 <= action < model.n_actions):
            raise IndexError(f"state/action ({state}, {action}) out of range")
        next_state = int(rng.choice(model.n_states, p=model.transition[state, action]))
        reward = _sample_reward(model.reward_mean[state, action],
                                model.reward_noise_halfwidth, model.r_max, rng)
        return TransitionSample(int(state), int(action), reward, next_state)
    if isinstance(model, TabularMarkovGame):
        if action2 is None:
            raise ValueError("Markov game sampling requires action2")
        ok = (0 <= state < model.n_states and 0 <= action < model.n_actions_p1
              and 0 <= action2 < model.n_actions_p2)
        if not ok:
            raise IndexError(f"indices ({state}, {action}, {action2}) out of range")
        row = model.transition[state, action, action2]
        next_state = int(rng.choice(model.n_states, p=row))
        reward = _sample_reward(model.reward_mean[state, action, action2],
                                model.reward_noise_halfwidth, model.r_max, rng)
        return TransitionSample(int(state), int(action), reward, next_state,
                                action2=int(action2))
    if isinstance(model, ContinuousMDP):
        state = np.asarray(state, dtype=np.float64)
        if state.shape != (model.state_dim,):
            raise IndexError(f"state has shape {state.shape}")
        if not (0 <= action < model.n_actions):
            raise IndexError(f"action {action} out of range")
        reward = model.reward(state, action)
        noise = rng.uniform(-1.0, 1.0, size=model.state_dim)
        next_state = model.next_state(state, action, noise)
        return TransitionSample(state, int(action), reward, next_state)
    raise TypeError(f"cannot sample from {type(model).__name__}")


def joint_action_mdp(game):
    """Flatten a zero-sum game into an MDP over joint actions a*B + b."""
    n_joint = game.n_actions_p1 * game.n_actions_p2
    transition = game.transition.reshape(game.n_states, n_joint, game.n_states)
    reward = game.reward_mean.reshape(game.n_states, n_joint)
    return TabularMDP(game.n_states, n_joint, transition, reward, game.gamma,
                      game.r_max, game.reward_noise_halfwidth)


def model_to_dict(model):
    """Serializable document for a tabular model (continuous models are
    reconstructed from their generator seed instead)."""
    if isinstance(model, TabularMDP):
        return {
            "kind": "mdp",
            "n_states": model.n_states,
            "n_actions": model.n_actions,
            "gamma": model.gamma,
            "r_max": model.r_max,
            "transition": model.transition.tolist(),
            "reward_mean": model.reward_mean.tolist(),
            "noise": model.reward_noise_halfwidth,
        }
    if isinstance(model, TabularMarkovGame):
        return {
            "kind": "game",
            "n_states": model.n_states,
            "n_actions": model.n_actions_p1,
            "n_actions2": model.n_actions_p2,
            "gamma": model.gamma,
            "r_max": model.r_max,
            "transition": model.transition.tolist(),
            "reward_mean": model.reward_mean.tolist(),
            "noise": model.reward_noise_halfwidth,
        }
    raise TypeError(f"cannot serialize {type(model).__name__} to a model file")


def model_from_dict(doc):
    kind = doc.get("kind")
    if kind == "mdp":
        return TabularMDP(doc["n_states"], doc["n_actions"],
                          np.asarray(doc["transition"]),
                          np.asarray(doc["reward_mean"]),
                          doc["gamma"], doc["r_max"], doc.get("noise", 0.0))
    if kind == "game":
        return TabularMarkovGame(doc["n_states"], doc["n_actions"],
                                 doc["n_actions2"],
                                 np.asarray(doc["transition"]),
                                 np.asarray(doc["reward_mean"]),
                                 doc["gamma"], doc["r_max"],
                                 doc.get("noise", 0.0))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path):
    serialize.dump(model_to_dict(model), path)


def load_model(path):
    return model_from_dict(serialize.load(path))
