"""Exact Bellman machinery on tabular models.

Dense dynamic programming for :class:`~fittedq.envs.TabularMDP` and
:class:`~fittedq.envs.TabularMarkovGame`: Bellman operators, value
iteration, policy evaluation by direct linear solve, greedy and
equilibrium policies, and best responses.  Everything here is
deterministic and serves as the ground-truth oracle for the approximate
algorithms.

Q tables are plain ndarrays of shape (S, A) for MDPs and (S, A, B) for
games; policies are row-stochastic (S, A) arrays.  Argmax ties always
break toward the lowest index so greedy policies are functions of their
input.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import matrix_game
from .envs import TabularMDP, TabularMarkovGame


class SolverError(RuntimeError):
    """Iteration budget exhausted; carries the final residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class JointPolicy(NamedTuple):
    """Per-state mixed strategies for both players of a zero-sum game."""

    p1: np.ndarray
    p2: np.ndarray


def _check_q_shape(model, q):
    q = np.asarray(q, dtype=np.float64)
    if isinstance(model, TabularMDP):
        expected = (model.n_states, model.n_actions)
    else:
        expected = (model.n_states, model.n_actions_p1, model.n_actions_p2)
    if q.shape != expected:
        raise ValueError(f"Q table has shape {q.shape}, expected {expected}")
    return q


def _check_policy(policy, n_states, n_actions, label="policy"):
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (n_states, n_actions):
        raise ValueError(f"{label} has shape {policy.shape}, "
                         f"expected {(n_states, n_actions)}")
    if np.any(policy < 0.0) or np.abs(policy.sum(axis=1) - 1.0).max() > 1e-12:
        raise ValueError(f"{label} rows are not probability vectors")
    return policy


def bellman_optimality(mdp, q):
    """One application of the optimality backup
    ``(TQ)(s,a) = r(s,a) + gamma * E[max_a' Q(S',a')]``."""
    q = _check_q_shape(mdp, q)
    best_next = q.max(axis=1)
    return mdp.reward_mean + mdp.gamma * (mdp.transition @ best_next)


def bellman_policy(mdp, q, policy):
    """Policy backup ``(T^pi Q)(s,a) = r(s,a) + gamma * E[Q(S', A'~pi)]``."""
    q = _check_q_shape(mdp, q)
    policy = _check_policy(policy, mdp.n_states, mdp.n_actions)
    value_under_policy = (policy * q).sum(axis=1)
    return mdp.reward_mean + mdp.gamma * (mdp.transition @ value_under_policy)


def greedy_policy(q):
    """Deterministic policy on the lowest-index maximizer of each row."""
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q table contains non-finite entries")
    best = q.argmax(axis=1)
    policy = np.zeros_like(q)
    policy[np.arange(q.shape[0]), best] = 1.0
    return policy


def _iterate_to_fixed_point(apply_op, shape, gamma, tol, max_iters):
    # Stop once ||Q_{k+1} - Q_k||_inf <= tol*(1-gamma)/(2*gamma): then both
    # ||Q - Q*||_inf <= tol/2 and the returned residual ||TQ - Q||_inf <= tol.
    if tol <= 0:
        raise ValueError("tol must be positive")
    threshold = tol * (1.0 - gamma) / (2.0 * gamma) if gamma > 0 else np.inf
    q = np.zeros(shape)
    delta = np.inf
    for iteration in range(1, max_iters + 1):
        q_next = apply_op(q)
        delta = np.abs(q_next - q).max()
        q = q_next
        if delta <= threshold:
            return q, iteration
    raise SolverError(
        f"no convergence within {max_iters} iterations "
        f"(last step {delta:.3e}, threshold {threshold:.3e})",
        residual=float(delta), iterations=max_iters)


def value_iteration(mdp, tol=1e-10, max_iters=100_000):
    """Iterate the optimality backup from zero until ``||TQ - Q||_inf <= tol``.

    Returns (Q, iterations).  Raises :class:`SolverError` if the budget is
    exhausted first.
    """
    return _iterate_to_fixed_point(
        lambda q: bellman_optimality(mdp, q),
        (mdp.n_states, mdp.n_actions), mdp.gamma, tol, max_iters)


def policy_evaluation(mdp, policy):
    """Fixed point of ``T^pi`` by direct dense solve of
    ``(I - gamma P^pi) Q = r``; exactness matters for oracle duty."""
    policy = _check_policy(policy, mdp.n_states, mdp.n_actions)
    n = mdp.n_states * mdp.n_actions
    kernel = mdp.gamma * (mdp.transition[:, :, :, None] * policy[None, None, :, :])
    system = np.eye(n) - kernel.reshape(n, n)
    try:
        q = np.linalg.solve(system, mdp.reward_mean.reshape(n))
    except np.linalg.LinAlgError as exc:  # unreachable for gamma < 1
        raise SolverError(f"singular policy-evaluation system: {exc}") from exc
    q = q.reshape(mdp.n_states, mdp.n_actions)
    residual = np.abs(bellman_policy(mdp, q, policy) - q).max()
    if residual > 1e-9:
        raise SolverError(f"policy evaluation residual {residual:.3e} exceeds 1e-9",
                          residual=float(residual))
    return q


def state_game_values(q, tol=1e-8):
    """Matrix-game value of ``Q(s, :, :)`` for every state."""
    q = np.asarray(q, dtype=np.float64)
    return np.array([matrix_game.solve(q[s], tol=tol).value
                     for s in range(q.shape[0])])


def game_bellman_optimality(game, q):
    """Zero-sum optimality backup: lookahead through each next state's
    matrix-game value."""
    q = _check_q_shape(game, q)
    values = state_game_values(q)
    return game.reward_mean + game.gamma * (game.transition @ values)


def nash_value_iteration(game, tol=1e-10, max_iters=100_000):
    """Value iteration with the zero-sum backup; converges to the minimax
    Q-function of the game."""
    return _iterate_to_fixed_point(
        lambda q: game_bellman_optimality(game, q),
        (game.n_states, game.n_actions_p1, game.n_actions_p2),
        game.gamma, tol, max_iters)


def equilibrium_joint_policy(game, q):
    """Per-state equilibrium strategies of the matrix games ``Q(s, :, :)``."""
    q = _check_q_shape(game, q)
    p1 = np.zeros((game.n_states, game.n_actions_p1))
    p2 = np.zeros((game.n_states, game.n_actions_p2))
    for s in range(game.n_states):
        solution = matrix_game.solve(q[s])
        p1[s] = solution.row_strategy
        p2[s] = solution.col_strategy
    return JointPolicy(p1, p2)


def induced_opponent_mdp(game, policy_p1):
    """MDP faced by player two once player one commits to ``policy_p1``.

    Player two maximizes its own reward, the negation of player one's.
    """
    policy_p1 = _check_policy(policy_p1, game.n_states, game.n_actions_p1,
                              label="player-one policy")
    transition = np.einsum("sa,sabt->sbt", policy_p1, game.transition)
    reward = -np.einsum("sa,sab->sb", policy_p1, game.reward_mean)
    return TabularMDP(game.n_states, game.n_actions_p2, transition, reward,
                      game.gamma, game.r_max, game.reward_noise_halfwidth)


def best_response_policy(game, policy_p1, tol=1e-10):
    """Optimal player-two policy against a fixed player-one policy."""
    opponent_view, _ = value_iteration(induced_opponent_mdp(game, policy_p1),
                                       tol=tol)
    return greedy_policy(opponent_view)


def joint_policy_evaluation(game, policy_p1, policy_p2):
    """Fixed point of ``T^{pi,nu}`` by direct dense solve (player one's
    payoff)."""
    policy_p1 = _check_policy(policy_p1, game.n_states, game.n_actions_p1,
                              label="player-one policy")
    policy_p2 = _check_policy(policy_p2, game.n_states, game.n_actions_p2,
                              label="player-two policy")
    n = game.n_states * game.n_actions_p1 * game.n_actions_p2
    joint = policy_p1[:, :, None] * policy_p2[:, None, :]
    kernel = game.gamma * (game.transition[:, :, :, :, None, None]
                           * joint[None, None, None, :, :, :])
    system = np.eye(n) - kernel.reshape(n, n)
    try:
        q = np.linalg.solve(system, game.reward_mean.reshape(n))
    except np.linalg.LinAlgError as exc:  # unreachable for gamma < 1
        raise SolverError(f"singular joint-evaluation system: {exc}") from exc
    q = q.reshape(game.n_states, game.n_actions_p1, game.n_actions_p2)
    joint_next = (game.transition @ (joint * q).sum(axis=(1, 2)))
    residual = np.abs(game.reward_mean + game.gamma * joint_next - q).max()
    if residual > 1e-9:
        raise SolverError(f"joint evaluation residual {residual:.3e} exceeds 1e-9",
                          residual=float(residual))
    return q
