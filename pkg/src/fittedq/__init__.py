"""fittedq: a desk-scale laboratory for fitted Q-iteration and friends.

The package pairs exact tabular solvers (value iteration, policy
evaluation, zero-sum matrix games, Nash value iteration) with the
approximate algorithms they oracle: batch fitted Q-iteration, its
minimax extension for two-player zero-sum Markov games, online DQN
variants with experience replay and target networks, and a projected-SGD
variant over an overparametrized two-layer network.  A diagnostics layer
measures one-step Bellman errors, concentration coefficients, and the
error-propagation bounds that tie them together.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    approximators,
    diagnostics,
    dqn,
    envs,
    exact,
    fqi,
    matrix_game,
    runner,
    serialize,
)
