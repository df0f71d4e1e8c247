"""Batch fitted Q-iteration engines.

Three variants share one loop skeleton: plain fitted Q-iteration on an
MDP, its minimax extension on a zero-sum Markov game (targets solve a
matrix game per next state), and a projected-SGD variant that fits each
regression step with single-sample updates of an overparametrized
two-layer network restarted from a shared symmetric initialization.

Every run starts from the zero Q-function, draws fresh i.i.d. data per
iteration by default, refits a fresh approximator per iteration unless
warm-started, and is bit-reproducible from (config, seed).  On tabular
models the engine tabulates every iterate and records the exact
regression residuals, so downstream diagnostics can verify the one-step
error sandwich without re-deriving anything.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import exact, matrix_game
from .approximators import (
    LinearQ,
    NtkQ,
    RegressionDataset,
    SparseReluQ,
    TabularQ,
    TrainerConfig,
    ZeroQ,
    fit_least_squares,
    symmetric_init,
)
from .diagnostics import DiagnosticsTrace, IterationRecord, WeightedNorm, weighted_lp_norm
from .envs import ContinuousMDP, TabularMDP, TabularMarkovGame, sample_transition
from .rng import rng_stream

SAMPLING_KINDS = ("uniform-state-action", "explicit-weights", "on-policy-mixture")


@dataclass(frozen=True)
class SamplingDistribution:
    """Where the regression inputs come from.

    ``uniform-state-action`` covers the whole cell space (or the unit cube
    times the action set); ``explicit-weights`` uses the given joint
    weights; ``on-policy-mixture`` mixes uniform draws with the discounted
    occupancy of the current greedy policy, sampled by geometric-horizon
    rollouts from uniform starts.
    """

    kind: str = "uniform-state-action"
    weights: np.ndarray | None = None
    uniform_mix: float = 0.5
    require_full_support: bool = False

    def __post_init__(self):
        if self.kind not in SAMPLING_KINDS:
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if self.kind == "explicit-weights":
            if self.weights is None:
                raise ValueError("explicit-weights sampling needs weights")
            weights = np.asarray(self.weights, dtype=np.float64)
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("sampling weights must be a probability vector")
            if self.require_full_support and np.any(weights == 0.0):
                raise ValueError("sampling weights lack full support")
            object.__setattr__(self, "weights", weights)
        if not (0.0 <= self.uniform_mix <= 1.0):
            raise ValueError("uniform_mix must lie in [0, 1]")


@dataclass(frozen=True)
class TabularSpec:
    """Dense table; the regression step is the exact per-cell mean."""


@dataclass(frozen=True)
class LinearSpec:
    """Per-action linear heads on vector states."""


@dataclass(frozen=True)
class ReluSpec:
    """Per-action sparse ReLU heads on vector states.

    ``v_max='auto'`` clamps outputs at r_max/(1-gamma); ``sparsity=None``
    leaves the nonzero budget at the parameter count.
    """

    hidden: tuple = (32, 32)
    v_max: object = "auto"
    sparsity: int | None = None


@dataclass(frozen=True)
class NtkSpec:
    """Symmetric-initialization two-layer network of width 2m."""

    m: int = 256
    ball_radius: float = 10.0


@dataclass(frozen=True)
class FqiConfig:
    """Settings for one batch run.

    ``exact_regression`` replaces sampling with one exactly backed-up
    target per cell (tabular models only): the fitted iterate then equals
    the corresponding value-iteration iterate and the one-step error is
    zero.  ``iterations=0`` is allowed and returns the zero Q-function.
    """

    iterations: int
    n_samples: int = 1
    approximator: object = field(default_factory=TabularSpec)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    sampling: SamplingDistribution = field(default_factory=SamplingDistribution)
    seed: int = 0
    fresh_samples_per_iteration: bool = True
    exact_regression: bool = False
    warm_start: bool = False
    track_diagnostics: bool = True
    mu_weights: np.ndarray | None = None
    sgd_steps: int | None = None
    sgd_eta: float | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")


@dataclass
class FqiResult:
    """Final estimate, derived policy, and the per-iteration trace.

    On tabular models ``q_tables`` holds the tabulated iterates (length
    K+1, starting at zero) and ``rho_tables`` the exact regression
    residuals ``T Q_k - Q_{k+1}`` (length K).
    """

    q_final: object
    policy: object
    trace: DiagnosticsTrace
    q_tables: list | None = None
    rho_tables: list | None = None
    q_penultimate: object = None
    diverged: bool = False


def _model_dims(model):
    if isinstance(model, TabularMDP):
        return model.n_actions, None
    if isinstance(model, TabularMarkovGame):
        return model.n_actions_p1, model.n_actions_p2
    if isinstance(model, ContinuousMDP):
        return model.n_actions, None
    raise TypeError(f"unsupported model type {type(model).__name__}")


def build_approximator(spec, model, rng):
    """Fresh approximator matched to the model's input space."""
    n_actions, n_actions2 = _model_dims(model)
    if isinstance(spec, TabularSpec):
        if isinstance(model, ContinuousMDP):
            raise TypeError("tabular approximator needs a tabular model")
        return TabularQ(model.n_states, n_actions, n_actions2)
    if isinstance(model, (TabularMDP, TabularMarkovGame)):
        raise TypeError(f"{type(spec).__name__} needs vector states; "
                        "tabular models use TabularSpec")
    if isinstance(spec, LinearSpec):
        return LinearQ(model.state_dim, n_actions)
    if isinstance(spec, ReluSpec):
        v_max = model.r_max / (1.0 - model.gamma) if spec.v_max == "auto" else spec.v_max
        return SparseReluQ(model.state_dim, n_actions, hidden=tuple(spec.hidden),
                           v_max=v_max, sparsity=spec.sparsity, rng=rng)
    if isinstance(spec, NtkSpec):
        return symmetric_init(spec.m, model.state_dim, n_actions, rng,
                              ball_radius=spec.ball_radius)
    raise TypeError(f"unknown approximator spec {type(spec).__name__}")


def _zero_q(model):
    n_actions, n_actions2 = _model_dims(model)
    return ZeroQ(n_actions, n_actions2)


def tabulate(q, model):
    """Dense table of a Q-function over a tabular model's cells."""
    if isinstance(model, TabularMDP):
        return np.stack([np.asarray(q.evaluate_all(s), dtype=np.float64)
                         for s in range(model.n_states)])
    if isinstance(model, TabularMarkovGame):
        return np.stack([np.asarray(q.evaluate_all(s), dtype=np.float64)
                         for s in range(model.n_states)])
    raise TypeError("tabulation needs a tabular model")


def compute_targets(batch, q, gamma):
    """Regression targets ``y_i = r_i + gamma * max_a Q(s'_i, a)``."""
    if isinstance(q, ZeroQ) or gamma == 0.0:
        return np.array([sample.reward for sample in batch])
    return np.array([sample.reward + gamma * float(np.max(q.evaluate_all(sample.next_state)))
                     for sample in batch])


def compute_minimax_targets(batch, q, gamma):
    """Targets through the matrix-game value of ``Q(s'_i, :, :)``."""
    if isinstance(q, ZeroQ) or gamma == 0.0:
        return np.array([sample.reward for sample in batch])
    targets = np.empty(len(batch))
    for i, sample in enumerate(batch):
        payoff = np.asarray(q.evaluate_all(sample.next_state))
        targets[i] = sample.reward + gamma * matrix_game.solve(payoff).value
    return targets


def _greedy_rollout_cell(model, q, gamma, rng):
    """One draw from the discounted occupancy of the greedy policy."""
    horizon = rng.geometric(1.0 - gamma) - 1
    if isinstance(model, TabularMDP):
        state = int(rng.integers(model.n_states))
        for _ in range(horizon):
            action = int(np.argmax(q.evaluate_all(state)))
            state = sample_transition(model, state, action, rng=rng).next_state
        return state, int(np.argmax(q.evaluate_all(state)))
    state = rng.uniform(0.0, 1.0, size=model.state_dim)
    for _ in range(horizon):
        action = int(np.argmax(q.evaluate_all(state)))
        state = sample_transition(model, state, action, rng=rng).next_state
    return state, int(np.argmax(q.evaluate_all(state)))


def _draw_inputs(model, sampling, n, rng, q_current):
    """n state-action inputs distributed according to the sampling spec."""
    if isinstance(model, TabularMarkovGame):
        n_cells = model.n_states * model.n_actions_p1 * model.n_actions_p2
        if sampling.kind == "uniform-state-action":
            flat = rng.integers(n_cells, size=n)
        elif sampling.kind == "explicit-weights":
            flat = rng.choice(n_cells, size=n, p=sampling.weights.reshape(-1))
        else:
            raise ValueError("on-policy-mixture sampling is defined for MDPs only")
        states, rest = np.divmod(flat, model.n_actions_p1 * model.n_actions_p2)
        actions, actions2 = np.divmod(rest, model.n_actions_p2)
        return list(zip(states.tolist(), actions.tolist(), actions2.tolist()))
    if isinstance(model, TabularMDP):
        if sampling.kind == "uniform-state-action":
            flat = rng.integers(model.n_states * model.n_actions, size=n)
            states, actions = np.divmod(flat, model.n_actions)
            return list(zip(states.tolist(), actions.tolist()))
        if sampling.kind == "explicit-weights":
            flat = rng.choice(model.n_states * model.n_actions, size=n,
                              p=sampling.weights.reshape(-1))
            states, actions = np.divmod(flat, model.n_actions)
            return list(zip(states.tolist(), actions.tolist()))
        out = []
        for _ in range(n):
            if rng.random() < sampling.uniform_mix:
                state = int(rng.integers(model.n_states))
                out.append((state, int(rng.integers(model.n_actions))))
            else:
                out.append(_greedy_rollout_cell(model, q_current, model.gamma, rng))
        return out
    if sampling.kind == "explicit-weights":
        raise ValueError("explicit weights are defined for tabular models only")
    out = []
    for _ in range(n):
        if sampling.kind == "on-policy-mixture" and rng.random() >= sampling.uniform_mix:
            out.append(_greedy_rollout_cell(model, q_current, model.gamma, rng))
        else:
            state = rng.uniform(0.0, 1.0, size=model.state_dim)
            out.append((state, int(rng.integers(model.n_actions))))
    return out


def _draw_batch(model, sampling, n, rng_sample, rng_env, q_current):
    inputs = _draw_inputs(model, sampling, n, rng_sample, q_current)
    if isinstance(model, TabularMarkovGame):
        return [sample_transition(model, s, a, b, rng=rng_env)
                for s, a, b in inputs]
    return [sample_transition(model, s, a, rng=rng_env) for s, a in inputs]


def _dataset_from_batch(model, batch, targets):
    if isinstance(model, TabularMarkovGame):
        return RegressionDataset(
            states=np.array([s.state for s in batch]),
            actions=np.array([s.action for s in batch]),
            actions2=np.array([s.action2 for s in batch]),
            targets=targets)
    states = [s.state for s in batch]
    states = (np.array(states) if isinstance(model, TabularMDP)
              else np.stack(states))
    return RegressionDataset(states=states,
                             actions=np.array([s.action for s in batch]),
                             targets=targets)


def _all_cells_dataset(model, target_table):
    if isinstance(model, TabularMDP):
        states, actions = np.unravel_index(
            np.arange(model.n_states * model.n_actions),
            (model.n_states, model.n_actions))
        return RegressionDataset(states=states, actions=actions,
                                 targets=target_table.reshape(-1))
    states, actions, actions2 = np.unravel_index(
        np.arange(target_table.size),
        (model.n_states, model.n_actions_p1, model.n_actions_p2))
    return RegressionDataset(states=states, actions=actions, actions2=actions2,
                             targets=target_table.reshape(-1))


def _sigma_weights(model, sampling):
    """Tabular weights matching the sampling distribution, for the traced
    sigma-norm; the on-policy mixture varies over time so uniform weights
    stand in for it."""
    if isinstance(model, TabularMDP):
        shape = (model.n_states, model.n_actions)
    else:
        shape = (model.n_states, model.n_actions_p1, model.n_actions_p2)
    if sampling.kind == "explicit-weights":
        return sampling.weights.reshape(shape)
    return np.full(shape, 1.0 / np.prod(shape))


def _run_batch_loop(model, config, backup, make_targets, equilibrium_output):
    is_game = isinstance(model, TabularMarkovGame)
    tabular = isinstance(model, (TabularMDP, TabularMarkovGame))
    if config.exact_regression and not tabular:
        raise TypeError("exact regression needs a tabular model")
    rng_sample = rng_stream(config.seed, "fqi.sampling")
    rng_env = rng_stream(config.seed, "fqi.env")
    rng_init = rng_stream(config.seed, "fqi.init")
    rng_train = rng_stream(config.seed, "fqi.trainer")

    q_prev = _zero_q(model)
    trace = DiagnosticsTrace()
    q_tables = rho_tables = None
    sigma_norm = mu = q_star = None
    if tabular:
        q_tables = [tabulate(q_prev, model)]
        rho_tables = []
        sigma_norm = WeightedNorm(_sigma_weights(model, config.sampling), p=2.0)
        if config.track_diagnostics:
            mu = (np.asarray(config.mu_weights, dtype=np.float64)
                  if config.mu_weights is not None
                  else np.full(q_tables[0].shape, 1.0 / q_tables[0].size))
            q_star, _ = (exact.nash_value_iteration(model, tol=1e-10) if is_game
                         else exact.value_iteration(model, tol=1e-10))

    approx = None
    batch = None
    diverged = False
    q_penultimate = q_prev
    for k in range(config.iterations):
        t_start = time.perf_counter()
        if config.exact_regression:
            target_table = backup(model, q_tables[-1])
            dataset = _all_cells_dataset(model, target_table)
        else:
            if batch is None or config.fresh_samples_per_iteration:
                batch = _draw_batch(model, config.sampling, config.n_samples,
                                    rng_sample, rng_env, q_prev)
            targets = make_targets(batch, q_prev, model.gamma)
            dataset = _dataset_from_batch(model, batch, targets)
        if approx is None or not config.warm_start:
            approx = build_approximator(config.approximator, model, rng_init)
        report = fit_least_squares(approx, dataset, trainer=config.trainer,
                                   rng=rng_train)
        wall_ms = (time.perf_counter() - t_start) * 1e3
        record = IterationRecord(k=k, empirical_mse=report.final_mse,
                                 wall_ms=wall_ms)
        if tabular:
            table = tabulate(approx, model)
            rho = backup(model, q_tables[-1]) - table
            q_tables.append(table)
            rho_tables.append(rho)
            record.one_step_error_sigma = weighted_lp_norm(rho, sigma_norm)
            if config.track_diagnostics:
                record.suboptimality_1mu = _suboptimality_now(
                    model, table, q_star, mu, is_game)
        trace.append(record)
        q_penultimate = q_prev
        q_prev = approx
        if report.diverged:
            diverged = True
            break

    if tabular:
        final_table = q_tables[-1]
        policy = (equilibrium_output(model, final_table) if is_game
                  else exact.greedy_policy(final_table))
    else:
        policy = None
    trace.summary = _summarize(trace)
    return FqiResult(q_final=q_prev, policy=policy, trace=trace,
                     q_tables=q_tables, rho_tables=rho_tables,
                     q_penultimate=q_penultimate, diverged=diverged)


def _suboptimality_now(model, table, q_star, mu, is_game):
    norm = WeightedNorm(mu, p=1.0)
    if is_game:
        policy = exact.equilibrium_joint_policy(model, table).p1
        best_response = exact.best_response_policy(model, policy, tol=1e-10)
        q_pi = exact.joint_policy_evaluation(model, policy, best_response)
    else:
        q_pi = exact.policy_evaluation(model, exact.greedy_policy(table))
    return weighted_lp_norm(q_star - q_pi, norm)


def _summarize(trace):
    summary = {}
    if trace.records:
        last = trace.records[-1]
        summary["iterations"] = len(trace.records)
        summary["final_empirical_mse"] = last.empirical_mse
        if last.one_step_error_sigma is not None:
            summary["final_one_step_error_sigma"] = last.one_step_error_sigma
            summary["eps_max"] = trace.eps_max()
        if last.suboptimality_1mu is not None:
            summary["final_suboptimality_1mu"] = last.suboptimality_1mu
    return summary


def run_fqi(model, config):
    """Fitted Q-iteration; the returned policy is greedy for the final
    iterate on tabular models."""
    if isinstance(model, TabularMarkovGame):
        raise TypeError("run_fqi takes an MDP; use run_minimax_fqi for games")
    return _run_batch_loop(model, config, exact.bellman_optimality,
                           compute_targets, None)


def run_minimax_fqi(game, config):
    """Minimax fitted Q-iteration; the returned policy is the equilibrium
    joint policy of the final iterate."""
    if not isinstance(game, TabularMarkovGame):
        raise TypeError("run_minimax_fqi needs a TabularMarkovGame")
    return _run_batch_loop(game, config, exact.game_bellman_optimality,
                           compute_minimax_targets, exact.equilibrium_joint_policy)


def run_fqi_projected_sgd(model, config):
    """Fitted Q-iteration with projected single-sample SGD per regression.

    Each iteration restarts the two-layer network from the shared
    symmetric initialization (so the run starts at the zero function),
    performs ``sgd_steps`` projected updates on fresh samples, and adopts
    the averaged weight iterate.  Defaults follow ``steps = m`` and
    ``eta = 0.1 / sqrt(steps)`` and are overridable through the config.
    """
    if not isinstance(model, ContinuousMDP):
        raise TypeError("projected-SGD fitted Q-iteration needs a ContinuousMDP")
    if not isinstance(config.approximator, NtkSpec):
        raise TypeError("projected-SGD fitted Q-iteration needs an NtkSpec")
    from .approximators import projected_sgd_step

    spec = config.approximator
    steps = spec.m if config.sgd_steps is None else config.sgd_steps
    if steps < 0:
        raise ValueError("sgd_steps must be nonnegative")
    eta = config.sgd_eta if config.sgd_eta is not None else 0.1 / np.sqrt(max(steps, 1))
    rng_sample = rng_stream(config.seed, "fqi.sampling")
    rng_env = rng_stream(config.seed, "fqi.env")
    rng_init = rng_stream(config.seed, "fqi.init")

    net = build_approximator(spec, model, rng_init)
    anchor = net.w0.copy()
    q_prev = net.with_weights(anchor)
    q_penultimate = q_prev
    trace = DiagnosticsTrace()
    for k in range(config.iterations):
        t_start = time.perf_counter()
        net.w = anchor.copy()
        weight_sum = np.zeros_like(anchor)
        mse_sum = 0.0
        for _ in range(steps):
            state = rng_sample.uniform(0.0, 1.0, size=model.state_dim)
            action = int(rng_sample.integers(model.n_actions))
            sample = sample_transition(model, state, action, rng=rng_env)
            target = (sample.reward + model.gamma
                      * float(np.max(q_prev.evaluate_all(sample.next_state))))
            mse_sum += (target - net.evaluate(state, action)) ** 2
            projected_sgd_step(net, (state, action, target), eta)
            distance = net.distance_from_anchor()
            if distance > net.ball_radius + 1e-12:
                raise AssertionError(f"projection violated the weight ball: "
                                     f"{distance} > {net.ball_radius}")
            weight_sum += net.w
        averaged = weight_sum / steps if steps else anchor.copy()
        q_penultimate = q_prev
        q_prev = net.with_weights(averaged)
        wall_ms = (time.perf_counter() - t_start) * 1e3
        trace.append(IterationRecord(
            k=k, empirical_mse=(mse_sum / steps if steps else 0.0),
            wall_ms=wall_ms))
    trace.summary = _summarize(trace)
    return FqiResult(q_final=q_prev, policy=None, trace=trace,
                     q_penultimate=q_penultimate)
