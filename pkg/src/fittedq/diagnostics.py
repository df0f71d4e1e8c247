"""Measurement of the theoretical quantities behind fitted Q-iteration.

Weighted norms, one-step Bellman errors, suboptimality gaps, concentration
coefficients of policy pushforwards, and the closed-form error-propagation
bound they plug into.  Tabular quantities are exact; continuous-state
norms are Monte Carlo estimates with reported standard errors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import exact
from .envs import TabularMDP, TabularMarkovGame

EXHAUSTIVE_SEQUENCE_LIMIT = 10**6


@dataclass(frozen=True)
class WeightedNorm:
    """An l_p norm weighted by a probability measure over the table cells."""

    weights: np.ndarray
    p: float = 2.0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(weights < 0):
            raise ValueError("norm weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"norm weights sum to {weights.sum()!r}, not 1")
        if self.p < 1:
            raise ValueError("norm order p must be at least 1")
        object.__setattr__(self, "weights", weights)


def uniform_norm(shape, p=2.0):
    size = int(np.prod(shape))
    return WeightedNorm(np.full(shape, 1.0 / size), p=p)


def weighted_lp_norm(values, norm):
    """Exact weighted norm ``(sum_i w_i |f_i|^p)^(1/p)`` of a table."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != norm.weights.shape:
        raise ValueError(f"table shape {values.shape} does not match "
                         f"weight shape {norm.weights.shape}")
    return float((norm.weights * np.abs(values) ** norm.p).sum() ** (1.0 / norm.p))


@dataclass(frozen=True)
class NormEstimate:
    value: float
    standard_error: float
    n_samples: int


def monte_carlo_lp_norm(fn, sampler, p=2.0, n_samples=10_000, rng=None):
    """Monte Carlo ``l_p`` norm of ``fn`` under the sampling distribution.

    ``sampler(rng)`` draws one input; ``fn`` maps it to a scalar.  The
    standard error of the norm follows from the delta method applied to
    the mean of ``|f|^p``.
    """
    rng = rng or np.random.default_rng(0)
    draws = np.array([abs(float(fn(sampler(rng)))) ** p for _ in range(n_samples)])
    mean = draws.mean()
    sd = draws.std(ddof=1) / math.sqrt(n_samples)
    value = mean ** (1.0 / p)
    if mean > 0:
        stderr = sd * value / (p * mean)
    else:
        stderr = 0.0
    return NormEstimate(float(value), float(stderr), n_samples)


def one_step_bellman_error(q_next, q_prev, model, sigma):
    """``|| T Q_prev - Q_next ||_sigma`` with the exact tabular backup."""
    if isinstance(model, TabularMDP):
        backed_up = exact.bellman_optimality(model, q_prev)
    elif isinstance(model, TabularMarkovGame):
        backed_up = exact.game_bellman_optimality(model, q_prev)
    else:
        raise TypeError("exact one-step error needs a tabular model; use "
                        "monte_carlo_one_step_error for continuous states")
    return weighted_lp_norm(backed_up - np.asarray(q_next, dtype=np.float64), sigma)


def _evaluate_states(q, states):
    batch = getattr(q, "evaluate_states", None)
    if batch is not None:
        return np.asarray(batch(states))
    return np.stack([np.asarray(q.evaluate_all(s)) for s in states])


def monte_carlo_one_step_error(q_next, q_prev, model, n_points=2000,
                               n_noise=64, rng=None, p=2.0):
    """Sampled ``|| T Q_prev - Q_next ||`` for a continuous-state model.

    Evaluation points draw states uniformly on the cube and actions
    uniformly; the inner expectation over transition noise uses
    ``n_noise`` draws per point.
    """
    rng = rng or np.random.default_rng(0)
    states = rng.uniform(0.0, 1.0, size=(n_points, model.state_dim))
    actions = rng.integers(model.n_actions, size=n_points)
    noise = rng.uniform(-1.0, 1.0, size=(n_points, n_noise, model.state_dim))
    gaps = np.empty(n_points)
    for action in range(model.n_actions):
        rows = np.nonzero(actions == action)[0]
        if len(rows) == 0:
            continue
        chunk = states[rows]
        flat_next = model.next_state_batch(
            np.repeat(chunk, n_noise, axis=0), action,
            noise[rows].reshape(-1, model.state_dim))
        best_next = _evaluate_states(q_prev, flat_next).max(axis=1)
        lookahead = best_next.reshape(len(rows), n_noise).mean(axis=1)
        backup = model.reward_batch(chunk, action) + model.gamma * lookahead
        predicted = _evaluate_states(q_next, chunk)[:, action]
        gaps[rows] = np.abs(backup - predicted) ** p
    mean = gaps.mean()
    sd = gaps.std(ddof=1) / math.sqrt(n_points)
    value = mean ** (1.0 / p)
    stderr = sd * value / (p * mean) if mean > 0 else 0.0
    return NormEstimate(float(value), float(stderr), n_points)


@dataclass(frozen=True)
class KappaResult:
    value: float
    mode: str
    is_lower_bound: bool
    n_sequences: int


def _pushforward(mdp, dist, policy_actions):
    """Push an (S, A) measure one step: through the kernel, then the
    deterministic policy given as an action per state."""
    state_marginal = np.einsum("sa,sat->t", dist, mdp.transition)
    out = np.zeros_like(dist)
    out[np.arange(mdp.n_states), policy_actions] = state_marginal
    return out


def _pushforward_stochastic(mdp, dist, policy):
    state_marginal = np.einsum("sa,sat->t", dist, mdp.transition)
    return state_marginal[:, None] * policy


def _kappa_of(dist, sigma):
    mass_off_support = dist[sigma == 0.0].sum()
    if mass_off_support > 0.0:
        return math.inf
    ratio_sq = np.divide(dist * dist, sigma, out=np.zeros_like(dist),
                         where=sigma > 0.0)
    return math.sqrt(ratio_sq.sum())


def concentration_coefficient(mdp, mu, sigma, m, mode="exhaustive",
                              n_sequences=10_000, rng=None,
                              stochastic_fraction=0.25):
    """m-th concentration coefficient of ``mu`` relative to ``sigma``.

    The coefficient is the supremum, over length-m policy sequences, of
    the L2(sigma) norm of the density of the pushforward of ``mu``
    through the m-step kernel.  The supremum of this convex functional
    over the product of policy simplices is attained at deterministic
    sequences, so exhaustive mode enumerates those; Monte Carlo mode
    samples random sequences (deterministic plus a stochastic fraction as
    a cross-check) and is therefore a lower bound.

    If ``sigma`` misses support where the pushforward has mass the
    coefficient is infinite and reported as such.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    shape = (mdp.n_states, mdp.n_actions)
    if mu.shape != shape or sigma.shape != shape:
        raise ValueError(f"mu and sigma must have shape {shape}")
    if mode == "exhaustive":
        n_policies = mdp.n_actions ** mdp.n_states
        if n_policies ** m > EXHAUSTIVE_SEQUENCE_LIMIT:
            raise ValueError(
                f"{n_policies ** m} policy sequences exceed the enumeration "
                f"limit {EXHAUSTIVE_SEQUENCE_LIMIT}; use mode='monte-carlo'")
        policies = [np.array(acts) for acts in
                    itertools.product(range(mdp.n_actions), repeat=mdp.n_states)]
        best = 0.0
        count = 0

        def recurse(dist, depth):
            nonlocal best, count
            if depth == m:
                count += 1
                best = max(best, _kappa_of(dist, sigma))
                return
            for actions in policies:
                recurse(_pushforward(mdp, dist, actions), depth + 1)

        recurse(mu, 0)
        return KappaResult(float(best), "exhaustive", False, count)
    if mode == "monte-carlo":
        rng = rng or np.random.default_rng(0)
        best = 0.0
        for i in range(n_sequences):
            dist = mu
            stochastic = rng.random() < stochastic_fraction
            for _ in range(m):
                if stochastic:
                    policy = rng.dirichlet(np.ones(mdp.n_actions),
                                           size=mdp.n_states)
                    dist = _pushforward_stochastic(mdp, dist, policy)
                else:
                    actions = rng.integers(mdp.n_actions, size=mdp.n_states)
                    dist = _pushforward(mdp, dist, actions)
            best = max(best, _kappa_of(dist, sigma))
        return KappaResult(float(best), "monte-carlo", True, n_sequences)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class PhiEstimate:
    """Truncated discounted kappa sum plus a separately reported tail bound.

    ``phi_truncated`` is exact over m <= m_max; ``tail_bound`` extends the
    sum with kappa frozen at the largest computed value and is never
    silently folded in.
    """

    phi_truncated: float
    tail_bound: float
    kappas: tuple

    @property
    def total(self):
        return self.phi_truncated + self.tail_bound


def phi_estimate(mdp, mu, sigma, m_max, mode="exhaustive", **kwargs):
    """Discounted, normalized sum ``(1-gamma)^2 sum_m gamma^(m-1) m kappa(m)``
    truncated at ``m_max``."""
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    gamma = mdp.gamma
    kappas = [concentration_coefficient(mdp, mu, sigma, m, mode=mode, **kwargs)
              for m in range(1, m_max + 1)]
    weight = (1.0 - gamma) ** 2
    phi_truncated = weight * sum(gamma ** (m - 1) * m * k.value
                                 for m, k in enumerate(kappas, start=1))
    kappa_sup = max(k.value for k in kappas)
    # sum_{m=1}^{M} gamma^(m-1) m = (1 - gamma^M (1 + M(1-gamma))) / (1-gamma)^2
    partial = (1.0 - gamma ** m_max * (1.0 + m_max * (1.0 - gamma))) / (1.0 - gamma) ** 2
    tail_weight = 1.0 / (1.0 - gamma) ** 2 - partial
    tail_bound = weight * kappa_sup * tail_weight
    return PhiEstimate(float(phi_truncated), float(tail_bound),
                       tuple(k.value for k in kappas))


@dataclass(frozen=True)
class BoundInputs:
    """Inputs to the closed-form error-propagation bound."""

    eps_max: float
    phi: float
    gamma: float
    iterations: int
    r_max: float

    def __post_init__(self):
        if self.eps_max < 0 or self.phi < 0 or self.r_max < 0:
            raise ValueError("bound inputs must be nonnegative")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")


def error_propagation_bound(inputs):
    """``2 phi gamma eps_max / (1-gamma)^2 + 4 gamma^(K+1) R_max / (1-gamma)^2``."""
    denom = (1.0 - inputs.gamma) ** 2
    statistical = 2.0 * inputs.phi * inputs.gamma * inputs.eps_max / denom
    algorithmic = 4.0 * inputs.gamma ** (inputs.iterations + 1) * inputs.r_max / denom
    return statistical + algorithmic


def suboptimality(mdp, policy, mu, tol=1e-10):
    """``|| Q* - Q^pi ||_{1, mu}`` via the exact solver oracles."""
    q_star, _ = exact.value_iteration(mdp, tol=tol)
    q_pi = exact.policy_evaluation(mdp, policy)
    norm = WeightedNorm(mu, p=1.0)
    return weighted_lp_norm(q_star - q_pi, norm)


def game_suboptimality(game, policy_p1, mu, tol=1e-10):
    """``|| Q* - Q^{pi, nu*_pi} ||_{1, mu}``: the gap to the minimax value
    when the opponent best-responds to ``policy_p1``."""
    q_star, _ = exact.nash_value_iteration(game, tol=tol)
    best_response = exact.best_response_policy(game, policy_p1, tol=tol)
    q_adversarial = exact.joint_policy_evaluation(game, policy_p1, best_response)
    norm = WeightedNorm(mu, p=1.0)
    return weighted_lp_norm(q_star - q_adversarial, norm)


@dataclass(frozen=True)
class SandwichReport:
    max_violation: float
    per_iteration: tuple

    @property
    def holds(self):
        return all(v <= 1e-9 for v in self.per_iteration)


def _apply_p_pi(mdp, policy, table):
    """(P^pi f)(s,a) = E[ f(S', A'~pi) ]."""
    value_under_policy = (policy * table).sum(axis=1)
    return mdp.transition @ value_under_policy


def verify_sandwich(mdp, q_tables, rho_tables, tol=1e-12):
    """Check the one-step error sandwich along a fitted-Q trajectory.

    For each iteration k, writing ``e_k = Q* - Q_k`` and ``rho_{k+1}`` for
    the recorded regression error ``T Q_k - Q_{k+1}``, both inequalities

        gamma P^{pi*} e_k + rho_{k+1} >= e_{k+1} >= gamma P^{pi_k} e_k + rho_{k+1}

    must hold elementwise (``pi_k`` greedy for ``Q_k``, ``pi*`` greedy for
    ``Q*``).  The report carries the worst violation per iteration, so a
    trace whose ``Q_{k+1}`` was perturbed without updating ``rho_{k+1}``
    is flagged with a positive violation.
    """
    if len(rho_tables) != len(q_tables) - 1:
        raise ValueError("need one rho table per transition between Q tables")
    q_star, _ = exact.value_iteration(mdp, tol=tol)
    pi_star = exact.greedy_policy(q_star)
    violations = []
    for k in range(len(rho_tables)):
        q_k = np.asarray(q_tables[k], dtype=np.float64)
        q_next = np.asarray(q_tables[k + 1], dtype=np.float64)
        rho = np.asarray(rho_tables[k], dtype=np.float64)
        error_k = q_star - q_k
        error_next = q_star - q_next
        upper = mdp.gamma * _apply_p_pi(mdp, pi_star, error_k) + rho
        lower = mdp.gamma * _apply_p_pi(mdp, exact.greedy_policy(q_k), error_k) + rho
        violation = max(float((error_next - upper).max()),
                        float((lower - error_next).max()))
        violations.append(violation)
    return SandwichReport(max(violations) if violations else 0.0,
                          tuple(violations))


@dataclass
class IterationRecord:
    """Per-iteration diagnostics of one batch-RL run."""

    k: int
    empirical_mse: float
    one_step_error_sigma: float | None = None
    suboptimality_1mu: float | None = None
    wall_ms: float = 0.0


@dataclass
class DiagnosticsTrace:
    """Ordered per-iteration records plus run-level summary scalars."""

    records: list[IterationRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def append(self, record):
        if self.records and record.k <= self.records[-1].k:
            raise ValueError("iteration index must increase monotonically")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def eps_max(self):
        errors = [r.one_step_error_sigma for r in self.records
                  if r.one_step_error_sigma is not None]
        return max(errors) if errors else None
