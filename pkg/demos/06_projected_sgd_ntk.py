"""Fitted Q-iteration with projected single-sample SGD over a wide
two-layer network.

The symmetric initialization mirrors signs and duplicates rows, so the
network starts as the exact zero function; each regression step restarts
there, walks ``steps = m`` projected SGD updates inside a Frobenius ball
around the anchor weights, and adopts the averaged iterate.  Widening the
network shrinks the one-step Bellman error.
"""

import numpy as np

from fittedq import diagnostics, envs, fqi
from fittedq.approximators import symmetric_init

model = envs.make_random_continuous_mdp(state_dim=2, n_actions=2, gamma=0.9,
                                        r_max=1.0, seed=42)

net = symmetric_init(m=256, state_dim=2, n_actions=2,
                     rng=np.random.default_rng(0), ball_radius=2.0)
probe = np.random.default_rng(1)
worst = max(abs(net.evaluate(probe.uniform(0, 1, 2), int(probe.integers(2))))
            for _ in range(1000))
print(f"symmetric initialization: |Q(s,a)| over 1000 probes = {worst} "
      "(exactly zero)")

print("\nwidth sweep, median one-step Bellman error over 3 seeds:")
for m in (64, 256, 1024):
    errors = []
    for seed in range(3):
        config = fqi.FqiConfig(iterations=2,
                               approximator=fqi.NtkSpec(m=m, ball_radius=2.0),
                               seed=seed)
        result = fqi.run_fqi_projected_sgd(model, config)
        estimate = diagnostics.monte_carlo_one_step_error(
            result.q_final, result.q_penultimate, model,
            n_points=800, n_noise=16, rng=np.random.default_rng(77))
        errors.append(estimate.value)
    distance = result.q_final.distance_from_anchor()
    print(f"  m={m:5d}: median error {np.median(errors):.4f} "
          f"(final ||W - W0||_F = {distance:.4f} <= 2.0)")
