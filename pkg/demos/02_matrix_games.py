"""Zero-sum matrix games solved exactly by the built-in simplex.

The value and both mixed minimax strategies come from one LP; the demo
verifies them by playing each strategy against a best-responding
opponent (exploitability) and by checking strong duality on random
matrices.
"""

import numpy as np

from fittedq import matrix_game

named = {
    "matching pennies": [[1.0, -1.0], [-1.0, 1.0]],
    "rock-paper-scissors": [[0.0, -1.0, 1.0], [1.0, 0.0, -1.0],
                            [-1.0, 1.0, 0.0]],
    "asymmetric 2x2": [[3.0, 1.0], [0.0, 2.0]],
}

for name, payoff in named.items():
    sol = matrix_game.solve(payoff)
    row = matrix_game.best_response_value(payoff, sol.row_strategy, "row")
    col = matrix_game.best_response_value(payoff, sol.col_strategy, "col")
    print(f"{name}:")
    print(f"  value {sol.value:+.6f}")
    print(f"  row strategy {np.round(sol.row_strategy, 6)} "
          f"guarantees {row:+.6f}")
    print(f"  col strategy {np.round(sol.col_strategy, 6)} "
          f"concedes   {col:+.6f}")
    print(f"  duality gap {col - row:.2e}")

print("strong duality on 1000 random matrices up to 10x10:")
rng = np.random.default_rng(1)
worst = 0.0
for _ in range(1000):
    shape = (int(rng.integers(1, 11)), int(rng.integers(1, 11)))
    m = rng.uniform(-5, 5, size=shape)
    sol = matrix_game.solve(m)
    gap = (matrix_game.best_response_value(m, sol.col_strategy, "col")
           - matrix_game.best_response_value(m, sol.row_strategy, "row"))
    worst = max(worst, gap)
print(f"  worst duality gap: {worst:.2e}")
