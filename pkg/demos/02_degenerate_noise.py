"""Gradients when the noise does not reach every coordinate.

Two models where sigma sigma^T is singular:

* a Gruschin-type pair in which the second coordinate only feels noise through
  the first (dX2 = X1 dW2), handled by the random Gram matrix weight;
* a kinetic system where position is driven by velocity alone, handled by the
  Hermite-interpolation weight.
"""

import numpy as np

from fbsde import TimeGrid, WeightSpec, bismut_gradient, fd_gradient, oracles, simulate_ensemble
from fbsde.weights import hamiltonian_batch

grid = TimeGrid(0.0, 1.0, 100)

case = oracles.gruschin_square()
model, driver = case.build()
x0 = np.array([1.0, 0.0])
for v in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
    w = bismut_gradient(model, driver, grid, x0, v, WeightSpec("gruschin", 0, 100, v), n_paths=20_000, seed=1)
    fd = fd_gradient(model, driver, grid, x0, v, 1e-3, 20_000, seed=2)
    print(f"gruschin  v={v}  weight {w.value:.4f}+-{w.std_error:.4f}  fd {fd.value:.4f}+-{fd.std_error:.4f}  "
          f"exact {oracles.benchmark_value(case, 0.0, x0, v):.4f}  rejected {w.n_rejected}")

case = oracles.kinetic_position()
model, driver = case.build()
x0 = np.array([0.5, 0.2])
for v in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
    w = bismut_gradient(model, driver, grid, x0, v, WeightSpec("hamiltonian", 0, 100, v), n_paths=20_000, seed=3)
    print(f"kinetic   v={v}  weight {w.value:.4f}+-{w.std_error:.4f}  "
          f"exact {oracles.benchmark_value(case, 0.0, x0, v):.4f}")

# The price of degeneracy: the kinetic weight's second moment blows up like gap^-3.
ens = simulate_ensemble(model, grid, x0, 10_000, 4)
print("gap   E|M|^2")
for r in (10, 20, 50, 100):
    m = (hamiltonian_batch(model, ens, 0, r, np.eye(2)).values ** 2).sum(axis=1).mean()
    print(f"{grid.time(r):.2f}  {m:10.1f}")
