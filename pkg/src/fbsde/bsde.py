"""Least-squares Monte Carlo for the backward equation.

Y_s = g(X_T) + int_s^T f(r, X, Y, Z) dr - int_s^T Z dW is solved backwards
on the grid:

    Z_i = E[Y_{i+1} dW_i / dt | X_i]
    Y_i = E[Y_{i+1} + dt f(t_i, X_i, Y_i, Z_i) | X_i]

with the inner ``Y_i`` resolved by one fixed-point substitution.  Each
conditional expectation is a least-squares projection on polynomials of the
standardized state.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import IllConditionedRegression

# bound on the condition number of the normal equations A^T A
NORMAL_COND_MAX = 1e12
CONSTANT_TOL = 1e-12


@dataclass(frozen=True)
class BackwardDriver:
    """Terminal payoff g(x) and driver f(t, x, y, z), both batched.

    ``terminal_g`` maps ``(P, d) -> (P,)``; ``driver_f`` maps
    ``(t, (P, d), (P,), (P, m)) -> (P,)``.  ``driver_f=None`` means f = 0.
    """

    terminal_g: Callable
    driver_f: Optional[Callable] = None
    lipschitz_g: float = 1.0
    lipschitz_f: float = 0.0
    growth_exponent_q: float = 0.0
    name: str = "driver"

    @property
    def is_zero(self) -> bool:
        return self.driver_f is None

    def f(self, t, x, y, z):
        if self.driver_f is None:
            return np.zeros(x.shape[0])
        return self.driver_f(t, x, y, z)


def exponents(d: int, degree: int) -> np.ndarray:
    """All monomial exponent vectors of total degree <= degree, graded order."""
    rows = [e for k in range(degree + 1)
            for e in itertools.product(range(k + 1), repeat=d) if sum(e) == k]
    return np.array(rows, dtype=int).reshape(len(rows), d)


@dataclass(frozen=True)
class NodeBasis:
    """Standardization and active variables of the basis at one node."""

    center: np.ndarray
    scale: np.ndarray
    active: np.ndarray  # bool mask of non-constant coordinates
    powers: np.ndarray  # exponent rows over active coordinates

    def design(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        z = (x[:, self.active] - self.center[self.active]) / self.scale[self.active]
        cols = np.ones((x.shape[0], len(self.powers)))
        for j, e in enumerate(self.powers):
            for k, p in enumerate(e):
                if p:
                    cols[:, j] *= z[:, k] ** p
        return cols


def node_basis(x, degree) -> NodeBasis:
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    active = scale > CONSTANT_TOL * np.maximum(1.0, np.abs(center))
    scale = np.where(active, scale, 1.0)
    return NodeBasis(center, scale, active, exponents(int(active.sum()), degree))


def _check_design(design, where):
    if design.shape[0] < design.shape[1]:
        raise IllConditionedRegression(
            f"regression at {where} has {design.shape[1]} basis functions but only "
            f"{design.shape[0]} paths; lower basis_degree or add paths"
        )
    sv = np.linalg.svd(design, compute_uv=False)
    cond = (sv[0] / sv[-1]) ** 2 if sv[-1] > 0 else np.inf
    if cond > NORMAL_COND_MAX:
        raise IllConditionedRegression(
            f"regression at {where} has normal-equation condition {cond:.3g} "
            f"(limit {NORMAL_COND_MAX:.0e}); lower basis_degree or add paths"
        )


def _fit(design, target):
    return np.linalg.lstsq(design, target, rcond=None)[0]


@dataclass(frozen=True)
class BsdeSolution:
    grid: object
    basis_degree: int
    bases: tuple  # NodeBasis per node
    coeffs_y: tuple  # (n_basis,) per node
    coeffs_z: tuple  # (n_basis, m) per node; None at the horizon
    residual_norms: np.ndarray
    y_paths: np.ndarray  # fitted Y on the sample cloud, (P, n+1)

    @property
    def n_nodes(self):
        return len(self.coeffs_y)


def solve_lsmc(ensemble, driver: BackwardDriver, basis_degree: int = 3) -> BsdeSolution:
    """Backward dynamic programming on the paths of ``ensemble``.

    ``ensemble`` needs ``grid``, ``x`` (P, n+1, d) and ``dw`` (P, n, m).
    """
    if basis_degree < 1:
        raise ValueError("basis_degree must be at least 1")
    x, dw, grid = ensemble.x, ensemble.dw, ensemble.grid
    P, n1, _ = x.shape
    if P == 0:
        raise ValueError("empty ensemble")
    n = n1 - 1
    m = dw.shape[2]
    times = grid.times
    bases = [None] * n1
    cy = [None] * n1
    cz = [None] * n1
    res = np.zeros(n1)
    ypaths = np.empty((P, n1))

    gT = np.asarray(driver.terminal_g(x[:, n]), dtype=float)
    bases[n] = node_basis(x[:, n], basis_degree)
    A = bases[n].design(x[:, n])
    _check_design(A, f"node {n}")
    cy[n] = _fit(A, gT)
    res[n] = np.sqrt(np.mean((A @ cy[n] - gT) ** 2))
    y_next = gT
    ypaths[:, n] = gT
    for i in range(n - 1, -1, -1):
        dt = times[i + 1] - times[i]
        bases[i] = node_basis(x[:, i], basis_degree)
        A = bases[i].design(x[:, i])
        _check_design(A, f"node {i}")
        cy0 = _fit(A, y_next)
        y0 = A @ cy0
        # subtracting the X_i-measurable y0 leaves E[. dW_i | X_i] unchanged
        cz[i] = _fit(A, (y_next - y0)[:, None] * dw[:, i] / dt)
        z = A @ cz[i]
        if driver.is_zero:
            target = y_next
            cy[i] = cy0
        else:
            target = y_next + dt * driver.f(times[i], x[:, i], y0, z)
            cy[i] = _fit(A, target)
        fitted = A @ cy[i]
        res[i] = np.sqrt(np.mean((fitted - target) ** 2))
        ypaths[:, i] = fitted
        y_next = fitted
    for c in cy + cz[:n]:
        if not np.all(np.isfinite(c)):
            raise IllConditionedRegression("non-finite regression coefficients")
    return BsdeSolution(grid, basis_degree, tuple(bases), tuple(cy), tuple(cz), res, ypaths)


def evaluate_solution(sol: BsdeSolution, time_index: int, state):
    """(y, z) at one node for one state ``(d,)`` or a batch ``(P, d)``."""
    if not 0 <= time_index < sol.n_nodes:
        raise IndexError(f"time_index {time_index} outside 0..{sol.n_nodes - 1}")
    state = np.asarray(state, dtype=float)
    single = state.ndim == 1
    A = sol.bases[time_index].design(state)
    y = A @ sol.coeffs_y[time_index]
    if time_index == sol.n_nodes - 1:
        # the recursion yields no Z at the horizon; use the last step's fit
        z = sol.bases[time_index - 1].design(state) @ sol.coeffs_z[time_index - 1]
    else:
        z = A @ sol.coeffs_z[time_index]
    if single:
        return float(y[0]), z[0]
    return y, z
