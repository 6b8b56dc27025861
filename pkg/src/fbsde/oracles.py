"""Independent reference values: CRN finite differences and closed forms.

Neither oracle touches the weight code, so they can judge it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import models
from .bsde import BackwardDriver, evaluate_solution, solve_lsmc
from .errors import UndefinedCase
from .estimators import GradientEstimate
from .sde import TimeGrid, simulate_ensemble


def _value_samples(model, driver, grid, x0, n_paths, seed, basis_degree, n_workers):
    """Per-path samples whose mean is the time-t0 value Y_t0(x0)."""
    ens = simulate_ensemble(model, grid, x0, n_paths, seed, n_workers=n_workers,
                            store_jacobian=False)
    if driver.is_zero:
        return np.asarray(driver.terminal_g(ens.x[:, -1]), float)
    sol = solve_lsmc(ens, driver, basis_degree)
    # node-0 regression is on constants, so Y_t0 is the mean of these targets
    y1 = sol.y_paths[:, 1]
    x = ens.x[:, 0]
    _, z0 = evaluate_solution(sol, 0, x)
    y0 = np.full(n_paths, y1.mean())
    return y1 + grid.dt * driver.f(grid.t0, x, y0, z0)


def fd_gradient(model, driver: BackwardDriver, grid: TimeGrid, x0, v, eps=1e-3,
                n_paths=10_000, seed=0, basis_degree=3, n_workers=1) -> GradientEstimate:
    """Central difference of Y_t0 along ``v`` with common random numbers.

    Both sides reuse the same Brownian increments; with a non-zero driver
    each side is an LSMC solve on its own (identically driven) cloud.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    t_start = time.perf_counter()
    x0 = np.asarray(x0, float)
    v = np.asarray(v, float)
    up = _value_samples(model, driver, grid, x0 + eps * v, n_paths, seed, basis_degree, n_workers)
    dn = _value_samples(model, driver, grid, x0 - eps * v, n_paths, seed, basis_degree, n_workers)
    return GradientEstimate.from_samples((up - dn) / (2 * eps), 0, t_start, "finite_difference")


@dataclass(frozen=True)
class BenchmarkCase:
    """A model/payoff pair with a closed-form directional derivative.

    ``closed_form_value(t, x, v)`` returns grad_v of the value at (t, x) for
    horizon ``T``.  ``build()`` returns the matching (model, driver).
    """

    name: str
    model_config: dict
    closed_form_value: Callable
    provenance_note: str
    T: float = 1.0
    dim: int = 2
    payoff: Callable = None
    driver_f: Callable = None
    extra: dict = field(default_factory=dict)

    def build(self):
        cfg = dict(self.model_config)
        kind = cfg.pop("kind")
        model = models.CATALOG[kind](**cfg)
        return model, BackwardDriver(self.payoff, self.driver_f, name=self.name)


def benchmark_value(case: BenchmarkCase, t, x, v) -> float:
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    if not t < case.T:
        raise UndefinedCase(f"{case.name}: need t < T = {case.T}, got t = {t}")
    if x.shape != (case.dim,) or v.shape != (case.dim,):
        raise UndefinedCase(f"{case.name}: expects vectors of dimension {case.dim}")
    val = float(case.closed_form_value(t, x, v))
    if not np.isfinite(val):
        raise UndefinedCase(f"{case.name}: closed form not finite at t={t}, x={x}")
    return val


def brownian_linear(a, T=1.0) -> BenchmarkCase:
    a = np.asarray(a, float)
    return BenchmarkCase(
        "brownian_linear", {"kind": "brownian", "d": len(a)},
        lambda t, x, v: a @ v,
        "X_T = x + W_T - W_t, so E<a, X_T> = <a, x> and its gradient is a.",
        T, len(a), payoff=lambda x: x @ a)


def ou_linear(a, kappa=1.0, T=1.0) -> BenchmarkCase:
    a = np.asarray(a, float)
    return BenchmarkCase(
        "ou_linear", {"kind": "ou", "kappa": kappa, "d": len(a)},
        lambda t, x, v: np.exp(-kappa * (T - t)) * (a @ v),
        "OU semigroup: E X_T = exp(-kappa (T-t)) x.",
        T, len(a), payoff=lambda x: x @ a)


def ou_sin(k, kappa=1.0, sigma=1.0, T=1.0) -> BenchmarkCase:
    k = np.asarray(k, float)

    def value(t, x, v):
        tau = T - t
        mean = np.exp(-kappa * tau) * x
        var = sigma ** 2 * (1 - np.exp(-2 * kappa * tau)) / (2 * kappa)
        return np.cos(k @ mean) * np.exp(-kappa * tau) * (k @ v) * np.exp(-(k @ k) * var / 2)

    return BenchmarkCase(
        "ou_sin", {"kind": "ou", "kappa": kappa, "d": len(k), "sigma": sigma}, value,
        "X_T ~ N(m, s^2 I) with m = exp(-kappa tau) x, s^2 = sigma^2 (1 - exp(-2 kappa tau)) "
        "/ (2 kappa); E sin<k, X_T> = sin<k, m> exp(-|k|^2 s^2 / 2), differentiate in x.",
        T, len(k), payoff=lambda x: np.sin(x @ k))


def kinetic_position(T=1.0) -> BenchmarkCase:
    return BenchmarkCase(
        "kinetic_position", {"kind": "kinetic"},
        lambda t, x, v: v[0] + (T - t) * v[1],
        "With btilde = 0 and B = sigma = 1, E X1_T = x1 + (T - t) x2.",
        T, 2, payoff=lambda x: x[:, 0])


def gruschin_square(scale=1.0, T=1.0) -> BenchmarkCase:
    def value(t, x, v):
        tau = T - t
        return 2 * scale ** 2 * x[0] * tau * v[0] + 2 * x[1] * v[1]

    return BenchmarkCase(
        "gruschin_square", {"kind": "gruschin", "scale": scale}, value,
        "Ito isometry: E (X2_T)^2 = x2^2 + scale^2 E int (x1 + W)^2 = "
        "x2^2 + scale^2 (x1^2 tau + tau^2 / 2).",
        T, 2, payoff=lambda x: x[:, 1] ** 2)


def with_linear_driver(case: BenchmarkCase, alpha: float) -> BenchmarkCase:
    """f = alpha y multiplies the value, hence its gradient, by exp(alpha (T-t))."""
    return BenchmarkCase(
        case.name + "_linear_driver", case.model_config,
        lambda t, x, v: np.exp(alpha * (case.T - t)) * case.closed_form_value(t, x, v),
        case.provenance_note + " Linear driver f = alpha y gives Y_t = exp(alpha (T-t)) E g.",
        case.T, case.dim, case.payoff, lambda t, x, y, z: alpha * y)
