"""Bismut-type and conditional gradient estimators for the backward value.

Both estimators average the path functional

    g(X_T) M_T + sum_{r in (s, T]} dt f(r, X_r, Y_r, Z_r) M_r

where the weights M come from :mod:`fbsde.weights` and (Y, Z) are read from a
fitted :class:`~fbsde.bsde.BsdeSolution`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import rng
from .bsde import BackwardDriver, BsdeSolution, evaluate_solution
from .errors import EndpointSingularity, InvalidWindow, MissingSolution
from .sde import ForwardModel, Hamiltonian, PathEnsemble, TimeGrid, restart_ensemble, simulate_ensemble
from .weights import WeightSpec, weight_batch, weight_profile

REJECT_FLAG_FRACTION = 1e-3


@dataclass(frozen=True)
class GradientEstimate:
    value: float
    std_error: float
    n_paths: int
    n_rejected: int
    wall_time_ms: float
    estimator_tag: str
    flagged: bool = False

    @staticmethod
    def from_samples(samples, n_rejected, t_start, tag):
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        se = samples.std(ddof=1) / np.sqrt(n) if n > 1 else float("nan")
        return GradientEstimate(
            float(samples.mean()),
            float(se),
            int(n),
            int(n_rejected),
            (time.perf_counter() - t_start) * 1e3,
            tag,
            bool(n_rejected >= REJECT_FLAG_FRACTION * (n + n_rejected)),
        )

    def same_numbers(self, other) -> bool:
        """Equality ignoring wall time."""
        return (self.value, self.std_error, self.n_paths, self.n_rejected, self.estimator_tag) == (
            other.value, other.std_error, other.n_paths, other.n_rejected, other.estimator_tag)


def path_functional(model: ForwardModel, driver: BackwardDriver, ens: PathEnsemble,
                    spec: WeightSpec, v, sol=None, node_offset=0, driver_from=None):
    """Per-path samples of the gradient functional and a rejection mask.

    The weight is anchored at ``spec.anchor_s_index`` on ``ens``.  The driver
    sum runs over nodes ``driver_from+1 .. n`` (default: the anchor).  Grid
    node ``k`` of ``ens`` is node ``node_offset + k`` of ``sol``.  ``v`` may
    be a matrix of directions, giving samples of shape (P, q).
    """
    n = ens.grid.n_steps
    s = spec.anchor_s_index
    lo = s if driver_from is None else driver_from
    term = weight_batch(model, ens, spec.with_window(s, n), v)
    g = np.asarray(driver.terminal_g(ens.x[:, n]), float)
    vals = term.values
    gcol = g if vals.ndim == 1 else g[:, None]
    out = gcol * vals
    rejected = term.rejected.copy()
    if not driver.is_zero and lo < n:
        if sol is None:
            raise MissingSolution("a non-zero driver needs a fitted BsdeSolution (sol=...)")
        if lo < s:
            raise InvalidWindow(f"driver integral start {lo} precedes the weight anchor {s}")
        prof, rej = weight_profile(model, ens, spec, lo + 1, n, v)
        times = ens.grid.times
        for j, k in enumerate(range(lo + 1, n + 1)):
            x = ens.x[:, k]
            y, z = evaluate_solution(sol, node_offset + k, x)
            fk = driver.f(times[k], x, y, z) * (times[k] - times[k - 1])
            out = out + (fk if prof.ndim == 2 else fk[:, None]) * prof[:, j]
        rejected |= rej.any(axis=1)
    return out, rejected


def _hamiltonian_guard(model, driver, s_index, anchor):
    if isinstance(model.kind, Hamiltonian) and not driver.is_zero and s_index <= anchor:
        raise EndpointSingularity(
            "Hamiltonian weights are too singular at their anchor for the driver integral; "
            f"use s_index > {anchor}"
        )


def bismut_gradient(model: ForwardModel, driver: BackwardDriver, grid: TimeGrid, x0, v,
                    weight_spec: WeightSpec, sol: BsdeSolution = None, n_paths: int = 10_000,
                    seed: int = 0, s_index: int = 0, n_workers: int = 1) -> GradientEstimate:
    """grad_v E Y_s from weights anchored at the start point.

    ``s_index`` is the lower limit of the driver integral; the weights are
    always M_r^t(x0) with t = grid.t0.
    """
    t_start = time.perf_counter()
    if not 0 <= s_index < grid.n_steps:
        raise InvalidWindow(f"s_index {s_index} outside 0..{grid.n_steps - 1}")
    _hamiltonian_guard(model, driver, s_index, 0)
    if not driver.is_zero and sol is None:
        raise MissingSolution("a non-zero driver needs a fitted BsdeSolution (sol=...)")
    ens = simulate_ensemble(model, grid, x0, n_paths, seed, n_workers=n_workers)
    spec = weight_spec.with_window(0, grid.n_steps)
    samples, rej = path_functional(model, driver, ens, spec, v, sol, 0, s_index)
    return GradientEstimate.from_samples(samples[~rej], rej.sum(), t_start, "bismut")


@dataclass(frozen=True)
class ConditionalSample:
    outer_index: int
    x_s: np.ndarray
    grad_v_x_s: np.ndarray
    estimate: GradientEstimate


def inner_seed(seed: int, outer_index: int) -> int:
    return rng.derive_seed(seed, outer_index)


def conditional_gradient(model: ForwardModel, driver: BackwardDriver, grid: TimeGrid, x0, v,
                         s_index: int, weight_spec: WeightSpec, n_outer: int, n_inner: int,
                         seed: int, sol: BsdeSolution = None, n_workers: int = 1) -> list:
    """grad_v Y_s on each of ``n_outer`` outer paths by inner restarts.

    Outer path ``p`` runs with ``seed``; its inner restart uses
    ``inner_seed(seed, p)`` and the RNG step offset ``s_index`` so inner and
    outer keys never collide.  With ``s_index = 0`` and one outer path this
    reproduces :func:`bismut_gradient` exactly.
    """
    if not 0 <= s_index < grid.n_steps:
        raise InvalidWindow(f"s_index {s_index} outside 0..{grid.n_steps - 1}")
    if n_inner < 2:
        raise ValueError("n_inner must be at least 2")
    _hamiltonian_guard(model, driver, s_index, s_index)
    if not driver.is_zero and sol is None:
        raise MissingSolution("a non-zero driver needs a fitted BsdeSolution (sol=...)")
    v = np.asarray(v, dtype=float)
    if s_index == 0:
        xs = np.broadcast_to(np.asarray(x0, float), (n_outer, model.dim_d))
        js = np.broadcast_to(np.eye(model.dim_d), (n_outer, model.dim_d, model.dim_d))
    else:
        outer = simulate_ensemble(model, TimeGrid(grid.t0, grid.time(s_index), s_index), x0,
                                  n_outer, seed, n_workers=n_workers)
        xs, js = outer.x[:, -1], outer.jac[:, -1]
    sub = grid.tail(s_index)
    spec = weight_spec.with_window(0, sub.n_steps)
    out = []
    for p in range(n_outer):
        t_start = time.perf_counter()
        (inner,) = restart_ensemble(model, sub, xs[p:p + 1], js[p:p + 1], n_inner,
                                    inner_seed(seed, p), step_offset=s_index, n_workers=n_workers)
        samples, rej = path_functional(model, driver, inner, spec, v, sol, s_index)
        est = GradientEstimate.from_samples(samples[~rej], rej.sum(), t_start, "conditional")
        out.append(ConditionalSample(p, np.array(xs[p]), js[p] @ v, est))
    return out
