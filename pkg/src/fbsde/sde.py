"""Euler-Maruyama simulation of forward paths together with their Jacobian flow.

Arrays are batched over paths: a state batch has shape ``(P, d)``, a
diffusion batch ``(P, d, m)`` and a diffusion Jacobian ``(P, d, m, d)`` with
entry ``[p, i, k, j] = d sigma_ik / d x_j``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import rng
from .errors import DimensionMismatch, NonFiniteState, RankDeficientB

# paths per work unit; fixed so results never depend on the worker count
CHUNK = 4096


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.T)) or self.t0 >= self.T:
            raise ValueError(f"need t0 < T, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = self.t0 + self.dt * np.arange(self.n_steps + 1)
        t[-1] = self.T
        return t

    def time(self, i: int) -> float:
        if not 0 <= i <= self.n_steps:
            raise IndexError(f"node {i} outside 0..{self.n_steps}")
        return float(self.times[i])

    def tail(self, i: int) -> "TimeGrid":
        """Grid from node ``i`` to the horizon (same step)."""
        if not 0 <= i < self.n_steps:
            raise IndexError(f"tail start {i} must lie in 0..{self.n_steps - 1}")
        if i == 0:
            return self
        return TimeGrid(self.time(i), self.T, self.n_steps - i)

    def index_of(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        return min(max(k, 0), self.n_steps)


@dataclass(frozen=True)
class NonDegenerate:
    pass


@dataclass(frozen=True)
class Gruschin:
    """First block is Brownian, second block is driven by ``sigma_block(x1)``."""

    d1: int
    d2: int
    alpha: float
    sigma_block: Callable  # (P, d1) -> (P, d2, d2)
    sigma_block_jacobian: Callable  # (P, d1) -> (P, d2, d2, d1)

    def __post_init__(self):
        if not 1.0 <= self.alpha < self.d1 / 2 + 1:
            raise ValueError(f"alpha must satisfy 1 <= alpha < d1/2 + 1, got {self.alpha}")


@dataclass(frozen=True)
class Hamiltonian:
    """Kinetic structure: position' = B velocity, velocity driven by btilde and sigma_t."""

    B: np.ndarray
    sigma_t: Callable  # t -> (d2, d2)
    btilde: Callable  # (t, (P, d)) -> (P, d2)
    btilde_jacobian: Callable  # (t, (P, d)) -> (P, d2, d)

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "B", B)
        if np.linalg.matrix_rank(B) < B.shape[0]:
            raise RankDeficientB(f"B of shape {B.shape} lacks full row rank")

    @property
    def d1(self) -> int:
        return self.B.shape[0]

    @property
    def d2(self) -> int:
        return self.B.shape[1]


ModelKind = Union[NonDegenerate, Gruschin, Hamiltonian]


@dataclass(frozen=True)
class ForwardModel:
    """Batched coefficients of dX = b(t, X) dt + sigma(t, X) dW.

    ``diffusion_jacobian`` may be ``None`` for state-independent diffusions,
    which skips the noise term of the variational equation.
    """

    dim_d: int
    dim_m: int
    drift: Callable
    diffusion: Callable
    drift_jacobian: Callable
    diffusion_jacobian: Optional[Callable] = None
    kind: ModelKind = field(default_factory=NonDegenerate)
    lipschitz_bound: float = 1.0
    tag: str = "model"

    def __post_init__(self):
        if isinstance(self.kind, Hamiltonian):
            d1, d2 = self.kind.d1, self.kind.d2
            if self.dim_d != d1 + d2 or self.dim_m != d2:
                raise DimensionMismatch(
                    f"Hamiltonian kind needs d = d1+d2 = {d1 + d2} and m = d2 = {d2}, "
                    f"got d={self.dim_d}, m={self.dim_m}"
                )
        if isinstance(self.kind, Gruschin):
            n = self.kind.d1 + self.kind.d2
            if self.dim_d != n or self.dim_m != n:
                raise DimensionMismatch(
                    f"Gruschin kind needs d = m = d1+d2 = {n}, got d={self.dim_d}, m={self.dim_m}"
                )
        if self.lipschitz_bound < 0:
            raise ValueError("lipschitz_bound must be non-negative")


@dataclass(frozen=True)
class PathBundle:
    """Read-only view of one trajectory inside a PathEnsemble."""

    grid: TimeGrid
    dw: np.ndarray
    x: np.ndarray
    jac: Optional[np.ndarray]
    stream_id: int


@dataclass(frozen=True)
class PathEnsemble:
    grid: TimeGrid
    dw: np.ndarray  # (P, n, m)
    x: np.ndarray  # (P, n+1, d)
    jac: Optional[np.ndarray]  # (P, n+1, d, d)
    stream_ids: np.ndarray
    master_seed: int
    model_tag: str
    step_offset: int = 0

    def __post_init__(self):
        for a in (self.dw, self.x) + ((self.jac,) if self.jac is not None else ()):
            a.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    def __len__(self):
        return self.n_paths

    def __getitem__(self, p: int) -> PathBundle:
        return PathBundle(
            self.grid,
            self.dw[p],
            self.x[p],
            None if self.jac is None else self.jac[p],
            int(self.stream_ids[p]),
        )

    @property
    def paths(self):
        return [self[p] for p in range(self.n_paths)]

    def subset(self, idx) -> "PathEnsemble":
        idx = np.asarray(idx)
        return PathEnsemble(
            self.grid,
            self.dw[idx],
            self.x[idx],
            None if self.jac is None else self.jac[idx],
            self.stream_ids[idx],
            self.master_seed,
            self.model_tag,
            self.step_offset,
        )


def euler_paths(model: ForwardModel, times, x0, dw, jac0=None, store_jacobian=True):
    """Run the Euler recursion for X and its Jacobian on given increments.

    ``x0`` is ``(P, d)`` and ``jac0`` is ``(P, d, d)`` or ``None`` (identity).
    """
    P, n, m = dw.shape
    d = model.dim_d
    if x0.shape != (P, d):
        raise DimensionMismatch(f"initial states have shape {x0.shape}, expected {(P, d)}")
    if m != model.dim_m:
        raise DimensionMismatch(f"increments have {m} components, model noise is {model.dim_m}")
    x = np.empty((P, n + 1, d))
    x[:, 0] = x0
    jac = None
    if store_jacobian:
        jac = np.empty((P, n + 1, d, d))
        if jac0 is None:
            jac[:, 0] = np.eye(d)
        else:
            if jac0.shape != (P, d, d):
                raise DimensionMismatch(f"Jacobian seeds have shape {jac0.shape}, expected {(P, d, d)}")
            jac[:, 0] = jac0
    for i in range(n):
        t = times[i]
        dt = times[i + 1] - t
        xi = x[:, i]
        sig = model.diffusion(t, xi)
        if sig.shape != (P, d, m):
            raise DimensionMismatch(f"diffusion returned {sig.shape}, expected {(P, d, m)}")
        x[:, i + 1] = xi + model.drift(t, xi) * dt + np.einsum("pdm,pm->pd", sig, dw[:, i])
        if store_jacobian:
            lin = model.drift_jacobian(t, xi) * dt
            if model.diffusion_jacobian is not None:
                lin = lin + np.einsum("pimj,pm->pij", model.diffusion_jacobian(t, xi), dw[:, i])
            jac[:, i + 1] = jac[:, i] + lin @ jac[:, i]
        if not np.isfinite(x[:, i + 1]).all() or (
            store_jacobian and not np.isfinite(jac[:, i + 1]).all()
        ):
            raise NonFiniteState(
                f"non-finite state at node {i + 1} (t={times[i + 1]:.6g}); "
                "step too coarse or coefficients explode"
            )
    return x, jac


def _as_batch(x0, P, d):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (d,):
        return np.broadcast_to(x0, (P, d)).copy()
    if x0.shape == (P, d):
        return x0.copy()
    raise DimensionMismatch(f"initial state has shape {x0.shape}, model dimension is {d}")


def _run_chunks(n_paths, n_workers, work):
    starts = list(range(0, n_paths, CHUNK))
    if n_workers <= 1 or len(starts) == 1:
        return [work(a, min(a + CHUNK, n_paths)) for a in starts]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(lambda a: work(a, min(a + CHUNK, n_paths)), starts))


def _simulate(model, grid, x0, jac0, streams, master_seed, step_offset, n_workers, store_jacobian):
    n_paths = len(streams)
    times = grid.times

    def work(a, b):
        dw = rng.brownian_increments(
            master_seed, streams[a:b], grid.n_steps, model.dim_m, grid.dt, step_offset
        )
        j0 = None if jac0 is None else jac0[a:b]
        x, jac = euler_paths(model, times, x0[a:b], dw, j0, store_jacobian)
        return dw, x, jac

    parts = _run_chunks(n_paths, n_workers, work)
    dw = np.concatenate([p[0] for p in parts])
    x = np.concatenate([p[1] for p in parts])
    jac = np.concatenate([p[2] for p in parts]) if store_jacobian else None
    return PathEnsemble(grid, dw, x, jac, np.asarray(streams, dtype=np.uint64),
                        int(master_seed), model.tag, step_offset)


def simulate_ensemble(
    model: ForwardModel,
    grid: TimeGrid,
    x0,
    n_paths: int,
    master_seed: int,
    step_offset: int = 0,
    n_workers: int = 1,
    store_jacobian: bool = True,
) -> PathEnsemble:
    """Simulate ``n_paths`` trajectories; path ``p`` uses RNG stream ``p``.

    ``x0`` may be one state ``(d,)`` or one state per path ``(n_paths, d)``.
    Output is bit-identical for any ``n_workers``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    x0 = _as_batch(x0, n_paths, model.dim_d)
    streams = np.arange(n_paths, dtype=np.uint64)
    return _simulate(model, grid, x0, None, streams, master_seed, step_offset,
                     n_workers, store_jacobian)


def restart_ensemble(
    model: ForwardModel,
    grid_sub: TimeGrid,
    x_starts,
    jac_starts,
    n_inner: int,
    master_seed: int,
    step_offset: int = 0,
    n_workers: int = 1,
) -> list:
    """Inner ensembles from each ``(x_start, jac_start)``.

    The Jacobian seed replaces the identity, so ``jac`` of the result is the
    composed flow ``grad X_theta^{s,y}|_{y=X_s} grad X_s``.  All starts share
    streams ``0..n_inner-1`` (common random numbers across starts).
    """
    x_starts = np.atleast_2d(np.asarray(x_starts, dtype=float))
    d = model.dim_d
    if x_starts.shape[1] != d:
        raise DimensionMismatch(f"start states have dimension {x_starts.shape[1]}, model has {d}")
    jac_starts = np.asarray(jac_starts, dtype=float).reshape(-1, d, d)
    if len(jac_starts) != len(x_starts):
        raise DimensionMismatch(f"{len(x_starts)} start states but {len(jac_starts)} Jacobian seeds")
    streams = np.arange(n_inner, dtype=np.uint64)
    out = []
    for y, j in zip(x_starts, jac_starts):
        x0 = np.broadcast_to(y, (n_inner, d)).copy()
        jac0 = None if np.array_equal(j, np.eye(d)) else np.broadcast_to(j, (n_inner, d, d)).copy()
        out.append(_simulate(model, grid_sub, x0, jac0, streams, master_seed, step_offset,
                             n_workers, True))
    return out
