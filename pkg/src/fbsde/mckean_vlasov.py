"""Mean-field forward-backward systems through interacting particles.

Laws enter the coefficients only through moment summaries: the mean and
covariance of X, and the means of Y and Z.  A particle run produces these
summaries at every node; freezing them turns the system into a classical
SDE/BSDE pair that the rest of the package solves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import rng
from .bsde import BackwardDriver, BsdeSolution, evaluate_solution, solve_lsmc
from .errors import NoConvergence, NonFiniteState, SingularJacobian
from .estimators import path_functional
from .sde import ForwardModel, TimeGrid, restart_ensemble, simulate_ensemble
from .weights import WeightSpec

JACOBIAN_COND_MAX = 1e12


@dataclass(frozen=True)
class MvDriver:
    """g(x, mean_x) and f(t, x, y, z, mean_x, mean_y, mean_z), batched over x.

    ``law_free`` declares that f ignores (mean_y, mean_z), so the backward
    fixed point needs one pass.  ``driver_f=None`` means f = 0.
    """

    terminal_g: Callable
    driver_f: Optional[Callable] = None
    law_free: bool = True
    lipschitz: float = 1.0


@dataclass(frozen=True)
class MvModel:
    """b(t, x, mu) = b0(t, x) + lambda_b * interaction(mean mu),
    sigma(t, x, mu) = sigma0(t, x) * (1 + lambda_sigma * tanh(sqrt(tr cov mu))).

    Both are Lipschitz in W2: the mean and the centred L2 norm are
    1-Lipschitz functionals of the law.
    """

    base: ForwardModel
    mv_driver: MvDriver
    lambda_b: float = 0.0
    lambda_sigma: float = 0.0
    interaction: Callable = None  # mean (d,) -> (d,); identity by default
    lip_l1: float = 1.0
    lip_l2: float = 1.0

    @property
    def dim_d(self):
        return self.base.dim_d

    @property
    def dim_m(self):
        return self.base.dim_m

    def _pull(self, mean):
        return mean if self.interaction is None else self.interaction(mean)

    def _scale(self, cov):
        return 1.0 + self.lambda_sigma * np.tanh(np.sqrt(max(np.trace(cov), 0.0)))

    def drift(self, t, x, mean, cov):
        if self.lambda_b == 0.0:
            return self.base.drift(t, x)
        return self.base.drift(t, x) + self.lambda_b * self._pull(mean)

    def diffusion(self, t, x, mean, cov):
        if self.lambda_sigma == 0.0:
            return self.base.diffusion(t, x)
        return self.base.diffusion(t, x) * self._scale(cov)

    def diffusion_jacobian(self, t, x, mean, cov):
        if self.base.diffusion_jacobian is None:
            return None
        if self.lambda_sigma == 0.0:
            return self.base.diffusion_jacobian(t, x)
        return self.base.diffusion_jacobian(t, x) * self._scale(cov)


@dataclass(frozen=True)
class XiSpec:
    """Initial law: Gaussian N(mean, cov) or the point mass at ``mean``."""

    mean: tuple
    cov: Optional[np.ndarray] = None

    def sample(self, n, seed):
        mean = np.asarray(self.mean, float)
        if self.cov is None:
            return np.broadcast_to(mean, (n, len(mean))).copy()
        z = rng.normals(seed, np.arange(n, dtype=np.uint64), rng.RESERVED_STEP, len(mean))
        chol = np.linalg.cholesky(np.asarray(self.cov, float))
        return mean + z @ chol.T

    @property
    def l2_norm(self) -> float:
        """sqrt(E |xi|^2)."""
        mean = np.asarray(self.mean, float)
        tr = 0.0 if self.cov is None else float(np.trace(self.cov))
        return float(np.sqrt(mean @ mean + tr))


def point_mass(x0) -> XiSpec:
    return XiSpec(tuple(np.ravel(x0)))


def gaussian(mean, scale) -> XiSpec:
    mean = np.ravel(mean)
    if scale == 0:
        return XiSpec(tuple(mean))
    return XiSpec(tuple(mean), scale ** 2 * np.eye(len(mean)))


@dataclass(frozen=True)
class ParticleEnsemble:
    grid: TimeGrid
    x: np.ndarray  # (P, n+1, d)
    dw: np.ndarray  # (P, n, m)
    means: np.ndarray  # (n+1, d)
    covs: np.ndarray  # (n+1, d, d)
    xi: XiSpec
    seed: int

    @property
    def n_particles(self):
        return self.x.shape[0]

    def summaries_consistent(self, atol=1e-12) -> bool:
        m = self.x.mean(axis=0)
        c = np.stack([np.cov(self.x[:, i].T, bias=True).reshape(m.shape[1], -1)
                      for i in range(self.x.shape[1])])
        return np.allclose(m, self.means, atol=atol) and np.allclose(c, self.covs, atol=atol)


def _summary(x):
    mean = x.mean(axis=0)
    xc = x - mean
    return mean, xc.T @ xc / x.shape[0]


def simulate_mv_forward(mv: MvModel, grid: TimeGrid, n_particles: int, seed: int,
                        xi: XiSpec, min_particles: int = 1000) -> ParticleEnsemble:
    """Synchronous Euler steps; coefficients read the current empirical summary.

    Particle ``p`` uses RNG stream ``p`` exactly as :func:`simulate_ensemble`
    does; its initial value is drawn on the reserved RNG step.
    """
    if n_particles < min_particles:
        raise ValueError(f"need at least {min_particles} particles, got {n_particles}")
    d, m = mv.dim_d, mv.dim_m
    n = grid.n_steps
    times = grid.times
    streams = np.arange(n_particles, dtype=np.uint64)
    x = np.empty((n_particles, n + 1, d))
    dw = np.empty((n_particles, n, m))
    means = np.empty((n + 1, d))
    covs = np.empty((n + 1, d, d))
    x[:, 0] = xi.sample(n_particles, seed)
    sq = np.sqrt(grid.dt)
    for i in range(n + 1):
        means[i], covs[i] = _summary(x[:, i])
        if i == n:
            break
        t = times[i]
        dt = times[i + 1] - t
        dw[:, i] = sq * rng.normals(seed, streams, i, m)
        xi_ = x[:, i]
        sig = mv.diffusion(t, xi_, means[i], covs[i])
        x[:, i + 1] = (xi_ + mv.drift(t, xi_, means[i], covs[i]) * dt
                       + np.einsum("pdm,pm->pd", sig, dw[:, i]))
        if not np.isfinite(x[:, i + 1]).all():
            raise NonFiniteState(f"particle state non-finite at node {i + 1}")
    return ParticleEnsemble(grid, x, dw, means, covs, xi, int(seed))


def frozen_model(mv: MvModel, particles: ParticleEnsemble) -> ForwardModel:
    """The classical SDE with the particle law summaries frozen per node."""
    grid = particles.grid
    means, covs = particles.means, particles.covs
    base = mv.base
    if mv.lambda_b == 0.0 and mv.lambda_sigma == 0.0:
        return base

    def at(t):
        k = grid.index_of(t)
        return means[k], covs[k]

    djac = None
    if base.diffusion_jacobian is not None:
        djac = lambda t, x: mv.diffusion_jacobian(t, x, *at(t))
    return ForwardModel(
        dim_d=base.dim_d,
        dim_m=base.dim_m,
        drift=lambda t, x: mv.drift(t, x, *at(t)),
        diffusion=lambda t, x: mv.diffusion(t, x, *at(t)),
        drift_jacobian=base.drift_jacobian,
        diffusion_jacobian=djac,
        kind=base.kind,
        lipschitz_bound=base.lipschitz_bound * (1 + abs(mv.lambda_sigma)),
        tag="frozen_" + base.tag,
    )


@dataclass(frozen=True)
class FrozenSolution:
    solution: BsdeSolution
    mean_y: np.ndarray  # (n+1,)
    mean_z: np.ndarray  # (n+1, m)
    iterations: int
    driver: BackwardDriver
    model: ForwardModel


def frozen_driver(mv: MvModel, particles: ParticleEnsemble, mean_y, mean_z) -> BackwardDriver:
    grid = particles.grid
    means = particles.means
    md = mv.mv_driver
    g = lambda x: md.terminal_g(x, means[-1])
    f = None
    if md.driver_f is not None:
        def f(t, x, y, z):
            k = grid.index_of(t)
            return md.driver_f(t, x, y, z, means[k], mean_y[k], mean_z[k])
    return BackwardDriver(g, f, lipschitz_g=md.lipschitz, lipschitz_f=md.lipschitz,
                          name="frozen")


def _law_of_solution(sol: BsdeSolution, cloud):
    n1 = sol.n_nodes
    my = sol.y_paths.mean(axis=0)
    mz = np.stack([evaluate_solution(sol, i, cloud.x[:, i])[1].mean(axis=0)
                   for i in range(n1)])
    return my, mz


def regression_cloud(mv: MvModel, particles: ParticleEnsemble, n_paths: int, seed: int):
    """Independent paths of the law-frozen SDE started from fresh xi draws."""
    fm = frozen_model(mv, particles)
    x0 = particles.xi.sample(n_paths, rng.derive_seed(seed, 3))
    return simulate_ensemble(fm, particles.grid, x0, n_paths, seed, store_jacobian=False)


def solve_frozen_bsde(mv: MvModel, particles: ParticleEnsemble, basis_degree: int = 3,
                      tol: float = 1e-4, max_iter: int = 40, damping: float = 0.5,
                      n_regression: int = None, regression_seed: int = None) -> FrozenSolution:
    """Damped fixed point over the (Y, Z) mean summaries.

    Each pass solves the law-frozen BSDE by LSMC; the summaries move by
    ``damping`` times the change until the relative change of the proposed
    summary drops below ``tol``.  The regression runs on the particle cloud
    itself, or on ``n_regression`` independent frozen-SDE paths when given
    (the particles then serve only to fix the X-law).
    """
    n1 = particles.grid.n_steps + 1
    my = np.zeros(n1)
    mz = np.zeros((n1, mv.dim_m))
    fmodel = frozen_model(mv, particles)
    cloud = particles
    if n_regression is not None:
        seed = particles.seed + 1 if regression_seed is None else regression_seed
        cloud = regression_cloud(mv, particles, n_regression, seed)
    for it in range(1, max_iter + 1):
        drv = frozen_driver(mv, particles, my, mz)
        sol = solve_lsmc(cloud, drv, basis_degree)
        new_y, new_z = _law_of_solution(sol, cloud)
        if mv.mv_driver.law_free or mv.mv_driver.driver_f is None:
            return FrozenSolution(sol, new_y, new_z, it, drv, fmodel)
        old = np.concatenate([my, mz.ravel()])
        new = np.concatenate([new_y, new_z.ravel()])
        change = np.max(np.abs(new - old)) / max(np.max(np.abs(new)), 1e-12)
        if change < tol:
            return FrozenSolution(sol, my, mz, it, drv, fmodel)
        my = my + damping * (new_y - my)
        mz = mz + damping * (new_z - mz)
    raise NoConvergence(
        f"(Y, Z) law fixed point still moving by {change:.3g} (relative) after {max_iter} "
        "iterations; the law coupling of the driver may be too strong for the horizon"
    )


@dataclass(frozen=True)
class ZComparison:
    x_s: np.ndarray  # (k, d)
    z_formula: np.ndarray  # (k, m)
    z_formula_se: np.ndarray  # (k, m)
    z_lsmc: np.ndarray  # (k, m)

    @property
    def relative_error(self) -> np.ndarray:
        num = np.linalg.norm(self.z_formula - self.z_lsmc, axis=1)
        return num / np.maximum(np.linalg.norm(self.z_lsmc, axis=1), 1e-300)


def z_representation(mv: MvModel, particles: ParticleEnsemble, frozen: FrozenSolution,
                     s_index: int, n_probes: int, n_inner: int, seed: int,
                     weight_kind: str = "elworthy_li", c: float = None) -> ZComparison:
    """Z at node ``s_index`` from the N-weight formula next to the LSMC Z.

    Probe ``p`` draws xi_p, runs the frozen SDE to s, restarts ``n_inner``
    paths with Jacobian seed grad X_s, averages g N_T + sum dt f N_r and
    multiplies by (grad X_s)^{-1} sigma(s, X_s).
    """
    grid = particles.grid
    fm, drv, sol = frozen.model, frozen.driver, frozen.solution
    d = mv.dim_d
    probe_seed = rng.derive_seed(seed, 1)
    x0 = particles.xi.sample(n_probes, probe_seed)
    if s_index == 0:
        xs, js = x0, np.broadcast_to(np.eye(d), (n_probes, d, d))
    else:
        outer = simulate_ensemble(fm, TimeGrid(grid.t0, grid.time(s_index), s_index), x0,
                                  n_probes, probe_seed)
        xs, js = outer.x[:, -1], outer.jac[:, -1]
    sub = grid.tail(s_index)
    spec = WeightSpec(weight_kind, 0, sub.n_steps, np.zeros(d), c=c)
    ts = grid.time(s_index)
    zf = np.empty((n_probes, mv.dim_m))
    zse = np.empty_like(zf)
    zl = np.empty_like(zf)
    for p in range(n_probes):
        if np.linalg.cond(js[p]) > JACOBIAN_COND_MAX:
            raise SingularJacobian(f"grad X_s of probe {p} is numerically singular")
        (inner,) = restart_ensemble(fm, sub, xs[p:p + 1], js[p:p + 1], n_inner,
                                    rng.derive_seed(seed, 2 + p), step_offset=s_index)
        samples, _ = path_functional(fm, drv, inner, spec, np.eye(d), sol, s_index)
        row = samples.mean(axis=0)
        cov = np.cov(samples.T).reshape(d, d) / n_inner
        lin = np.linalg.solve(js[p], fm.diffusion(ts, xs[p:p + 1])[0])  # (d, m)
        zf[p] = row @ lin
        zse[p] = np.sqrt(np.einsum("im,ij,jm->m", lin, cov, lin))
        zl[p] = evaluate_solution(sol, s_index, xs[p])[1]
    return ZComparison(np.array(xs), zf, zse, zl)


def main_profile(tau, x_norm, xi_norm):
    return (1 / np.sqrt(tau) + np.sqrt(tau)) * (1 + x_norm + xi_norm)


def damped_profile_shape(tau, c, x_norm, xi_norm):
    """1 + (1 - e^{-c tau})^{-1/2} + int_0^tau (1 - e^{-c u})^{-1/2} du, times the growth."""
    w = np.sqrt(-np.expm1(-c * np.asarray(tau, float)))
    return (1 + 1 / w + 2 / c * np.arctanh(w)) * (1 + x_norm + xi_norm)


@dataclass(frozen=True)
class BoundReport:
    probes: np.ndarray  # rows (t, |x|, xi_scale, |grad V|, se)
    ratios: np.ndarray  # |grad V| / main profile
    ratios_alt: np.ndarray  # |grad V| / damped profile
    c: float
    wall_time_ms: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def fitted_C(self) -> float:
        return float(np.max(self.ratios))

    @property
    def fitted_C_alt(self) -> float:
        return float(np.max(self.ratios_alt))

    @property
    def worst_probe(self):
        return self.probes[int(np.argmax(self.ratios))]


def gradient_bound_check(mv: MvModel, grid: TimeGrid, t_indices, x_norms, xi_scales,
                         n_paths: int, seed: int, n_particles: int = 1000,
                         basis_degree: int = 3, c: float = None) -> BoundReport:
    """Estimate |grad V(t, x, P_xi)| on a probe grid and fit the two bound shapes.

    For each start node and xi-scale a particle system with xi ~ N(0, scale^2 I)
    is run from t; for each |x| the Bismut estimator on the frozen system at
    x = |x| e_1 gives the full gradient.
    """
    t_start = time.perf_counter()
    d = mv.dim_d
    c = 2.0 * mv.base.lipschitz_bound ** 2 + 1.0 if c is None else c
    rows = []
    for k in t_indices:
        sub = grid.tail(int(k))
        tau = grid.T - sub.t0
        for scale in xi_scales:
            xi = gaussian(np.zeros(d), scale)
            parts = simulate_mv_forward(mv, sub, n_particles, rng.derive_seed(seed, 7 + int(k)), xi)
            if mv.mv_driver.driver_f is None:
                fm = frozen_model(mv, parts)
                frozen = FrozenSolution(None, None, None, 0,
                                        frozen_driver(mv, parts, None, None), fm)
            else:
                frozen = solve_frozen_bsde(mv, parts, basis_degree)
            spec = WeightSpec("elworthy_li", 0, sub.n_steps, np.zeros(d))
            for xn in x_norms:
                x = np.zeros(d)
                x[0] = xn
                ens = simulate_ensemble(frozen.model, sub, x, n_paths, seed)
                samples, _ = path_functional(frozen.model, frozen.driver, ens, spec, np.eye(d),
                                             frozen.solution, 0)
                grad = samples.mean(axis=0)
                cov = np.atleast_2d(np.cov(samples.T)) / n_paths
                norm = float(np.linalg.norm(grad))
                se = float(np.sqrt(grad @ cov @ grad) / max(norm, 1e-300))
                rows.append((sub.t0, xn, scale, tau, norm, se, xi.l2_norm))
    rows = np.array(rows)
    tau, xn, xin, gn = rows[:, 3], rows[:, 1], rows[:, 6], rows[:, 4]
    ratios = gn / main_profile(tau, xn, xin)
    ratios_alt = gn / damped_profile_shape(tau, c, xn, xin)
    probes = rows[:, [0, 1, 2, 4, 5]]
    return BoundReport(probes, ratios, ratios_alt, c, (time.perf_counter() - t_start) * 1e3)


def w2_1d(a, b) -> float:
    """Exact W2 between two 1-D empirical laws via quantile functions."""
    a = np.sort(np.ravel(a))
    b = np.sort(np.ravel(b))
    if len(a) == len(b):
        return float(np.sqrt(np.mean((a - b) ** 2)))
    u = (np.arange(max(len(a), len(b)) * 4) + 0.5) / (max(len(a), len(b)) * 4)
    qa = a[np.minimum((u * len(a)).astype(int), len(a) - 1)]
    qb = b[np.minimum((u * len(b)).astype(int), len(b) - 1)]
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def gaussian_w2(m1, c1, m2, c2) -> float:
    """W2 between N(m1, c1) and N(m2, c2)."""
    r2 = linalg.sqrtm(c2)
    cross = linalg.sqrtm(r2 @ c1 @ r2)
    val = np.sum((np.asarray(m1) - m2) ** 2) + np.trace(c1 + c2 - 2 * np.real(cross))
    return float(np.sqrt(max(val, 0.0)))


def check_lipschitz(mv: MvModel, n_probes: int = 200, seed: int = 0) -> float:
    """Largest observed |coef(x1, mu1) - coef(x2, mu2)| / (|x1 - x2| + W2(mu1, mu2))
    over random Gaussian-law probes, for drift and diffusion together."""
    d = mv.dim_d
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        x1, x2 = gen.normal(size=(2, 1, d)) * 2
        m1, m2 = gen.normal(size=(2, d))
        a1, a2 = gen.normal(size=(2, d, d))
        c1, c2 = a1 @ a1.T + 0.1 * np.eye(d), a2 @ a2.T + 0.1 * np.eye(d)
        db = np.linalg.norm(mv.drift(0.0, x1, m1, c1) - mv.drift(0.0, x2, m2, c2))
        ds = np.linalg.norm(mv.diffusion(0.0, x1, m1, c1) - mv.diffusion(0.0, x2, m2, c2))
        dist = np.linalg.norm(x1 - x2) + gaussian_w2(m1, c1, m2, c2)
        worst = max(worst, (db + ds) / dist)
    return worst
