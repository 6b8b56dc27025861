"""Stochastic weights M with grad_v E phi(X_r) = E[phi(X_r) M].

All four constructions are evaluated on a whole PathEnsemble at once.  A
window ``[s, r)`` is given by grid indices.  The direction ``v`` is pushed
through the stored Jacobian at ``s``, so on an ensemble whose ``jac`` is the
full flow from ``t`` (plain simulation, or a restart seeded with grad X_s)
the result is the anchored weight M_r^{t,s}(x, v).

Directions may be a vector ``(d,)`` or a matrix ``(d, q)`` of ``q``
directions; every weight is linear in the direction, so a matrix simply
evaluates ``q`` weights on identical randomness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    EndpointSingularity,
    IllConditionedGram,
    InvalidWindow,
    SingularDiffusion,
    ZeroFirstBlock,
)
from .sde import ForwardModel, Gruschin, Hamiltonian, PathBundle, PathEnsemble

KINDS = ("elworthy_li", "damped", "gruschin", "hamiltonian")

DIFFUSION_COND_MAX = 1e12
GRAM_REL_EPS = 1e-10


@dataclass(frozen=True)
class WeightSpec:
    """Which weight, on which window, in which direction.

    ``c`` is the damping constant (``None`` means ``2 K^2 + 1`` from the
    model's Lipschitz bound).  ``gram_rule`` is ``"left"`` or ``"trapezoid"``;
    ``derivative_rule`` is ``"cell_average"`` or ``"point"``; ``damped_rule``
    is ``"integrating_factor"`` or ``"left_point"``.
    """

    kind: str
    anchor_s_index: int
    target_r_index: int
    direction_v: tuple
    c: Optional[float] = None
    gram_rule: str = "left"
    derivative_rule: str = "cell_average"
    damped_rule: str = "integrating_factor"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {KINDS}")
        if self.anchor_s_index < 0 or self.anchor_s_index >= self.target_r_index:
            raise InvalidWindow(
                f"need 0 <= s < r, got s={self.anchor_s_index}, r={self.target_r_index}"
            )
        if self.c is not None and not self.c > 0:
            raise ValueError("damping constant c must be positive")
        if self.gram_rule not in ("left", "trapezoid"):
            raise ValueError(f"gram_rule must be 'left' or 'trapezoid', got {self.gram_rule!r}")
        if self.derivative_rule not in ("cell_average", "point"):
            raise ValueError(f"unknown derivative_rule {self.derivative_rule!r}")
        if self.damped_rule not in ("integrating_factor", "left_point"):
            raise ValueError(f"unknown damped_rule {self.damped_rule!r}")
        object.__setattr__(self, "direction_v", tuple(float(a) for a in np.ravel(self.direction_v)))

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self.direction_v)

    def with_window(self, s: int, r: int) -> "WeightSpec":
        return WeightSpec(self.kind, s, r, self.direction_v, self.c, self.gram_rule,
                          self.derivative_rule, self.damped_rule)


@dataclass(frozen=True)
class WeightSample:
    value: float
    path_id: int
    diagnostics: Optional[dict] = None


@dataclass(frozen=True)
class WeightBatch:
    """Weights for every path of an ensemble.

    ``values`` has shape ``(P,)`` for one direction or ``(P, q)``; rejected
    paths (Gram test failed) carry value 0 and ``rejected[p] = True``.
    """

    values: np.ndarray
    rejected: np.ndarray
    diagnostics: dict


@dataclass(frozen=True)
class GProcessPath:
    g: np.ndarray  # (k, d, d) at nodes s..r-1
    rho: np.ndarray  # (k,)


@dataclass(frozen=True)
class GramMatrix:
    q: np.ndarray
    condition_estimate: float


# ---------------------------------------------------------------- helpers


def damping_constant(model: ForwardModel, c: Optional[float]) -> float:
    if c is not None:
        return float(c)
    return 2.0 * model.lipschitz_bound ** 2 + 1.0


def rho(c, s_time, r_time, theta):
    """c^{-1} (1 - exp(-c (r - theta)))."""
    return -np.expm1(-c * (r_time - np.asarray(theta))) / c


def right_inverse(model: ForwardModel, t, x) -> np.ndarray:
    """sigma^T (sigma sigma^T)^{-1} at a batch of states, shape (P, m, d)."""
    sig = model.diffusion(t, x)
    gram = sig @ np.swapaxes(sig, -1, -2)
    ev = np.linalg.eigvalsh(gram)
    lo, hi = ev[:, 0], ev[:, -1]
    if np.any(~(lo > 0)) or np.any(hi > DIFFUSION_COND_MAX * lo):
        worst = float(np.max(hi / np.maximum(lo, np.finfo(float).tiny)))
        raise SingularDiffusion(
            f"sigma sigma^T has condition number {worst:.3g} at t={t:.6g} "
            f"(limit {DIFFUSION_COND_MAX:.0e}); the model is degenerate"
        )
    return np.swapaxes(np.linalg.solve(gram, sig), -1, -2)


def _directions(v, d):
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = v.reshape(d, -1) if single else v
    if V.shape[0] != d:
        raise ValueError(f"direction has leading dimension {V.shape[0]}, model dimension is {d}")
    return V, single


def _check_window(ens: PathEnsemble, s, r):
    n = ens.grid.n_steps
    if not 0 <= s < r <= n:
        raise InvalidWindow(f"window [{s}, {r}) invalid on a grid with {n} steps")
    if ens.jac is None:
        raise ValueError("weights need the Jacobian flow; simulate with store_jacobian=True")


def _pushed(ens, s, V):
    """grad_v X_s per path: (P, d, q)."""
    return np.einsum("pij,jq->piq", ens.jac[:, s], V)


def _squeeze(a, single):
    return a[..., 0] if single else a


# ---------------------------------------------------------------- Elworthy-Li


def elworthy_li_terms(model, ens, s, r, V):
    """Ito integrands <sigma^+ grad_v X_i, dW_i> for i in [s, r): (P, r-s, q)."""
    times = ens.grid.times
    P = ens.n_paths
    out = np.empty((P, r - s, V.shape[1]))
    for k, i in enumerate(range(s, r)):
        a = right_inverse(model, times[i], ens.x[:, i])
        u = a @ (ens.jac[:, i] @ V)  # (P, m, q)
        out[:, k] = np.einsum("pmq,pm->pq", u, ens.dw[:, i])
    return out


def elworthy_li_profile(model, ens, s, r_max, v):
    """Weights for every r in s+1..r_max by prefix sums: (P, r_max-s[, q])."""
    _check_window(ens, s, r_max)
    V, single = _directions(v, model.dim_d)
    terms = elworthy_li_terms(model, ens, s, r_max, V)
    times = ens.grid.times
    gaps = times[s + 1 : r_max + 1] - times[s]
    prof = np.cumsum(terms, axis=1) / gaps[None, :, None]
    return _squeeze(prof, single)


def elworthy_li_batch(model, ens, s, r, v) -> WeightBatch:
    prof = elworthy_li_profile(model, ens, s, r, v)
    vals = prof[:, -1]
    return WeightBatch(vals, np.zeros(ens.n_paths, bool), {})


# ---------------------------------------------------------------- damped


def _damped_coefficients(c, times, s, r, rule):
    """Per-step survival factor f_i and Ito coefficient a_i for i in [s, r)."""
    u = times[r] - times[s : r + 1]
    u[-1] = 0.0
    phi = np.expm1(c * u)
    surv = phi[1:] / phi[:-1]
    dt = np.diff(times[s : r + 1])
    if rule == "integrating_factor":
        coef = (1.0 - surv) / dt
    else:
        coef = 1.0 / rho(c, times[s], times[r], times[s:r])
        coef[-1] = 0.0  # final sub-step dropped
    return surv, coef


def damped_flow(model, ens, s, r, H0, c, rule="integrating_factor", keep=False):
    """Integrate the damped variational flow applied to H0 (P, d, q).

    Returns the weight (P, q), max |H| per path and, if ``keep``, the list of
    H at nodes s..r-1.
    """
    times = ens.grid.times
    surv, coef = _damped_coefficients(c, times, s, r, rule)
    h = H0
    acc = np.zeros((ens.n_paths, H0.shape[2]))
    hmax = np.zeros(ens.n_paths)
    kept = []
    for k, i in enumerate(range(s, r)):
        t = times[i]
        xi = ens.x[:, i]
        dt = times[i + 1] - t
        if keep:
            kept.append(h)
        hmax = np.maximum(hmax, np.sqrt(np.einsum("piq,piq->p", h, h)))
        a = right_inverse(model, t, xi)
        acc += coef[k] * np.einsum("pmq,pm->pq", a @ h, ens.dw[:, i])
        lin = model.drift_jacobian(t, xi) * dt
        if model.diffusion_jacobian is not None:
            lin = lin + np.einsum("pimj,pm->pij", model.diffusion_jacobian(t, xi), ens.dw[:, i])
        h = surv[k] * (h + lin @ h)
    return acc, hmax, kept


def damped_batch(model, ens, s, r, v, c=None, rule="integrating_factor") -> WeightBatch:
    _check_window(ens, s, r)
    c = damping_constant(model, c)
    V, single = _directions(v, model.dim_d)
    acc, hmax, _ = damped_flow(model, ens, s, r, _pushed(ens, s, V), c, rule)
    return WeightBatch(_squeeze(acc, single), np.zeros(ens.n_paths, bool),
                       {"c": c, "g_process_max": hmax})


def damped_profile(model, ens, s, r_max, v, c=None, rule="integrating_factor"):
    """Damped weights for every r in s+1..r_max (one flow per r)."""
    _check_window(ens, s, r_max)
    c = damping_constant(model, c)
    V, single = _directions(v, model.dim_d)
    H0 = _pushed(ens, s, V)
    cols = [damped_flow(model, ens, s, r, H0, c, rule)[0] for r in range(s + 1, r_max + 1)]
    return _squeeze(np.stack(cols, axis=1), single)


def g_process(model, path: PathBundle, s, r, c=None) -> GProcessPath:
    """The damped flow G started from the identity along one stored path."""
    ens = _single(path)
    _check_window(ens, s, r)
    c = damping_constant(model, c)
    d = model.dim_d
    _, _, kept = damped_flow(model, ens, s, r, np.eye(d)[None], c, keep=True)
    times = path.grid.times
    return GProcessPath(np.stack([h[0] for h in kept]), rho(c, times[s], times[r], times[s:r]))


# ---------------------------------------------------------------- Gruschin


def _gruschin_parts(model, ens, s, r_max, gram_rule):
    kind = model.kind
    d1 = kind.d1
    times = ens.grid.times
    x1 = ens.x[:, :, :d1]
    sig = [kind.sigma_block(x1[:, i]) for i in range(s, r_max + 1)]
    dsig = [kind.sigma_block_jacobian(x1[:, i]) for i in range(s, r_max)]
    dt = np.diff(times[s : r_max + 1])
    ss = [a @ np.swapaxes(a, -1, -2) for a in sig]
    if gram_rule == "left":
        q_inc = [ss[k] * dt[k] for k in range(r_max - s)]
    else:
        q_inc = [0.5 * (ss[k] + ss[k + 1]) * dt[k] for k in range(r_max - s)]
    return sig[:-1], dsig, np.stack(q_inc, axis=1), dt


def gruschin_profile(model, ens, s, r_indices, v, gram_rule="left"):
    """Gruschin weights at each r in ``r_indices`` (all > s).

    Returns (values (P, len(r)[, q]), rejected (P, len(r)), gram condition (P, len(r))).
    """
    kind = model.kind
    if not isinstance(kind, Gruschin):
        raise TypeError("gruschin weight needs a model of Gruschin kind")
    r_indices = np.asarray(r_indices)
    r_max = int(r_indices.max())
    _check_window(ens, s, r_max)
    if r_indices.min() <= s:
        raise InvalidWindow("every target r must exceed the anchor s")
    d1 = kind.d1
    if s == 0 and np.any(np.all(ens.x[:, 0, :d1] == 0.0, axis=1)):
        raise ZeroFirstBlock("the first block of the start point is zero at s = t; weight undefined")
    V, single = _directions(v, model.dim_d)
    times = ens.grid.times
    w = _pushed(ens, s, V)  # (P, d, q)
    w1, w2 = w[:, :d1], w[:, d1:]
    sig, dsig, q_inc, dt = _gruschin_parts(model, ens, s, r_max, gram_rule)
    theta = times[s:r_max]
    dw1 = ens.dw[:, s:r_max, :d1]
    dw2 = ens.dw[:, s:r_max, d1:]

    # integrands of the form (t_r - theta_i) a_i split into t_r*sum(a) - sum(theta a)
    dws = [np.einsum("pabc,pcq->pabq", dsig[k], w1) for k in range(len(dsig))]  # grad_{w1} sigma
    trace_a = np.stack([np.einsum("pabq,pcb->pacq", dws[k], sig[k]) * dt[k]
                        for k in range(len(dws))], axis=1)  # (P, K, d2, d2, q)
    i1_a = np.stack([np.einsum("pabq,pb->paq", dws[k], dw2[:, k]) for k in range(len(dws))],
                    axis=1)  # (P, K, d2, q)
    i2 = np.cumsum(np.stack([np.einsum("pab,pb->pa", sig[k], dw2[:, k])
                             for k in range(len(sig))], axis=1), axis=1)
    wcum = np.cumsum(dw1, axis=1)
    qcum = np.cumsum(q_inc, axis=1)

    def prefix(a):
        th = theta.reshape((1, -1) + (1,) * (a.ndim - 2))
        return np.cumsum(a, axis=1), np.cumsum(th * a, axis=1)

    tr_s, tr_ts = prefix(trace_a)
    i1_s, i1_ts = prefix(i1_a)

    n_r = len(r_indices)
    q = V.shape[1]
    P = ens.n_paths
    vals = np.zeros((P, n_r, q))
    rejected = np.zeros((P, n_r), bool)
    cond = np.zeros((P, n_r))
    for j, r in enumerate(r_indices):
        k = r - s - 1
        gap = times[r] - times[s]
        tr_int = (times[r] * tr_s[:, k] - tr_ts[:, k]) / gap
        i1 = (times[r] * i1_s[:, k] - i1_ts[:, k]) / gap
        Q = qcum[:, k]
        ev = np.linalg.eigvalsh(Q)
        bad = ev[:, 0] <= GRAM_REL_EPS * np.trace(Q, axis1=1, axis2=2)
        cond[:, j] = ev[:, -1] / np.maximum(ev[:, 0], np.finfo(float).tiny)
        Qs = np.where(bad[:, None, None], np.eye(Q.shape[1]), Q)
        t1 = np.einsum("pcq,pc->pq", w1, wcum[:, k]) / gap
        t2 = -np.einsum("paaq->pq", np.linalg.solve(Qs[:, None], np.moveaxis(tr_int, -1, 1)
                                                    ).transpose(0, 2, 3, 1))
        t3 = np.einsum("paq,pa->pq", np.linalg.solve(Qs, w2 + i1), i2[:, k])
        vals[:, j] = np.where(bad[:, None], 0.0, t1 + t2 + t3)
        rejected[:, j] = bad
    return _squeeze(vals, single), rejected, cond


def gruschin_batch(model, ens, s, r, v, gram_rule="left") -> WeightBatch:
    vals, rej, cond = gruschin_profile(model, ens, s, [r], v, gram_rule)
    return WeightBatch(vals[:, 0], rej[:, 0], {"gram_condition": cond[:, 0]})


def gram_matrix(model, path: PathBundle, s, r, gram_rule="left") -> GramMatrix:
    ens = _single(path)
    _, _, q_inc, _ = _gruschin_parts(model, ens, s, r, gram_rule)
    Q = q_inc[0].sum(axis=0)
    ev = np.linalg.eigvalsh(Q)
    if ev[0] <= GRAM_REL_EPS * np.trace(Q):
        raise IllConditionedGram(f"Gram matrix smallest eigenvalue {ev[0]:.3g} below threshold")
    return GramMatrix(Q, float(ev[-1] / ev[0]))


# ---------------------------------------------------------------- Hamiltonian


def hermite_chi(a, tau):
    """chi and its first two derivatives in theta, with a = theta - t, tau = r - t."""
    a = np.asarray(a, dtype=float)
    chi = a ** 2 * (3 * tau - 2 * a) / tau ** 3
    d1 = 6 * a * (tau - a) / tau ** 3
    d2 = (6 * tau - 12 * a) / tau ** 3
    return chi, d1, d2


def hermite_kappa(a, tau):
    """kappa and its first two derivatives in theta."""
    a = np.asarray(a, dtype=float)
    kap = a * (tau - a) ** 2 / tau ** 2
    d1 = (tau - a) * (tau - 3 * a) / tau ** 2
    d2 = (6 * a - 4 * tau) / tau ** 2
    return kap, d1, d2


def min_norm_preimage(B, y):
    """Minimum-norm solution of B z = y for each row of y (P, d1, q) -> (P, d2, q)."""
    return np.einsum("ij,pjq->piq", np.linalg.pinv(B), y)


def hamiltonian_batch(model, ens, s, r, v, derivative_rule="cell_average") -> WeightBatch:
    kind = model.kind
    if not isinstance(kind, Hamiltonian):
        raise TypeError("hamiltonian weight needs a model of Hamiltonian kind")
    _check_window(ens, s, r)
    V, single = _directions(v, model.dim_d)
    d1 = kind.d1
    B = kind.B
    times = ens.grid.times
    w = _pushed(ens, s, V)
    w1, w2 = w[:, :d1], w[:, d1:]
    vt2 = min_norm_preimage(B, w1)
    tau = times[r] - times[s]
    a = times[s : r + 1] - times[s]
    chi, chi1, chi2 = hermite_chi(a, tau)
    kap, kap1, kap2 = hermite_kappa(a, tau)
    if derivative_rule == "cell_average":
        # exact average of the second derivative over each cell
        da = np.diff(a)
        chi2 = np.diff(chi1) / da
        kap2 = np.diff(kap1) / da
    acc = np.zeros((ens.n_paths, V.shape[1]))
    bw2 = np.einsum("ij,pjq->piq", B, w2)
    for k, i in enumerate(range(s, r)):
        t = times[i]
        xi = ens.x[:, i]
        xi_dir = np.concatenate([(1 - chi[k]) * w1 + kap[k] * bw2,
                                 kap1[k] * w2 - chi1[k] * vt2], axis=1)
        inner = chi2[k] * vt2 - kap2[k] * w2 + kind.btilde_jacobian(t, xi) @ xi_dir
        u = np.linalg.solve(np.asarray(kind.sigma_t(t), float), inner)
        acc += np.einsum("pmq,pm->pq", u, ens.dw[:, i])
    return WeightBatch(_squeeze(acc, single), np.zeros(ens.n_paths, bool), {})


def hamiltonian_profile(model, ens, s, r_max, v, derivative_rule="cell_average"):
    cols = [hamiltonian_batch(model, ens, s, r, v, derivative_rule).values
            for r in range(s + 1, r_max + 1)]
    return np.stack(cols, axis=1)


# ---------------------------------------------------------------- dispatch


def weight_batch(model: ForwardModel, ens: PathEnsemble, spec: WeightSpec, v=None) -> WeightBatch:
    """Evaluate ``spec`` on every path.  ``v`` overrides the spec direction
    (for instance with the identity to obtain the vector weight)."""
    v = spec.v if v is None else v
    s, r = spec.anchor_s_index, spec.target_r_index
    if spec.kind == "elworthy_li":
        return elworthy_li_batch(model, ens, s, r, v)
    if spec.kind == "damped":
        return damped_batch(model, ens, s, r, v, spec.c, spec.damped_rule)
    if spec.kind == "gruschin":
        return gruschin_batch(model, ens, s, r, v, spec.gram_rule)
    return hamiltonian_batch(model, ens, s, r, v, spec.derivative_rule)


def weight_profile(model, ens, spec: WeightSpec, r_first: int, r_last: int, v=None):
    """Weights anchored at spec's s for every r in r_first..r_last.

    Returns (values (P, k[, q]), rejected (P, k)).
    """
    v = spec.v if v is None else v
    s = spec.anchor_s_index
    if r_first <= s:
        raise EndpointSingularity(
            f"weight anchored at node {s} is undefined at r = {r_first}; "
            "the driver integral must start strictly after the anchor"
        )
    no_rej = np.zeros((ens.n_paths, r_last - r_first + 1), bool)
    lo = r_first - s - 1
    if spec.kind == "elworthy_li":
        return elworthy_li_profile(model, ens, s, r_last, v)[:, lo:], no_rej
    if spec.kind == "damped":
        vals = [damped_batch(model, ens, s, r, v, spec.c, spec.damped_rule).values
                for r in range(r_first, r_last + 1)]
        return np.stack(vals, axis=1), no_rej
    if spec.kind == "gruschin":
        vals, rej, _ = gruschin_profile(model, ens, s, np.arange(r_first, r_last + 1), v,
                                        spec.gram_rule)
        return vals, rej
    vals = [hamiltonian_batch(model, ens, s, r, v, spec.derivative_rule).values
            for r in range(r_first, r_last + 1)]
    return np.stack(vals, axis=1), no_rej


# ---------------------------------------------------------------- per-path API


def _single(path: PathBundle) -> PathEnsemble:
    return PathEnsemble(path.grid, path.dw[None].copy(), path.x[None].copy(),
                        None if path.jac is None else path.jac[None].copy(),
                        np.array([path.stream_id], dtype=np.uint64), 0, "single")


def _sample(batch: WeightBatch, path: PathBundle, extra=None):
    if batch.rejected[0]:
        raise IllConditionedGram(f"path {path.stream_id}: Gram matrix rejected")
    diag = {k: (np.asarray(v)[0] if np.ndim(v) else v) for k, v in batch.diagnostics.items()}
    return WeightSample(float(batch.values[0]), path.stream_id, diag or None)


def elworthy_li_weight(model, path: PathBundle, spec: WeightSpec) -> WeightSample:
    return _sample(elworthy_li_batch(model, _single(path), spec.anchor_s_index,
                                     spec.target_r_index, spec.v), path)


def damped_weight(model, path: PathBundle, spec: WeightSpec) -> WeightSample:
    return _sample(damped_batch(model, _single(path), spec.anchor_s_index, spec.target_r_index,
                                spec.v, spec.c, spec.damped_rule), path)


def gruschin_weight(model, path: PathBundle, spec: WeightSpec) -> WeightSample:
    return _sample(gruschin_batch(model, _single(path), spec.anchor_s_index,
                                  spec.target_r_index, spec.v, spec.gram_rule), path)


def hamiltonian_weight(model, path: PathBundle, spec: WeightSpec) -> WeightSample:
    return _sample(hamiltonian_batch(model, _single(path), spec.anchor_s_index,
                                     spec.target_r_index, spec.v, spec.derivative_rule), path)


def mv_n_weight(frozen_model, path: PathBundle, spec: WeightSpec) -> WeightSample:
    """N-weight of the law-frozen accompanying SDE.

    Same arithmetic as the Elworthy-Li weight (or the damped variant when
    ``spec.kind == "damped"``) evaluated with the frozen coefficients.
    """
    if spec.kind == "damped":
        return damped_weight(frozen_model, path, spec)
    if spec.kind != "elworthy_li":
        raise ValueError("the mean-field N-weight is defined for elworthy_li or damped kinds")
    return elworthy_li_weight(frozen_model, path, spec)
