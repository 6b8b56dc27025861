"""Catalog of forward models used by tests, demos and the CLI."""

import numpy as np

from .sde import ForwardModel, Gruschin, Hamiltonian


def _tile(a, P):
    return np.broadcast_to(a, (P,) + a.shape).copy()


def linear(A, sigma, b0=None, tag="linear") -> ForwardModel:
    """dX = (A X + b0) dt + sigma dW with constant sigma (d x m)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d, m = sigma.shape
    b0 = np.zeros(d) if b0 is None else np.asarray(b0, dtype=float)
    return ForwardModel(
        dim_d=d,
        dim_m=m,
        drift=lambda t, x: x @ A.T + b0,
        diffusion=lambda t, x: _tile(sigma, x.shape[0]),
        drift_jacobian=lambda t, x: _tile(A, x.shape[0]),
        lipschitz_bound=float(np.linalg.norm(A, 2)),
        tag=tag,
    )


def brownian(d=2) -> ForwardModel:
    return linear(np.zeros((d, d)), np.eye(d), tag="brownian")


def ornstein_uhlenbeck(kappa=1.0, d=2, sigma=1.0) -> ForwardModel:
    return linear(-kappa * np.eye(d), sigma * np.eye(d), tag="ou")


def sine_diffusion(d=2, kappa=1.0, eps_b=0.5, eps_s=0.3) -> ForwardModel:
    """Non-degenerate model with state-dependent diagonal diffusion.

    b(x) = -kappa x + eps_b sin(x), sigma(x) = diag(1 + eps_s cos(x)).
    """
    eye = np.eye(d)

    def diffusion(t, x):
        return (1.0 + eps_s * np.cos(x))[:, :, None] * eye

    def diffusion_jacobian(t, x):
        # d sigma_ii / d x_i = -eps_s sin(x_i)
        out = np.zeros((x.shape[0], d, d, d))
        idx = np.arange(d)
        out[:, idx, idx, idx] = -eps_s * np.sin(x)
        return out

    return ForwardModel(
        dim_d=d,
        dim_m=d,
        drift=lambda t, x: -kappa * x + eps_b * np.sin(x),
        diffusion=diffusion,
        drift_jacobian=lambda t, x: (-kappa + eps_b * np.cos(x))[:, :, None] * eye,
        diffusion_jacobian=diffusion_jacobian,
        lipschitz_bound=kappa + eps_b + eps_s,
        tag="sine_diffusion",
    )


def gruschin(scale=1.0) -> ForwardModel:
    """d1 = d2 = 1: X1 = x1 + W1, dX2 = scale * X1 dW2 (degenerate where X1 = 0)."""

    def block(x1):
        return (scale * x1)[:, :, None]

    def block_jac(x1):
        return np.full((x1.shape[0], 1, 1, 1), scale)

    def diffusion(t, x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = scale * x[:, 0]
        return out

    def diffusion_jacobian(t, x):
        out = np.zeros((x.shape[0], 2, 2, 2))
        out[:, 1, 1, 0] = scale
        return out

    zero = lambda t, x: np.zeros_like(x)
    return ForwardModel(
        dim_d=2,
        dim_m=2,
        drift=zero,
        diffusion=diffusion,
        drift_jacobian=lambda t, x: np.zeros((x.shape[0], 2, 2)),
        diffusion_jacobian=diffusion_jacobian,
        kind=Gruschin(d1=1, d2=1, alpha=1.0, sigma_block=block, sigma_block_jacobian=block_jac),
        lipschitz_bound=abs(scale),
        tag="gruschin",
    )


def kinetic(B=1.0, sigma=1.0, friction=0.0, potential_strength=0.0) -> ForwardModel:
    """Stochastic Hamiltonian system with d1 = d2 = 1.

    dX1 = B X2 dt, dX2 = btilde(X) dt + sigma dW with
    btilde(x) = -potential_strength * sin(x1) - friction * x2.
    """
    Bm = np.array([[float(B)]])
    sig = np.array([[float(sigma)]])

    def btilde(t, x):
        return (-potential_strength * np.sin(x[:, 0]) - friction * x[:, 1])[:, None]

    def btilde_jac(t, x):
        out = np.empty((x.shape[0], 1, 2))
        out[:, 0, 0] = -potential_strength * np.cos(x[:, 0])
        out[:, 0, 1] = -friction
        return out

    def drift(t, x):
        return np.concatenate([x[:, 1:2] * B, btilde(t, x)], axis=1)

    def drift_jac(t, x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 1] = B
        out[:, 1:, :] = btilde_jac(t, x)
        return out

    def diffusion(t, x):
        out = np.zeros((x.shape[0], 2, 1))
        out[:, 1, 0] = sigma
        return out

    return ForwardModel(
        dim_d=2,
        dim_m=1,
        drift=drift,
        diffusion=diffusion,
        drift_jacobian=drift_jac,
        kind=Hamiltonian(B=Bm, sigma_t=lambda t: sig, btilde=btilde, btilde_jacobian=btilde_jac),
        lipschitz_bound=abs(B) + abs(friction) + abs(potential_strength),
        tag="kinetic",
    )


CATALOG = {
    "brownian": brownian,
    "ou": ornstein_uhlenbeck,
    "sine_diffusion": sine_diffusion,
    "gruschin": gruschin,
    "kinetic": kinetic,
}
