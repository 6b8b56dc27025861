import numpy as np
import pytest

from fbsde import models
from fbsde.bsde import BackwardDriver, evaluate_solution, exponents, solve_lsmc
from fbsde.errors import IllConditionedRegression
from fbsde.sde import TimeGrid, restart_ensemble, simulate_ensemble

from lattice_oracle import explicit_scheme_value

K = np.array([1.0, 0.5])
X0 = np.array([1.5, 1.0])


def nonlinear_f(t, x, y, z):
    return -np.abs(y) + np.sin(z[:, 0])


def sin_g(x):
    return np.sin(x @ K)


# explicit-scheme value of f = -|y| + sin(z1), g = sin<k, x> on 10-step OU,
# from the Gauss-Hermite lattice oracle (12 nodes, 121^2 grid on [-6, 6]^2)
LATTICE_Y0 = 0.2635467791


def test_exponents():
    e = exponents(2, 2)
    assert len(e) == 6 and e[0].tolist() == [0, 0]
    assert exponents(0, 3).shape == (1, 0)


def test_linear_payoff_brownian():
    a = np.array([1.0, -2.0])
    model = models.brownian(2)
    grid = TimeGrid(0.0, 1.0, 10)
    ens = simulate_ensemble(model, grid, np.zeros(2), 20_000, 1, store_jacobian=False)
    sol = solve_lsmc(ens, BackwardDriver(lambda x: x @ a), 1)
    assert sol.residual_norms[-1] <= 1e-8
    probe = np.array([[0.3, -0.1], [-0.5, 0.4]])
    for i in (2, 5, 9):
        y, z = evaluate_solution(sol, i, probe)
        np.testing.assert_allclose(y, probe @ a, atol=0.05)
        np.testing.assert_allclose(z, np.tile(a, (2, 1)), atol=0.1)


def test_constant_solution():
    model = models.ornstein_uhlenbeck(1.0, 2)
    ens = simulate_ensemble(model, TimeGrid(0.0, 1.0, 10), np.zeros(2), 2000, 2, store_jacobian=False)
    sol = solve_lsmc(ens, BackwardDriver(lambda x: np.ones(len(x))), 3)
    pts = np.array([[0.1, 0.2], [1.0, -1.0]])
    for i in range(11):
        y, z = evaluate_solution(sol, i, pts)
        np.testing.assert_allclose(y, 1.0, atol=1e-10)
        np.testing.assert_allclose(z, 0.0, atol=1e-10)
    y, z = evaluate_solution(sol, 3, pts[0])
    assert isinstance(y, float) and z.shape == (2,)


def test_ou_linear_conditional_mean():
    a = np.array([1.0, 0.5])
    model = models.ornstein_uhlenbeck(1.0, 2)
    grid = TimeGrid(0.0, 1.0, 200)
    ens = simulate_ensemble(model, grid, np.array([1.0, 1.0]), 100_000, 3, store_jacobian=False)
    sol = solve_lsmc(ens, BackwardDriver(lambda x: x @ a), 1)
    pts = np.array([[1.0, 0.5], [0.5, 1.0], [0.8, 0.8]])
    for i in (40, 100, 160):
        y, _ = evaluate_solution(sol, i, pts)
        truth = np.exp(-(1.0 - grid.time(i))) * (pts @ a)
        np.testing.assert_allclose(y, truth, rtol=0.01)


def test_terminal_consistency_and_shift():
    a = np.array([0.5, 1.0])
    model = models.sine_diffusion()
    ens = simulate_ensemble(model, TimeGrid(0.0, 1.0, 10), np.zeros(2), 5000, 4, store_jacobian=False)
    s1 = solve_lsmc(ens, BackwardDriver(lambda x: x @ a), 3)
    s2 = solve_lsmc(ens, BackwardDriver(lambda x: x @ a + 1.0), 3)
    xT = ens.x[:, -1]
    np.testing.assert_allclose(evaluate_solution(s1, 10, xT)[0], xT @ a, atol=1e-10)
    np.testing.assert_allclose(s2.y_paths - s1.y_paths, 1.0, atol=1e-10)
    np.testing.assert_allclose(evaluate_solution(s2, 0, np.zeros(2))[0]
                               - evaluate_solution(s1, 0, np.zeros(2))[0], 1.0, atol=1e-10)


def test_linear_driver_scaling():
    alpha = 0.5
    model = models.ornstein_uhlenbeck(1.0, 2)
    grid = TimeGrid(0.0, 1.0, 50)
    ens = simulate_ensemble(model, grid, X0, 20_000, 5, store_jacobian=False)
    g = sin_g(ens.x[:, -1])
    sol = solve_lsmc(ens, BackwardDriver(sin_g, lambda t, x, y, z: alpha * y), 3)
    y0 = evaluate_solution(sol, 0, X0)[0]
    scale = (1 + alpha * grid.dt) ** grid.n_steps  # discrete factor of the explicit scheme
    se = g.std() / np.sqrt(len(g)) * scale
    assert abs(y0 - scale * g.mean()) <= 3 * se
    assert abs(y0 - np.exp(alpha) * g.mean()) <= 3 * se + 0.01 * abs(y0)


def test_nonlinear_driver_against_lattice():
    model = models.ornstein_uhlenbeck(1.0, 2)
    grid = TimeGrid(0.0, 1.0, 10)
    ens = simulate_ensemble(model, grid, X0, 100_000, 6, store_jacobian=False)
    sol = solve_lsmc(ens, BackwardDriver(sin_g, nonlinear_f), 3)
    y0 = evaluate_solution(sol, 0, X0)[0]
    assert abs(y0 - LATTICE_Y0) <= 0.02 * abs(LATTICE_Y0)


def test_lattice_oracle_frozen_value():
    val = explicit_scheme_value(sin_g, nonlinear_f, X0)
    assert val == pytest.approx(LATTICE_Y0, abs=1e-9)
    # refinement leaves the value unchanged well below the 2% tolerance
    fine = explicit_scheme_value(sin_g, nonlinear_f, X0, n_nodes=16, n_grid=161)
    assert abs(fine - val) < 1e-4


def test_representation_property():
    model = models.ornstein_uhlenbeck(1.0, 2)
    grid = TimeGrid(0.0, 1.0, 20)
    ens = simulate_ensemble(model, grid, X0, 20_000, 7, store_jacobian=False)
    sol = solve_lsmc(ens, BackwardDriver(sin_g), 3)
    fresh = simulate_ensemble(model, grid, X0, 1, 8)
    for i in (2, 6, 10, 14, 18):
        xs = fresh.x[:, i]
        (inner,) = restart_ensemble(model, grid.tail(i), xs, np.eye(2)[None], 20_000, 9 + i,
                                    step_offset=i)
        g = sin_g(inner.x[:, -1])
        y = evaluate_solution(sol, i, xs[0])[0]
        assert abs(y - g.mean()) <= 3 * g.std() / np.sqrt(len(g)) + 0.01


def test_ill_conditioned_regression():
    model = models.brownian(2)
    ens = simulate_ensemble(model, TimeGrid(0.0, 1.0, 3), np.zeros(2), 20, 0, store_jacobian=False)
    with pytest.raises(IllConditionedRegression):
        solve_lsmc(ens, BackwardDriver(lambda x: x[:, 0]), 6)
    with pytest.raises(ValueError):
        solve_lsmc(ens, BackwardDriver(lambda x: x[:, 0]), 0)


def test_evaluate_index_bounds():
    model = models.brownian(1)
    ens = simulate_ensemble(model, TimeGrid(0.0, 1.0, 3), np.zeros(1), 200, 0, store_jacobian=False)
    sol = solve_lsmc(ens, BackwardDriver(lambda x: x[:, 0]), 1)
    with pytest.raises(IndexError):
        evaluate_solution(sol, 4, np.zeros(1))
