import numpy as np
import pytest

from fbsde import models, oracles
from fbsde.bsde import BackwardDriver, solve_lsmc
from fbsde.errors import EndpointSingularity, InvalidWindow, MissingSolution
from fbsde.estimators import GradientEstimate, bismut_gradient, conditional_gradient, path_functional
from fbsde.sde import TimeGrid, simulate_ensemble
from fbsde.weights import WeightSpec

from conftest import within

A = np.array([1.0, -0.5])
V = np.array([0.6, 0.8])


def test_estimate_record():
    import time
    est = GradientEstimate.from_samples(np.array([1.0, 2.0, 3.0]), 0, time.perf_counter(), "bismut")
    assert est.value == 2.0 and est.std_error == pytest.approx(1 / np.sqrt(3))
    assert not est.flagged
    flagged = GradientEstimate.from_samples(np.ones(999), 1, time.perf_counter(), "bismut")
    assert flagged.flagged


def test_linear_payoff_identity():
    model, driver = oracles.brownian_linear(A).build()
    grid = TimeGrid(0.0, 1.0, 5)
    est = bismut_gradient(model, driver, grid, np.zeros(2), V, WeightSpec("elworthy_li", 0, 5, V),
                          n_paths=100_000, seed=1)
    assert within(est, A @ V)
    assert est.std_error <= 0.01 * np.linalg.norm(A) * np.linalg.norm(V)
    assert est.estimator_tag == "bismut" and est.n_paths == 100_000


def test_seed_stability_and_threads():
    model, driver = oracles.ou_sin(np.array([1.0, 0.5])).build()
    grid = TimeGrid(0.0, 1.0, 20)
    spec = WeightSpec("damped", 0, 20, V)
    a = bismut_gradient(model, driver, grid, np.zeros(2), V, spec, n_paths=5000, seed=3)
    b = bismut_gradient(model, driver, grid, np.zeros(2), V, spec, n_paths=5000, seed=3, n_workers=3)
    c = bismut_gradient(model, driver, grid, np.zeros(2), V, spec, n_paths=5000, seed=4)
    assert a.same_numbers(b)
    assert not a.same_numbers(c)


def test_value_linear_in_direction():
    model, driver = oracles.ou_sin(np.array([1.0, 0.5])).build()
    grid = TimeGrid(0.0, 1.0, 20)
    spec = WeightSpec("elworthy_li", 0, 20, V)
    a = bismut_gradient(model, driver, grid, np.zeros(2), V, spec, n_paths=4000, seed=5)
    b = bismut_gradient(model, driver, grid, np.zeros(2), 2 * V, spec, n_paths=4000, seed=5)
    assert b.value == pytest.approx(2 * a.value, rel=1e-12)


def test_ou_sin_closed_form():
    case = oracles.ou_sin(np.array([1.0, 0.5]))
    model, driver = case.build()
    grid = TimeGrid(0.0, 1.0, 100)
    x0 = np.array([0.3, -0.2])
    est = bismut_gradient(model, driver, grid, x0, V, WeightSpec("elworthy_li", 0, 100, V),
                          n_paths=20_000, seed=6)
    assert within(est, oracles.benchmark_value(case, 0.0, x0, V))


def test_linear_driver_scaling():
    alpha = 0.5
    base = oracles.ou_sin(np.array([1.0, 0.5]))
    case = oracles.with_linear_driver(base, alpha)
    model, driver = case.build()
    model0, driver0 = base.build()
    grid = TimeGrid(0.0, 1.0, 50)
    x0 = np.array([0.3, -0.2])
    fit = simulate_ensemble(model, grid, x0, 20_000, 7, store_jacobian=False)
    sol = solve_lsmc(fit, driver, 3)
    spec = WeightSpec("elworthy_li", 0, 50, V)
    est = bismut_gradient(model, driver, grid, x0, V, spec, sol, n_paths=20_000, seed=8)
    est0 = bismut_gradient(model0, driver0, grid, x0, V, spec, n_paths=20_000, seed=9)
    scaled = np.exp(alpha) * est0.value
    assert abs(est.value - scaled) <= 3 * np.hypot(est.std_error, np.exp(alpha) * est0.std_error)


def test_missing_solution_and_guards():
    model = models.ornstein_uhlenbeck(1.0, 2)
    driver = BackwardDriver(lambda x: x[:, 0], lambda t, x, y, z: y)
    grid = TimeGrid(0.0, 1.0, 10)
    spec = WeightSpec("elworthy_li", 0, 10, V)
    with pytest.raises(MissingSolution):
        bismut_gradient(model, driver, grid, np.zeros(2), V, spec, n_paths=10)
    with pytest.raises(InvalidWindow):
        bismut_gradient(model, BackwardDriver(lambda x: x[:, 0]), grid, np.zeros(2), V, spec,
                        n_paths=10, s_index=10)
    kin = models.kinetic()
    hspec = WeightSpec("hamiltonian", 0, 10, V)
    with pytest.raises(EndpointSingularity):
        bismut_gradient(kin, driver, grid, np.zeros(2), V, hspec, n_paths=10)


def test_hamiltonian_driver_after_anchor():
    kin = models.kinetic()
    grid = TimeGrid(0.0, 1.0, 20)
    driver = BackwardDriver(lambda x: x[:, 0], lambda t, x, y, z: 0.5 * y)
    fit = simulate_ensemble(kin, grid, np.array([0.5, 0.2]), 5000, 1, store_jacobian=False)
    sol = solve_lsmc(fit, driver, 2)
    est = bismut_gradient(kin, driver, grid, np.array([0.5, 0.2]), np.array([1.0, 0.0]),
                          WeightSpec("hamiltonian", 0, 20, (1.0, 0.0)), sol, 5000, 2, s_index=5)
    assert np.isfinite(est.value)


def test_conditional_degenerates_to_bismut():
    case = oracles.ou_sin(np.array([1.0, 0.5]))
    model, driver = case.build()
    grid = TimeGrid(0.0, 1.0, 20)
    x0 = np.array([0.3, -0.2])
    spec = WeightSpec("elworthy_li", 0, 20, V)
    b = bismut_gradient(model, driver, grid, x0, V, spec, n_paths=3000, seed=10)
    (c,) = conditional_gradient(model, driver, grid, x0, V, 0, spec, 1, 3000, 10)
    assert c.estimate.value == b.value and c.estimate.std_error == b.std_error
    np.testing.assert_array_equal(c.grad_v_x_s, V)


def test_conditional_linear_state_independent():
    model, driver = oracles.brownian_linear(A).build()
    grid = TimeGrid(0.0, 1.0, 20)
    out = conditional_gradient(model, driver, grid, np.zeros(2), V, 10,
                               WeightSpec("elworthy_li", 10, 20, V), 5, 2000, 11)
    assert len(out) == 5
    for smp in out:
        assert within(smp.estimate, A @ V)
        np.testing.assert_array_equal(smp.grad_v_x_s, V)
        assert smp.estimate.estimator_tag == "conditional"
    with pytest.raises(ValueError):
        conditional_gradient(model, driver, grid, np.zeros(2), V, 10,
                             WeightSpec("elworthy_li", 10, 20, V), 1, 1, 11)


def test_cross_agreement_sine_diffusion():
    model = models.sine_diffusion()
    driver = BackwardDriver(lambda x: np.sin(x @ np.array([1.0, 0.5])))
    grid = TimeGrid(0.0, 1.0, 50)
    x0 = np.array([0.3, -0.2])
    el = bismut_gradient(model, driver, grid, x0, V, WeightSpec("elworthy_li", 0, 50, V),
                         n_paths=20_000, seed=12)
    dp = bismut_gradient(model, driver, grid, x0, V, WeightSpec("damped", 0, 50, V),
                         n_paths=20_000, seed=13)
    fd = oracles.fd_gradient(model, driver, grid, x0, V, 1e-3, 20_000, 14)
    for a, b in ((el, dp), (el, fd), (dp, fd)):
        assert abs(a.value - b.value) <= 3 * np.hypot(a.std_error, b.std_error)


def test_path_functional_driver_window():
    model = models.ornstein_uhlenbeck(1.0, 2)
    grid = TimeGrid(0.0, 1.0, 10)
    ens = simulate_ensemble(model, grid, np.zeros(2), 100, 0)
    driver = BackwardDriver(lambda x: x[:, 0], lambda t, x, y, z: y)
    sol = solve_lsmc(ens, driver, 1)
    with pytest.raises(InvalidWindow):
        path_functional(model, driver, ens, WeightSpec("elworthy_li", 3, 10, V), V, sol, 0, 1)
    vals, rej = path_functional(model, driver, ens, WeightSpec("elworthy_li", 0, 10, V), np.eye(2), sol)
    assert vals.shape == (100, 2) and not rej.any()
