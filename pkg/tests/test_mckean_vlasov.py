import numpy as np
import pytest
from scipy import stats

from fbsde import models
from fbsde import mckean_vlasov as mvl
from fbsde.bsde import BackwardDriver, solve_lsmc
from fbsde.errors import NoConvergence
from fbsde.sde import TimeGrid, simulate_ensemble
from fbsde.weights import WeightSpec, elworthy_li_weight, mv_n_weight

A = np.array([1.0, 0.5])
BETA = np.array([0.3, 0.2])
GRID = TimeGrid(0.0, 1.0, 50)


def affine_mv(lambda_b=0.5, alpha=0.0, gamma=0.0, f=True):
    drv = mvl.MvDriver(lambda x, mx: x @ A + mx @ BETA,
                       (lambda t, x, y, z, mx, my, mz: alpha * y + gamma * my) if f else None,
                       law_free=(gamma == 0.0))
    return mvl.MvModel(models.ornstein_uhlenbeck(1.0, 2), drv, lambda_b=lambda_b)


def test_interaction_off_bit_exact():
    mv = affine_mv(lambda_b=0.0)
    x0 = np.array([0.4, -0.1])
    parts = mvl.simulate_mv_forward(mv, GRID, 1000, 3, mvl.point_mass(x0))
    ens = simulate_ensemble(mv.base, GRID, x0, 1000, 3)
    assert np.array_equal(parts.x, ens.x) and np.array_equal(parts.dw, ens.dw)
    assert parts.summaries_consistent()
    fm = mvl.frozen_model(mv, parts)
    spec = WeightSpec("elworthy_li", 0, 50, (1.0, 0.0))
    assert mv_n_weight(fm, ens[7], spec).value == elworthy_li_weight(mv.base, ens[7], spec).value


def test_interaction_off_distribution_gaussian_xi():
    mv = affine_mv(lambda_b=0.0)
    xi = mvl.gaussian([0.5, 0.0], 0.5)
    parts = mvl.simulate_mv_forward(mv, GRID, 4000, 4, xi)
    ens = simulate_ensemble(mv.base, GRID, xi.sample(4000, 99), 4000, 5, store_jacobian=False)
    a, b = parts.x[:, -1, 0], ens.x[:, -1, 0]
    se = np.hypot(a.std(), b.std()) / np.sqrt(4000)
    assert abs(a.mean() - b.mean()) <= 3 * se
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_mean_field_ode():
    lam, kappa = 0.5, 1.0
    mv = affine_mv(lambda_b=lam)
    m0 = np.array([1.0, -0.5])
    parts = mvl.simulate_mv_forward(mv, GRID, 5000, 6, mvl.gaussian(m0, 0.5))
    se = parts.x[:, -1].std(axis=0) / np.sqrt(5000) + np.abs(parts.means[0] - m0)
    truth = m0 * np.exp((lam - kappa) * 1.0)
    assert np.all(np.abs(parts.means[-1] - truth) <= 3 * se + np.abs(truth) * 0.01)


def test_particle_count_guard_and_chaos():
    mv = affine_mv()
    with pytest.raises(ValueError):
        mvl.simulate_mv_forward(mv, GRID, 999, 0, mvl.point_mass([0.0, 0.0]))
    xi = mvl.gaussian([1.0, -0.5], 0.5)
    p1 = mvl.simulate_mv_forward(mv, GRID, 1000, 7, xi)
    p2 = mvl.simulate_mv_forward(mv, GRID, 2000, 8, xi)
    se = np.sqrt(np.diagonal(p1.covs[-1]) / 1000 + np.diagonal(p2.covs[-1]) / 2000)
    assert np.all(np.abs(p1.means[-1] - p2.means[-1]) <= 3 * se)


def test_law_free_driver_single_pass_equals_lsmc():
    mv = affine_mv(alpha=0.3)
    parts = mvl.simulate_mv_forward(mv, GRID, 2000, 9, mvl.gaussian([1.0, -0.5], 0.5))
    frozen = mvl.solve_frozen_bsde(mv, parts, basis_degree=2)
    assert frozen.iterations == 1
    plain = solve_lsmc(parts, frozen.driver, 2)
    np.testing.assert_array_equal(frozen.solution.y_paths, plain.y_paths)


def test_scalar_fixed_point():
    alpha, gamma = 0.3, 0.4
    mv = affine_mv(alpha=alpha, gamma=gamma)
    parts = mvl.simulate_mv_forward(mv, GRID, 2000, 10, mvl.gaussian([1.0, -0.5], 0.5))
    frozen = mvl.solve_frozen_bsde(mv, parts, basis_degree=2)
    g = parts.x[:, -1] @ A + parts.means[-1] @ BETA
    oracle = np.exp((alpha + gamma) * 1.0) * g.mean()
    assert abs(frozen.mean_y[0] - oracle) <= 0.02 * abs(oracle)
    assert 1 < frozen.iterations <= 40


def test_fixed_point_stall_raises():
    mv = affine_mv(alpha=0.3, gamma=0.4)
    parts = mvl.simulate_mv_forward(mv, GRID, 1000, 11, mvl.gaussian([1.0, -0.5], 0.5))
    with pytest.raises(NoConvergence):
        mvl.solve_frozen_bsde(mv, parts, basis_degree=2, max_iter=2)


def test_affine_terminal_value():
    lam, kappa = 0.5, 1.0
    mv = affine_mv(lambda_b=lam, f=False)
    m0 = np.array([1.0, -0.5])
    parts = mvl.simulate_mv_forward(mv, GRID, 4000, 12, mvl.gaussian(m0, 0.5))
    frozen = mvl.solve_frozen_bsde(mv, parts, basis_degree=1)
    from fbsde.bsde import evaluate_solution
    x = np.array([0.8, -0.2])
    y = evaluate_solution(frozen.solution, 0, x)[0]
    m_hat = parts.means[0]
    truth = (A @ (np.exp(-kappa) * x + m_hat * np.exp(-kappa) * (np.exp(lam) - 1))
             + BETA @ (m_hat * np.exp(lam - kappa)))
    g = frozen.solution.y_paths[:, -1]
    assert abs(y - truth) <= 3 * g.std() / np.sqrt(4000) + 0.01 * abs(truth)


def test_z_representation_at_start_and_linear_model():
    mv = affine_mv(lambda_b=0.0, f=False)
    parts = mvl.simulate_mv_forward(mv, GRID, 2000, 13, mvl.gaussian([1.0, -0.5], 0.5))
    frozen = mvl.solve_frozen_bsde(mv, parts, basis_degree=1)
    zc = mvl.z_representation(mv, parts, frozen, 0, 3, 20_000, 14)
    # Z = a^T grad X_T^{s} sigma; for OU that is exp(-kappa (T - s)) a
    truth = np.exp(-1.0) * A
    assert np.all(np.abs(zc.z_formula - truth) <= 3 * zc.z_formula_se + 0.01)
    zc2 = mvl.z_representation(mv, parts, frozen, 25, 3, 20_000, 15)
    truth2 = np.exp(-0.5) * A
    assert np.all(np.abs(zc2.z_formula - truth2) <= 3 * zc2.z_formula_se + 0.01)


def test_damped_n_weight_agrees():
    mv = affine_mv(alpha=0.3)
    parts = mvl.simulate_mv_forward(mv, GRID, 2000, 16, mvl.gaussian([1.0, -0.5], 0.5))
    frozen = mvl.solve_frozen_bsde(mv, parts, basis_degree=2)
    el = mvl.z_representation(mv, parts, frozen, 25, 4, 20_000, 17)
    dp = mvl.z_representation(mv, parts, frozen, 25, 4, 20_000, 17, weight_kind="damped")
    np.testing.assert_array_equal(el.x_s, dp.x_s)
    assert np.all(np.abs(el.z_formula - dp.z_formula) <= 3 * np.hypot(el.z_formula_se, dp.z_formula_se))


def test_bound_linear_flat_in_x():
    mv = affine_mv(lambda_b=0.0, f=False)
    rep = mvl.gradient_bound_check(mv, GRID, [10, 30], [0.0, 1.0, 10.0], [0.0], 4000, 18)
    grads = rep.probes[:, 3].reshape(2, 3)
    se = rep.probes[:, 4].reshape(2, 3)
    tau = 1.0 - GRID.times[[10, 30]]
    truth = (np.exp(-tau) * np.linalg.norm(A))[:, None]
    assert np.all(np.abs(grads - truth) <= 3 * se)
    assert np.isfinite(rep.fitted_C) and np.isfinite(rep.fitted_C_alt)
    assert rep.worst_probe[1] == 0.0


def test_bound_ratio_growth_when_gap_halves():
    k = np.array([1.0, 0.5])
    drv = mvl.MvDriver(lambda x, mx: np.sin(x @ k))
    mv = mvl.MvModel(models.brownian(2), drv)
    grid = TimeGrid(0.0, 0.8, 40)
    rep = mvl.gradient_bound_check(mv, grid, [0, 20], [0.0], [0.0], 20_000, 19)
    r_full, r_half = rep.ratios
    se = rep.probes[:, 4] / rep.probes[:, 3]
    assert r_half / r_full <= np.sqrt(2) * (1 + 3 * np.hypot(*se))


def test_shape_ratio_limit():
    c = 3.0
    taus = np.array([1e-3, 1e-5, 1e-7])
    r = mvl.damped_profile_shape(taus, c, 0.0, 0.0) / mvl.main_profile(taus, 0.0, 0.0)
    assert abs(r[-1] * np.sqrt(c) - 1) < 1e-3


def test_lipschitz_and_w2():
    mv = mvl.MvModel(models.ornstein_uhlenbeck(1.0, 2), mvl.MvDriver(lambda x, mx: x[:, 0]),
                     lambda_b=0.5, lambda_sigma=0.2)
    assert mvl.check_lipschitz(mv, 100, 0) <= 1.0 + 0.5 + 0.2 + 1e-9
    a = np.random.default_rng(0).normal(size=5000)
    assert mvl.w2_1d(a, a + 0.3) == pytest.approx(0.3)
    assert mvl.gaussian_w2(np.zeros(2), np.eye(2), np.ones(2), 4 * np.eye(2)) == pytest.approx(2.0)


def test_xi_spec():
    xi = mvl.gaussian([1.0, 2.0], 0.5)
    s = xi.sample(20_000, 3)
    assert np.allclose(s.mean(axis=0), [1.0, 2.0], atol=0.02)
    assert xi.l2_norm == pytest.approx(np.sqrt(5 + 0.5))
    assert np.array_equal(xi.sample(10, 3), s[:10])
    pm = mvl.point_mass([1.0, 2.0])
    assert np.all(pm.sample(3, 0) == [1.0, 2.0]) and pm.l2_norm == pytest.approx(np.sqrt(5))
