import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import expm

from ctmc_debt.ctmc import (GeneratorMatrix, InvalidGeneratorError, PiecewiseGenerator,
                            build_rate_generator, discounted_step, expm_action,
                            generator_from_coefficients, make_time_grid, matrix_exponential,
                            tridiagonal_rates)
from ctmc_debt.grid import build_grid, rate_grid
from ctmc_debt.models import ShortRateModel, ThetaSchedule


def test_local_moments_match_on_interior_rows():
    g = build_grid(-0.5, 0.6, 0.04, 60, 0.3)
    x = g.nodes
    mu = 0.8 * (0.04 - x)
    var = 0.15 ** 2 + 0 * x
    gen = generator_from_coefficients(x, mu, np.sqrt(var))
    q = gen.to_dense()
    for i in range(1, len(x) - 1):
        drift = q[i] @ (x - x[i])
        second = q[i] @ (x - x[i]) ** 2
        assert drift == pytest.approx(mu[i], rel=1e-10, abs=1e-12)
        assert second == pytest.approx(var[i], rel=1e-10)


def test_row_sums_zero(vasicek):
    g = rate_grid(vasicek, 160)
    gen = generator_from_coefficients(g.nodes, vasicek.drift(0, g.nodes), vasicek.vol(g.nodes))
    assert np.max(np.abs(gen.row_sums())) < 1e-12
    assert np.max(np.abs(gen.to_dense().sum(axis=1))) < 1e-12


def test_negative_rate_raises_with_location():
    x = np.linspace(0.0, 1.0, 11)
    with pytest.raises(InvalidGeneratorError, match="node"):
        generator_from_coefficients(x, 50.0 * (0.5 - x), 0.01 + 0 * x)


def test_upwind_fixes_invalid_rows_only():
    x = np.linspace(0.0, 1.0, 11)
    mu = 50.0 * (0.5 - x)
    mu[4:7] = 0.0
    var = 0.5 ** 2 + 0 * x
    sub_c, sup_c = tridiagonal_rates(x, mu, var, "central")
    sub_u, sup_u = tridiagonal_rates(x, mu, var, "upwind")
    assert np.all(sub_u >= 0) and np.all(sup_u >= 0)
    assert sub_u[4] == sub_c[4] and sup_u[5] == sup_c[5]
    with pytest.raises(ValueError):
        tridiagonal_rates(x, mu, var, "backward")


def test_transition_rows_are_stochastic(vasicek):
    g = rate_grid(vasicek, 160)
    gen = generator_from_coefficients(g.nodes, vasicek.drift(0, g.nodes), vasicek.vol(g.nodes))
    p = matrix_exponential(gen, 0.25)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-10
    assert p.min() >= 0.0


def test_two_state_closed_form():
    a, b, t = 0.7, 1.9, 0.8
    gen = GeneratorMatrix([b], [-a, -b], [a])
    p = matrix_exponential(gen, t)
    s = a + b
    e = np.exp(-s * t)
    exact = np.array([[b + a * e, a - a * e], [b - b * e, a + b * e]]) / s
    assert np.max(np.abs(p - exact)) < 1e-12


def test_chapman_kolmogorov(vasicek):
    g = rate_grid(vasicek, 120)
    gen = generator_from_coefficients(g.nodes, vasicek.drift(0, g.nodes), vasicek.vol(g.nodes))
    p1, p2, p3 = (matrix_exponential(gen, t) for t in (0.3, 0.45, 0.75))
    assert np.max(np.abs(p1 @ p2 - p3)) < 1e-10


def test_discounted_step_and_action_agree(vasicek):
    g = rate_grid(vasicek, 120)
    gen = generator_from_coefficients(g.nodes, vasicek.drift(0, g.nodes), vasicek.vol(g.nodes))
    a = discounted_step(gen, g.nodes, 0.5)
    v = np.linspace(1.0, 2.0, g.size)
    via_action = expm_action(gen.to_sparse() - sp.diags(g.nodes), v, 0.5)
    assert np.max(np.abs(a @ v - via_action)) < 1e-10
    assert np.max(np.abs(a - expm((gen.to_dense() - np.diag(g.nodes)) * 0.5))) < 1e-14


def test_commutation_of_discount_and_transition_factors(market_curve):
    model = ShortRateModel("hull_white", dict(kappa=1.0, sigma=0.2), 0.04,
                           ThetaSchedule([0.0, 0.5, 1.0, 1.5], [0.03, 0.06, 0.02]))
    g = rate_grid(model, 120)
    times = make_time_grid(1.5, 0.125)
    gen = build_rate_generator(model, g, times)
    dt = 0.125
    e = np.diag(np.exp(-g.nodes * dt))
    left = np.eye(g.size)
    right = np.eye(g.size)
    for n in range(1, gen.n_steps + 1):
        p = gen.transition_matrix(n)
        left = left @ (e @ p)
        right = right @ (p @ e)
    ones = np.ones(g.size)
    lhs = left @ e @ ones
    rhs = e @ right @ ones
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_piecewise_generator_reuses_identical_intervals(vasicek):
    g = rate_grid(vasicek, 120)
    gen = build_rate_generator(vasicek, g, make_time_grid(1.0, 0.25))
    assert gen.homogeneous and gen.n_steps == 4
    assert gen.index_of(0.5) == 2
    with pytest.raises(ValueError):
        gen.index_of(0.3)


def test_piecewise_generator_validation():
    gen = GeneratorMatrix([1.0], [-1.0, -1.0], [1.0])
    g = build_grid(0.0, 1.0, 0.5, 3, 1.0)
    with pytest.raises(ValueError):
        PiecewiseGenerator([0.0, 1.0, 2.0], [gen], g)


def test_time_grid_hits_events():
    t = make_time_grid(1.0, 0.1, [0.26, 0.5, 0.3 + 1e-12])
    assert 0.26 in t and 0.5 in t
    assert np.sum(np.isclose(t, 0.3)) == 1
    assert t[0] == 0.0 and t[-1] == 1.0
    with pytest.raises(ValueError):
        make_time_grid(0.0, 0.1)


def test_shifted_model_stores_interval_average_shift():
    model = ShortRateModel("cir_pp", dict(kappa=2.0, alpha=0.035, sigma=0.2), 0.04,
                           ThetaSchedule([0.0, 0.3, 1.0], [0.01, 0.02]))
    g = rate_grid(model, 40)
    gen = build_rate_generator(model, g, [0.0, 0.5, 1.0])
    assert gen.homogeneous
    assert gen.shifts[0] == pytest.approx((0.3 * 0.01 + 0.2 * 0.02) / 0.5)
    assert gen.shift_integral(0, 2) == pytest.approx(0.003 + 0.014)
