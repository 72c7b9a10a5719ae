import math

import numpy as np
import pytest

from ctmc_debt.analytic import analytic_zcb
from ctmc_debt.calibration import calibrate
from ctmc_debt.ctmc import build_rate_generator, make_time_grid
from ctmc_debt.grid import rate_grid
from ctmc_debt.models import EquityModel, ShortRateModel
from ctmc_debt.montecarlo import SimulationConfig, mc_price, terminal_payoff
from ctmc_debt.rates import BondOptionSpec, BondSpec, price_bond_option

ones = terminal_payoff(lambda r, s: np.ones_like(r))


def test_vasicek_zcb_bracketed(vasicek):
    res = mc_price(vasicek, ones, 2.0, SimulationConfig(40_000, steps_per_year=100, seed=5))
    assert res.brackets(analytic_zcb(vasicek, 0, 2.0), 3.0)
    assert res.truncations == 0


def test_zero_volatility_is_deterministic():
    m = ShortRateModel("vasicek", dict(kappa=1.5, theta=0.05, sigma=0.0), 0.02)
    res = mc_price(m, ones, 1.0, SimulationConfig(1000, steps_per_year=10, seed=1))
    r, integral = 0.02, 0.0
    for _ in range(10):
        integral += r * 0.1
        r += 1.5 * (0.05 - r) * 0.1
    assert res.std_error == 0.0
    assert res.price == pytest.approx(math.exp(-integral), rel=1e-14)


def test_seed_determinism_and_partition_invariance(vasicek):
    cfg = dict(paths=6000, steps_per_year=50, seed=42, batch_size=1000)
    a = mc_price(vasicek, ones, 1.0, SimulationConfig(**cfg))
    b = mc_price(vasicek, ones, 1.0, SimulationConfig(**cfg))
    c = mc_price(vasicek, ones, 1.0, SimulationConfig(**cfg, workers=3))
    assert a.price == b.price == c.price
    assert a.std_error == c.std_error
    d = mc_price(vasicek, ones, 1.0, SimulationConfig(**{**cfg, "seed": 43}))
    assert d.price != a.price


def test_antithetic_halves_variance_of_call(vasicek):
    eq = EquityModel(100.0, 0.2, rho=-0.2)
    call = terminal_payoff(lambda r, s: np.maximum(s - 100.0, 0.0))
    plain = mc_price(vasicek, call, 1.0, SimulationConfig(40_000, 50, seed=3), equity=eq)
    anti = mc_price(vasicek, call, 1.0, SimulationConfig(40_000, 50, seed=3, antithetic=True),
                    equity=eq)
    ratio = (plain.std_error / anti.std_error) ** 2
    assert 1.5 <= ratio <= 2.5


def test_correlated_shocks(vasicek):
    eq = EquityModel(100.0, 0.3, rho=0.6)
    captured = {}

    def grab(paths):
        captured["r"], captured["s"] = paths.rates, paths.stocks
        return np.zeros(paths.rates.shape[0])

    mc_price(vasicek, grab, 0.5, SimulationConfig(20_000, 10, seed=9, batch_size=20_000),
             equity=eq)
    dr = np.diff(captured["r"], axis=1)[:, 0]
    ds = np.diff(np.log(captured["s"]), axis=1)[:, 0]
    assert np.corrcoef(dr, ds)[0, 1] == pytest.approx(0.6, abs=0.02)


def test_full_truncation_counted():
    with pytest.warns(UserWarning):
        m = ShortRateModel("cir", dict(kappa=0.5, theta=0.02, sigma=0.6), 0.01)
    res = mc_price(m, ones, 1.0, SimulationConfig(5000, 50, seed=2))
    assert res.truncations > 0
    assert 0 < res.price < 1.5


def test_payoff_shape_checked(vasicek):
    with pytest.raises(ValueError):
        mc_price(vasicek, lambda p: np.ones(3), 1.0, SimulationConfig(100, 10))


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(paths=1)
    with pytest.raises(ValueError):
        SimulationConfig(paths=1001, antithetic=True)


def test_cir_pp_put_brackets_ctmc(market_curve):
    model = ShortRateModel("cir_pp", dict(kappa=2.0, alpha=0.035, sigma=0.3), 0.04)
    g = rate_grid(model, 160)
    times = make_time_grid(4.0, 1 / 50, market_curve.times)
    fitted, _ = calibrate(model, g, market_curve, times, scheme="upwind")
    gen = build_rate_generator(fitted, g, times, "upwind")
    strike = market_curve(4.0) / 0.95
    ctmc = price_bond_option(gen, g, 0.0, BondOptionSpec(2.0, strike, "put", BondSpec(1, 0, 1, 4.0)))

    def put(paths):
        y = paths.auxiliary[:, -1]
        bond = np.array([analytic_zcb(fitted, 2.0, 4.0, v) for v in y])
        return np.maximum(strike - bond, 0.0)

    res = mc_price(fitted, put, 2.0, SimulationConfig(20_000, 50, seed=11))
    assert res.brackets(ctmc, 3.0), (res, ctmc)
