import math

import numpy as np
import pytest

from ctmc_debt.analytic import analytic_european_cb
from ctmc_debt.ctmc import build_rate_generator, make_time_grid
from ctmc_debt.grid import rate_grid
from ctmc_debt.hybrid import (ConvertibleSpec, StateBudgetError, build_two_layer, equity_grid,
                              flat_index, price_cb, price_cb_american, price_cb_american_fast,
                              price_cb_european_direct, price_cb_european_fast, split_index)
from ctmc_debt.models import EquityModel, ShortRateModel, StepFunction


@pytest.fixture(scope="module")
def small_chain():
    model = ShortRateModel("vasicek", dict(kappa=1.0, theta=0.04, sigma=0.1), 0.04)
    g = rate_grid(model, 40)
    gen = build_rate_generator(model, g, make_time_grid(1.0, 0.02, [0.5]), "upwind")
    eq = EquityModel(100.0, 0.2, 0.0, -0.2)
    return build_two_layer(model, eq, gen, m_x=40, scheme="upwind")


def spec(style="european", coupon=0.05, spread=0.0, **kw):
    return ConvertibleSpec(100, 1, coupon, 2, 1.0, spread, style, **kw)


def test_flat_index_is_a_bijection():
    m, n_x = 7, 5
    seen = set()
    for k in range(m):
        for l in range(n_x):
            idx = flat_index(k, l, n_x)
            assert split_index(idx, n_x) == (k, l)
            seen.add(idx)
    assert seen == set(range(m * n_x))


def test_equity_grid_bounds(vasicek):
    eq = EquityModel(100.0, 0.2, rho=-0.2)
    g = equity_grid(vasicek, eq, 50)
    x0 = math.log(100.0) + 0.2 * (0.2 / 0.2) * 0.04
    assert g.anchor == pytest.approx(x0)
    assert g.nodes[0] == pytest.approx(0.64 * x0) and g.nodes[-1] == pytest.approx(1.42 * x0)


def test_start_state_recovers_spot(small_chain):
    j, i = small_chain.start_state
    assert small_chain.stock_prices()[j, i] == pytest.approx(100.0, rel=1e-14)


def test_enlarged_generator_rows_sum_to_zero(small_chain):
    g = small_chain.enlarged_generator(1)
    assert g.shape == (small_chain.size, small_chain.size)
    assert np.max(np.abs(np.asarray(g.sum(axis=1)).ravel())) < 1e-10


def test_regime_block_holds_discount(small_chain):
    blk = small_chain.regime_block(1).toarray()
    rows = blk.sum(axis=1)
    assert np.allclose(rows, -np.repeat(small_chain.r_grid.nodes, small_chain.n_x), atol=1e-10)


def test_fast_and_direct_european_agree(small_chain):
    fast = price_cb_european_fast(small_chain, spec())
    direct = price_cb_european_direct(small_chain, spec())
    assert fast == pytest.approx(direct, rel=1e-3)


def test_fast_and_direct_american_agree(small_chain):
    s = spec("american", spread=0.05)
    fast = price_cb_american_fast(small_chain, s)[0]
    direct = price_cb_american(small_chain, s)[0]
    assert fast == pytest.approx(direct, rel=1e-3)


def test_european_close_to_closed_form(small_chain):
    closed = analytic_european_cb(small_chain.model, small_chain.equity, spec())
    assert price_cb_european_fast(small_chain, spec()) == pytest.approx(closed, rel=2e-3)


def test_american_dominates_european_and_conversion(small_chain):
    s_am, s_eu = spec("american", spread=0.05), spec("european", spread=0.05)
    v, co, e = price_cb_american_fast(small_chain, s_am, return_legs=True)
    conv = small_chain.stock_prices()
    assert np.all(v >= conv - 1e-12)
    assert np.allclose(v, co + e)
    j, i = small_chain.start_state
    assert v[j, i] >= price_cb_european_fast(small_chain, s_eu)


def test_credit_spread_lowers_value(small_chain):
    a = price_cb_american_fast(small_chain, spec("american", spread=0.0))[0]
    b = price_cb_american_fast(small_chain, spec("american", spread=0.05))[0]
    assert b < a


def test_cash_leg_vanishes_where_conversion_binds(small_chain):
    _, co, e = price_cb_american_fast(small_chain, spec("american", spread=0.05), return_legs=True)
    conv = small_chain.stock_prices()
    binding = np.isclose(co + e, conv, rtol=0, atol=0)
    assert binding.any()
    assert np.all(co[binding] == 0.0)


def test_zero_face_is_discounted_stock(small_chain):
    s = ConvertibleSpec(0.0, 1.0, 0.0, 2, 1.0, 0.0, "european")
    assert price_cb_european_fast(small_chain, s) == pytest.approx(100.0, rel=2e-3)


def test_price_cb_dispatch(small_chain):
    v, co, e = price_cb(small_chain, spec("european"))
    assert co is None and v == price_cb_european_fast(small_chain, spec("european"))
    v, co, e = price_cb(small_chain, spec("american"))
    assert v == pytest.approx(co + e)


def test_horizon_must_match_maturity(small_chain):
    with pytest.raises(ValueError):
        price_cb_european_fast(small_chain, ConvertibleSpec(100, 1, 0.0, 2, 0.5, 0.0, "european"))


def test_state_budget(small_chain):
    with pytest.raises(StateBudgetError):
        price_cb_european_direct(small_chain, spec(), max_states=100)


def test_shifted_model_rejected():
    model = ShortRateModel("cir_pp", dict(kappa=2.0, alpha=0.035, sigma=0.1), 0.04, 0.0)
    g = rate_grid(model, 40)
    gen = build_rate_generator(model, g, [0.0, 1.0], "upwind")
    with pytest.raises(ValueError):
        build_two_layer(model, EquityModel(100.0, 0.2), gen, m_x=20)


def test_spec_from_dict():
    s = ConvertibleSpec.from_dict({"face": 100, "ratio": 1, "coupon_rate": 0.05, "maturity": 1.0,
                                   "credit_spread": [[0.5, 0.01], [1.0, 0.03]],
                                   "style": "american"})
    assert isinstance(s.credit_spread, StepFunction)
    assert s.spread_integral(0, 1) == pytest.approx(0.02)
    assert s.coupon_dates() == [0.5, 1.0]
    with pytest.raises(ValueError):
        ConvertibleSpec(100, 0.0)
