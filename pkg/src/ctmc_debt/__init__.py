"""Continuous-time Markov chain pricing of debt securities under short-rate models."""

from .analytic import (UnsupportedModelError, analytic_european_cb, analytic_zcb,
                       analytic_zcb_option, black_scholes_cb)
from .calibration import (CalibrationError, DiscountCurve, calibrate, calibrate_theta,
                          calibrate_theta_shifted, knot_residuals, model_curve)
from .ctmc import (ExponentialError, GeneratorMatrix, InvalidGeneratorError, PiecewiseGenerator,
                   build_rate_generator, generator_from_coefficients, make_time_grid,
                   matrix_exponential)
from .grid import Grid, build_grid, rate_grid
from .hybrid import (ConvertibleSpec, StateBudgetError, TwoLayerChain, build_two_layer,
                     equity_grid, flat_index, price_cb, price_cb_american,
                     price_cb_american_fast, price_cb_european_direct, price_cb_european_fast,
                     split_index)
from .models import (EquityModel, ScheduleExhaustedError, ShortRateModel, StepFunction,
                     ThetaSchedule, from_config)
from .montecarlo import MCResult, SimulationConfig, mc_price, terminal_payoff
from .rates import (BondOptionSpec, BondSpec, EmbeddedOptionSchedule, estimate_convergence_rate,
                    price_bond, price_bond_option, price_callable_putable, price_zcb,
                    price_zcb_shifted)

__version__ = "0.1.0"
