import numpy as np
import pytest

from ctmc_debt import (DiscountCurve, ShortRateModel, build_rate_generator, calibrate,
                       make_time_grid, rate_grid)

CURVE_TIMES = [0.26, 0.47, 0.72, 0.97, 1.22, 1.47, 1.72, 2.0, 3.0, 4.0]
CURVE_DISCOUNTS = [0.986944, 0.976019, 0.964123, 0.953152, 0.943283, 0.934357, 0.926202,
                   0.917553, 0.888740, 0.861950]

def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report(request):
    """Record one summary line per acceptance criterion."""
    def report(line):
        request.config.acceptance_lines.append(line)
        print(line)
    return report


@pytest.fixture(scope="session")
def market_curve():
    return DiscountCurve(CURVE_TIMES, CURVE_DISCOUNTS)


@pytest.fixture(scope="session")
def vasicek():
    return ShortRateModel("vasicek", dict(kappa=1.0, theta=0.04, sigma=0.2), 0.04)


@pytest.fixture(scope="session")
def cir():
    return ShortRateModel("cir", dict(kappa=2.0, theta=0.035, sigma=0.2), 0.04)


@pytest.fixture(scope="session")
def hw_one_year(market_curve):
    """Hull-White calibrated on [0, 1] with a coarse grid (m=60, dt=0.02, upwind rows)."""
    model = ShortRateModel("hull_white", dict(kappa=1.0, sigma=0.2), 0.04)
    grid = rate_grid(model, 60)
    times = make_time_grid(1.0, 0.02, [t for t in market_curve.times if t < 1] + [0.5])
    fitted, _ = calibrate(model, grid, market_curve, times, scheme="upwind")
    return fitted, grid, build_rate_generator(fitted, grid, times, "upwind")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
