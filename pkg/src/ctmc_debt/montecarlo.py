"""Euler Monte Carlo over the joint (S, R) dynamics, used as a pricing oracle."""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# floor used inside log-type drifts once a positive rate is truncated
_LOG_FLOOR = 1e-12


class SimulationConfig:
    """Monte Carlo settings.

    Parameters:
        paths: number of simulated paths (even when antithetic).
        steps_per_year: Euler steps per year; the step is horizon / round(horizon * steps).
        seed: root seed; batch b uses the b-th child of ``SeedSequence(seed)``.
        antithetic: pair every normal draw with its negative.
        batch_size: paths per independent RNG stream.
        workers: threads used to run batches; the estimate does not depend on it.
    """

    def __init__(self, paths=100_000, steps_per_year=252, seed=0, antithetic=False,
                 batch_size=10_000, workers=1):
        if paths < 2:
            raise ValueError("need at least two paths")
        if steps_per_year <= 0:
            raise ValueError("steps_per_year must be positive")
        if antithetic and (paths % 2 or batch_size % 2):
            raise ValueError("antithetic sampling needs even paths and batch_size")
        self.paths = int(paths)
        self.steps_per_year = int(steps_per_year)
        self.seed = int(seed)
        self.antithetic = bool(antithetic)
        self.batch_size = int(batch_size)
        self.workers = max(1, int(workers))

    def to_dict(self):
        return dict(paths=self.paths, steps_per_year=self.steps_per_year, seed=self.seed,
                    antithetic=self.antithetic, batch_size=self.batch_size)


class PathBatch:
    """Simulated paths handed to a payoff.

    Attributes:
        times: time grid t_0 = 0 < ... < t_N = horizon.
        rates: short rate, shape (paths, N + 1).
        stocks: stock price of the same shape, or None without an equity layer.
        shifts: deterministic shift on the time grid (zero for unshifted
            models), so ``rates - shifts`` is the auxiliary state.
    """

    def __init__(self, times, rates, stocks=None, shifts=None):
        self.times = times
        self.rates = rates
        self.stocks = stocks
        self.shifts = np.zeros(len(times)) if shifts is None else shifts

    @property
    def auxiliary(self):
        return self.rates - self.shifts

    @property
    def terminal_rate(self):
        return self.rates[:, -1]

    @property
    def terminal_stock(self):
        return None if self.stocks is None else self.stocks[:, -1]


class MCResult:
    """Estimate with diagnostics; unpacks as (price, std_error).

    Attributes:
        price: mean discounted payoff.
        std_error: standard error of the mean (over antithetic pair averages).
        truncations: Euler evaluations where a positive-rate state was negative.
        paths, steps: simulation size.
    """

    def __init__(self, price, std_error, truncations, paths, steps):
        self.price = price
        self.std_error = std_error
        self.truncations = truncations
        self.paths = paths
        self.steps = steps

    def __iter__(self):
        return iter((self.price, self.std_error))

    def brackets(self, value, n_se=3.0):
        return abs(self.price - value) <= n_se * self.std_error

    def __repr__(self):
        return (f"MCResult(price={self.price:.9f}, std_error={self.std_error:.3g}, "
                f"truncations={self.truncations})")


def terminal_payoff(fn):
    """Wrap fn(r_T, S_T) as a path functional."""
    return lambda paths: fn(paths.terminal_rate, paths.terminal_stock)


def _normals(rng, n, steps, antithetic):
    if antithetic:
        z = rng.standard_normal((n // 2, steps))
        return np.concatenate([z, -z])
    return rng.standard_normal((n, steps))


def _theta_on(model, times):
    if model.shifted or model.time_dependent:
        if model.theta is None:
            raise ValueError(f"{model.kind} needs a theta schedule to be simulated")
        return np.array([model.theta(t) for t in times])
    return np.zeros(len(times))


def _simulate(model, equity, times, n, rng, antithetic):
    """One batch of full-truncation Euler paths; returns (PathBatch, discount, truncations)."""
    steps = len(times) - 1
    dt = np.diff(times)
    sq = np.sqrt(dt)
    shifted = model.shifted
    proc = model.auxiliary() if shifted else model
    shift = _theta_on(model, times) if shifted else np.zeros(len(times))
    theta = None if shifted else _theta_on(model, times)
    positive = proc.positive
    floor = _LOG_FLOOR if proc.vol_family == "proportional" else 0.0

    z_r = _normals(rng, n, steps, antithetic)
    if equity is not None:
        z_perp = _normals(rng, n, steps, antithetic)
        rho = equity.rho
        z_s = rho * z_r + math.sqrt(1.0 - rho * rho) * z_perp
        log_s = np.empty((n, steps + 1))
        log_s[:, 0] = math.log(equity.s0)

    y = np.empty((n, steps + 1))
    y[:, 0] = proc.r0
    integral = np.zeros(n)
    truncations = 0
    for k in range(steps):
        t = times[k]
        yk = y[:, k]
        if positive:
            neg = yk <= 0.0
            truncations += int(np.count_nonzero(neg))
            y_eff = np.maximum(yk, floor)
        else:
            y_eff = yk
        mu = (proc.drift(t, y_eff) if shifted
              else proc.drift_given_theta(theta[k], t, y_eff))
        y[:, k + 1] = yk + mu * dt[k] + proc.vol(y_eff) * sq[k] * z_r[:, k]
        r_eff = y_eff + shift[k]
        integral += r_eff * dt[k]
        if equity is not None:
            sig = equity.sigma_s(r_eff)
            q = equity.dividend(t)
            log_s[:, k + 1] = (log_s[:, k] + (r_eff - q - 0.5 * sig * sig) * dt[k]
                               + sig * sq[k] * z_s[:, k])
    rates = y + shift
    stocks = np.exp(log_s) if equity is not None else None
    return PathBatch(times, rates, stocks, shift), np.exp(-integral), truncations


def mc_price(model, payoff, horizon, config=None, equity=None):
    """Monte Carlo price of a European path functional.

    The estimate is the mean of payoff * exp(-sum_k R_{t_k} dt) with
    left-point rates. Square-root and positive models use full
    truncation: max(r, 0) enters the drift, the volatility and the
    discount. Stock and rate shocks are built as
    W1 = rho W2 + sqrt(1 - rho^2) W_perp.

    Parameters:
        model: ShortRateModel (time-dependent models need theta set).
        payoff: callable PathBatch -> array of undiscounted payoffs at ``horizon``.
        horizon: payoff date in years.
        config: SimulationConfig.
        equity: optional EquityModel for stock-dependent payoffs.

    Returns:
        MCResult, which unpacks as (price, std_error).
    """
    config = config or SimulationConfig()
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    steps = max(1, int(round(horizon * config.steps_per_year)))
    times = np.linspace(0.0, horizon, steps + 1)
    sizes = [config.batch_size] * (config.paths // config.batch_size)
    if config.paths % config.batch_size:
        sizes.append(config.paths % config.batch_size)
    children = np.random.SeedSequence(config.seed).spawn(len(sizes))

    def run(b):
        rng = np.random.default_rng(children[b])
        paths, disc, trunc = _simulate(model, equity, times, sizes[b], rng, config.antithetic)
        values = np.asarray(payoff(paths), dtype=float) * disc
        if values.shape != (sizes[b],):
            raise ValueError("payoff must return one value per path")
        if config.antithetic:
            half = sizes[b] // 2
            values = 0.5 * (values[:half] + values[half:])
        return values, trunc

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            out = list(pool.map(run, range(len(sizes))))
    else:
        out = [run(b) for b in range(len(sizes))]
    samples = np.concatenate([v for v, _ in out])
    truncations = sum(t for _, t in out)
    price = float(samples.mean())
    spread = float(np.ptp(samples))
    se = float(samples.std(ddof=1) / math.sqrt(len(samples))) if spread > 0 else 0.0
    return MCResult(price, se, truncations, config.paths, steps)
