"""Market discount curves and theta-schedule calibration."""

import csv
import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.sparse.linalg import expm_multiply

from .ctmc import (InvalidGeneratorError, build_rate_generator, discounted_step,
                   tridiagonal_rates)
from .models import ThetaSchedule


class CalibrationError(RuntimeError):
    """Theta could not be found for some grid time."""


class DiscountCurve:
    """Zero-bond curve t -> P*(0, t), log-linear between knots.

    P*(0, 0) = 1 is implicit. Beyond the last knot the last forward rate
    is held flat.

    Parameters:
        times: knot maturities in years, strictly increasing and positive.
        discounts: discount factors at the knots.
    """

    def __init__(self, times, discounts):
        t = np.asarray(times, dtype=float)
        p = np.asarray(discounts, dtype=float)
        if t.ndim != 1 or t.shape != p.shape or len(t) < 1:
            raise ValueError("times and discounts must be 1-d of equal length")
        if t[0] == 0.0:
            if abs(p[0] - 1.0) > 1e-14:
                raise ValueError("P(0,0) must be 1")
            t, p = t[1:], p[1:]
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be positive and strictly increasing")
        if np.any(p <= 0):
            raise ValueError("discount factors must be positive")
        if np.any(np.diff(np.concatenate([[1.0], p])) > 0):
            warnings.warn("discount curve is not non-increasing", stacklevel=2)
        self.times = t
        self.discounts = p
        self._t = np.concatenate([[0.0], t])
        self._logp = np.concatenate([[0.0], np.log(p)])

    @property
    def knots(self):
        return list(zip(self.times.tolist(), self.discounts.tolist()))

    def log_discount(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("negative maturity")
        out = np.interp(t, self._t, self._logp)
        if len(self._t) >= 2:
            tail_fwd = (self._logp[-1] - self._logp[-2]) / (self._t[-1] - self._t[-2])
            beyond = t > self._t[-1]
            out = np.where(beyond, self._logp[-1] + tail_fwd * (t - self._t[-1]), out)
        return out if out.ndim else float(out)

    def discount(self, t):
        return np.exp(self.log_discount(t))

    __call__ = discount

    def forward_rate(self, a, b):
        """Continuously compounded forward rate over [a, b]."""
        return -(self.log_discount(b) - self.log_discount(a)) / (b - a)

    @classmethod
    def from_csv(cls, path):
        """Read a CSV with header ``t,discount``."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"t", "discount"} <= set(
                    f.strip() for f in reader.fieldnames):
                raise ValueError(f"{path}: expected header 't,discount'")
            rows = [{k.strip(): v for k, v in r.items()} for r in reader]
        return cls([float(r["t"]) for r in rows], [float(r["discount"]) for r in rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "discount"])
            for t, p in self.knots:
                w.writerow([repr(t), repr(p)])

    @classmethod
    def flat(cls, rate, horizon=30.0, n=30):
        t = np.linspace(horizon / n, horizon, n)
        return cls(t, np.exp(-rate * t))

    def __repr__(self):
        return f"DiscountCurve({len(self.times)} knots up to {self.times[-1]:g})"


def _sparse_step(nodes, mu, var, dt, scheme="central"):
    sub, sup = tridiagonal_rates(nodes, mu, var, scheme)
    if np.any(sub < 0) or np.any(sup < 0):
        raise InvalidGeneratorError("negative transition rate")
    diag = -nodes.copy()
    diag[1:] -= sub
    diag[:-1] -= sup
    # transposed (Q - D) dt so that exp acts on a row vector
    return sp.diags([sup * dt, diag * dt, sub * dt], [-1, 0, 1], format="csr")


def calibration_dates(curve, horizon):
    """Curve knots inside (0, horizon], plus the horizon itself."""
    dates = [t for t in curve.times if t < horizon - 1e-12]
    return np.array(dates + [float(horizon)])


def calibrate_theta(model, grid, curve, time_grid, state_index=None, targets="knots",
                    bounds=(-5.0, 5.0), tol=1e-12, maxiter=200, scheme="central"):
    """Fit a piecewise-constant theta so the CTMC reproduces ``curve``.

    Runs forward over calibration dates tau_1 < ... < tau_K. On
    (tau_{k-1}, tau_k] theta is a constant theta_k solving
    P*(0, tau_k) = a_{k-1} prod exp((Q_n(theta_k) - D) dt_n) 1, the product
    running over the time-grid steps inside the interval and a_{k-1}
    being the accumulated row of discounted transition probabilities
    from the initial state. With ``targets="grid"`` every grid time is
    a calibration date, with interpolated targets between knots.

    Parameters:
        model: time-dependent model whose drift depends on theta.
        grid: rate grid.
        curve: DiscountCurve (or any callable t -> P*(0, t) with ``times``).
        time_grid: breakpoints 0 = t_0 < ... < t_N.
        state_index: initial state, default the grid anchor.
        targets: "knots" (default), "grid", or explicit dates on the grid.
        bounds: admissible theta range for the root search.
        tol: residual tolerance on discount factors.
        maxiter: Brent iteration cap per date.
        scheme: generator scheme, see ``tridiagonal_rates``.

    Returns:
        ThetaSchedule with breakpoints at the calibration dates.
    """
    if model.shifted or not model.time_dependent:
        raise ValueError(f"{model.kind} has no theta in its drift; "
                         "use calibrate_theta_shifted for shifted models")
    times = np.asarray(time_grid, dtype=float)
    if isinstance(targets, str):
        if targets == "grid":
            dates = times[1:]
        elif targets == "knots":
            dates = calibration_dates(curve, times[-1])
        else:
            raise ValueError(f"unknown targets {targets!r}")
    else:
        dates = np.asarray(targets, dtype=float)
    idx = [int(np.argmin(np.abs(times - d))) for d in dates]
    for d, i in zip(dates, idx):
        if abs(times[i] - d) > 1e-9:
            raise ValueError(f"calibration date {d} is not on the time grid")
    if idx[-1] != len(times) - 1 or np.any(np.diff(idx) <= 0) or idx[0] == 0:
        raise ValueError("calibration dates must increase and end at the horizon")
    nodes = grid.nodes
    j = grid.anchor_index if state_index is None else state_index
    var = model.vol(nodes) ** 2
    row = np.zeros(len(nodes))
    row[j] = 1.0
    lo_b, hi_b = bounds
    thetas = np.empty(len(idx))
    guess = 0.0
    start = 0
    for k, stop in enumerate(idx):
        t_target = times[stop]
        target = float(curve(t_target))
        advance = _interval_propagator(model, nodes, var, times[start:stop + 1], scheme)

        def residual(theta, advance=advance, row=row, target=target):
            try:
                return float(np.sum(advance(theta, row))) - target
            except InvalidGeneratorError:
                return math.nan

        at_guess = residual(guess)
        if abs(at_guess) <= tol:
            # previous theta already fits (e.g. a flat curve); skip the search
            root = guess
        else:
            lo, hi = _bracket(residual, guess, lo_b, hi_b, t_target)
            root = brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                          maxiter=maxiter)
        new_row = advance(root, row)
        res = float(np.sum(new_row)) - target
        if abs(res) > tol:
            root, new_row = _bisect(lambda th: advance(th, row), target, lo, hi, maxiter)
            res = float(np.sum(new_row)) - target
            if abs(res) > tol:
                warnings.warn(f"calibration residual {res:.3e} at t={t_target:.6g} "
                              f"above {tol:g}", stacklevel=2)
        thetas[k] = root
        guess = root
        row = new_row
        start = stop
    return ThetaSchedule(np.concatenate([[0.0], times[idx]]), thetas)


def _interval_propagator(model, nodes, var, sub_times, scheme="central"):
    """Function (theta, row) -> row times the discounted kernels of the sub-steps."""
    dts = np.diff(sub_times)
    if len(dts) == 1 or model.kind == "mercurio_moraleda":
        def advance(theta, row):
            for t0, dt in zip(sub_times[:-1], dts):
                mu = model.drift_given_theta(theta, t0, nodes)
                row = expm_multiply(_sparse_step(nodes, mu, var, dt, scheme), row)
            return row
        return advance

    def advance(theta, row):
        mu = model.drift_given_theta(theta, sub_times[0], nodes)
        q = _dense_generator(nodes, mu, var, scheme)
        kernels = {}
        for dt in dts:
            key = round(dt, 14)
            a = kernels.get(key)
            if a is None:
                a = kernels[key] = expm(q * dt)
            row = row @ a
        return row
    return advance


def _dense_generator(nodes, mu, var, scheme="central"):
    sub, sup = tridiagonal_rates(nodes, mu, var, scheme)
    if np.any(sub < 0) or np.any(sup < 0):
        raise InvalidGeneratorError("negative transition rate")
    q = np.diag(sub, -1) + np.diag(sup, 1)
    q -= np.diag(q.sum(axis=1) + nodes)
    return q


def _bracket(f, guess, lo_b, hi_b, t):
    guess = min(max(guess, lo_b), hi_b)
    f0 = f(guess)
    if f0 == 0.0:
        return guess, guess + 1e-15
    h = 1e-3
    while True:
        lo, hi = max(guess - h, lo_b), min(guess + h, hi_b)
        flo, fhi = f(lo), f(hi)
        if not (math.isnan(flo) or math.isnan(fhi)):
            if flo * f0 <= 0:
                return lo, guess
            if fhi * f0 <= 0:
                return guess, hi
        if lo == lo_b and hi == hi_b:
            raise CalibrationError(
                f"theta not bracketed within [{lo_b}, {hi_b}] at t={t:.6g}")
        h *= 4.0


def _bisect(advance, target, lo, hi, maxiter):
    flo = float(np.sum(advance(lo))) - target
    mid = 0.5 * (lo + hi)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fm = float(np.sum(advance(mid))) - target
        if fm == 0.0 or hi - lo < 1e-16:
            break
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return mid, advance(mid)


def calibrate_theta_shifted(aux_gen, curve, time_grid=None, y_index=None):
    """Closed-form shift for R = Y + theta(t) models.

    theta_1 = -ln(P*(t_1)/P~(t_1))/t_1 and for n >= 2
    theta_n = -ln[(P*(t_n)/P*(t_{n-1})) (P~(t_{n-1})/P~(t_n))]/(t_n - t_{n-1}),
    with P~ the CTMC zero-bond curve of the auxiliary process. The
    one-step matrix is computed once per distinct step size.

    Parameters:
        aux_gen: homogeneous PiecewiseGenerator of Y (its grid carries the anchor).
        curve: market curve.
        time_grid: breakpoints; defaults to ``aux_gen.times``.
        y_index: initial auxiliary state, default the anchor.
    """
    if not aux_gen.homogeneous:
        raise ValueError("the auxiliary generator must be time-homogeneous")
    times = aux_gen.times if time_grid is None else np.asarray(time_grid, dtype=float)
    grid = aux_gen.grid
    j = grid.anchor_index if y_index is None else y_index
    g = aux_gen.generators[0]
    cache = {}
    row = np.zeros(grid.size)
    row[j] = 1.0
    aux_prices = np.empty(len(times))
    aux_prices[0] = 1.0
    for n in range(1, len(times)):
        dt = times[n] - times[n - 1]
        key = round(dt, 14)
        if key not in cache:
            cache[key] = discounted_step(g, grid.nodes, dt)
        row = row @ cache[key]
        aux_prices[n] = row.sum()
    market = np.array([1.0] + [float(curve(t)) for t in times[1:]])
    ratio = (market[1:] / market[:-1]) * (aux_prices[:-1] / aux_prices[1:])
    if np.any(ratio <= 0) or not np.all(np.isfinite(ratio)):
        raise CalibrationError("curve and auxiliary model are incompatible (non-positive ratio)")
    thetas = -np.log(ratio) / np.diff(times)
    return ThetaSchedule(times, thetas)


def calibrate(model, grid, curve, time_grid, scheme="central", **kwargs):
    """Dispatch to the closed form for shifted models, the root search otherwise.

    Returns:
        (calibrated model, ThetaSchedule)
    """
    if model.shifted:
        aux_gen = build_rate_generator(model.auxiliary(), grid, time_grid, scheme)
        sched = calibrate_theta_shifted(aux_gen, curve, time_grid)
    else:
        sched = calibrate_theta(model, grid, curve, time_grid, scheme=scheme, **kwargs)
    return model.with_theta(sched), sched


def model_curve(gen, state_index=None):
    """Discount factors P(0, t_n) of the CTMC for every grid time."""
    grid = gen.grid
    j = grid.anchor_index if state_index is None else state_index
    row = np.zeros(grid.size)
    row[j] = 1.0
    out = np.empty(len(gen.times))
    out[0] = 1.0
    for n in range(1, len(gen.times)):
        row = row @ gen.step_matrix(n)
        out[n] = row.sum()
    return out


def knot_residuals(gen, curve, state_index=None):
    """|P_model(0, t) - P*(0, t)| at the curve knots lying on the time grid."""
    prices = model_curve(gen, state_index)
    out = []
    for t, p in curve.knots:
        if t > gen.horizon + 1e-12:
            continue
        n = gen.index_of(t)
        out.append((t, p, float(prices[n]), float(prices[n] - p)))
    return out


def write_theta_csv(schedule, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_n", "theta_star"])
        for t, v in schedule.knots:
            w.writerow([f"{t:.17g}", f"{v:.17g}"])


def read_theta_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ts = [0.0] + [float(r["t_n"]) for r in rows]
    return ThetaSchedule(ts, [float(r["theta_star"]) for r in rows])
