"""Tridiagonal CTMC generators, transition kernels and time grids."""

import warnings

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply


class InvalidGeneratorError(ValueError):
    """Generator with a negative off-diagonal rate."""


class ExponentialError(ArithmeticError):
    """Matrix exponential produced non-finite output."""


class GeneratorMatrix:
    """Tridiagonal generator stored by diagonals.

    Parameters:
        sub: rates i -> i-1 for rows 1..m-1.
        diag: diagonal, minus the row sums of the off-diagonals.
        sup: rates i -> i+1 for rows 0..m-2.
        interval: optional (t_start, t_end) the generator applies to.
    """

    def __init__(self, sub, diag, sup, interval=None):
        self.sub = np.asarray(sub, dtype=float)
        self.diag = np.asarray(diag, dtype=float)
        self.sup = np.asarray(sup, dtype=float)
        self.interval = interval
        for a in (self.sub, self.diag, self.sup):
            a.setflags(write=False)

    @property
    def dimension(self):
        return len(self.diag)

    def to_dense(self):
        return (np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1))

    def to_sparse(self, fmt="csr"):
        return sp.diags([self.sub, self.diag, self.sup], [-1, 0, 1], format=fmt)

    def row_sums(self):
        s = self.diag.copy()
        s[1:] += self.sub
        s[:-1] += self.sup
        return s

    def same_as(self, other):
        return (other is self) or (
            isinstance(other, GeneratorMatrix)
            and np.array_equal(self.sub, other.sub)
            and np.array_equal(self.diag, other.diag)
            and np.array_equal(self.sup, other.sup))

    def __repr__(self):
        return f"GeneratorMatrix(m={self.dimension}, interval={self.interval})"


def tridiagonal_rates(nodes, mu, var, scheme="central"):
    """Off-diagonal rates of the local-consistency scheme.

    Interior rows match drift ``mu`` and variance ``var`` to first order;
    the end rows push inward at rate |mu|/delta. With ``scheme="upwind"``
    interior rows whose central rates would be negative switch to the
    one-sided drift split, which keeps every rate non-negative.

    Returns:
        (sub, sup) arrays; ``sub[i-1]`` is the rate i -> i-1,
        ``sup[i]`` the rate i -> i+1. Leading axes of mu/var broadcast.
    """
    nodes = np.asarray(nodes, dtype=float)
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    shape = np.broadcast(mu, var, nodes).shape
    mu = np.broadcast_to(mu, shape)
    var = np.broadcast_to(var, shape)
    d = np.diff(nodes)
    dl, dr = d[:-1], d[1:]
    mi, vi = mu[..., 1:-1], var[..., 1:-1]
    down = (vi - dr * mi) / (dl * (dl + dr))
    up = (vi + dl * mi) / (dr * (dl + dr))
    if scheme == "upwind":
        bad = (down < 0) | (up < 0)
        if np.any(bad):
            down = np.where(bad, vi / (dl * (dl + dr)) + np.maximum(-mi, 0.0) / dl, down)
            up = np.where(bad, vi / (dr * (dl + dr)) + np.maximum(mi, 0.0) / dr, up)
    elif scheme != "central":
        raise ValueError(f"unknown scheme {scheme!r}")
    sub = np.concatenate([down, np.abs(mu[..., -1:]) / d[-1]], axis=-1)
    sup = np.concatenate([np.abs(mu[..., :1]) / d[0], up], axis=-1)
    return sub, sup


def _check_rates(sub, sup, nodes, label=""):
    bad_up = np.flatnonzero(sup < 0)
    bad_dn = np.flatnonzero(sub < 0)
    if bad_up.size or bad_dn.size:
        i = int(bad_up[0]) if bad_up.size else int(bad_dn[0]) + 1
        raise InvalidGeneratorError(
            f"negative transition rate at node {i} (state {nodes[i]:.6g}){label}; "
            "refine the grid or reduce the drift")


def generator_from_coefficients(nodes, mu, sigma, interval=None, scheme="central"):
    """Generator on ``nodes`` for drift ``mu`` and volatility ``sigma`` (arrays)."""
    sub, sup = tridiagonal_rates(nodes, mu, np.asarray(sigma, dtype=float) ** 2, scheme)
    _check_rates(sub, sup, nodes)
    diag = np.zeros(len(nodes))
    diag[1:] -= sub
    diag[:-1] -= sup
    return GeneratorMatrix(sub, diag, sup, interval)


class PiecewiseGenerator:
    """Generators constant on each interval [t_{n-1}, t_n) of a time grid.

    Parameters:
        times: breakpoints 0 = t_0 < ... < t_N.
        generators: N GeneratorMatrix objects (may repeat the same object).
        grid: state grid the generators live on.
        shifts: optional per-interval deterministic shift added to the
            discount rate of every state (shifted models, R = Y + shift).
    """

    def __init__(self, times, generators, grid, shifts=None):
        self.times = np.asarray(times, dtype=float)
        if len(generators) != len(self.times) - 1:
            raise ValueError("need one generator per interval")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        self.generators = list(generators)
        self.grid = grid
        self.shifts = (np.zeros(len(generators)) if shifts is None
                       else np.asarray(shifts, dtype=float))
        first = self.generators[0]
        self.homogeneous = all(g is first or g.same_as(first) for g in self.generators)
        self._cache = {}

    @property
    def n_steps(self):
        return len(self.generators)

    @property
    def steps(self):
        return np.diff(self.times)

    @property
    def horizon(self):
        return float(self.times[-1])

    def index_of(self, t, tol=1e-9):
        """Index n with times[n] == t (within tol)."""
        n = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[n] - t) > tol:
            raise ValueError(f"t={t} is not on the time grid")
        return n

    def discount_rates(self, n):
        """Discount rates of every state on interval n (1-based)."""
        return self.grid.nodes + self.shifts[n - 1]

    def _gen_key(self, n):
        g = self.generators[n - 1]
        return id(self.generators[0]) if self.homogeneous else id(g)

    def step_matrix(self, n):
        """exp((Q_n - D_n) dt_n) for interval n (1-based), cached."""
        g = self.generators[n - 1]
        dt = self.times[n] - self.times[n - 1]
        key = (self._gen_key(n), round(dt, 14))
        a = self._cache.get(key)
        if a is None:
            a = discounted_step(g, self.grid.nodes, dt)
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = a
        shift = self.shifts[n - 1]
        return a if shift == 0.0 else a * np.exp(-shift * dt)

    def transition_matrix(self, n):
        """exp(Q_n dt_n) for interval n (1-based), cached."""
        g = self.generators[n - 1]
        dt = self.times[n] - self.times[n - 1]
        key = ("P", self._gen_key(n), round(dt, 14))
        p = self._cache.get(key)
        if p is None:
            p = matrix_exponential(g, dt)
            self._cache[key] = p
        return p

    def shift_integral(self, i, j):
        """Integral of the shift over [t_i, t_j]."""
        return float(np.sum(self.shifts[i:j] * np.diff(self.times[i:j + 1])))


def build_rate_generator(model, grid, time_grid, scheme="central"):
    """Piecewise generator of the short rate on ``grid``.

    The drift on interval n is evaluated at t_{n-1}. Shifted models get
    the homogeneous generator of their auxiliary process, with the
    interval average of the shift stored for discounting.
    """
    times = np.asarray(time_grid, dtype=float)
    nodes = grid.nodes
    if model.shifted:
        aux = model.auxiliary()
        g = generator_from_coefficients(nodes, aux.drift(0.0, nodes), aux.vol(nodes),
                                        scheme=scheme)
        shifts = None
        if model.theta is not None:
            shifts = [model.theta.average(a, b) for a, b in zip(times[:-1], times[1:])]
        return PiecewiseGenerator(times, [g] * (len(times) - 1), grid, shifts)
    vol = model.vol(nodes)
    if not model.time_dependent:
        g = generator_from_coefficients(nodes, model.drift(0.0, nodes), vol, scheme=scheme)
        return PiecewiseGenerator(times, [g] * (len(times) - 1), grid)
    gens = []
    prev_theta, prev_g = None, None
    for a, b in zip(times[:-1], times[1:]):
        th = model.theta(a)
        if model.kind != "mercurio_moraleda" and prev_g is not None and th == prev_theta:
            gens.append(prev_g)
            continue
        try:
            g = generator_from_coefficients(nodes, model.drift(a, nodes), vol, (a, b), scheme)
        except InvalidGeneratorError as exc:
            raise InvalidGeneratorError(f"{exc} on interval [{a:.6g}, {b:.6g})") from None
        gens.append(g)
        prev_theta, prev_g = th, g
    return PiecewiseGenerator(times, gens, grid)


def _finalize_kernel(p, dt):
    if not np.all(np.isfinite(p)):
        raise ExponentialError(f"non-finite matrix exponential (dt={dt})")
    return p


def matrix_exponential(g, dt):
    """Transition matrix exp(Q dt), entries clamped to [0, 1].

    Uses scaling and squaring with a degree-13 Pade approximant.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = g.to_dense() if isinstance(g, GeneratorMatrix) else np.asarray(g, dtype=float)
    p = _finalize_kernel(expm(q * dt), dt)
    if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
        warnings.warn("transition probabilities outside [-1e-12, 1+1e-12] were clamped",
                      stacklevel=2)
    return np.clip(p, 0.0, 1.0)


def discounted_step(g, rates, dt):
    """exp((Q - diag(rates)) dt)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = g.to_dense() if isinstance(g, GeneratorMatrix) else np.asarray(g, dtype=float)
    m = q - np.diag(np.asarray(rates, dtype=float))
    return _finalize_kernel(expm(m * dt), dt)


def expm_action(a, v, dt=1.0):
    """exp(a dt) v for a sparse or dense square matrix ``a`` (truncated Taylor)."""
    if sp.issparse(a):
        a = a.tocsr()
    return expm_multiply(a * dt, v)


def make_time_grid(horizon, dt, events=(), snap_tol=1e-9):
    """Uniform grid with step ``dt`` on [0, horizon] merged with event dates.

    The step count is round(horizon/dt). Event dates within ``snap_tol``
    of a grid time snap onto it; others are inserted as extra
    breakpoints so they are hit exactly.
    """
    horizon = float(horizon)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = max(1, int(round(horizon / dt)))
    times = np.linspace(0.0, horizon, n + 1)
    extra = []
    for e in events:
        e = float(e)
        if e <= snap_tol or e >= horizon - snap_tol:
            continue
        j = int(np.argmin(np.abs(times - e)))
        if abs(times[j] - e) <= snap_tol:
            times[j] = e
        else:
            extra.append(e)
    if extra:
        times = np.union1d(times, extra)
    return times
