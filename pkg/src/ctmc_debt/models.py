"""Short-rate model catalog, deterministic step functions and the equity layer."""

import math
import warnings

import numpy as np
from scipy import integrate


class ScheduleExhaustedError(ValueError):
    """Raised when a step function is evaluated beyond its last breakpoint."""


class SingularVolatilityError(ValueError):
    """Raised when the rate volatility vanishes where a ratio needs it."""


class StepFunction:
    """Piecewise-constant function of time, left-closed intervals.

    Parameters:
        times: breakpoints 0 = t_0 < t_1 < ... < t_N (years).
        values: N values, ``values[n-1]`` applies on ``[t_{n-1}, t_n)``.
    """

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or len(times) != len(values) + 1:
            raise ValueError("need one more breakpoint than values")
        if np.any(np.diff(times) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.times = times
        self.values = values
        self.times.setflags(write=False)
        self.values.setflags(write=False)

    @classmethod
    def constant(cls, value, horizon=math.inf):
        return cls([0.0, horizon], [value])

    @property
    def horizon(self):
        return self.times[-1]

    @property
    def knots(self):
        """List of (t_n, value_n) pairs, value_n applying up to t_n."""
        return list(zip(self.times[1:].tolist(), self.values.tolist()))

    def _index(self, t):
        tol = 1e-12 * max(1.0, abs(t))
        if t < self.times[0] - tol or t > self.times[-1] + tol:
            raise ScheduleExhaustedError(
                f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        n = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(n, 0), len(self.values) - 1)

    def __call__(self, t):
        return float(self.values[self._index(t)])

    def integral(self, a, b):
        """Exact integral over [a, b]."""
        if b < a:
            return -self.integral(b, a)
        if b == a:
            return 0.0
        self._index(a)
        self._index(b)
        lo = np.clip(self.times[:-1], a, b)
        hi = np.clip(self.times[1:], a, b)
        return float(np.sum(self.values * (hi - lo)))

    def average(self, a, b):
        return self.integral(a, b) / (b - a)

    def __repr__(self):
        return f"{type(self).__name__}(n={len(self.values)}, horizon={self.horizon})"


class ThetaSchedule(StepFunction):
    """Piecewise-constant drift shift theta(t), left-continuous steps."""


def as_step_function(value):
    if value is None:
        return StepFunction.constant(0.0)
    if isinstance(value, StepFunction):
        return value
    if callable(value):
        raise TypeError("time-dependent curves must be StepFunction instances")
    return StepFunction.constant(float(value))


# volatility families: sigma_R(r) = sigma * shape(r)
_VOL_CONST, _VOL_SQRT, _VOL_PROP = "constant", "sqrt", "proportional"

# kind -> (required params, vol family, positive state space, time dependent, shifted)
_CATALOG = {
    "vasicek": (("kappa", "theta", "sigma"), _VOL_CONST, False, False, False),
    "cir": (("kappa", "theta", "sigma"), _VOL_SQRT, True, False, False),
    "dothan": (("kappa", "sigma"), _VOL_PROP, True, False, False),
    "exp_vasicek": (("eta", "alpha", "sigma"), _VOL_PROP, True, False, False),
    "ho_lee": (("sigma",), _VOL_CONST, False, True, False),
    "bdt": (("sigma",), _VOL_PROP, True, True, False),
    "hull_white": (("kappa", "sigma"), _VOL_CONST, False, True, False),
    "black_karasinski": (("kappa", "sigma"), _VOL_PROP, True, True, False),
    "mercurio_moraleda": (("lambda", "gamma", "sigma"), _VOL_PROP, True, True, False),
    "cir_plus": (("kappa", "sigma"), _VOL_SQRT, True, True, False),
    "vasicek_shifted": (("kappa", "alpha", "sigma"), _VOL_CONST, False, False, True),
    "cir_pp": (("kappa", "alpha", "sigma"), _VOL_SQRT, True, False, True),
    "eev_shifted": (("eta", "alpha", "sigma"), _VOL_PROP, True, False, True),
}

_ALIASES = {
    "hw": "hull_white", "hullwhite": "hull_white", "holee": "ho_lee",
    "expvasicek": "exp_vasicek", "ev": "exp_vasicek", "bk": "black_karasinski",
    "blackkarasinski": "black_karasinski", "mm": "mercurio_moraleda",
    "mercuriomoraleda": "mercurio_moraleda", "cirplus": "cir_plus", "cir+": "cir_plus",
    "vasicekshifted": "vasicek_shifted", "ev+": "vasicek_shifted",
    "cirpp": "cir_pp", "cir++": "cir_pp", "eevshifted": "eev_shifted", "eev+": "eev_shifted",
}

_POSITIVE_PARAMS = {
    "vasicek": ("kappa", "theta"), "cir": ("kappa", "theta"),
    "exp_vasicek": ("eta", "alpha"), "black_karasinski": ("kappa",),
    "cir_plus": ("kappa",), "vasicek_shifted": ("kappa", "alpha"),
    "cir_pp": ("kappa", "alpha"),
}
_NONNEGATIVE_PARAMS = {"hull_white": ("kappa",), "mercurio_moraleda": ("lambda", "gamma")}

MODEL_KINDS = tuple(_CATALOG)


def canonical_kind(kind):
    key = str(kind).strip().lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), _ALIASES.get(key, key))
    if key not in _CATALOG:
        raise ValueError(f"unknown short-rate model {kind!r}")
    return key


class ShortRateModel:
    """One-factor short-rate diffusion dR = mu(t, R) dt + sigma(R) dW.

    Parameters:
        kind: catalog name, e.g. ``"hull_white"`` or ``"cir_pp"``.
        params: model parameters (kappa, theta, sigma, eta, alpha, lambda, gamma).
        r0: initial short rate. Shifted models use it as the initial
            auxiliary state, since the shift vanishes at time zero.
        theta: drift schedule for time-dependent models, or the
            deterministic shift for shifted models. A float is read as
            a constant schedule.
    """

    def __init__(self, kind, params, r0, theta=None):
        self.kind = canonical_kind(kind)
        required, vol, positive, timedep, shifted = _CATALOG[self.kind]
        self.params = {k: float(v) for k, v in dict(params).items()}
        missing = [k for k in required if k not in self.params]
        if missing:
            raise ValueError(f"{self.kind} needs parameters {missing}")
        self.r0 = float(r0)
        self.vol_family = vol
        self.positive = positive
        self.time_dependent = timedep
        self.shifted = shifted
        if theta is not None and not isinstance(theta, StepFunction):
            theta = ThetaSchedule.constant(float(theta))
        self.theta = theta
        self._validate()

    def _validate(self):
        p = self.params
        if p["sigma"] < 0:
            raise ValueError("sigma must be non-negative")
        for name in _POSITIVE_PARAMS.get(self.kind, ()):
            if p[name] <= 0:
                raise ValueError(f"{name} must be positive for {self.kind}")
        for name in _NONNEGATIVE_PARAMS.get(self.kind, ()):
            if p[name] < 0:
                raise ValueError(f"{name} must be non-negative for {self.kind}")
        if self.positive and self.r0 <= 0:
            raise ValueError(f"{self.kind} needs a positive initial rate")
        if self.kind in ("cir", "cir_pp"):
            mean = p["theta"] if self.kind == "cir" else p["alpha"]
            if 2 * p["kappa"] * mean <= p["sigma"] ** 2:
                warnings.warn(f"Feller condition 2*kappa*mean > sigma^2 fails for {self.kind}",
                              stacklevel=3)

    # construction helpers
    def with_theta(self, theta):
        return ShortRateModel(self.kind, self.params, self.r0, theta)

    def auxiliary(self):
        """Homogeneous process Y of a shifted model, R = Y + theta(t)."""
        if not self.shifted:
            raise ValueError(f"{self.kind} is not a shifted model")
        return _AuxiliaryModel(self)

    @property
    def state_lower_bound(self):
        return 0.0 if self.positive else -math.inf

    @property
    def gaussian(self):
        return self.vol_family == _VOL_CONST

    def _theta_at(self, t):
        if self.theta is None:
            raise ScheduleExhaustedError(f"{self.kind} needs a theta schedule")
        return self.theta(t)

    # dynamics
    def drift_given_theta(self, theta, t, r):
        """Drift with the time-dependent parameter frozen at ``theta``."""
        p, k = self.params, self.kind
        r = np.asarray(r, dtype=float)
        if k == "vasicek" or k == "cir":
            return p["kappa"] * (p["theta"] - r)
        if k == "dothan":
            return p["kappa"] * r
        if k == "exp_vasicek":
            return r * (p["eta"] - p["alpha"] * np.log(r))
        if k == "ho_lee":
            return theta + 0.0 * r
        if k == "bdt":
            return theta * r
        if k in ("hull_white", "cir_plus"):
            return theta - p["kappa"] * r
        if k == "black_karasinski":
            return r * (theta - p["kappa"] * np.log(r))
        if k == "mercurio_moraleda":
            g = p["gamma"]
            return r * (theta - (p["lambda"] - g / (1.0 + g * t) * np.log(r)))
        raise ValueError(f"drift of {k} is defined on its auxiliary process")

    def drift(self, t, r):
        """Drift mu_R(t, r) of the short rate."""
        if self.shifted:
            theta = self._theta_at(t)
            aux = self.auxiliary()
            # d(Y + theta) has the jump-free part mu_Y(r - theta)
            return aux.drift(t, np.asarray(r, dtype=float) - theta)
        if self.time_dependent:
            return self.drift_given_theta(self._theta_at(t), t, r)
        return self.drift_given_theta(0.0, t, r)

    def vol(self, r):
        """Volatility sigma_R(r)."""
        s = self.params["sigma"]
        r = np.asarray(r, dtype=float)
        if self.vol_family == _VOL_CONST:
            return s + 0.0 * r
        if self.vol_family == _VOL_SQRT:
            return s * np.sqrt(np.maximum(r, 0.0))
        return s * r

    def vol_derivative(self, r):
        s = self.params["sigma"]
        r = np.asarray(r, dtype=float)
        if self.vol_family == _VOL_CONST:
            return 0.0 * r
        if self.vol_family == _VOL_SQRT:
            with np.errstate(divide="ignore"):
                return s / (2.0 * np.sqrt(r))
        return s + 0.0 * r

    def default_bounds(self):
        """Default grid bounds around r0."""
        r0 = self.r0
        if self.positive:
            return r0 / 100.0, 7.0 * r0
        if r0 <= 0:
            raise ValueError("default Gaussian bounds need r0 > 0; pass bounds explicitly")
        return -30.0 * r0, 25.0 * r0

    def to_dict(self):
        d = {"model": self.kind, "r0": self.r0, **self.params}
        if self.theta is not None:
            d["theta"] = [[t, v] for t, v in self.theta.knots]
        return d

    def __repr__(self):
        return f"ShortRateModel({self.kind!r}, {self.params}, r0={self.r0})"


class _AuxiliaryModel(ShortRateModel):
    """Homogeneous auxiliary process of a shifted model."""

    def __init__(self, parent):
        self.parent = parent
        self.kind = parent.kind
        self.params = parent.params
        self.r0 = parent.r0
        self.vol_family = parent.vol_family
        self.positive = parent.positive
        self.time_dependent = False
        self.shifted = False
        self.theta = None

    def drift_given_theta(self, theta, t, y):
        p = self.params
        y = np.asarray(y, dtype=float)
        if self.kind in ("vasicek_shifted", "cir_pp"):
            return p["kappa"] * (p["alpha"] - y)
        return y * (p["eta"] - p["alpha"] * np.log(y))

    def drift(self, t, y):
        return self.drift_given_theta(0.0, t, y)

    def auxiliary(self):
        return self

    def __repr__(self):
        return f"AuxiliaryModel({self.kind!r}, {self.params}, y0={self.r0})"


def from_config(cfg):
    """Build a model from a mapping such as
    ``{"model": "hull_white", "kappa": 1.0, "sigma": 0.2, "r0": 0.04}``.

    ``theta`` may be a number, a list of ``[t, value]`` knots, or the
    string ``"calibrate"`` (left unset, filled by calibration).
    """
    cfg = dict(cfg)
    kind = cfg.pop("model", None) or cfg.pop("kind")
    r0 = cfg.pop("r0", None)
    if r0 is None:
        r0 = cfg.pop("y0")
    theta = cfg.pop("theta", None)
    kind_c = canonical_kind(kind)
    if kind_c in ("vasicek", "cir"):
        params = {**cfg, "theta": theta}
        return ShortRateModel(kind_c, params, r0)
    sched = None
    if isinstance(theta, str):
        if theta.lower() != "calibrate":
            raise ValueError(f"theta must be a number, knot list or 'calibrate', got {theta!r}")
    elif isinstance(theta, (list, tuple)):
        ts = [0.0] + [float(k[0]) for k in theta]
        sched = ThetaSchedule(ts, [float(k[1]) for k in theta])
    elif theta is not None:
        sched = ThetaSchedule.constant(float(theta))
    return ShortRateModel(kind_c, cfg, r0, sched)


class EquityModel:
    """Stock layer dS = (R - q) S dt + sigma_S(R) S dW1, d<W1, W2> = rho dt.

    Parameters:
        s0: spot price.
        sigma_s: constant volatility or a function of the short rate.
        dividend: constant yield or a StepFunction of time.
        rho: correlation with the rate Brownian motion.
    """

    def __init__(self, s0, sigma_s, dividend=0.0, rho=0.0):
        if s0 <= 0:
            raise ValueError("s0 must be positive")
        if not -1.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        self.s0 = float(s0)
        self.rho = float(rho)
        self.dividend = as_step_function(dividend)
        if callable(sigma_s):
            self._sigma_fn = sigma_s
            self.sigma_const = None
        else:
            if sigma_s <= 0:
                raise ValueError("sigma_s must be positive")
            self._sigma_fn = None
            self.sigma_const = float(sigma_s)

    @property
    def constant_vol(self):
        return self.sigma_const is not None

    def sigma_s(self, r):
        if self._sigma_fn is None:
            return self.sigma_const + 0.0 * np.asarray(r, dtype=float)
        return np.asarray(self._sigma_fn(r), dtype=float)

    def sigma_s_derivative(self, r, h=1e-6):
        if self._sigma_fn is None:
            return 0.0 * np.asarray(r, dtype=float)
        r = np.asarray(r, dtype=float)
        return (self.sigma_s(r + h) - self.sigma_s(r - h)) / (2 * h)

    def with_(self, **changes):
        kw = dict(s0=self.s0, sigma_s=self._sigma_fn or self.sigma_const,
                  dividend=self.dividend, rho=self.rho)
        kw.update(changes)
        return EquityModel(**kw)


def _check_vol(model, r):
    vol = model.vol(r)
    if np.any(vol <= 0):
        raise SingularVolatilityError(f"sigma_R vanishes on {np.asarray(r)[vol <= 0]}")
    return vol


def correlation_antiderivative(model, equity, r, anchor=None):
    """f(r), an antiderivative of sigma_S / sigma_R.

    Closed forms are used for constant sigma_S; otherwise the integral is
    taken numerically from ``anchor`` (default r0).
    """
    if model.shifted:
        raise ValueError("the equity transform is not defined for shifted models")
    r = np.asarray(r, dtype=float)
    _check_vol(model, r)
    s = model.params["sigma"]
    if equity.constant_vol:
        ratio = equity.sigma_const / s
        if model.vol_family == _VOL_CONST:
            return ratio * r
        if model.vol_family == _VOL_SQRT:
            return 2.0 * ratio * np.sqrt(r)
        return ratio * np.log(r)
    anchor = model.r0 if anchor is None else anchor

    def one(x):
        val, _ = integrate.quad(lambda u: float(equity.sigma_s(u) / model.vol(u)),
                                anchor, x, epsabs=1e-10, epsrel=1e-10)
        return val
    return np.vectorize(one)(r)


def transform_coefficients(model, equity, t, r):
    """Coefficients of X = ln S - rho f(R).

    Returns:
        (f, mu_x, sigma_x) evaluated at (t, r).
    """
    r = np.asarray(r, dtype=float)
    sig_r = _check_vol(model, r)
    sig_s = equity.sigma_s(r)
    rho = equity.rho
    f = correlation_antiderivative(model, equity, r)
    psi = model.drift(t, r) * sig_s / sig_r + 0.5 * (
        equity.sigma_s_derivative(r) * sig_r - sig_s * model.vol_derivative(r))
    mu_x = r - equity.dividend(t) - 0.5 * sig_s ** 2 - rho * psi
    sigma_x = sig_s * math.sqrt(1.0 - rho * rho)
    if f.ndim == 0:
        return float(f), float(mu_x), float(sigma_x)
    return f, mu_x, sigma_x + 0.0 * r


def drift(model, t, r):
    return model.drift(t, r)
