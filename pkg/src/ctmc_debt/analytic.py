"""Closed-form reference prices: affine zero-coupon bonds, bond options, European CBs."""

import math

from scipy.special import ndtr
from scipy.stats import ncx2

from .models import ShortRateModel, as_step_function

_GAUSSIAN = ("vasicek", "ho_lee", "hull_white", "vasicek_shifted")


class UnsupportedModelError(ValueError):
    """No closed form is available for the requested model."""


def b_factor(kappa, tau):
    """B(t, T) = (1 - e^{-kappa tau}) / kappa, tau when kappa = 0."""
    if kappa == 0:
        return tau
    return -math.expm1(-kappa * tau) / kappa


_SERIES_CUTOFF = 0.05


def _b_squared_integral(kappa, tau):
    """Integral of B(s, T)^2 over s in [T - tau, T]."""
    x = kappa * tau
    if abs(x) < _SERIES_CUTOFF:
        # sum_{n>=3} (-kappa)^{n-3} (2^{n-1} - 2) tau^n / n!
        return sum((-x) ** (n - 3) * (2 ** (n - 1) - 2) / math.factorial(n)
                   for n in range(3, 16)) * tau ** 3
    b = b_factor(kappa, tau)
    return (tau - b - 0.5 * kappa * b * b) / kappa ** 2


def _tau_minus_b(kappa, tau):
    """(tau - B(t, T)) / kappa, with its kappa -> 0 limit tau^2 / 2."""
    x = kappa * tau
    if abs(x) < _SERIES_CUTOFF:
        return sum((-x) ** (n - 2) / math.factorial(n) for n in range(2, 15)) * tau ** 2
    return (tau - b_factor(kappa, tau)) / kappa


def _b_integral(kappa, a, b, maturity):
    """Integral of B(s, T) over s in [a, b]."""
    if kappa == 0:
        return 0.5 * ((maturity - a) ** 2 - (maturity - b) ** 2)
    return ((b - a) - (math.exp(-kappa * (maturity - b)) - math.exp(-kappa * (maturity - a))) / kappa) / kappa


def _theta_b_integral(theta, kappa, t, maturity):
    """Integral of theta(s) B(s, T) over [t, T] for a step function theta."""
    total = 0.0
    for lo, hi, val in zip(theta.times[:-1], theta.times[1:], theta.values):
        a, b = max(lo, t), min(hi, maturity)
        if b > a:
            total += val * _b_integral(kappa, a, b, maturity)
    if maturity > theta.times[-1] + 1e-12:
        raise ValueError("theta schedule does not cover the bond maturity")
    return total


def affine_coefficients(model, t, maturity):
    """(A, B) with P(t, T) = exp(A - B r) for Vasicek, Ho-Lee and Hull-White."""
    kind = model.kind
    sigma = model.params["sigma"]
    tau = maturity - t
    if kind == "vasicek":
        kappa, theta = model.params["kappa"], model.params["theta"]
        b = b_factor(kappa, tau)
        a = (theta - sigma ** 2 / (2 * kappa ** 2)) * (b - tau) - sigma ** 2 * b * b / (4 * kappa)
        return a, b
    if kind in ("ho_lee", "hull_white"):
        kappa = model.params.get("kappa", 0.0) if kind == "hull_white" else 0.0
        if model.theta is None:
            raise ValueError(f"{kind} needs a theta schedule")
        b = b_factor(kappa, tau)
        a = 0.5 * sigma ** 2 * _b_squared_integral(kappa, tau) - _theta_b_integral(
            model.theta, kappa, t, maturity)
        return a, b
    raise UnsupportedModelError(f"no affine Gaussian coefficients for {kind}")


def cir_coefficients(kappa, theta, sigma, tau):
    """(A, B) with P = A exp(-B r) for the CIR model."""
    h = math.sqrt(kappa * kappa + 2 * sigma * sigma)
    e = math.expm1(h * tau)
    den = 2 * h + (kappa + h) * e
    a = (2 * h * math.exp((kappa + h) * tau / 2) / den) ** (2 * kappa * theta / sigma ** 2)
    return a, 2 * e / den


def _cir_params(model):
    p = model.params
    mean = p["theta"] if model.kind == "cir" else p["alpha"]
    return p["kappa"], mean, p["sigma"]


def analytic_zcb(model, t, maturity, r=None):
    """Exact zero-coupon bond price P(t, T) given R_t = r (default r0).

    Shifted models take ``r`` as the auxiliary state and use
    P = exp(-int_t^T theta) P_aux.
    """
    if maturity < t:
        raise ValueError("maturity before valuation time")
    r = model.r0 if r is None else r
    if maturity == t:
        return 1.0
    kind = model.kind
    tau = maturity - t
    if kind in ("vasicek", "ho_lee", "hull_white"):
        a, b = affine_coefficients(model, t, maturity)
        return math.exp(a - b * r)
    if kind == "cir":
        a, b = cir_coefficients(*_cir_params(model), tau)
        return a * math.exp(-b * r)
    if kind in ("cir_pp", "vasicek_shifted"):
        shift = 0.0 if model.theta is None else model.theta.integral(t, maturity)
        if kind == "cir_pp":
            a, b = cir_coefficients(*_cir_params(model), tau)
            aux = a * math.exp(-b * r)
        else:
            a, b = affine_coefficients(_vasicek_proxy(model.params), t, maturity)
            aux = math.exp(a - b * r)
        return math.exp(-shift) * aux
    raise UnsupportedModelError(f"no closed-form zero-coupon bond for {kind}")


def _vasicek_proxy(p):
    return ShortRateModel("vasicek", {"kappa": p["kappa"], "theta": p["alpha"], "sigma": p["sigma"]}, 0.0)


def _curve_or_model(model, discount_curve):
    if discount_curve is not None:
        return lambda s: float(discount_curve(s)) if s > 0 else 1.0
    return lambda s: analytic_zcb(model, 0.0, s)


def analytic_zcb_option(model, expiry, maturity, strike, flavor="call", discount_curve=None):
    """European option at time 0 on a unit zero-coupon bond.

    Gaussian models use the lognormal bond formula with P(0, .) taken
    from ``discount_curve`` when given (a curve-fitted Hull-White model)
    or from the model otherwise. CIR uses the non-central chi-square
    formula; CIR++ rescales it with the market-to-model discount ratios.

    Parameters:
        model: Vasicek, Ho-Lee, Hull-White, CIR or CIR++.
        expiry: option maturity t2.
        maturity: bond maturity T > t2.
        strike: K.
        flavor: "call" or "put".
        discount_curve: optional callable t -> P*(0, t).
    """
    if not 0 < expiry < maturity:
        raise ValueError("need 0 < expiry < maturity")
    if flavor not in ("call", "put"):
        raise ValueError("flavor must be 'call' or 'put'")
    disc = _curve_or_model(model, discount_curve)
    p_exp, p_mat = disc(expiry), disc(maturity)
    kind = model.kind
    if strike == 0:
        call = p_mat
    elif kind in _GAUSSIAN:
        sigma = model.params["sigma"]
        kappa = model.params.get("kappa", 0.0) if kind != "ho_lee" else 0.0
        if kappa == 0:
            vol = sigma * (maturity - expiry) * math.sqrt(expiry)
        else:
            vol = sigma * math.sqrt(-math.expm1(-2 * kappa * expiry) / (2 * kappa)) * b_factor(
                kappa, maturity - expiry)
        h = math.log(p_mat / (strike * p_exp)) / vol + 0.5 * vol
        call = p_mat * ndtr(h) - strike * p_exp * ndtr(h - vol)
    elif kind == "cir":
        call = _cir_call(model, model.r0, expiry, maturity, strike)
    elif kind == "cir_pp":
        y0 = model.r0
        kappa, mean, sigma = _cir_params(model)
        aux = lambda s: cir_coefficients(kappa, mean, sigma, s)[0] * math.exp(
            -cir_coefficients(kappa, mean, sigma, s)[1] * y0)
        if discount_curve is None:
            # the model's own shift fixes the market curve
            p_exp, p_mat = analytic_zcb(model, 0.0, expiry), analytic_zcb(model, 0.0, maturity)
        aux_exp, aux_mat = aux(expiry), aux(maturity)
        k_aux = strike * (p_exp * aux_mat) / (aux_exp * p_mat)
        call = p_mat / aux_mat * _cir_call(model, y0, expiry, maturity, k_aux)
    else:
        raise UnsupportedModelError(f"no closed-form bond option for {kind}")
    if flavor == "call":
        return float(call)
    return float(call - p_mat + strike * p_exp)


def _cir_call(model, r, expiry, maturity, strike):
    kappa, mean, sigma = _cir_params(model)
    h = math.sqrt(kappa * kappa + 2 * sigma * sigma)
    a_bond, b_bond = cir_coefficients(kappa, mean, sigma, maturity - expiry)
    rho = 2 * h / (sigma ** 2 * math.expm1(h * expiry))
    psi = (kappa + h) / sigma ** 2
    r_bar = math.log(a_bond / strike) / b_bond
    dof = 4 * kappa * mean / sigma ** 2
    grow = 2 * rho * rho * r * math.exp(h * expiry)
    p_exp = cir_coefficients(kappa, mean, sigma, expiry)
    p_mat = cir_coefficients(kappa, mean, sigma, maturity)
    p_exp = p_exp[0] * math.exp(-p_exp[1] * r)
    p_mat = p_mat[0] * math.exp(-p_mat[1] * r)
    first = ncx2.cdf(2 * r_bar * (rho + psi + b_bond), dof, grow / (rho + psi + b_bond))
    second = ncx2.cdf(2 * r_bar * (rho + psi), dof, grow / (rho + psi))
    return p_mat * first - strike * p_exp * second


def cb_variance(kappa, sigma_s, sigma_r, rho, tau):
    """Variance of ln(S_T / P(T, T)) under the T-forward measure."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    return (sigma_s ** 2 * tau + 2 * rho * sigma_s * sigma_r * _tau_minus_b(kappa, tau)
            + sigma_r ** 2 * _b_squared_integral(kappa, tau))


def analytic_european_cb(model, equity, spec, t=0.0, s=None, r=None, discount_curve=None):
    """European convertible bond under Gaussian rates and constant equity volatility.

    eta x e^{-int q} Phi(d1) + e^{-int c} P(t, T) F Phi(d2) plus coupons
    alpha e^{-int c} P(t, t_c).

    Parameters:
        model: Vasicek, Ho-Lee or Hull-White (a zero-volatility rate
            reduces to Black-Scholes).
        equity: EquityModel with constant volatility.
        spec: ConvertibleSpec.
        t: valuation time.
        s, r: spot and short rate at t, default s0 and r0.
        discount_curve: optional callable t -> P(0, t) replacing the model
            bond prices (only for t = 0).
    """
    if model.kind not in ("vasicek", "ho_lee", "hull_white"):
        raise UnsupportedModelError(f"closed-form CB needs a Gaussian model, got {model.kind}")
    if not equity.constant_vol:
        raise ValueError("closed-form CB needs a constant equity volatility")
    s = equity.s0 if s is None else s
    r = model.r0 if r is None else r
    if discount_curve is not None and t != 0.0:
        raise ValueError("a discount curve can only be used at t = 0")
    kappa = model.params.get("kappa", 0.0) if model.kind != "ho_lee" else 0.0

    def bond(u):
        if discount_curve is not None:
            return float(discount_curve(u))
        return analytic_zcb(model, t, u, r)

    big_t = spec.maturity
    tau = big_t - t
    div = as_step_function(equity.dividend).integral(t, big_t)
    credit = spec.credit_spread.integral(t, big_t)
    p = bond(big_t)
    var = cb_variance(kappa, equity.sigma_const, model.params["sigma"], equity.rho, tau)
    eta, face = spec.ratio, spec.face
    if face == 0:
        value = eta * s * math.exp(-div)
    else:
        sd = math.sqrt(var)
        d1 = (math.log(eta * s / (face * p)) - div + 0.5 * var) / sd
        d2 = sd - d1
        value = eta * s * math.exp(-div) * ndtr(d1) + math.exp(-credit) * p * face * ndtr(d2)
    for t_c in spec.coupon_dates():
        if t_c > t:
            value += spec.coupon_amount * math.exp(-spec.credit_spread.integral(t, t_c)) * bond(t_c)
    return float(value)


def black_scholes_cb(s, face, ratio, rate, sigma_s, tau, dividend=0.0, spread=0.0):
    """Constant-rate limit: eta S e^{-q tau} Phi(d1) + F e^{-(r + c) tau} Phi(-d2)."""
    p = math.exp(-rate * tau)
    var = sigma_s ** 2 * tau
    sd = math.sqrt(var)
    d1 = (math.log(ratio * s / (face * p)) - dividend * tau + 0.5 * var) / sd
    return ratio * s * math.exp(-dividend * tau) * ndtr(d1) + math.exp(-spread * tau) * p * face * ndtr(sd - d1)


__all__ = [
    "UnsupportedModelError", "affine_coefficients", "analytic_european_cb", "analytic_zcb",
    "analytic_zcb_option", "b_factor", "black_scholes_cb", "cb_variance", "cir_coefficients",
]
