"""Two-layer CTMC for (equity, short rate) and convertible-bond pricing.

The equity is handled through X = ln S - rho f(R), whose dynamics given
R = r_k form one regime of a regime-switching chain. States are
flattened with index k*M + l (0-based) for rate state k and X state l.
"""

import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .ctmc import InvalidGeneratorError, tridiagonal_rates
from .grid import build_grid, default_equity_bounds
from .models import StepFunction, as_step_function, correlation_antiderivative, transform_coefficients
from .rates import BondSpec, EmbeddedOptionSchedule


class StateBudgetError(MemoryError):
    """The enlarged chain is too large for the direct path."""


def flat_index(k, l, n_x):
    """Flattened index of (rate state k, X state l), both 0-based."""
    return k * n_x + l


def split_index(idx, n_x):
    """Inverse of ``flat_index``: (k, l)."""
    return divmod(idx, n_x)


def equity_grid(model, equity, m_x=160, alpha=2.0, bounds=None):
    """Grid for X centred on x0 = ln S0 - rho f(r0)."""
    x0 = math.log(equity.s0) - equity.rho * float(correlation_antiderivative(model, equity, model.r0))
    lower, upper = bounds if bounds is not None else default_equity_bounds(x0)
    return build_grid(lower, upper, x0, m_x, alpha)


class TwoLayerChain:
    """Rate chain plus one X generator per rate state.

    Parameters:
        model: calibrated unshifted short-rate model.
        equity: EquityModel.
        rate_gen: PiecewiseGenerator of the rate on ``r_grid``.
        x_grid: Grid of X.
        scheme: generator scheme for the X regimes, see ``tridiagonal_rates``.
    """

    def __init__(self, model, equity, rate_gen, x_grid, scheme="central"):
        if model.shifted:
            raise ValueError("hybrid pricing supports unshifted short-rate models only")
        self.model = model
        self.equity = equity
        self.rate_gen = rate_gen
        self.r_grid = rate_gen.grid
        self.x_grid = x_grid
        self.times = rate_gen.times
        self.scheme = scheme
        r = self.r_grid.nodes
        self.f_values = np.asarray(correlation_antiderivative(model, equity, r), dtype=float)
        self._sigma_x = np.broadcast_to(transform_coefficients(model, equity, 0.0, r)[2], r.shape)
        self._rates = {}
        self._blocks = {}
        for n in range(1, rate_gen.n_steps + 1):
            self.regime_rates(n)

    @property
    def m(self):
        return self.r_grid.size

    @property
    def n_x(self):
        return self.x_grid.size

    @property
    def size(self):
        return self.m * self.n_x

    @property
    def start_state(self):
        """(rate index j, X index i) of the initial state."""
        return self.r_grid.anchor_index, self.x_grid.anchor_index

    def stock_prices(self):
        """m x M matrix of S = exp(x_l + rho f(r_k))."""
        return np.exp(self.x_grid.nodes[None, :] + self.equity.rho * self.f_values[:, None])

    def drift_x(self, n):
        """mu_X(t_{n-1}, r_k) for every regime k on interval n (1-based)."""
        t = self.times[n - 1]
        return np.asarray(transform_coefficients(self.model, self.equity, t, self.r_grid.nodes)[1])

    def regime_rates(self, n):
        """(sub, sup) rate arrays of shape (m, M-1) for interval n."""
        mu = self.drift_x(n)
        key = mu.tobytes()
        hit = self._rates.get(key)
        if hit is None:
            var = self._sigma_x ** 2
            sub, sup = tridiagonal_rates(self.x_grid.nodes, mu[:, None], var[:, None],
                                         self.scheme)
            bad = np.argwhere((sub < 0) | (sup < 0))
            if bad.size:
                k, i = bad[0]
                node = i + 1 if sub[k, i] < 0 else i
                raise InvalidGeneratorError(
                    f"negative transition rate in regime k={k} at X node {node} "
                    f"on interval {n}; refine the X grid")
            hit = self._rates[key] = (key, sub, sup)
        return hit

    def regime_generator(self, n, k):
        """Dense M x M generator Lambda_k on interval n."""
        _, sub, sup = self.regime_rates(n)
        q = np.diag(sub[k], -1) + np.diag(sup[k], 1)
        return q - np.diag(q.sum(axis=1))

    def _block_parts(self, n):
        key, sub, sup = self.regime_rates(n)
        m, mx = self.m, self.n_x
        low = np.zeros((m, mx))
        up = np.zeros((m, mx))
        low[:, :-1] = sub          # entry (k*M + i + 1, k*M + i)
        up[:, :-1] = sup           # entry (k*M + i, k*M + i + 1)
        diag = np.zeros((m, mx))
        diag[:, 1:] -= sub
        diag[:, :-1] -= sup
        return key, low.ravel()[:-1], diag.ravel(), up.ravel()[:-1]

    def regime_block(self, n):
        """Sparse block-diagonal of Lambda_k - r_k I over all regimes."""
        key, low, diag, up = self._block_parts(n)
        blk = self._blocks.get(key)
        if blk is None:
            d = diag - np.repeat(self.r_grid.nodes, self.n_x)
            blk = sp.diags([low, d, up], [-1, 0, 1], format="csr")
            self._blocks[key] = blk
        return blk

    def enlarged_generator(self, n):
        """Sparse mM x mM generator blockdiag(Lambda_k) + Q_n kron I_M."""
        _, low, diag, up = self._block_parts(n)
        lam = sp.diags([low, diag, up], [-1, 0, 1], format="csr")
        q = self.rate_gen.generators[n - 1].to_sparse()
        return (lam + sp.kron(q, sp.identity(self.n_x), format="csr")).tocsr()

    def discount_diagonal(self):
        return np.repeat(self.r_grid.nodes, self.n_x)


def build_two_layer(model, equity, rate_gen, x_grid=None, m_x=160, alpha_x=2.0,
                    scheme="central"):
    """Assemble a TwoLayerChain; the X grid defaults to (0.64 x0, 1.42 x0)."""
    if x_grid is None:
        x_grid = equity_grid(model, equity, m_x, alpha_x)
    return TwoLayerChain(model, equity, rate_gen, x_grid, scheme)


class ConvertibleSpec:
    """Convertible bond terms.

    Parameters:
        face: face value F.
        ratio: conversion ratio eta.
        coupon_rate: annual coupon rate.
        frequency: coupons per year.
        maturity: years.
        credit_spread: constant or StepFunction c(t).
        style: "european" or "american".
        embedded: optional EmbeddedOptionSchedule (experimental).
    """

    def __init__(self, face=100.0, ratio=1.0, coupon_rate=0.0, frequency=2, maturity=1.0,
                 credit_spread=0.0, style="american", embedded=None):
        if ratio <= 0:
            raise ValueError("conversion ratio must be positive")
        if face < 0:
            raise ValueError("face must be non-negative")
        if style not in ("european", "american"):
            raise ValueError("style must be 'european' or 'american'")
        self.face = float(face)
        self.ratio = float(ratio)
        self.coupon_rate = float(coupon_rate)
        self.frequency = frequency
        self.maturity = float(maturity)
        self.credit_spread = as_step_function(credit_spread)
        self.style = style
        self.embedded = embedded

    @property
    def coupon_amount(self):
        return self.face * self.coupon_rate / self.frequency if self.coupon_rate else 0.0

    def coupon_dates(self):
        if not self.coupon_rate:
            return []
        return BondSpec(1.0, self.coupon_rate, self.frequency, self.maturity).coupon_dates()

    def spread_integral(self, a, b):
        return self.credit_spread.integral(a, b)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        spread = d.pop("credit_spread", 0.0)
        if isinstance(spread, (list, tuple)):
            spread = StepFunction([0.0] + [float(t) for t, _ in spread], [float(c) for _, c in spread])
        emb = d.pop("embedded", None)
        if isinstance(emb, dict):
            emb = EmbeddedOptionSchedule(emb.get("call"), emb.get("put"),
                                         emb.get("accrued", True))
        return cls(credit_spread=spread, embedded=emb, **d)


def _coupon_steps(chain, spec):
    return {chain.rate_gen.index_of(d): spec.coupon_amount for d in spec.coupon_dates()}


def _terminal(chain, spec):
    conv = spec.ratio * chain.stock_prices()
    converts = conv >= spec.face
    equity_leg = np.where(converts, conv, 0.0)
    cash_leg = np.where(converts, 0.0, spec.face)
    return conv, equity_leg, cash_leg


def _check_horizon(chain, spec):
    n_end = chain.rate_gen.index_of(spec.maturity)
    if n_end != chain.rate_gen.n_steps:
        raise ValueError("the time grid must end at the CB maturity")
    return n_end


def price_cb_european_fast(chain, spec, start_state=None, return_matrix=False):
    """European CB by the regime-split backward sweep.

    Each step applies exp(Lambda_k dt) e^{-r_k dt} within every regime,
    then the rate kernel exp(Q dt) across regimes. The cash leg carries
    e^{-int_0^T c}; coupons carry e^{-int_0^{t_c} c}.

    Returns:
        price at ``start_state`` (default the initial state), or the
        m x M matrix of time-0 values with ``return_matrix``.
    """
    n_end = _check_horizon(chain, spec)
    j, i = start_state or chain.start_state
    _, eq, cash = _terminal(chain, spec)
    b = eq + math.exp(-spec.spread_integral(0.0, spec.maturity)) * cash
    b = _european_sweep(chain, spec, b, n_end)
    return b if return_matrix else float(b[j, i])


def _european_sweep(chain, spec, b, n_end):
    pay = _coupon_steps(chain, spec)
    for n in range(n_end - 1, -1, -1):
        t_next = chain.times[n + 1]
        if n + 1 in pay:
            b = b + pay[n + 1] * math.exp(-spec.spread_integral(0.0, t_next))
        b = _regime_step(chain, n + 1, b)
        b = chain.rate_gen.transition_matrix(n + 1) @ b
    return b


def _regime_step(chain, n, b):
    """Row k of b times exp((Lambda_k - r_k) dt_n), for all k at once."""
    dt = chain.times[n] - chain.times[n - 1]
    blk = chain.regime_block(n)
    flat = b.reshape(chain.m * chain.n_x, -1) if b.ndim == 3 else b.reshape(-1)
    out = expm_multiply(blk * dt, flat)
    return out.reshape(b.shape)


def _apply_embedded(chain, spec, t, total, co, conv):
    emb = spec.embedded
    if emb is None:
        return total, co
    new = np.maximum(total, emb.put_price(t))
    kc = emb.call_price(t)
    if kc is not None:
        new = np.minimum(new, np.maximum(kc, conv))
    scale = np.divide(new, total, out=np.ones_like(total), where=total > 0)
    return new, co * scale


def price_cb_american_fast(chain, spec, start_state=None, return_legs=False):
    """American CB with the cash-only/equity split, regime-split steps.

    Cash-only leg: discounted at R + c, receives coupons. Equity leg:
    discounted at R. After each step B = max(conversion, CO + E); where
    B equals the conversion value (ties included) CO is zeroed.

    Returns:
        (price, cash_only, equity) at ``start_state``; with
        ``return_legs`` the full m x M matrices at time 0 instead.
    """
    n_end = _check_horizon(chain, spec)
    j, i = start_state or chain.start_state
    conv, e, co = _terminal(chain, spec)
    pay = _coupon_steps(chain, spec)
    for n in range(n_end - 1, -1, -1):
        t, t_next = chain.times[n], chain.times[n + 1]
        credit = math.exp(-spec.spread_integral(t, t_next))
        co_in = co + pay.get(n + 1, 0.0)
        both = _regime_step(chain, n + 1, np.stack([co_in, e], axis=-1))
        both = np.einsum("ij,jlc->ilc", chain.rate_gen.transition_matrix(n + 1), both)
        co, e = credit * both[..., 0], both[..., 1]
        total = np.maximum(conv, co + e)
        co = np.where(total == conv, 0.0, co)
        total, co = _apply_embedded(chain, spec, t, total, co, conv)
        e = total - co
    if return_legs:
        return co + e, co, e
    return float(co[j, i] + e[j, i]), float(co[j, i]), float(e[j, i])


def _enlarged_steps(chain, n_end, max_states):
    if chain.size > max_states:
        raise StateBudgetError(
            f"enlarged chain has {chain.size} states (> {max_states}); use the fast path")
    d = sp.diags(chain.discount_diagonal())
    cache = {}

    def step(n, v):
        dt = chain.times[n] - chain.times[n - 1]
        key = (id(chain.rate_gen.generators[n - 1]), chain.regime_rates(n)[0])
        a = cache.get(key)
        if a is None:
            a = cache[key] = (chain.enlarged_generator(n) - d).tocsr()
        return expm_multiply(a * dt, v)
    return step


def price_cb_european_direct(chain, spec, start_state=None, max_states=40000):
    """European CB through the enlarged generator.

    e_{ji} prod_n exp((G_n - D) dt_n) H with H the terminal payoff
    (cash leg carrying e^{-int c}), plus coupons times the credit factor
    and the rate chain's zero-bond prices.
    """
    n_end = _check_horizon(chain, spec)
    j, i = start_state or chain.start_state
    _, eq, cash = _terminal(chain, spec)
    h = (eq + math.exp(-spec.spread_integral(0.0, spec.maturity)) * cash).ravel()
    step = _enlarged_steps(chain, n_end, max_states)
    for n in range(n_end, 0, -1):
        h = step(n, h)
    price = float(h[flat_index(j, i, chain.n_x)])
    for t_c in spec.coupon_dates():
        k = chain.rate_gen.index_of(t_c)
        zcb = np.ones(chain.m)
        for n in range(k, 0, -1):
            zcb = chain.rate_gen.step_matrix(n) @ zcb
        price += spec.coupon_amount * math.exp(-spec.spread_integral(0.0, t_c)) * zcb[j]
    return price


def price_cb_american(chain, spec, start_state=None, max_states=40000):
    """American CB through the enlarged generator (cash-only/equity split).

    Returns:
        (price, cash_only, equity) at ``start_state``.
    """
    n_end = _check_horizon(chain, spec)
    j, i = start_state or chain.start_state
    conv, e, co = _terminal(chain, spec)
    conv, e, co = conv.ravel(), e.ravel(), co.ravel()
    pay = _coupon_steps(chain, spec)
    step = _enlarged_steps(chain, n_end, max_states)
    for n in range(n_end - 1, -1, -1):
        t, t_next = chain.times[n], chain.times[n + 1]
        credit = math.exp(-spec.spread_integral(t, t_next))
        both = step(n + 1, np.column_stack([co + pay.get(n + 1, 0.0), e]))
        co, e = credit * both[:, 0], both[:, 1]
        total = np.maximum(conv, co + e)
        co = np.where(total == conv, 0.0, co)
        total, co = _apply_embedded(chain, spec, t, total, co, conv)
        e = total - co
    idx = flat_index(j, i, chain.n_x)
    return float(co[idx] + e[idx]), float(co[idx]), float(e[idx])


def price_cb(chain, spec, method="fast", start_state=None):
    """Price by style; returns (price, cash_only, equity), legs None for European."""
    if spec.style == "european":
        fn = price_cb_european_fast if method == "fast" else price_cb_european_direct
        return fn(chain, spec, start_state), None, None
    fn = price_cb_american_fast if method == "fast" else price_cb_american
    return fn(chain, spec, start_state)
