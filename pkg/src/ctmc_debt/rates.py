"""One-factor pricing: zero-coupon and coupon bonds, bond options, callable/putable bonds."""

import math
import warnings

import numpy as np
from scipy.linalg import expm


class BondSpec:
    """Bullet bond.

    Parameters:
        face: redemption amount.
        coupon_rate: annual coupon rate (0 for a zero-coupon bond).
        frequency: coupons per year.
        maturity: years.
    """

    def __init__(self, face=1.0, coupon_rate=0.0, frequency=2, maturity=1.0):
        if face <= 0 or maturity <= 0:
            raise ValueError("face and maturity must be positive")
        if coupon_rate < 0:
            raise ValueError("coupon_rate must be non-negative")
        if coupon_rate > 0 and frequency <= 0:
            raise ValueError("frequency must be positive")
        self.face = float(face)
        self.coupon_rate = float(coupon_rate)
        self.frequency = frequency
        self.maturity = float(maturity)

    @property
    def coupon_amount(self):
        return self.face * self.coupon_rate / self.frequency if self.coupon_rate else 0.0

    @property
    def period(self):
        return 1.0 / self.frequency

    def coupon_dates(self, after=0.0):
        """Coupon dates in (after, maturity], rolling back from maturity."""
        if not self.coupon_rate:
            return []
        dates = []
        k = 0
        while True:
            t = self.maturity - k * self.period
            if t <= after + 1e-12:
                break
            dates.append(round(t, 12))
            k += 1
        return sorted(dates)

    def accrued(self, t):
        """Linear accrued coupon at time t (zero on coupon dates)."""
        if not self.coupon_rate:
            return 0.0
        past = [d for d in self.coupon_dates() if d <= t + 1e-12]
        last = past[-1] if past else self.maturity - self.period * math.ceil(
            (self.maturity - t) / self.period - 1e-12)
        frac = (t - last) / self.period
        return self.coupon_amount * min(max(frac, 0.0), 1.0) if frac > 1e-12 else 0.0


class BondOptionSpec:
    """European option on a bond.

    Parameters:
        expiry: option maturity in years.
        strike: strike price.
        flavor: "call" or "put".
        underlying: BondSpec; a unit zero-coupon bond if omitted.
    """

    def __init__(self, expiry, strike, flavor="call", underlying=None):
        if flavor not in ("call", "put"):
            raise ValueError("flavor must be 'call' or 'put'")
        if strike < 0:
            raise ValueError("strike must be non-negative")
        self.expiry = float(expiry)
        self.strike = float(strike)
        self.flavor = flavor
        self.underlying = underlying or BondSpec(1.0, 0.0, 1, 1.0)
        if not self.expiry < self.underlying.maturity:
            raise ValueError("option must expire before the bond matures")

    def payoff(self, value):
        if self.flavor == "call":
            return np.maximum(value - self.strike, 0.0)
        return np.maximum(self.strike - value, 0.0)


class EmbeddedOptionSchedule:
    """Call and put prices of a callable/putable bond.

    Each of ``call`` and ``put`` is None, a number (exercisable at all
    times), a list of (start, end, price) windows, or a function of t
    returning a price or None. Outside its windows the call is absent
    and the put price is zero.

    Parameters:
        call: issuer call prices.
        put: holder put prices.
        accrued_interest_on_exercise: add accrued coupon to the call price.
    """

    def __init__(self, call=None, put=None, accrued_interest_on_exercise=True):
        self._call = call
        self._put = put
        self.accrued_interest_on_exercise = accrued_interest_on_exercise

    @staticmethod
    def _lookup(spec, t):
        if spec is None:
            return None
        if callable(spec):
            return spec(t)
        if isinstance(spec, (int, float)):
            return float(spec)
        for start, end, price in spec:
            if start - 1e-9 <= t <= end + 1e-9:
                return float(price)
        return None

    def call_price(self, t):
        """Call price at t, or None when the call cannot be exercised."""
        return self._lookup(self._call, t)

    def put_price(self, t):
        p = self._lookup(self._put, t)
        return 0.0 if p is None else p


def _check_on_grid(gen, *ts):
    return [gen.index_of(t) for t in ts]


def _state(grid, state_index):
    j = grid.anchor_index if state_index is None else state_index
    if not 0 <= j < grid.size:
        raise IndexError("state index out of range")
    return j


def backward_sweep(gen, start, stop, v):
    """Apply the discounted kernels of intervals start+1..stop to column v."""
    for n in range(stop, start, -1):
        v = gen.step_matrix(n) @ v
    return v


def zcb_vector(gen, t_i, maturity, method="auto"):
    """P_k(t_i, T) for every state k."""
    if maturity < t_i:
        raise ValueError("maturity before valuation time")
    i, n = _check_on_grid(gen, t_i, maturity)
    if i == n:
        return np.ones(gen.grid.size)
    if method not in ("auto", "product", "homogeneous"):
        raise ValueError(f"unknown method {method!r}")
    if method == "homogeneous" or (method == "auto" and gen.homogeneous):
        if not gen.homogeneous:
            raise ValueError("homogeneous path needs identical generators")
        q = gen.generators[0].to_dense() - np.diag(gen.grid.nodes)
        tau = gen.times[n] - gen.times[i]
        factor = math.exp(-gen.shift_integral(i, n))
        return factor * expm(q * tau).sum(axis=1)
    return backward_sweep(gen, i, n, np.ones(gen.grid.size))


def price_zcb(gen, grid, t_i, maturity, state_index=None, method="auto"):
    """CTMC zero-coupon bond price e_j prod exp((Q_n - D) dt_n) 1.

    Time-homogeneous generators use the single exponential
    exp((Q - D)(T - t)); a deterministic shift multiplies by
    exp(-integral of the shift).

    Parameters:
        gen: PiecewiseGenerator built on ``grid``.
        grid: rate grid.
        t_i, maturity: valuation and maturity times on the time grid.
        state_index: initial state, default the anchor.
        method: "auto", "product" or "homogeneous".
    """
    if grid is not gen.grid and not np.array_equal(grid.nodes, gen.grid.nodes):
        raise ValueError("generator and grid differ")
    j = _state(grid, state_index)
    return float(zcb_vector(gen, t_i, maturity, method)[j])


def price_zcb_shifted(aux_gen, theta, t, maturity, state_index=None):
    """Zero-coupon bond of R = Y + theta(t): exp(-int theta) P~_j(t, T).

    Parameters:
        aux_gen: homogeneous PiecewiseGenerator of the auxiliary process.
        theta: ThetaSchedule covering [t, T].
        t, maturity: valuation and maturity times.
        state_index: initial auxiliary state, default the anchor.
    """
    if not aux_gen.homogeneous:
        raise ValueError("auxiliary generator must be homogeneous")
    j = _state(aux_gen.grid, state_index)
    if maturity < t:
        raise ValueError("maturity before valuation time")
    q = aux_gen.generators[0].to_dense() - np.diag(aux_gen.grid.nodes)
    aux = expm(q * (maturity - t))[j].sum() if maturity > t else 1.0
    return float(math.exp(-theta.integral(t, maturity)) * aux)


def bond_value_vector(gen, bond, t_from):
    """Value at t_from of the bond's remaining cash flows, per state."""
    i0 = gen.index_of(t_from)
    n_end = gen.index_of(bond.maturity)
    cpn = bond.coupon_amount
    pay = {gen.index_of(d): cpn for d in bond.coupon_dates(after=t_from)}
    v = np.full(gen.grid.size, bond.face) + pay.get(n_end, 0.0)
    for n in range(n_end, i0, -1):
        v = gen.step_matrix(n) @ v
        if n - 1 in pay and n - 1 > i0:
            v = v + pay[n - 1]
    return v


def price_bond(gen, grid, bond, t=0.0, state_index=None):
    """Coupon bond: face P(t, T) plus coupons times P(t, t_c)."""
    return float(bond_value_vector(gen, bond, t)[_state(grid, state_index)])


def price_bond_option(gen, grid, t1, spec, state_index=None):
    """European bond option e_j prod_{t1 < t_n <= t2} exp((Q_n - D) dt_n) H.

    H_k = h(P_k(t2, T)) with P_k including coupons paid after t2. A
    homogeneous generator with a deterministic shift (shifted models)
    uses single exponentials over [t1, t2] and [t2, T].

    Parameters:
        gen: PiecewiseGenerator.
        grid: rate grid of ``gen``.
        t1: valuation time.
        spec: BondOptionSpec.
        state_index: initial state, default the anchor.
    """
    j = _state(grid, state_index)
    t2 = spec.expiry
    if not t1 < t2:
        raise ValueError("valuation must precede expiry")
    bond = spec.underlying
    i1, i2 = _check_on_grid(gen, t1, t2)
    if gen.homogeneous and not bond.coupon_rate:
        under = bond.face * zcb_vector(gen, t2, bond.maturity)
        h = spec.payoff(under)
        return float(zcb_weighted(gen, i1, i2, h)[j])
    under = bond_value_vector(gen, bond, t2)
    h = spec.payoff(under)
    return float(backward_sweep(gen, i1, i2, h)[j])


def zcb_weighted(gen, i, n, payoff):
    """exp(-int shift) exp((Q - D)(t_n - t_i)) payoff on a homogeneous generator."""
    q = gen.generators[0].to_dense() - np.diag(gen.grid.nodes)
    tau = gen.times[n] - gen.times[i]
    return math.exp(-gen.shift_integral(i, n)) * (expm(q * tau) @ payoff)


def price_callable_putable(gen, grid, bond, sched, state_index=None, return_vector=False):
    """Callable/putable bond by backward induction.

    V_N = max(min(F, K^c_N), K^p_N) and, for n < N,
    V_n = max(min(K^c_n, exp((Q_{n+1} - D) dt)(V_{n+1} + c_{n+1})), K^p_n),
    where c_{n+1} is the coupon paid at t_{n+1}. An absent call skips the
    min; accrued interest is added to the call price when requested.

    Parameters:
        gen: PiecewiseGenerator whose time grid contains the coupon dates.
        grid: rate grid of ``gen``.
        bond: BondSpec.
        sched: EmbeddedOptionSchedule.
        state_index: initial state, default the anchor.
        return_vector: also return V_0 for every state.
    """
    j = _state(grid, state_index)
    n_end = gen.index_of(bond.maturity)
    if gen.index_of(0.0) != 0:
        raise ValueError("time grid must start at 0")
    step = np.diff(gen.times[: n_end + 1])
    if np.max(step) > 0.01 + 1e-12:
        warnings.warn("time step above 1/100; exercise is checked only on grid dates",
                      stacklevel=2)
    cpn = bond.coupon_amount
    pay = {gen.index_of(d): cpn for d in bond.coupon_dates()}

    def constrain(v, t):
        kc = sched.call_price(t)
        if kc is not None:
            if sched.accrued_interest_on_exercise:
                kc = kc + bond.accrued(t)
            v = np.minimum(v, kc)
        return np.maximum(v, sched.put_price(t))

    v = constrain(np.full(grid.size, bond.face), gen.times[n_end])
    for n in range(n_end - 1, -1, -1):
        cont = gen.step_matrix(n + 1) @ (v + pay.get(n + 1, 0.0))
        v = constrain(cont, gen.times[n])
    return (float(v[j]), v) if return_vector else float(v[j])


def estimate_convergence_rate(errors):
    """Pairwise rates log(e2/e1)/log(m1/m2) over consecutive (m, error) pairs.

    Entries with zero error are dropped with a warning.
    """
    pts = []
    for m, e in errors:
        e = abs(float(e))
        if e == 0.0:
            warnings.warn(f"zero error at m={m} excluded from rate estimate", stacklevel=2)
            continue
        pts.append((float(m), e))
    if len(pts) < 2:
        raise ValueError("need at least two non-zero errors")
    return [math.log(e2 / e1) / math.log(m1 / m2)
            for (m1, e1), (m2, e2) in zip(pts[:-1], pts[1:])]
