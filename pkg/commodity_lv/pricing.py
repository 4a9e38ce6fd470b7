"""
Black-76 analytics in log-moneyness coordinates

    C(P F, y, w) = P F (N(d1) - e^y N(d2)),  d1 = -y / sqrt(w) + sqrt(w) / 2,  d2 = d1 - sqrt(w)

with y = log(K / F) and w the total implied variance. The normal CDF is
scipy's erfc-based ndtr, accurate to ~1e-16 in the tails.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from commodity_lv.exceptions import PricingError

_BISECTION_STEPS = 20
_MAX_NEWTON = 100


@dataclass(frozen=True)
class BlackInputs:
    """Forward, discount factor, log-moneyness and total variance of one option"""
    forward: float
    discount: float
    log_moneyness: float
    total_variance: float

    def __post_init__(self):
        values = (self.forward, self.discount, self.log_moneyness, self.total_variance)
        if not all(np.isfinite(values)):
            raise PricingError("Black inputs must be finite")
        if self.forward <= 0.0 or self.discount <= 0.0:
            raise PricingError("forward and discount factor must be positive")
        if self.total_variance < 0.0:
            raise PricingError("total variance must be non-negative")


def _d2(y, sqrt_w):
    return -y / sqrt_w - 0.5 * sqrt_w


def intrinsic(forward, discount, y):
    """Discounted intrinsic value P F (1 - e^y)^+"""
    return discount * forward * np.maximum(-np.expm1(y), 0.0)


def black_call(forward, discount, y, w):
    """
    Discounted Black-76 call price in log-moneyness

    Args:
        forward: F_j(0)
        discount: P(0, t)
        y: log(K / F)
        w: total implied variance, w = 0 gives the intrinsic value

    Returns:
        Call price(s), broadcast over the inputs
    """
    # intrinsic + time value keeps in-the-money prices accurate
    price = np.asarray(intrinsic(forward, discount, y) + otm_value(forward, discount, y, w))
    return price[()] if price.ndim == 0 else price


def black_call_inputs(inp: BlackInputs) -> float:
    return float(black_call(inp.forward, inp.discount, inp.log_moneyness, inp.total_variance))


def otm_value(forward, discount, y, w):
    """Time value: the call for y >= 0, the put (by parity) for y < 0, computed without cancellation"""
    forward, discount, y, w = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (forward, discount, y, w))
    )
    sqrt_w = np.sqrt(np.where(w > 0.0, w, 1.0))
    d2 = _d2(y, sqrt_w)
    d1 = d2 + sqrt_w
    call = ndtr(d1) - np.exp(y) * ndtr(d2)
    put = np.exp(y) * ndtr(-d2) - ndtr(-d1)
    value = discount * forward * np.where(y >= 0.0, call, put)
    value = np.where(w > 0.0, np.maximum(value, 0.0), 0.0)
    return value[()] if value.ndim == 0 else value


def dC_dw(forward, discount, y, w):
    """
    Sensitivity of the call price to total variance,
    dC/dw = P F e^y N'(d2) / (2 sqrt(w))
    """
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0):
        raise PricingError("dC/dw needs positive total variance")
    sqrt_w = np.sqrt(w)
    value = 0.5 * discount * forward * np.exp(y) * norm.pdf(_d2(y, sqrt_w)) / sqrt_w
    return value[()] if np.ndim(value) == 0 else value


def dupire_denominator(w, dw_dy, d2w_dy2, y):
    """
    Bracket relating (1/2) K^2 d2C/dK2 to dC/dw:

        1 - (y/w) w_y + w_yy / 2 + (w_y^2 / 4)(-1/4 - 1/w + y^2/w^2)

    Positive exactly where the slice is free of butterfly arbitrage.
    """
    w = np.asarray(w, dtype=float)
    dw_dy = np.asarray(dw_dy, dtype=float)
    y = np.asarray(y, dtype=float)
    return (
        1.0
        - (y / w) * dw_dy
        + 0.5 * np.asarray(d2w_dy2, dtype=float)
        + 0.25 * dw_dy ** 2 * (-0.25 - 1.0 / w + y ** 2 / w ** 2)
    )


def implied_total_variance(price: float, forward: float, discount: float, y: float) -> float:
    """
    Invert the Black formula for total variance

    Works on the out-of-the-money side so deep in-the-money prices keep their
    precision. Bisection seeds a bracketed Newton iteration in s = sqrt(w).
    """
    lower = float(intrinsic(forward, discount, y))
    upper = discount * forward
    if not np.isfinite(price) or price <= lower:
        raise PricingError(f"price {price} is below arbitrage bound {lower}")
    if price >= upper:
        raise PricingError(f"price {price} is above arbitrage bound {upper}")

    target = price - lower

    def value(s: float) -> float:
        return float(otm_value(forward, discount, y, s * s))

    lo, hi = 0.0, 1.0
    while value(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 64.0:
            raise PricingError("implied variance exceeds search range")

    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if value(mid) < target:
            lo = mid
        else:
            hi = mid

    s = 0.5 * (lo + hi)
    for _ in range(_MAX_NEWTON):
        diff = value(s) - target
        if abs(diff) <= 1e-15 * target:
            break
        if diff < 0.0:
            lo = s
        else:
            hi = s
        vega = discount * forward * np.exp(y) * norm.pdf(_d2(y, s))  # dC/ds
        step = s - diff / vega if vega > 0.0 else -1.0
        s = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * hi:
            break
    return s * s


def implied_vol(price: float, forward: float, discount: float, y: float, t: float) -> float:
    """
    Black-76 implied volatility of a discounted call price

    Args:
        price: Call price
        forward: F
        discount: P(0, t)
        y: log(K / F)
        t: Expiry in years

    Returns:
        Sigma with black_call(F, P, y, Sigma^2 t) == price

    Raises:
        PricingError: price outside (intrinsic, P F)
    """
    if t <= 0.0:
        raise PricingError("implied vol needs a positive expiry")
    return float(np.sqrt(implied_total_variance(price, forward, discount, y) / t))
