"""
Synthetic desk-scale markets

Futures curves, skewed smiles whose ATM level is generated by a backbone
parameter set, a flat discount curve and constant-tenor return histories.
Used by the populate script and the test suite.
"""
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from commodity_lv.andersen import atm_vol
from commodity_lv.market_data import (
    DiscountCurve,
    MarketBundle,
    borrow_missing_slices,
    serialize_market,
    serialize_returns,
)
from commodity_lv.models import AndersenParams, FuturesCurve, FuturesEntry, ReturnSeries, VolSlice

TRADING_DAYS = 252


@dataclass(frozen=True)
class Preset:
    name: str
    params: AndersenParams
    spot: float
    slope: float  # relative price change per year of delivery


PRESETS: Dict[str, Preset] = {
    "WTI": Preset("WTI", AndersenParams(kappa=0.2657, h1=0.2365, h2=0.2970, h_inf=0.0546), 75.0, -0.06),
    "NG": Preset("NG", AndersenParams(kappa=2.3562, h1=-0.0634, h2=0.5854, h_inf=0.1829), 3.7, 0.04),
}

DEFAULT_MONEYNESS = tuple(np.linspace(0.6, 1.4, 9))


def monthly_curve(n_deliveries: int = 12, spot: float = 75.0, slope: float = -0.06,
                  valuation_date: Optional[date] = None) -> FuturesCurve:
    """Contracts delivering every month, F_j = spot (1 + slope T_j)"""
    entries = []
    for k in range(1, n_deliveries + 1):
        T = k / 12.0
        entries.append(FuturesEntry(label=f"M{k:02d}", delivery=T, price=spot * max(1.0 + slope * T, 0.05)))
    return FuturesCurve(valuation_date=valuation_date, entries=entries)


def smile_vols(atm: float, ys, skew: float = -0.2, curvature: float = 0.3) -> np.ndarray:
    """Quadratic-in-y smile: atm (1 + skew y + curvature y^2)"""
    ys = np.asarray(ys, dtype=float)
    return atm * (1.0 + skew * ys + curvature * ys ** 2)


def synthetic_market(
    preset: str = "WTI",
    n_deliveries: int = 12,
    smile: bool = True,
    rate: float = 0.03,
    moneyness: Sequence[float] = DEFAULT_MONEYNESS,
    skew: float = -0.2,
    curvature: float = 0.3,
    missing: Sequence[int] = (),
) -> MarketBundle:
    """
    Market whose ATM term structure is generated by a preset backbone

    Args:
        preset: WTI or NG
        n_deliveries: Number of monthly contracts
        smile: Skewed smiles when True, flat slices at the ATM vol otherwise
        rate: Flat continuously compounded rate
        moneyness: K / F_j(0) of the quotes
        skew: Linear smile coefficient in y
        curvature: Quadratic smile coefficient in y
        missing: Delivery indices left without a vol slice (they borrow)

    Returns:
        MarketBundle
    """
    p = PRESETS[preset]
    curve = monthly_curve(n_deliveries, p.spot, p.slope)
    ys = np.log(np.asarray(moneyness, dtype=float))
    slices = {}
    for j, entry in enumerate(curve.entries):
        if j in missing:
            continue
        atm = float(atm_vol(p.params, entry.delivery))
        vols = smile_vols(atm, ys, skew, curvature) if smile else np.full(ys.shape, atm)
        slices[j] = VolSlice(label=entry.label, delivery_index=j, expiry=entry.delivery,
                             log_moneyness=ys.tolist(), implied_vol=vols.tolist())
    borrowed = borrow_missing_slices(curve, slices)
    return MarketBundle(curve=curve, slices=slices, discount=DiscountCurve.flat(rate), borrowed=borrowed)


def simulate_returns(
    params: AndersenParams,
    n_days: int = 2520,
    short_tenor: float = 1.0 / 12.0,
    long_tenor: float = 4.0,
    seed: int = 7,
    start: date = date(2012, 1, 2),
) -> ReturnSeries:
    """Daily log-returns of constant time-to-delivery futures under the backbone"""
    rng = np.random.default_rng(seed)
    dt = 1.0 / TRADING_DAYS
    z = rng.standard_normal((n_days, 2))
    out = []
    for tau in (short_tenor, long_tenor):
        decay = np.exp(-params.kappa * tau)
        s1 = decay * params.h1 + params.h_inf
        s2 = decay * params.h2
        out.append(-0.5 * (s1 ** 2 + s2 ** 2) * dt + np.sqrt(dt) * (s1 * z[:, 0] + s2 * z[:, 1]))
    dates = pd.bdate_range(start=start, periods=n_days)
    return ReturnSeries(dates=[d.date() for d in dates], short=out[0].tolist(), long=out[1].tolist(),
                        short_tenor=short_tenor, long_tenor=long_tenor)


def write_market(bundle: MarketBundle, directory: Union[str, Path],
                 returns: Optional[ReturnSeries] = None) -> Dict[str, Path]:
    """Write futures, vols, discount (and returns) CSVs into directory"""
    paths = serialize_market(bundle, directory)
    if returns is not None:
        paths["returns"] = serialize_returns(returns, Path(directory) / "returns.csv")
    return paths
