"""
Commodity futures curve engine

Two-factor lognormal backbone with per-delivery leverage functions:
- market_data: futures, vol slices and discount curve ingestion
- andersen: backbone loadings, ATM identity, two-stage calibration
- tiv: total implied variance surfaces and accumulators
- pricing: Black-76 in log-moneyness
- rates: G1++ short rate
- leverage: leverage bootstrap with deterministic or stochastic rates
- engine: Monte Carlo paths, realized variance, vanilla pricing
"""

from .andersen import atm_vol, calibrate_backbone, estimate_rho_inf, sigma1, sigma2
from .engine import PathBlock, price_vanillas, realized_variance, simulate
from .exceptions import (
    ArtifactError,
    CalibrationError,
    CommodityLVError,
    ConfigError,
    MarketDataError,
    PricingError,
    SimulationError,
    TivError,
)
from .leverage import LeverageSurface, calibrate_all, leverage_det, leverage_sto
from .market_data import DiscountCurve, MarketBundle, load_market
from .models import (
    AccumulatorKind,
    AndersenParams,
    CalibrationConfig,
    FuturesCurve,
    G1ppParams,
    RateMode,
    SimConfig,
    VolSlice,
)
from .pricing import black_call, dC_dw, dupire_denominator, implied_vol
from .rates import G1ppModel
from .tiv import TivSurface, build_tiv_surfaces

__all__ = [
    'atm_vol',
    'calibrate_backbone',
    'estimate_rho_inf',
    'sigma1',
    'sigma2',
    'PathBlock',
    'price_vanillas',
    'realized_variance',
    'simulate',
    'ArtifactError',
    'CalibrationError',
    'CommodityLVError',
    'ConfigError',
    'MarketDataError',
    'PricingError',
    'SimulationError',
    'TivError',
    'LeverageSurface',
    'calibrate_all',
    'leverage_det',
    'leverage_sto',
    'DiscountCurve',
    'MarketBundle',
    'load_market',
    'AccumulatorKind',
    'AndersenParams',
    'CalibrationConfig',
    'FuturesCurve',
    'G1ppParams',
    'RateMode',
    'SimConfig',
    'VolSlice',
    'black_call',
    'dC_dw',
    'dupire_denominator',
    'implied_vol',
    'G1ppModel',
    'TivSurface',
    'build_tiv_surfaces',
]
