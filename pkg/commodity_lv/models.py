"""
Data models for the commodity curve leverage engine
"""
import math
from datetime import date
from enum import Enum
from typing import List, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, field_validator, model_validator


class AccumulatorKind(str, Enum):
    """Total implied variance accumulator"""
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    TTM_IV = "ttm-iv"
    EXP_WEIGHTED = "exp-weighted"
    MIXTURE = "mixture"


class RateMode(str, Enum):
    """Short rate mode"""
    DETERMINISTIC = "deterministic"
    G1PP = "g1pp"


class IntegralScheme(str, Enum):
    """How the integral of the rate factor is accumulated"""
    EXACT = "exact"
    TRAPEZOID = "trapezoid"


class LeverageEvaluation(str, Enum):
    """Where inside its validity interval a leverage slice is evaluated"""
    LEFT = "left"
    MIDPOINT = "midpoint"


class FuturesEntry(BaseModel):
    """One listed futures contract"""
    label: str
    delivery: float = Field(gt=0.0)  # year fraction T_j
    price: float = Field(gt=0.0)     # F_j(0)


class FuturesCurve(BaseModel):
    """Futures curve as of the valuation date"""
    valuation_date: Optional[date] = None
    entries: List[FuturesEntry]

    @model_validator(mode="after")
    def _check_order(self) -> "FuturesCurve":
        if not self.entries:
            raise ValueError("empty futures curve")
        deliveries = [e.delivery for e in self.entries]
        if any(b <= a for a, b in zip(deliveries, deliveries[1:])):
            raise ValueError("non-increasing deliveries")
        labels = [e.label for e in self.entries]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate contract labels")
        return self

    @property
    def deliveries(self) -> np.ndarray:
        return np.array([e.delivery for e in self.entries])

    @property
    def prices(self) -> np.ndarray:
        return np.array([e.price for e in self.entries])

    @property
    def labels(self) -> List[str]:
        return [e.label for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def index_of(self, label: str) -> int:
        """Delivery index j of a contract label"""
        for j, entry in enumerate(self.entries):
            if entry.label == label:
                return j
        raise KeyError(label)


class VolSlice(BaseModel):
    """Implied volatility slice of one delivery, quoted in log-moneyness"""
    label: str
    delivery_index: int = Field(ge=0)
    expiry: float = Field(gt=0.0)
    log_moneyness: List[float]
    implied_vol: List[float]
    borrowed_from: Optional[str] = None  # donor label when the contract has no liquid slice

    @model_validator(mode="after")
    def _check_quotes(self) -> "VolSlice":
        ys, vols = self.log_moneyness, self.implied_vol
        if len(ys) != len(vols):
            raise ValueError("log_moneyness and implied_vol lengths differ")
        if len(ys) < 3:
            raise ValueError(f"slice {self.label} has {len(ys)} quotes, at least 3 required")
        if any(b <= a for a, b in zip(ys, ys[1:])):
            raise ValueError(f"slice {self.label}: log-moneynesses not strictly increasing")
        if any(not (0.0 < v < 5.0) for v in vols):
            raise ValueError(f"slice {self.label}: implied vols must lie in (0, 5)")
        return self

    @property
    def total_variance(self) -> np.ndarray:
        return np.asarray(self.implied_vol) ** 2 * self.expiry


class ReturnSeries(BaseModel):
    """Daily log-returns of constant time-to-delivery futures (short and long tenor)"""
    dates: List[date]
    short: List[float]
    long: List[float]
    short_tenor: float = 1.0 / 12.0
    long_tenor: float = 4.0

    @model_validator(mode="after")
    def _check_aligned(self) -> "ReturnSeries":
        if not (len(self.dates) == len(self.short) == len(self.long)):
            raise ValueError("return series lengths are not aligned")
        if not all(math.isfinite(x) for x in self.short + self.long):
            raise ValueError("return series contain non-finite values")
        return self


class AndersenParams(BaseModel):
    """Two-factor backbone parameters with seasonality a(T) = b(T)"""
    kappa: float = Field(ge=0.0)
    h1: float
    h2: float
    h_inf: float
    seasonality_times: List[float] = Field(default_factory=list)
    seasonality_values: List[float] = Field(default_factory=list)
    a_equals_b: bool = True

    @model_validator(mode="after")
    def _check(self) -> "AndersenParams":
        if (self.h1 + self.h_inf) ** 2 + self.h2 ** 2 <= 0.0:
            raise ValueError("(h1 + h_inf)^2 + h2^2 must be positive")
        if len(self.seasonality_times) != len(self.seasonality_values):
            raise ValueError("seasonality pillar lengths differ")
        ts = self.seasonality_times
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("seasonality pillars must be strictly increasing")
        if not all(math.isfinite(v) for v in self.seasonality_values):
            raise ValueError("seasonality values must be finite")
        if self.seasonality_values:
            mean = float(np.mean(self.seasonality_values))
            if abs(mean) > 0.25:
                logger.warning(f"Seasonality pillars do not oscillate around zero (mean {mean:.4f})")
        return self

    def seasonality(self, T):
        """a(T): piecewise linear between pillars, flat outside"""
        if not self.seasonality_times:
            return np.zeros_like(np.asarray(T, dtype=float))
        return np.interp(T, self.seasonality_times, self.seasonality_values)

    def without_seasonality(self) -> "AndersenParams":
        return self.model_copy(update={"seasonality_times": [], "seasonality_values": []})


class DerivedParams(BaseModel):
    """Intuitive backbone parametrization"""
    sigma_0: float
    sigma_inf: float
    rho_inf: float = Field(ge=-1.0, le=1.0)


class MonthlyCorrelation(BaseModel):
    """Short/long tenor return correlation for one calendar month"""
    month: int = Field(ge=1, le=12)
    n_obs: int
    rho: float = Field(ge=-1.0, le=1.0)
    p_value: float
    low_sample: bool = False


class CorrelationEstimate(BaseModel):
    """Per-month and pooled long-end correlation estimate"""
    buckets: List[MonthlyCorrelation]
    rho_inf: float = Field(ge=-1.0, le=1.0)
    p_value: float
    n_obs: int


class G1ppParams(BaseModel):
    """Shifted Ornstein-Uhlenbeck short rate and its correlations with the curve factors"""
    a: float = Field(gt=0.0)
    sigma: float = Field(ge=0.0)
    rho_1r: float = Field(default=0.0, ge=-1.0, le=1.0)
    rho_2r: float = Field(default=0.0, ge=-1.0, le=1.0)

    @model_validator(mode="after")
    def _check_psd(self) -> "G1ppParams":
        if self.rho_1r ** 2 + self.rho_2r ** 2 > 1.0 + 1e-14:
            raise ValueError("rho_1r^2 + rho_2r^2 must not exceed 1")
        return self


class CalibrationConfig(BaseModel):
    """Leverage bootstrap settings"""
    slices_per_year: int = Field(default=24, gt=0)
    slice_times: Optional[List[float]] = None
    y_nodes: int = Field(default=61, ge=2)
    y_margin: float = Field(default=0.25, ge=0.0)
    y_sd_width: float = Field(default=5.0, ge=0.0)
    mc_paths: int = Field(default=1000, ge=1)
    antithetic: bool = True
    seed: int = 20211231
    steps_per_slice: int = Field(default=1, ge=1)
    l_min: float = Field(default=0.01, gt=0.0)
    l_max: float = Field(default=10.0, gt=0.0)
    denominator_floor: float = Field(default=1e-8, gt=0.0)
    max_clamp_fraction: float = Field(default=0.2, ge=0.0, le=1.0)
    evaluation: LeverageEvaluation = LeverageEvaluation.MIDPOINT

    @field_validator("slice_times")
    @classmethod
    def _check_slices(cls, v):
        if v is None:
            return v
        if not v:
            raise ValueError("slice_times must not be empty")
        if v[0] <= 0.0:
            raise ValueError("first slice time must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("slice_times must be strictly increasing")
        return v

    @model_validator(mode="after")
    def _check_clamps(self) -> "CalibrationConfig":
        if self.l_min >= self.l_max:
            raise ValueError("l_min must be below l_max")
        return self


class SimConfig(BaseModel):
    """Monte Carlo settings (n_paths counts base paths before antithetics)"""
    n_paths: int = Field(default=10000, ge=0)
    seed: int = 42
    antithetic: bool = True
    steps_per_year: int = Field(default=48, gt=0)
    horizon: Optional[float] = None
    record_times: Optional[List[float]] = None
    integral_scheme: IntegralScheme = IntegralScheme.EXACT
