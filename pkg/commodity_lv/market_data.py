"""
Market data ingestion for the commodity curve leverage engine

Loads and validates the futures curve, the implied volatility slices and the
discount curve, and owns every time convention: dates are turned into
ACT/365.25 year fractions here and nowhere else.

CSV schemas (UTF-8, header row, decimal point):
    futures.csv   label,delivery_years,price
    vols.csv      label,expiry_years,log_moneyness,implied_vol
    discount.csv  time_years,df
    returns.csv   date,short_return,long_return
"""
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import ValidationError

from commodity_lv.exceptions import MarketDataError
from commodity_lv.models import FuturesCurve, FuturesEntry, ReturnSeries, VolSlice

YEAR_BASIS = 365.25
CSV_FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def year_fraction(start: date, end: date) -> float:
    """ACT/365.25 year fraction between two dates"""
    return (end - start).days / YEAR_BASIS


@dataclass(frozen=True)
class DiscountCurve:
    """
    Zero-coupon discount curve P(0, t), log-linear in the discount factor

    Log-linear interpolation means piecewise-constant instantaneous forwards.
    Beyond the last pillar the last forward is extended flat.
    """
    times: np.ndarray
    dfs: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        dfs = np.asarray(self.dfs, dtype=float)
        if times.ndim != 1 or times.shape != dfs.shape:
            raise MarketDataError("discount pillars must be two aligned 1-d arrays")
        if np.any(~np.isfinite(times)) or np.any(~np.isfinite(dfs)):
            raise MarketDataError("discount pillars must be finite")
        if np.any(dfs <= 0.0):
            raise MarketDataError("discount factors must be positive")
        if np.any(np.diff(times) <= 0.0):
            raise MarketDataError("discount pillar times must be strictly increasing")
        if times.size == 0 or times[0] < 0.0:
            raise MarketDataError("discount pillar times must be non-negative")
        quoted_from = 0
        if times[0] == 0.0:
            if dfs[0] != 1.0:
                raise MarketDataError("P(0,0) must equal 1")
        else:
            times = np.concatenate(([0.0], times))
            dfs = np.concatenate(([1.0], dfs))
            quoted_from = 1
        if times.size < 2:
            raise MarketDataError("discount curve needs at least one pillar beyond t=0")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "dfs", dfs)
        object.__setattr__(self, "_log_dfs", np.log(dfs))
        object.__setattr__(self, "_forwards", -np.diff(np.log(dfs)) / np.diff(times))
        object.__setattr__(self, "_quoted_from", quoted_from)

    @classmethod
    def flat(cls, rate: float, horizon: float = 30.0) -> "DiscountCurve":
        """Continuously compounded flat curve"""
        times = np.array([0.0, horizon])
        return cls(times, np.exp(-rate * times))

    def _segment(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.clip(idx, 0, self._forwards.size - 1)

    def log_discount(self, t):
        t = np.asarray(t, dtype=float)
        idx = self._segment(t)
        return self._log_dfs[idx] - self._forwards[idx] * (t - self.times[idx])

    def discount(self, t):
        """P(0, t)"""
        return np.exp(self.log_discount(t))

    def instantaneous_forward(self, t):
        """f(0, t) = -d log P(0, t) / dt, right-continuous at pillars"""
        t = np.asarray(t, dtype=float)
        return self._forwards[self._segment(t)]

    def integrated_forward(self, t1, t2):
        """Integral of f(0, u) over [t1, t2]"""
        return self.log_discount(t1) - self.log_discount(t2)

    def pillars(self) -> Tuple[np.ndarray, np.ndarray]:
        """(times, dfs) as quoted, without the t=0 node added on load"""
        return self.times[self._quoted_from:], self.dfs[self._quoted_from:]

    def shifted(self, spread: float) -> "DiscountCurve":
        """Same curve with every forward moved by a constant spread"""
        times, dfs = self.pillars()
        return DiscountCurve(times, dfs * np.exp(-spread * times))


def instantaneous_forward(curve: DiscountCurve, t):
    """
    Instantaneous forward rate f(0, t) of a discount curve

    Args:
        curve: Discount curve
        t: Time(s) in years, t >= 0

    Returns:
        f(0, t), flat-extrapolated past the last pillar
    """
    return curve.instantaneous_forward(t)


@dataclass
class MarketBundle:
    """Validated market snapshot: futures, one vol slice per delivery, discount curve"""
    curve: FuturesCurve
    slices: Dict[int, VolSlice]
    discount: DiscountCurve
    borrowed: Dict[int, str] = field(default_factory=dict)  # j -> donor label

    @property
    def n_deliveries(self) -> int:
        return len(self.curve)

    def slice_for(self, j: int) -> VolSlice:
        return self.slices[j]

    def liquid_slices(self) -> List[VolSlice]:
        """Slices read from the vol file, in delivery order"""
        return [self.slices[j] for j in sorted(self.slices) if j not in self.borrowed]

    def atm_quotes(self) -> List[tuple]:
        """(T_j, ATM vol) per liquid slice, ATM read off linear interpolation at y = 0"""
        quotes = []
        for s in self.liquid_slices():
            quotes.append((s.expiry, float(np.interp(0.0, s.log_moneyness, s.implied_vol))))
        return quotes


def _read_csv(path: PathLike, required: Iterable[str], alternatives: Optional[Dict[str, str]] = None) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MarketDataError(f"market file not found: {path}")
    try:
        df = pd.read_csv(path, encoding="utf-8", comment="#", float_precision="round_trip")
    except (pd.errors.ParserError, UnicodeDecodeError, pd.errors.EmptyDataError) as e:
        raise MarketDataError(f"cannot parse {path}: {e}") from e
    df.columns = [c.strip() for c in df.columns]
    alternatives = alternatives or {}
    missing = [c for c in required if c not in df.columns and alternatives.get(c) not in df.columns]
    if missing:
        raise MarketDataError(f"{path.name}: missing columns {missing}")
    return df


def load_futures(path: PathLike, valuation_date: Optional[date] = None) -> FuturesCurve:
    """
    Load futures.csv into a validated curve

    A `delivery_date` column is accepted in place of `delivery_years` when a
    valuation date is supplied; it is converted to ACT/365.25 year fractions.
    """
    df = _read_csv(path, ["label", "delivery_years", "price"], {"delivery_years": "delivery_date"})
    if "delivery_years" not in df.columns:
        if valuation_date is None:
            raise MarketDataError("delivery_date column needs a valuation date")
        df["delivery_years"] = [
            year_fraction(valuation_date, pd.Timestamp(d).date()) for d in df["delivery_date"]
        ]
    try:
        return FuturesCurve(
            valuation_date=valuation_date,
            entries=[
                FuturesEntry(label=str(r.label), delivery=float(r.delivery_years), price=float(r.price))
                for r in df.itertuples(index=False)
            ],
        )
    except ValidationError as e:
        raise MarketDataError(_first_error(e)) from e


def load_vols(path: PathLike, curve: FuturesCurve) -> Dict[int, VolSlice]:
    """
    Load vols.csv and key every slice to its futures delivery by label

    Strike-quoted files (`strike` column instead of `log_moneyness`) are
    converted with y = log(K / F_j(0)).
    """
    df = _read_csv(path, ["label", "expiry_years", "log_moneyness", "implied_vol"],
                   {"log_moneyness": "strike"})
    slices: Dict[int, VolSlice] = {}
    for label, group in df.groupby("label", sort=False):
        label = str(label)
        try:
            j = curve.index_of(label)
        except KeyError:
            raise MarketDataError(f"vol slice {label} has no matching futures contract")
        expiries = group["expiry_years"].unique()
        if expiries.size != 1:
            raise MarketDataError(f"vol slice {label} has more than one expiry")
        expiry = float(expiries[0])
        delivery = curve.entries[j].delivery
        if abs(expiry - delivery) > 1e-9:
            logger.warning(f"Slice {label}: option expiry {expiry} differs from delivery {delivery}")
        if "log_moneyness" in group.columns:
            ys = group["log_moneyness"].astype(float).tolist()
        else:
            ys = np.log(group["strike"].astype(float).to_numpy() / curve.entries[j].price).tolist()
        try:
            slices[j] = VolSlice(
                label=label,
                delivery_index=j,
                expiry=expiry,
                log_moneyness=ys,
                implied_vol=group["implied_vol"].astype(float).tolist(),
            )
        except ValidationError as e:
            raise MarketDataError(_first_error(e)) from e
    return slices


def load_discount(path: PathLike) -> DiscountCurve:
    """Load discount.csv"""
    df = _read_csv(path, ["time_years", "df"])
    return DiscountCurve(df["time_years"].to_numpy(dtype=float), df["df"].to_numpy(dtype=float))


def load_returns(path: PathLike, short_tenor: float = 1.0 / 12.0, long_tenor: float = 4.0) -> ReturnSeries:
    """Load returns.csv with 1-month and 48-month constant-tenor log-returns"""
    df = _read_csv(path, ["date", "short_return", "long_return"])
    try:
        return ReturnSeries(
            dates=[pd.Timestamp(d).date() for d in df["date"]],
            short=df["short_return"].astype(float).tolist(),
            long=df["long_return"].astype(float).tolist(),
            short_tenor=short_tenor,
            long_tenor=long_tenor,
        )
    except ValidationError as e:
        raise MarketDataError(_first_error(e)) from e


def borrow_missing_slices(curve: FuturesCurve, slices: Dict[int, VolSlice]) -> Dict[int, str]:
    """
    Give every delivery without liquid vol data the slice of the next longer
    liquid contract (the nearest shorter one when nothing longer is quoted)

    The donor's implied vols are kept and re-expired at the recipient's
    delivery, i.e. the donor's terminal variance rescaled by T_j / T_donor.

    Returns:
        Mapping delivery index -> donor label, for provenance
    """
    if not slices:
        raise MarketDataError("no implied volatility slices loaded")
    liquid = sorted(slices)
    borrowed: Dict[int, str] = {}
    for j, entry in enumerate(curve.entries):
        if j in slices:
            continue
        longer = [k for k in liquid if k > j]
        donor = slices[longer[0]] if longer else slices[[k for k in liquid if k < j][-1]]
        slices[j] = donor.model_copy(update={
            "label": entry.label,
            "delivery_index": j,
            "expiry": entry.delivery,
            "borrowed_from": donor.label,
        })
        borrowed[j] = donor.label
        logger.warning(f"No vol slice for {entry.label}: borrowing slice {donor.label}")
    return borrowed


def load_market(
    futures_path: PathLike,
    vols_path: PathLike,
    discount_path: PathLike,
    valuation_date: Optional[date] = None,
) -> MarketBundle:
    """
    Load and validate a full market snapshot

    Args:
        futures_path: futures.csv
        vols_path: vols.csv
        discount_path: discount.csv
        valuation_date: Needed only for date-based delivery columns

    Returns:
        MarketBundle with one slice per delivery (borrowed slices flagged)
    """
    curve = load_futures(futures_path, valuation_date)
    slices = load_vols(vols_path, curve)
    discount = load_discount(discount_path)
    borrowed = borrow_missing_slices(curve, slices)
    logger.info(
        f"Market loaded: {len(curve)} deliveries, {len(slices) - len(borrowed)} liquid slices, "
        f"{len(borrowed)} borrowed"
    )
    return MarketBundle(curve=curve, slices=slices, discount=discount, borrowed=borrowed)


def serialize_market(bundle: MarketBundle, directory: PathLike) -> Dict[str, Path]:
    """Write the bundle back to the three CSV files (borrowed slices are not written)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "futures": directory / "futures.csv",
        "vols": directory / "vols.csv",
        "discount": directory / "discount.csv",
    }
    pd.DataFrame({
        "label": bundle.curve.labels,
        "delivery_years": bundle.curve.deliveries,
        "price": bundle.curve.prices,
    }).to_csv(paths["futures"], index=False, float_format=CSV_FLOAT_FORMAT)

    rows = []
    for s in bundle.liquid_slices():
        for y, vol in zip(s.log_moneyness, s.implied_vol):
            rows.append({"label": s.label, "expiry_years": s.expiry, "log_moneyness": y, "implied_vol": vol})
    pd.DataFrame(rows, columns=["label", "expiry_years", "log_moneyness", "implied_vol"]).to_csv(
        paths["vols"], index=False, float_format=CSV_FLOAT_FORMAT
    )

    times, dfs = bundle.discount.pillars()
    pd.DataFrame({"time_years": times, "df": dfs}).to_csv(
        paths["discount"], index=False, float_format=CSV_FLOAT_FORMAT
    )
    return paths


def serialize_returns(series: ReturnSeries, path: PathLike) -> Path:
    path = Path(path)
    pd.DataFrame({
        "date": [d.isoformat() for d in series.dates],
        "short_return": series.short,
        "long_return": series.long,
    }).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    msg = str(err.get("msg", e))
    return msg.removeprefix("Value error, ")
