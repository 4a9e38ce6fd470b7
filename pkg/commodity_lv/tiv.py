"""
Total implied variance surfaces

Each delivery j carries one implied vol slice at its own expiry T_j. The
terminal total variance w~_j(y) = Sigma_j(y, T_j)^2 T_j is a natural cubic
spline in log-moneyness; an accumulator spreads it over (0, T_j]:

- linear:        w = w~ t / T_j
- quadratic:     w = w~ (t / T_j)^2
- ttm-iv:        piecewise linear in time to maturity through the terminal
                 variances of the shorter contracts
- exp-weighted:  w = w~ f(t / T_j), f(x) = (e^x - 1) / (e - 1)
- mixture:       convex combination of the above
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.interpolate import CubicSpline

from commodity_lv.exceptions import TivError
from commodity_lv.models import AccumulatorKind, VolSlice

EPS_W = 1e-8
MAX_WING_SLOPE = 2.0
# Offset applied to evaluation times that fall on a ttm-iv kink
KINK_NUDGE = 1e-9

TivValues = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class TerminalSlice:
    """
    Terminal total variance w~(y) of one delivery

    Natural cubic spline inside the quote range; linear continuation outside
    with the wing slopes clipped to [0, 2] on the right and [-2, 0] on the left.
    """
    expiry: float
    nodes: np.ndarray
    values: np.ndarray
    spline: CubicSpline = field(repr=False)
    left_slope: float
    right_slope: float

    def __call__(self, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(w~, dw~/dy, d2w~/dy2) at y"""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        lo, hi = self.nodes[0], self.nodes[-1]
        inside = np.clip(y, lo, hi)
        w = self.spline(inside)
        wy = self.spline(inside, 1)
        wyy = self.spline(inside, 2)

        left, right = y < lo, y > hi
        w = np.where(left, self.values[0] + self.left_slope * (y - lo), w)
        w = np.where(right, self.values[-1] + self.right_slope * (y - hi), w)
        wy = np.where(left, self.left_slope, np.where(right, self.right_slope, wy))
        wyy = np.where(left | right, 0.0, wyy)

        floored = w < EPS_W
        if np.any(floored):
            w = np.where(floored, EPS_W, w)
            wy = np.where(floored, 0.0, wy)
            wyy = np.where(floored, 0.0, wyy)
        return w, wy, wyy


def terminal_tiv(vol_slice: VolSlice) -> TerminalSlice:
    """
    Natural cubic spline through (y_i, Sigma_i^2 T_j)

    Raises:
        TivError: fewer than 3 quotes
    """
    ys = np.asarray(vol_slice.log_moneyness, dtype=float)
    if ys.size < 3:
        raise TivError(f"slice {vol_slice.label}: at least 3 quotes required")
    ws = vol_slice.total_variance
    spline = CubicSpline(ys, ws, bc_type="natural")
    left = float(np.clip(spline(ys[0], 1), -MAX_WING_SLOPE, 0.0))
    right = float(np.clip(spline(ys[-1], 1), 0.0, MAX_WING_SLOPE))
    return TerminalSlice(expiry=vol_slice.expiry, nodes=ys, values=ws, spline=spline,
                         left_slope=left, right_slope=right)


class Accumulator(ABC):
    """Spreads the terminal variance of one delivery over (0, T_j]"""

    kind: AccumulatorKind

    @abstractmethod
    def evaluate(self, terminal: TerminalSlice, y: np.ndarray, t: float) -> TivValues:
        """(w, dw/dt, dw/dy, d2w/dy2) at (y, t), 0 < t <= T_j"""

    def kinks(self) -> np.ndarray:
        """Times in (0, T_j) where dw/dt jumps"""
        return np.empty(0)


class ScalingAccumulator(Accumulator):
    """w = w~(y) f(t / T_j) for a monotone f with f(0) = 0 and f(1) = 1"""

    @abstractmethod
    def time_factor(self, x: float) -> Tuple[float, float]:
        """(f(x), f'(x))"""

    def evaluate(self, terminal: TerminalSlice, y: np.ndarray, t: float) -> TivValues:
        T = terminal.expiry
        f, df = self.time_factor(t / T)
        w, wy, wyy = terminal(y)
        return w * f, w * df / T, wy * f, wyy * f


class LinearAccumulator(ScalingAccumulator):
    kind = AccumulatorKind.LINEAR

    def time_factor(self, x: float) -> Tuple[float, float]:
        return x, 1.0


class QuadraticAccumulator(ScalingAccumulator):
    kind = AccumulatorKind.QUADRATIC

    def time_factor(self, x: float) -> Tuple[float, float]:
        return x * x, 2.0 * x


class WeightedAccumulator(ScalingAccumulator):
    """Arbitrary weighting function f with its derivative"""
    kind = AccumulatorKind.EXP_WEIGHTED

    def __init__(self, f: Callable[[float], float], df: Callable[[float], float]):
        if abs(f(0.0)) > 1e-12 or abs(f(1.0) - 1.0) > 1e-12:
            raise TivError("weighting function needs f(0) = 0 and f(1) = 1")
        self.f = f
        self.df = df

    def time_factor(self, x: float) -> Tuple[float, float]:
        return float(self.f(x)), float(self.df(x))

    @classmethod
    def exponential(cls) -> "WeightedAccumulator":
        """f(x) = (e^x - 1) / (e - 1)"""
        norm = np.expm1(1.0)
        return cls(lambda x: np.expm1(x) / norm, lambda x: np.exp(x) / norm)


class TtmIvAccumulator(Accumulator):
    """
    Time-to-maturity interpolation through the shorter contracts' slices

    With increments inc_k = w~_k - w~_{k-1} (w~_0 = 0, T_0 = 0) and
    tau = T_j - t in (T_{k-1}, T_k]:

        w_j(y, t) = sum_{i > k} inc_i + inc_k (T_k - tau) / (T_k - T_{k-1})

    Increments below EPS_W are clamped to EPS_W and the remaining ones are
    rescaled so that w_j(y, T_j) = w~_j(y) holds exactly.
    """
    kind = AccumulatorKind.TTM_IV

    def __init__(self, terminals: Sequence[TerminalSlice]):
        if not terminals:
            raise TivError("ttm-iv accumulator needs at least one slice")
        self.terminals = list(terminals)
        self.times = np.array([0.0] + [s.expiry for s in self.terminals])
        if np.any(np.diff(self.times) <= 0.0):
            raise TivError("ttm-iv slices must have increasing expiries")

    def kinks(self) -> np.ndarray:
        T = self.times[-1]
        return np.sort(T - self.times[1:-1])

    def increments(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Repaired increments and their first two y-derivatives, shape (j, len(y))"""
        evaluated = [s(y) for s in self.terminals]
        cum = np.array([e[0] for e in evaluated])
        cum_y = np.array([e[1] for e in evaluated])
        cum_yy = np.array([e[2] for e in evaluated])
        zero = np.zeros((1, y.size))
        inc = np.diff(np.vstack([zero, cum]), axis=0)
        inc_y = np.diff(np.vstack([zero, cum_y]), axis=0)
        inc_yy = np.diff(np.vstack([zero, cum_yy]), axis=0)

        clamped = inc < EPS_W
        if not np.any(clamped):
            return inc, inc_y, inc_yy

        free = ~clamped
        m = clamped.sum(axis=0)
        num, num_y, num_yy = cum[-1] - m * EPS_W, cum_y[-1], cum_yy[-1]
        den = np.where(free, inc, 0.0).sum(axis=0)
        den_y = np.where(free, inc_y, 0.0).sum(axis=0)
        den_yy = np.where(free, inc_yy, 0.0).sum(axis=0)
        if np.any(den <= 0.0) or np.any(num <= 0.0):
            raise TivError("ttm-iv increments cannot be renormalized")
        if np.any(m > 0):
            logger.debug(f"ttm-iv repair clamped {int(clamped.sum())} increments")

        c = num / den
        c_y = (num_y * den - num * den_y) / den ** 2
        c_yy = (num_yy * den - num * den_yy) / den ** 2 - 2.0 * den_y * c_y / den
        rep = np.where(free, c * inc, EPS_W)
        rep_y = np.where(free, c_y * inc + c * inc_y, 0.0)
        rep_yy = np.where(free, c_yy * inc + 2.0 * c_y * inc_y + c * inc_yy, 0.0)
        return rep, rep_y, rep_yy

    def evaluate(self, terminal: TerminalSlice, y: np.ndarray, t: float) -> TivValues:
        T = self.times[-1]
        tau = max(T - t, 0.0)
        # smallest k >= 1 with T_k >= tau
        k = int(np.clip(np.searchsorted(self.times, tau, side="left"), 1, len(self.times) - 1))
        width = self.times[k] - self.times[k - 1]
        frac = (self.times[k] - tau) / width

        inc, inc_y, inc_yy = self.increments(np.atleast_1d(np.asarray(y, dtype=float)))
        row = k - 1
        w = inc[row + 1:].sum(axis=0) + inc[row] * frac
        wy = inc_y[row + 1:].sum(axis=0) + inc_y[row] * frac
        wyy = inc_yy[row + 1:].sum(axis=0) + inc_yy[row] * frac
        return w, inc[row] / width, wy, wyy


class MixtureAccumulator(Accumulator):
    """Convex combination of accumulators"""
    kind = AccumulatorKind.MIXTURE

    def __init__(self, components: Sequence[Tuple[float, Accumulator]]):
        weights = np.array([w for w, _ in components], dtype=float)
        if weights.size == 0 or np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-12:
            raise TivError("mixture weights must be non-negative and sum to 1")
        self.components = list(components)

    def kinks(self) -> np.ndarray:
        parts = [acc.kinks() for _, acc in self.components]
        return np.unique(np.concatenate(parts)) if parts else np.empty(0)

    def evaluate(self, terminal: TerminalSlice, y: np.ndarray, t: float) -> TivValues:
        total = None
        for weight, acc in self.components:
            values = acc.evaluate(terminal, y, t)
            scaled = [weight * v for v in values]
            total = scaled if total is None else [a + b for a, b in zip(total, scaled)]
        return tuple(total)


@dataclass(frozen=True)
class TivSurface:
    """w_j(y, t) of one delivery"""
    delivery_index: int
    delivery: float
    terminal: TerminalSlice
    accumulator: Accumulator

    @property
    def kind(self) -> AccumulatorKind:
        return self.accumulator.kind

    def accumulate(self, y, t: float) -> TivValues:
        """
        Total variance and its derivatives at (y, t)

        Args:
            y: Log-moneyness, scalar or array
            t: Time in (0, T_j]

        Returns:
            (w, dw/dt, dw/dy, d2w/dy2) as arrays shaped like y

        Raises:
            TivError: t outside (0, T_j], ttm-iv data that cannot be renormalized
        """
        if not t > 0.0:
            raise TivError(f"accumulate needs t > 0, got {t}")
        if t > self.delivery * (1.0 + 1e-12):
            raise TivError(f"t = {t} is past delivery {self.delivery} of contract {self.delivery_index}")
        t = min(t, self.delivery)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return tuple(np.asarray(v, dtype=float) for v in self.accumulator.evaluate(self.terminal, y, t))

    def nudge_off_kinks(self, t: float) -> float:
        """Shift t by KINK_NUDGE when it sits on a breakpoint of dw/dt"""
        kinks = self.accumulator.kinks()
        if kinks.size and np.any(np.abs(kinks - t) < 0.5 * KINK_NUDGE):
            return min(t + KINK_NUDGE, self.delivery)
        return t


DEFAULT_MIXTURE = {AccumulatorKind.LINEAR: 0.5, AccumulatorKind.QUADRATIC: 0.5}


def make_accumulator(
    kind: AccumulatorKind,
    terminals: Sequence[TerminalSlice],
    j: int,
    mixture_weights: Optional[Dict[AccumulatorKind, float]] = None,
) -> Accumulator:
    """Accumulator for delivery j given the terminal slices of every delivery"""
    kind = AccumulatorKind(kind)
    if kind == AccumulatorKind.LINEAR:
        return LinearAccumulator()
    if kind == AccumulatorKind.QUADRATIC:
        return QuadraticAccumulator()
    if kind == AccumulatorKind.EXP_WEIGHTED:
        return WeightedAccumulator.exponential()
    if kind == AccumulatorKind.TTM_IV:
        return TtmIvAccumulator(terminals[: j + 1])
    weights = mixture_weights or DEFAULT_MIXTURE
    if AccumulatorKind.MIXTURE in {AccumulatorKind(k) for k in weights}:
        raise TivError("a mixture cannot contain itself")
    return MixtureAccumulator([
        (float(w), make_accumulator(k, terminals, j)) for k, w in weights.items() if w > 0.0
    ])


def build_tiv_surfaces(
    slices: Dict[int, VolSlice],
    kind: AccumulatorKind,
    mixture_weights: Optional[Dict[AccumulatorKind, float]] = None,
) -> List[TivSurface]:
    """
    One TivSurface per delivery (borrowed slices included)

    Args:
        slices: Delivery index -> vol slice, every index 0..n-1 present
        kind: Accumulator for all deliveries
        mixture_weights: Component weights when kind is mixture

    Returns:
        Surfaces ordered by delivery index
    """
    n = len(slices)
    if sorted(slices) != list(range(n)):
        raise TivError("every delivery needs a vol slice before building TIV surfaces")
    terminals = [terminal_tiv(slices[j]) for j in range(n)]
    surfaces = [
        TivSurface(
            delivery_index=j,
            delivery=terminals[j].expiry,
            terminal=terminals[j],
            accumulator=make_accumulator(kind, terminals, j, mixture_weights),
        )
        for j in range(n)
    ]
    logger.info(f"Built {n} TIV surfaces with the {AccumulatorKind(kind).value} accumulator")
    return surfaces


def dump_tiv(surfaces: Sequence[TivSurface], y_grid, t_grid) -> pd.DataFrame:
    """Long table j, y, t, w, dwdt, dwdy, d2wdy2 over t in (0, T_j]"""
    y_grid = np.asarray(y_grid, dtype=float)
    frames = []
    for s in surfaces:
        for t in np.asarray(t_grid, dtype=float):
            if t <= 0.0 or t > s.delivery:
                continue
            w, wt, wy, wyy = s.accumulate(y_grid, float(t))
            frames.append(pd.DataFrame({
                "j": s.delivery_index, "y": y_grid, "t": t,
                "w": w, "dwdt": np.broadcast_to(wt, y_grid.shape), "dwdy": wy, "d2wdy2": wyy,
            }))
    if not frames:
        return pd.DataFrame(columns=["j", "y", "t", "w", "dwdt", "dwdy", "d2wdy2"])
    return pd.concat(frames, ignore_index=True)
