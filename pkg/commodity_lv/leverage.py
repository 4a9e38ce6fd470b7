"""
Leverage functions L_j(y, t) per futures delivery

Deterministic rates:

    L^2 = (dw/dt) / (B (sigma_1^2 + sigma_2^2))

Stochastic rates:

    L^2 = (dC/dw dw/dt - f(0, t) C + E[D (F_j - K)^+ r]) / (dC/dw B (sigma_1^2 + sigma_2^2))

where B is the Dupire bracket of the TIV slice. Slices are calibrated one
after another; in the stochastic case each one uses paths simulated with the
slices already committed.

The bootstrap writes the rate term as f(0, t) C + E[D X (r - f)] with X the
out-of-the-money payoff (put below the forward, call above). Deep in the money
the call-side expectation is dominated by the strike-independent
futures/forward convexity E[D F (r - f)], which no leverage value can absorb.
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from commodity_lv.andersen import total_variance_rate
from commodity_lv.engine import (
    CorrelationStructure,
    PathSimulator,
    PathSnapshot,
    SystemModel,
    mc_stats,
)
from commodity_lv.exceptions import ArtifactError, CalibrationError, SimulationError
from commodity_lv.market_data import MarketBundle
from commodity_lv.models import AndersenParams, CalibrationConfig, LeverageEvaluation, RateMode
from commodity_lv.pricing import black_call, dC_dw, dupire_denominator
from commodity_lv.rates import G1ppModel
from commodity_lv.tiv import TivSurface

LOOKUP_TOL = 1e-12


@dataclass
class LeverageSurface:
    """
    L_j on a fixed y-grid, piecewise constant in t

    Slice i holds on [times[i], times[i + 1]) and is evaluated from the TIV
    surface at eval_times[i]; values are linear in y with flat extrapolation.
    """
    delivery_index: int
    delivery: float
    y_grid: np.ndarray
    times: List[float]
    eval_times: List[float]
    values: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.y_grid = np.asarray(self.y_grid, dtype=float)
        if self.y_grid.ndim != 1 or self.y_grid.size < 2 or np.any(np.diff(self.y_grid) <= 0.0):
            raise CalibrationError("leverage y-grid must be strictly increasing with at least 2 nodes")
        if not self.times or self.times[0] != 0.0:
            raise CalibrationError("the first leverage slice must start at t = 0")

    @property
    def n_committed(self) -> int:
        return len(self.values)

    @property
    def complete(self) -> bool:
        return len(self.values) == len(self.times)

    def commit_slice(self, values: np.ndarray) -> None:
        """Freeze the next slice"""
        if self.complete:
            raise CalibrationError(f"all slices of contract {self.delivery_index} are committed")
        values = np.asarray(values, dtype=float)
        if values.shape != self.y_grid.shape:
            raise CalibrationError("leverage slice does not match the y-grid")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise CalibrationError("leverage values must be finite and positive")
        values.setflags(write=False)
        self.values.append(values)

    def slice_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t + LOOKUP_TOL, side="right")) - 1
        return max(idx, 0)

    def lookup(self, y, t: float) -> np.ndarray:
        """
        L_j(y, t)

        Raises:
            SimulationError: the slice covering t is not calibrated yet
        """
        idx = self.slice_index(t)
        if idx >= len(self.values):
            raise SimulationError(
                f"leverage slice {idx} of contract {self.delivery_index} (t={t:.6f}) is not calibrated"
            )
        return np.interp(y, self.y_grid, self.values[idx])

    @classmethod
    def constant(cls, delivery_index: int, delivery: float, value: float = 1.0,
                 y_grid: Optional[np.ndarray] = None) -> "LeverageSurface":
        """Single slice L = value everywhere"""
        grid = np.array([-1.0, 1.0]) if y_grid is None else np.asarray(y_grid, dtype=float)
        surf = cls(delivery_index, delivery, grid, [0.0], [delivery])
        surf.commit_slice(np.full(grid.shape, float(value)))
        return surf

    def to_frame(self) -> pd.DataFrame:
        n = self.y_grid.size
        return pd.DataFrame({
            "j": self.delivery_index,
            "t": np.repeat(self.times[: len(self.values)], n),
            "y": np.tile(self.y_grid, len(self.values)),
            "L": np.concatenate(self.values) if self.values else np.empty(0),
        })


def dump_leverage(surfaces: Sequence[LeverageSurface]) -> pd.DataFrame:
    """Long table j, t, y, L of every committed slice"""
    return pd.concat([s.to_frame() for s in surfaces], ignore_index=True)


def load_leverage(source: Union[str, Path, pd.DataFrame], deliveries: Sequence[float]) -> List[LeverageSurface]:
    """
    Rebuild surfaces from a j, t, y, L table

    Raises:
        ArtifactError: missing columns, missing deliveries, ragged grids
    """
    frame = source if isinstance(source, pd.DataFrame) else pd.read_csv(source, comment="#", float_precision="round_trip")
    missing = {"j", "t", "y", "L"} - set(frame.columns)
    if missing:
        raise ArtifactError(f"leverage table is missing columns {sorted(missing)}")
    surfaces = []
    for j, delivery in enumerate(deliveries):
        rows = frame[frame["j"] == j]
        if rows.empty:
            raise ArtifactError(f"leverage table has no rows for contract {j}")
        times = sorted(rows["t"].unique())
        grids = [rows[rows["t"] == t].sort_values("y") for t in times]
        y_grid = grids[0]["y"].to_numpy()
        if any(g["y"].size != y_grid.size or not np.allclose(g["y"].to_numpy(), y_grid, rtol=0, atol=0) for g in grids):
            raise ArtifactError(f"leverage grids of contract {j} differ between slices")
        surf = LeverageSurface(j, float(delivery), y_grid, [float(t) for t in times], [float(t) for t in times])
        for g in grids:
            surf.commit_slice(g["L"].to_numpy())
        surfaces.append(surf)
    return surfaces


@dataclass
class SliceDiagnostics:
    j: int
    slice: int
    t_start: float
    t_eval: float
    nodes: int
    clamped: int
    arbitrage: int
    rate_se_max: float = 0.0


@dataclass
class CalibrationDiagnostics:
    """Clamp and arbitrage counts per (delivery, slice)"""
    slices: List[SliceDiagnostics] = field(default_factory=list)

    @property
    def total_clamped(self) -> int:
        return sum(s.clamped for s in self.slices)

    @property
    def total_arbitrage(self) -> int:
        return sum(s.arbitrage for s in self.slices)

    @property
    def total_nodes(self) -> int:
        return sum(s.nodes for s in self.slices)

    def to_dict(self) -> Dict:
        return {
            "total_nodes": self.total_nodes,
            "total_clamped": self.total_clamped,
            "total_arbitrage": self.total_arbitrage,
            "slices": [asdict(s) for s in self.slices],
        }


@dataclass
class _Terms:
    w: np.ndarray
    dwdt: np.ndarray
    bracket: np.ndarray
    arbitrage: np.ndarray
    variance_rate: float


def _terms(tiv: TivSurface, params: AndersenParams, y, t: float, floor: float) -> _Terms:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w, dwdt, dwdy, d2wdy2 = tiv.accumulate(y, t)
    bracket = dupire_denominator(w, dwdy, d2wdy2, y)
    arbitrage = ~(bracket > floor)
    return _Terms(
        w=w,
        dwdt=np.broadcast_to(dwdt, y.shape),
        bracket=np.where(arbitrage, floor, bracket),
        arbitrage=arbitrage,
        variance_rate=float(total_variance_rate(params, t, tiv.delivery)),
    )


def _clamp(raw: np.ndarray, config: CalibrationConfig) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = config.l_min ** 2, config.l_max ** 2
    raw = np.where(np.isfinite(raw), raw, lo)
    clamped = (raw < lo) | (raw > hi)
    return np.clip(raw, lo, hi), clamped


def _det_square(tiv, params, y, t, config) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    terms = _terms(tiv, params, y, t, config.denominator_floor)
    raw = terms.dwdt / (terms.bracket * terms.variance_rate)
    lsq, clamped = _clamp(raw, config)
    return lsq, clamped, terms.arbitrage


def leverage_det(tiv: TivSurface, params: AndersenParams, y, t: float,
                 config: Optional[CalibrationConfig] = None) -> np.ndarray:
    """
    Deterministic-rate leverage L^2 = (dw/dt) / (B (sigma_1^2 + sigma_2^2))

    Args:
        tiv: TIV surface of the delivery
        params: Backbone parameters
        y: Log-moneyness grid
        t: Time in (0, T_j]
        config: Clamps and denominator floor

    Returns:
        L^2 clamped to [L_min^2, L_max^2]
    """
    config = config or CalibrationConfig()
    return _det_square(tiv, params, y, t, config)[0]


def rate_correction_mc(snapshot: PathSnapshot, j: int, y, initial_future: float,
                       rate_offset: float = 0.0,
                       out_of_the_money: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    MC estimate of E[D(t) (F_j(t) - K)^+ (r(t) - rate_offset)] per strike K = F_j(0) e^y

    With out_of_the_money the put payoff (K - F_j)^+ replaces the call for
    y < 0. All strikes share the same paths; antithetic twins are averaged
    before the outer mean.

    Returns:
        (estimate, standard error) per strike
    """
    if snapshot.futures.shape[0] == 0:
        raise SimulationError("no paths")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    strikes = initial_future * np.exp(y)
    weight = snapshot.discount * (snapshot.short_rate - rate_offset)
    intrinsic = snapshot.futures[:, j, None] - strikes[None, :]
    if out_of_the_money:
        intrinsic = np.where(y[None, :] < 0.0, -intrinsic, intrinsic)
    payoff = np.maximum(intrinsic, 0.0)
    samples = payoff * weight[:, None]
    return mc_stats(snapshot.pair_average(samples))


def _sto_square(tiv, params, rate_corr, y, t, initial_future, discount, forward, config):
    terms = _terms(tiv, params, y, t, config.denominator_floor)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    call = black_call(initial_future, discount, y, terms.w)
    vega_w = dC_dw(initial_future, discount, y, terms.w)
    numerator = vega_w * terms.dwdt - forward * call + np.asarray(rate_corr, dtype=float)
    raw = numerator / (vega_w * terms.bracket * terms.variance_rate)
    lsq, clamped = _clamp(raw, config)
    return lsq, clamped, terms.arbitrage


def leverage_sto(tiv: TivSurface, params: AndersenParams, rate_corr, y, t: float,
                 initial_future: float, discount: float, forward: float,
                 config: Optional[CalibrationConfig] = None) -> np.ndarray:
    """
    Stochastic-rate leverage

    Args:
        tiv: TIV surface of the delivery
        params: Backbone parameters
        rate_corr: E[D (F_j - K)^+ r] per strike
        y: Log-moneyness grid
        t: Time in (0, T_j]
        initial_future: F_j(0)
        discount: P(0, t)
        forward: f(0, t)
        config: Clamps and denominator floor

    Returns:
        L^2 clamped to [L_min^2, L_max^2]
    """
    config = config or CalibrationConfig()
    return _sto_square(tiv, params, rate_corr, y, t, initial_future, discount, forward, config)[0]


def default_slice_times(config: CalibrationConfig, horizon: float) -> np.ndarray:
    if config.slice_times:
        return np.asarray(config.slice_times, dtype=float)
    n = int(np.ceil(horizon * config.slices_per_year - 1e-9))
    return np.arange(1, n + 1) / config.slices_per_year


def slice_schedule(tiv: TivSurface, global_times: np.ndarray,
                   evaluation: LeverageEvaluation) -> Tuple[List[float], List[float]]:
    """Slice start times (first = 0) and TIV evaluation times of one delivery"""
    T = tiv.delivery
    inner = [float(s) for s in global_times if s < T - 1e-12]
    bounds = [0.0] + inner + [T]
    starts = bounds[:-1]
    if LeverageEvaluation(evaluation) == LeverageEvaluation.MIDPOINT:
        evals = [0.5 * (a + b) for a, b in zip(bounds[:-1], bounds[1:])]
    else:
        evals = [bounds[1]] + inner
    return starts, [tiv.nudge_off_kinks(e) for e in evals]


def y_grid_for(bundle: MarketBundle, j: int, config: CalibrationConfig) -> np.ndarray:
    """
    Uniform grid over the quoted log-moneyness range widened by y_margin on each side

    The grid also reaches y_sd_width ATM standard deviations of log F_j at delivery
    on both sides, so the flat extrapolation of L only acts in the far tails.
    """
    s = bundle.slice_for(j)
    ys = s.log_moneyness
    lo, hi = min(ys), max(ys)
    margin = config.y_margin * (hi - lo)
    atm = float(np.interp(0.0, ys, s.implied_vol))
    width = config.y_sd_width * atm * np.sqrt(float(bundle.curve.deliveries[j]))
    return np.linspace(min(lo - margin, -width), max(hi + margin, width), config.y_nodes)


def calibrate_all(
    bundle: MarketBundle,
    params: AndersenParams,
    surfaces: Sequence[TivSurface],
    config: CalibrationConfig,
    rate_mode: RateMode = RateMode.DETERMINISTIC,
    rates: Optional[G1ppModel] = None,
) -> Tuple[List[LeverageSurface], CalibrationDiagnostics]:
    """
    Bootstrap the leverage surfaces of every delivery, slice by slice

    The first slice always uses the deterministic formula. In stochastic mode
    each later slice simulates all paths to its start time with the slices
    already committed and measures E[D X (r - f)] there, X the out-of-the-money
    payoff; adding f(0, t) C back gives the rate term of the stochastic formula.

    Args:
        bundle: Market snapshot (futures, slices, discount curve)
        params: Calibrated backbone
        surfaces: One TIV surface per delivery
        config: Grids, clamps, MC settings
        rate_mode: deterministic or g1pp
        rates: G1++ model, defaults to the deterministic limit of the bundle's curve

    Returns:
        (leverage surfaces, diagnostics)

    Raises:
        CalibrationError: more than max_clamp_fraction of a slice's nodes clamped
    """
    rate_mode = RateMode(rate_mode)
    rates = rates or G1ppModel.deterministic(bundle.discount)
    if len(surfaces) != bundle.n_deliveries:
        raise CalibrationError("one TIV surface per delivery is required")
    deliveries = bundle.curve.deliveries
    prices = bundle.curve.prices
    global_times = default_slice_times(config, float(deliveries.max()))

    leverage: List[LeverageSurface] = []
    for tiv in surfaces:
        j = tiv.delivery_index
        starts, evals = slice_schedule(tiv, global_times, config.evaluation)
        leverage.append(LeverageSurface(j, tiv.delivery, y_grid_for(bundle, j, config), starts, evals))

    simulator = None
    if rate_mode == RateMode.G1PP:
        model = SystemModel(
            log_f0=np.log(prices),
            deliveries=deliveries,
            params=params,
            rates=rates,
            correlation=CorrelationStructure.from_params(rates.params),
            leverage=leverage,
        )
        simulator = PathSimulator(model, config.mc_paths, config.seed, config.antithetic)

    diagnostics = CalibrationDiagnostics()
    all_starts = sorted({t for surf in leverage for t in surf.times})
    logger.info(
        f"Calibrating leverage for {len(leverage)} contracts over {len(all_starts)} slice starts "
        f"({rate_mode.value} rates)"
    )
    for start in all_starts:
        snapshot = None
        if simulator is not None and start > 0.0:
            simulator.advance_to(start, config.steps_per_slice)
            snapshot = simulator.snapshot()
        for surf in leverage:
            if surf.complete or abs(surf.times[surf.n_committed] - start) > 1e-12:
                continue
            i = surf.n_committed
            j = surf.delivery_index
            t_eval = surf.eval_times[i]
            tiv = surfaces[j]
            rate_se = 0.0
            if snapshot is None:
                lsq, clamped, arbitrage = _det_square(tiv, params, surf.y_grid, t_eval, config)
            else:
                offset = float(rates.curve.instantaneous_forward(start))
                excess, se = rate_correction_mc(snapshot, j, surf.y_grid, prices[j], rate_offset=offset,
                                                out_of_the_money=True)
                discount = float(rates.discount(t_eval))
                forward = float(rates.curve.instantaneous_forward(t_eval))
                w = tiv.accumulate(surf.y_grid, t_eval)[0]
                rate_corr = forward * black_call(prices[j], discount, surf.y_grid, w) + excess
                lsq, clamped, arbitrage = _sto_square(tiv, params, rate_corr, surf.y_grid, t_eval,
                                                      prices[j], discount, forward, config)
                rate_se = float(np.max(se))

            surf.commit_slice(np.sqrt(lsq))
            diag = SliceDiagnostics(j=j, slice=i, t_start=start, t_eval=t_eval, nodes=lsq.size,
                                    clamped=int(clamped.sum()), arbitrage=int(arbitrage.sum()),
                                    rate_se_max=rate_se)
            diagnostics.slices.append(diag)
            if diag.arbitrage:
                logger.warning(f"Contract {j} slice {i}: {diag.arbitrage} nodes with non-positive Dupire bracket")
            if diag.clamped:
                logger.warning(f"Contract {j} slice {i}: {diag.clamped}/{diag.nodes} leverage nodes clamped")
            if diag.clamped > config.max_clamp_fraction * diag.nodes:
                raise CalibrationError(
                    f"contract {j} slice {i} at t={start:.4f}: {diag.clamped}/{diag.nodes} nodes clamped"
                )
            logger.debug(f"Contract {j} slice {i} t_eval={t_eval:.5f} L in [{np.sqrt(lsq.min()):.4f}, {np.sqrt(lsq.max()):.4f}]")

    logger.info(
        f"Leverage calibrated: {diagnostics.total_nodes} nodes, {diagnostics.total_clamped} clamped, "
        f"{diagnostics.total_arbitrage} arbitrage warnings"
    )
    return leverage, diagnostics
