"""
Monte Carlo engine for the joint system of futures and short rate

    dF_j = F_j L_j(F_j, t) [sigma_1(t, T_j) dW_1 + sigma_2(t, T_j) dW_2]
    r(t) = x(t) + phi(t),  d<W_1, W_r> = rho_1r dt,  d<W_2, W_r> = rho_2r dt

Futures are stepped in log space (log-Euler, backbone loadings at the step
midpoint, leverage at the step start). Normals come from a Philox stream keyed
by (seed, step) so a run is reproducible bit for bit; antithetic twins are
stored as rows p and p + n_base.
"""
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from commodity_lv.andersen import sigma1, sigma2
from commodity_lv.exceptions import PricingError, SimulationError
from commodity_lv.models import AndersenParams, FuturesCurve, G1ppParams, IntegralScheme, SimConfig
from commodity_lv.pricing import implied_vol
from commodity_lv.rates import G1ppModel, RateState

if TYPE_CHECKING:
    from commodity_lv.leverage import LeverageSurface

N_FACTORS = 4  # W_1, W_2, W_r driver, integral innovation
TIME_TOL = 1e-12


@dataclass(frozen=True)
class CorrelationStructure:
    """Correlations of the rate driver with the two curve factors (W_1 and W_2 are independent)"""
    rho_1r: float = 0.0
    rho_2r: float = 0.0

    def __post_init__(self):
        if self.rho_1r ** 2 + self.rho_2r ** 2 > 1.0 + 1e-14:
            raise SimulationError("correlation matrix is not positive semidefinite")

    @classmethod
    def from_params(cls, params: G1ppParams) -> "CorrelationStructure":
        return cls(params.rho_1r, params.rho_2r)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([
            [1.0, 0.0, self.rho_1r],
            [0.0, 1.0, self.rho_2r],
            [self.rho_1r, self.rho_2r, 1.0],
        ])

    @property
    def cholesky(self) -> np.ndarray:
        """Lower-triangular factor, closed form since W_1 and W_2 are independent"""
        resid = np.sqrt(max(1.0 - self.rho_1r ** 2 - self.rho_2r ** 2, 0.0))
        return np.array([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [self.rho_1r, self.rho_2r, resid],
        ])


def step_normals(seed: int, step: int, n_base: int, antithetic: bool) -> np.ndarray:
    """
    Standard normals of one time step, shape (n_paths, 4)

    Each (seed, step) pair owns its own Philox key, so the draws do not depend
    on how many steps were taken before.
    """
    key = ((int(seed) & (2 ** 64 - 1)) << 64) | int(step)
    rng = np.random.Generator(np.random.Philox(key=key))
    z = rng.standard_normal((n_base, N_FACTORS))
    return np.vstack([z, -z]) if antithetic else z


@dataclass
class SystemState:
    """Pathwise state at time t"""
    t: float
    log_f: np.ndarray          # (n_paths, n_deliveries)
    rate: RateState
    rv: np.ndarray             # running realized variance, (n_paths, n_deliveries)


@dataclass(frozen=True)
class SystemModel:
    """Everything step_system reads, shared read-only across steps"""
    log_f0: np.ndarray
    deliveries: np.ndarray
    params: AndersenParams
    rates: G1ppModel
    correlation: CorrelationStructure = CorrelationStructure()
    leverage: Optional[Sequence["LeverageSurface"]] = None
    scheme: IntegralScheme = IntegralScheme.EXACT

    def initial_state(self, n_paths: int) -> SystemState:
        n_del = self.log_f0.size
        return SystemState(
            t=0.0,
            log_f=np.tile(self.log_f0, (n_paths, 1)),
            rate=RateState.initial(n_paths),
            rv=np.zeros((n_paths, n_del)),
        )


def step_system(state: SystemState, model: SystemModel, dt: float, normals: np.ndarray) -> SystemState:
    """
    Advance futures and rate over [t, t + dt]

    Deliveries with T_j <= t are frozen.

    Args:
        state: State at t
        model: Backbone, leverage, rates and correlations
        dt: Step size, > 0
        normals: (n_paths, 4) i.i.d. standard normals

    Returns:
        State at t + dt
    """
    if dt <= 0.0:
        raise SimulationError(f"time step must be positive, got {dt}")
    t = state.t
    z1, z2, z3, z_int = normals[:, 0], normals[:, 1], normals[:, 2], normals[:, 3]
    sqdt = np.sqrt(dt)

    log_f = state.log_f.copy()
    rv = state.rv.copy()
    active = np.flatnonzero(model.deliveries > t + TIME_TOL)
    if active.size:
        mid = t + 0.5 * dt
        T = model.deliveries[active]
        s1 = sigma1(model.params, mid, T)
        s2 = sigma2(model.params, mid, T)
        for col, j in enumerate(active):
            if model.leverage is None:
                lev = 1.0
            else:
                lev = model.leverage[j].lookup(state.log_f[:, j] - model.log_f0[j], t)
            var = lev * lev * (s1[col] ** 2 + s2[col] ** 2)
            incr = -0.5 * var * dt + lev * sqdt * (s1[col] * z1 + s2[col] * z2)
            log_f[:, j] += incr
            rv[:, j] += incr * incr

    chol = model.correlation.cholesky
    z_rate = chol[2, 0] * z1 + chol[2, 1] * z2 + chol[2, 2] * z3
    rate = model.rates.step_rate(state.rate, dt, z_rate, z_int, model.scheme)
    return SystemState(t=t + dt, log_f=log_f, rate=rate, rv=rv)


@dataclass(frozen=True)
class PathSnapshot:
    """Cross-section of all paths at one time"""
    t: float
    futures: np.ndarray        # (n_paths, n_deliveries)
    discount: np.ndarray       # D(t) per path
    short_rate: np.ndarray     # r(t) per path
    n_base: int
    antithetic: bool

    def pair_average(self, samples: np.ndarray) -> np.ndarray:
        """Average antithetic twins along the first axis"""
        return pair_average(samples, self.n_base, self.antithetic)


def pair_average(samples: np.ndarray, n_base: int, antithetic: bool) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if not antithetic:
        return samples
    return 0.5 * (samples[:n_base] + samples[n_base:2 * n_base])


def mc_stats(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and standard error along the first axis of independent samples"""
    n = samples.shape[0]
    if n == 0:
        raise SimulationError("no paths")
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
    return mean, se


class PathSimulator:
    """Steps the system forward on demand; used by the bootstrap and by simulate()"""

    def __init__(self, model: SystemModel, n_base: int, seed: int, antithetic: bool = True):
        if n_base <= 0:
            raise SimulationError("no paths")
        self.model = model
        self.n_base = n_base
        self.seed = seed
        self.antithetic = antithetic
        self.n_paths = 2 * n_base if antithetic else n_base
        self.state = model.initial_state(self.n_paths)
        self.steps_taken = 0

    @property
    def t(self) -> float:
        return self.state.t

    def advance_to(self, target: float, n_steps: int = 1) -> None:
        """Advance to target in n_steps equal steps"""
        span = target - self.state.t
        if span < -TIME_TOL:
            raise SimulationError(f"cannot step backwards from {self.state.t} to {target}")
        if span <= TIME_TOL:
            return
        dt = span / n_steps
        for _ in range(n_steps):
            normals = step_normals(self.seed, self.steps_taken, self.n_base, self.antithetic)
            self.state = step_system(self.state, self.model, dt, normals)
            self.steps_taken += 1
        self.state.t = target

    def snapshot(self) -> PathSnapshot:
        s = self.state
        return PathSnapshot(
            t=s.t,
            futures=np.exp(s.log_f),
            discount=s.rate.discount,
            short_rate=self.model.rates.short_rate(s.rate.x, s.t),
            n_base=self.n_base,
            antithetic=self.antithetic,
        )


@dataclass
class PathBlock:
    """Simulated paths stored at the record times"""
    times: np.ndarray
    futures: np.ndarray        # (n_times, n_paths, n_deliveries)
    x: np.ndarray              # (n_times, n_paths)
    int_r: np.ndarray
    rv: np.ndarray             # (n_times, n_paths, n_deliveries)
    deliveries: np.ndarray
    initial_futures: np.ndarray
    rates: G1ppModel
    n_base: int
    antithetic: bool

    @property
    def n_paths(self) -> int:
        return self.futures.shape[1]

    @property
    def discount(self) -> np.ndarray:
        return np.exp(-self.int_r)

    @property
    def parity(self) -> np.ndarray:
        """0 for base paths, 1 for antithetic twins"""
        return (np.arange(self.n_paths) >= self.n_base).astype(int)

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            raise SimulationError(f"t = {t} is not a recorded time")
        return idx

    def snapshot(self, t: float) -> PathSnapshot:
        i = self.time_index(t)
        return PathSnapshot(
            t=float(self.times[i]),
            futures=self.futures[i],
            discount=np.exp(-self.int_r[i]),
            short_rate=self.rates.short_rate(self.x[i], self.times[i]),
            n_base=self.n_base,
            antithetic=self.antithetic,
        )

    def stats(self, samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """MC mean and SE with antithetic twins averaged first"""
        return mc_stats(pair_average(samples, self.n_base, self.antithetic))


def build_time_grid(horizon: float, steps_per_year: int, required: Iterable[float] = ()) -> np.ndarray:
    """Uniform grid on [0, horizon] merged with every required node inside it"""
    if horizon <= 0.0:
        raise SimulationError("simulation horizon must be positive")
    n = int(np.ceil(horizon * steps_per_year - 1e-9))
    nodes = [np.linspace(0.0, horizon, n + 1)]
    extra = np.asarray([t for t in required if 0.0 < t < horizon], dtype=float)
    nodes.append(extra)
    grid = np.sort(np.concatenate(nodes))
    keep = np.concatenate(([True], np.diff(grid) > 1e-10))
    return grid[keep]


def simulate(
    curve: FuturesCurve,
    params: AndersenParams,
    rates: G1ppModel,
    config: SimConfig,
    leverage: Optional[Sequence["LeverageSurface"]] = None,
    extra_times: Iterable[float] = (),
) -> PathBlock:
    """
    Simulate the calibrated system

    Args:
        curve: Futures curve (initial values and deliveries)
        params: Backbone parameters
        rates: Short rate model, sigma = 0 for deterministic rates
        config: Path count, seed, antithetics, grid density, record times
        leverage: One surface per delivery, None for the plain backbone
        extra_times: Further nodes the grid must contain, e.g. option expiries

    Returns:
        PathBlock at the record times (every grid node by default)
    """
    if config.n_paths <= 0:
        raise SimulationError("no paths")
    deliveries = curve.deliveries
    if leverage is not None and len(leverage) != len(curve):
        raise SimulationError("one leverage surface per delivery is required")
    extra = list(extra_times)
    record = sorted(config.record_times) if config.record_times else None
    horizon = config.horizon or float(max(deliveries.max(), max(extra, default=0.0), max(record or [0.0])))
    required = list(deliveries) + extra + (record or [])
    if leverage is not None:
        for surf in leverage:
            required.extend(surf.times)
    grid = build_time_grid(horizon, config.steps_per_year, required)
    record_times = grid if record is None else np.asarray(record, dtype=float)
    if np.any(record_times > horizon + TIME_TOL):
        raise SimulationError("record times beyond the simulation horizon")

    model = SystemModel(
        log_f0=np.log(curve.prices),
        deliveries=deliveries,
        params=params,
        rates=rates,
        correlation=CorrelationStructure.from_params(rates.params),
        leverage=leverage,
        scheme=config.integral_scheme,
    )
    sim = PathSimulator(model, config.n_paths, config.seed, config.antithetic)
    n_rec, n_paths, n_del = record_times.size, sim.n_paths, len(curve)
    futures = np.empty((n_rec, n_paths, n_del))
    xs = np.empty((n_rec, n_paths))
    int_r = np.empty((n_rec, n_paths))
    rv = np.empty((n_rec, n_paths, n_del))

    logger.info(f"Simulating {n_paths} paths over {grid.size - 1} steps to t={horizon:.4f}")
    r = 0
    for t in grid:
        sim.advance_to(float(t))
        while r < n_rec and abs(record_times[r] - t) <= 1e-10:
            futures[r] = np.exp(sim.state.log_f)
            xs[r] = sim.state.rate.x
            int_r[r] = sim.state.rate.int_r
            rv[r] = sim.state.rv
            r += 1
    if r != n_rec:
        raise SimulationError("some record times are not on the simulation grid")
    logger.debug(f"Simulation done: {sim.steps_taken} steps")
    return PathBlock(
        times=record_times, futures=futures, x=xs, int_r=int_r, rv=rv,
        deliveries=deliveries, initial_futures=curve.prices, rates=rates,
        n_base=config.n_paths, antithetic=config.antithetic,
    )


def realized_variance(block: PathBlock, j: int, t: float) -> Tuple[np.ndarray, float, float]:
    """
    Realized variance RV_j(t): pathwise sum of squared log-increments up to t

    Returns:
        (per-path RV, MC mean, standard error)
    """
    i = block.time_index(t)
    per_path = block.rv[i, :, j]
    mean, se = block.stats(per_path)
    return per_path, float(mean), float(se)


@dataclass
class VanillaQuote:
    """MC price of one call with its standard error and implied vols"""
    j: int
    expiry: float
    y: float
    strike: float
    price: float
    se: float
    vol: float = float("nan")
    vol_lo: float = float("nan")
    vol_hi: float = float("nan")


def _safe_vol(price: float, forward: float, discount: float, y: float, t: float) -> float:
    try:
        return implied_vol(price, forward, discount, y, t)
    except PricingError:
        return float("nan")


def price_vanillas(block: PathBlock, requests: Sequence[Tuple[int, float, float]]) -> List[VanillaQuote]:
    """
    Price calls D(t) (F_j(t) - K)^+ with K = F_j(0) e^y

    Args:
        block: Simulated paths recorded at every requested expiry
        requests: (j, expiry, y) triples, expiry <= T_j

    Returns:
        One VanillaQuote per request; vols are NaN where the price has no implied vol
    """
    quotes = []
    for j, expiry, y in requests:
        if expiry > block.deliveries[j] + TIME_TOL:
            raise SimulationError(f"expiry {expiry} is past delivery {block.deliveries[j]} of contract {j}")
        i = block.time_index(expiry)
        f0 = float(block.initial_futures[j])
        strike = f0 * np.exp(y)
        payoff = np.exp(-block.int_r[i]) * np.maximum(block.futures[i, :, j] - strike, 0.0)
        mean, se = block.stats(payoff)
        price, se = float(mean), float(se)
        q = VanillaQuote(j=j, expiry=expiry, y=y, strike=strike, price=price, se=se)
        if np.any(payoff > 0.0):
            p0t = float(block.rates.discount(expiry))
            q.vol = _safe_vol(price, f0, p0t, y, expiry)
            q.vol_lo = _safe_vol(price - 2.0 * se, f0, p0t, y, expiry)
            q.vol_hi = _safe_vol(price + 2.0 * se, f0, p0t, y, expiry)
        quotes.append(q)
    return quotes


def dump_paths(block: PathBlock, max_paths: Optional[int] = None) -> pd.DataFrame:
    """Long table path, parity, t, j, F, x, int_r, D"""
    n = block.n_paths if max_paths is None else min(max_paths, block.n_paths)
    idx = np.arange(n)
    n_times, n_del = block.times.size, block.deliveries.size
    t = np.repeat(block.times, n * n_del)
    path = np.tile(np.repeat(idx % block.n_base, n_del), n_times)
    parity = np.tile(np.repeat(block.parity[:n], n_del), n_times)
    j = np.tile(np.arange(n_del), n_times * n)
    x = np.repeat(block.x[:, :n], n_del, axis=1).ravel()
    int_r = np.repeat(block.int_r[:, :n], n_del, axis=1).ravel()
    return pd.DataFrame({
        "path": path, "parity": parity, "t": t, "j": j,
        "F": block.futures[:, :n, :].ravel(), "x": x, "int_r": int_r, "D": np.exp(-int_r),
    })
