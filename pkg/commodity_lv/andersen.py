"""
Two-factor commodity curve backbone

    dF_j = F_j [sigma_1(t, T_j) dW_1 + sigma_2(t, T_j) dW_2],  W_1, W_2 independent
    sigma_1(t, T) = e^{b(T) - kappa (T - t)} h_1 + e^{a(T)} h_inf
    sigma_2(t, T) = e^{b(T) - kappa (T - t)} h_2

with the seasonality a(T) = b(T) throughout. Calibration runs in two stages:
a bounded least-squares fit of (kappa, h_1, h_2, h_inf) to the ATM term
structure with a = 0 under the long-end correlation constraint, then a closed
form for a(T_j) that reprices every ATM quote exactly.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.optimize import least_squares
from scipy.stats import norm

from commodity_lv.exceptions import CalibrationError
from commodity_lv.models import (
    AndersenParams,
    CorrelationEstimate,
    DerivedParams,
    MonthlyCorrelation,
    ReturnSeries,
)

MIN_ATM_QUOTES = 4
MIN_BUCKET_OBS = 24


def _relaxation(x):
    """(1 - e^{-x}) / x with its limit 1 at x = 0"""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-safe) / safe)


def sigma1(params: AndersenParams, t, T):
    """Loading of the first factor, sigma_1(t, T)"""
    T = np.asarray(T, dtype=float)
    a = params.seasonality(T)
    return np.exp(a - params.kappa * (T - np.asarray(t, dtype=float))) * params.h1 + np.exp(a) * params.h_inf


def sigma2(params: AndersenParams, t, T):
    """Loading of the second factor, sigma_2(t, T)"""
    T = np.asarray(T, dtype=float)
    a = params.seasonality(T)
    return np.exp(a - params.kappa * (T - np.asarray(t, dtype=float))) * params.h2


def total_variance_rate(params: AndersenParams, t, T):
    """sigma_1^2 + sigma_2^2"""
    return sigma1(params, t, T) ** 2 + sigma2(params, t, T) ** 2


def integrated_variance(params: AndersenParams, t0, t1, T):
    """
    Closed-form integral of sigma_1^2 + sigma_2^2 over [t0, t1] for delivery T
    """
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    T = np.asarray(T, dtype=float)
    k = params.kappa
    dt = t1 - t0
    # int e^{-2k(T-s)} ds and int e^{-k(T-s)} ds over [t0, t1]
    decay2 = np.exp(-2.0 * k * (T - t1)) * dt * _relaxation(2.0 * k * dt)
    decay1 = np.exp(-k * (T - t1)) * dt * _relaxation(k * dt)
    e2a = np.exp(2.0 * params.seasonality(T))
    return e2a * (
        (params.h1 ** 2 + params.h2 ** 2) * decay2
        + 2.0 * params.h_inf * params.h1 * decay1
        + params.h_inf ** 2 * dt
    )


def _atm_variance(params: AndersenParams, T):
    T = np.asarray(T, dtype=float)
    return integrated_variance(params, 0.0, T, T) / T


def atm_vol(params: AndersenParams, T):
    """
    At-the-money implied volatility of the delivery-T option expiring at T

    Args:
        params: Backbone parameters
        T: Expiry (= delivery) in years, T > 0

    Returns:
        Sigma_ATM(T)

    Raises:
        CalibrationError: negative radicand (invalid parameter region)
    """
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0.0):
        raise CalibrationError("ATM vol needs T > 0")
    radicand = _atm_variance(params, T)
    if np.any(radicand < 0.0):
        raise CalibrationError("invalid parameter region: negative ATM variance")
    return np.sqrt(radicand)


def derived_params(params: AndersenParams) -> DerivedParams:
    """(sigma_0, sigma_inf, rho_inf) of a parameter set"""
    sigma_0 = float(np.hypot(params.h1 + params.h_inf, params.h2))
    rho = (params.h1 + params.h_inf) / sigma_0
    return DerivedParams(sigma_0=sigma_0, sigma_inf=params.h_inf, rho_inf=float(np.clip(rho, -1.0, 1.0)))


def params_from_derived(kappa: float, sigma_0: float, sigma_inf: float, rho_inf: float, **kwargs) -> AndersenParams:
    """Inverse of derived_params with h_2 >= 0"""
    return AndersenParams(
        kappa=kappa,
        h1=rho_inf * sigma_0 - sigma_inf,
        h2=np.sqrt(max(1.0 - rho_inf ** 2, 0.0)) * sigma_0,
        h_inf=sigma_inf,
        **kwargs,
    )


def model_correlation(params: AndersenParams, t: float, T1, T2):
    """Instantaneous correlation of dX(t, T1) and dX(t, T2), X = log F"""
    s11, s21 = sigma1(params, t, T1), sigma2(params, t, T1)
    s12, s22 = sigma1(params, t, T2), sigma2(params, t, T2)
    return (s11 * s12 + s21 * s22) / (np.hypot(s11, s21) * np.hypot(s12, s22))


def _fisher_p_value(rho: float, n: int) -> float:
    if n <= 3:
        return 1.0
    z = np.arctanh(np.clip(rho, -1.0 + 1e-15, 1.0 - 1e-15)) * np.sqrt(n - 3)
    return float(2.0 * norm.sf(abs(z)))


def estimate_rho_inf(series: ReturnSeries) -> CorrelationEstimate:
    """
    Estimate the long-end correlation from short/long tenor returns

    Pearson correlation per calendar month plus a pooled estimate over all
    observations; two-sided p-values from the Fisher z-transform. Buckets
    with fewer than 24 observations are flagged low-sample.
    """
    short = np.asarray(series.short)
    long = np.asarray(series.long)
    if short.size < 3 or np.std(short) == 0.0 or np.std(long) == 0.0:
        raise CalibrationError("degenerate returns")

    months = pd.DatetimeIndex(pd.to_datetime(series.dates)).month.to_numpy()
    buckets: List[MonthlyCorrelation] = []
    for month in range(1, 13):
        mask = months == month
        n = int(mask.sum())
        if n < 3:
            continue
        xs, ys = short[mask], long[mask]
        if np.std(xs) == 0.0 or np.std(ys) == 0.0:
            logger.warning(f"Month {month}: constant returns, bucket skipped")
            continue
        rho = float(np.clip(np.corrcoef(xs, ys)[0, 1], -1.0, 1.0))
        low = n < MIN_BUCKET_OBS
        if low:
            logger.warning(f"Month {month}: only {n} observations, p-value unreliable")
        buckets.append(MonthlyCorrelation(month=month, n_obs=n, rho=rho,
                                          p_value=_fisher_p_value(rho, n), low_sample=low))

    pooled = float(np.clip(np.corrcoef(short, long)[0, 1], -1.0, 1.0))
    logger.info(f"Pooled long-end correlation {pooled:.4f} over {short.size} observations")
    return CorrelationEstimate(buckets=buckets, rho_inf=pooled,
                               p_value=_fisher_p_value(pooled, short.size), n_obs=int(short.size))


def fit_seasonality(params: AndersenParams, atm_quotes: Sequence[Tuple[float, float]]) -> AndersenParams:
    """
    Stage 2: seasonality pillars a(T_j) = log(Sigma_ATM(T_j) / g(T_j))

    With a = b the ATM identity factorizes as Sigma_ATM(T) = e^{a(T)} g(T),
    where g is the ATM vol without seasonality, so the pillars are exact.
    """
    times = np.array([q[0] for q in atm_quotes], dtype=float)
    vols = np.array([q[1] for q in atm_quotes], dtype=float)
    order = np.argsort(times)
    times, vols = times[order], vols[order]
    g_sq = _atm_variance(params.without_seasonality(), times)
    if np.any(g_sq <= 0.0):
        raise CalibrationError("seasonality fit failed: g(T)^2 <= 0")
    a = np.log(vols / np.sqrt(g_sq))
    return params.model_copy(update={
        "seasonality_times": times.tolist(),
        "seasonality_values": a.tolist(),
    })


def calibrate_backbone(
    atm_quotes: Sequence[Tuple[float, float]],
    rho_inf: float,
    initial: Optional[AndersenParams] = None,
) -> AndersenParams:
    """
    Calibrate the backbone to an ATM term structure

    Args:
        atm_quotes: (T_j, Sigma_ATM) pairs
        rho_inf: Long-end correlation, (h_1 + h_inf) / sigma_0 is held at this value
        initial: Optional starting point for Stage 1

    Returns:
        AndersenParams repricing every quote exactly

    Raises:
        CalibrationError: fewer than 4 quotes, optimizer failure, g(T)^2 <= 0
    """
    if len(atm_quotes) < MIN_ATM_QUOTES:
        raise CalibrationError(f"insufficient quotes: {len(atm_quotes)} < {MIN_ATM_QUOTES}")
    if not -1.0 < rho_inf < 1.0:
        raise CalibrationError("rho_inf must lie in (-1, 1)")

    times = np.array([q[0] for q in atm_quotes], dtype=float)
    vols = np.array([q[1] for q in atm_quotes], dtype=float)
    if np.any(times <= 0.0) or np.any(vols <= 0.0):
        raise CalibrationError("ATM quotes need positive times and vols")

    # Stage 1 unknowns (kappa, sigma_0, h_inf); h_1, h_2 follow from the rho_inf constraint
    if initial is not None:
        d = derived_params(initial)
        x0 = np.array([initial.kappa, d.sigma_0, d.sigma_inf])
    else:
        order = np.argsort(times)
        tail = vols[order][-max(1, len(vols) // 3):]
        x0 = np.array([1.0, vols[order][0], float(np.mean(tail))])
    lower = np.array([0.0, 1e-8, -5.0])
    upper = np.array([50.0, 5.0, 5.0])
    x0 = np.clip(x0, lower + 1e-12, upper - 1e-12)

    def residuals(x: np.ndarray) -> np.ndarray:
        p = params_from_derived(x[0], x[1], x[2], rho_inf)
        return np.sqrt(np.maximum(_atm_variance(p, times), 0.0)) - vols

    result = least_squares(residuals, x0, bounds=(lower, upper), method="trf",
                           ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=5000)
    if result.status <= 0:
        raise CalibrationError(f"backbone fit did not converge: {result.message}")
    kappa, sigma_0, h_inf = result.x
    stage1 = params_from_derived(kappa, sigma_0, h_inf, rho_inf)
    rmse = float(np.sqrt(np.mean(result.fun ** 2)))
    logger.info(
        f"Backbone stage 1: kappa={stage1.kappa:.4f} h1={stage1.h1:.4f} h2={stage1.h2:.4f} "
        f"h_inf={stage1.h_inf:.4f} (rmse {rmse:.2e})"
    )
    fitted = fit_seasonality(stage1, atm_quotes)
    logger.info(f"Backbone stage 2: {len(fitted.seasonality_times)} seasonality pillars")
    return fitted


def calibration_report(params: AndersenParams, atm_quotes: Sequence[Tuple[float, float]]) -> pd.DataFrame:
    """Per-pillar market vs model ATM vol with a(T_j) and g(T_j)"""
    times = np.array([q[0] for q in atm_quotes], dtype=float)
    market = np.array([q[1] for q in atm_quotes], dtype=float)
    model = atm_vol(params, times)
    return pd.DataFrame({
        "T": times,
        "market_atm": market,
        "model_atm": model,
        "abs_error": np.abs(model - market),
        "a_T": params.seasonality(times),
        "g_T": atm_vol(params.without_seasonality(), times),
    })
