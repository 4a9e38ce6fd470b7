"""
End-to-end acceptance checks

Calibrate on synthetic markets, simulate with fresh seeds and compare with
the market smiles at 10000 antithetic paths. Every check runs on a fixed
seed, so each outcome is deterministic.
"""
import numpy as np
import pytest

from commodity_lv.andersen import atm_vol
from commodity_lv.engine import price_vanillas, realized_variance, simulate
from commodity_lv.leverage import calibrate_all
from commodity_lv.market_data import DiscountCurve
from commodity_lv.models import AccumulatorKind, CalibrationConfig, G1ppParams, RateMode, SimConfig
from commodity_lv.pricing import black_call
from commodity_lv.rates import G1ppModel
from commodity_lv.synthetic import PRESETS, synthetic_market
from commodity_lv.tiv import build_tiv_surfaces

N_PATHS = 10000
SE_MULTIPLE = 2.0
PASS_RATE = 0.95
ACCUMULATORS = (AccumulatorKind.LINEAR, AccumulatorKind.QUADRATIC, AccumulatorKind.TTM_IV)
SMILE_SEEDS = {AccumulatorKind.LINEAR: 303, AccumulatorKind.QUADRATIC: 313, AccumulatorKind.TTM_IV: 323}


def deterministic_rates(bundle):
    return G1ppModel.deterministic(bundle.discount)


@pytest.fixture(scope="module")
def leverage_by_kind():
    """Smile market calibrated once per accumulator with deterministic rates"""
    bundle = synthetic_market("WTI", n_deliveries=12, smile=True)
    params = PRESETS["WTI"].params
    config = CalibrationConfig(slices_per_year=48)
    out = {}
    for kind in ACCUMULATORS:
        surfaces = build_tiv_surfaces(bundle.slices, kind)
        out[kind] = calibrate_all(bundle, params, surfaces, config)
    return out


@pytest.mark.parametrize("preset", ["WTI", "NG"])
def test_atm_recovery_without_leverage(preset):
    params = PRESETS[preset].params
    bundle = synthetic_market(preset, n_deliveries=12, smile=False)
    rates = deterministic_rates(bundle)
    deliveries = bundle.curve.deliveries
    block = simulate(bundle.curve, params, rates,
                     SimConfig(n_paths=N_PATHS, seed=101, record_times=deliveries.tolist()))
    for q in price_vanillas(block, [(j, float(T), 0.0) for j, T in enumerate(deliveries)]):
        T = q.expiry
        f0 = float(bundle.curve.prices[q.j])
        expected = float(black_call(f0, rates.discount(T), 0.0, float(atm_vol(params, T)) ** 2 * T))
        assert abs(q.price - expected) <= SE_MULTIPLE * q.se, f"{preset} j={q.j}"


@pytest.mark.parametrize("kind", ACCUMULATORS)
def test_smile_repricing(kind, smile_market, wti_params, leverage_by_kind, reprice):
    leverage, diagnostics = leverage_by_kind[kind]
    assert diagnostics.total_clamped == 0
    z = reprice(smile_market, wti_params, leverage, deterministic_rates(smile_market),
                n_paths=N_PATHS, seed=SMILE_SEEDS[kind])
    assert z.shape == (12, 9)
    assert np.mean(np.abs(z) <= SE_MULTIPLE) >= PASS_RATE, f"{kind.value}: worst |z| {np.abs(z).max():.2f}"


def test_smile_repricing_with_stochastic_rates(smile_market, wti_params, reprice):
    rates = G1ppModel(G1ppParams(a=0.02, sigma=0.01, rho_1r=-0.2, rho_2r=-0.2), smile_market.discount)
    surfaces = build_tiv_surfaces(smile_market.slices, AccumulatorKind.LINEAR)
    config = CalibrationConfig(slices_per_year=48, mc_paths=1000)
    leverage, _ = calibrate_all(smile_market, wti_params, surfaces, config, RateMode.G1PP, rates)
    z = reprice(smile_market, wti_params, leverage, rates, n_paths=N_PATHS, seed=404)
    assert z.shape == (12, 9)
    assert np.mean(np.abs(z) <= SE_MULTIPLE) >= PASS_RATE, f"worst |z| {np.abs(z).max():.2f}"


def test_realized_variance_at_delivery_agrees(smile_market, wti_params, leverage_by_kind):
    """Every accumulator reprices the terminal smile, so E[RV] at delivery agrees"""
    rates = deterministic_rates(smile_market)
    deliveries = smile_market.curve.deliveries
    record = sorted(set(deliveries.tolist()) | {float(T) / 2.0 for T in deliveries})
    stats = {}
    for kind, (leverage, _) in leverage_by_kind.items():
        block = simulate(smile_market.curve, wti_params, rates,
                         SimConfig(n_paths=N_PATHS, seed=505, record_times=record), leverage)
        stats[kind] = {
            (j, half): realized_variance(block, j, float(deliveries[j]) / (2.0 if half else 1.0))[1:]
            for j in (2, 5, 11) for half in (False, True)
        }
    base = stats[AccumulatorKind.LINEAR]
    for kind in (AccumulatorKind.QUADRATIC, AccumulatorKind.TTM_IV):
        for j in (2, 5, 11):
            m1, s1 = base[(j, False)]
            m2, s2 = stats[kind][(j, False)]
            assert abs(m1 - m2) <= SE_MULTIPLE * np.hypot(s1, s2), f"{kind.value} j={j}: {m1} vs {m2}"
    for j in (2, 5, 11):
        m1, s1 = base[(j, True)]
        m2, s2 = stats[AccumulatorKind.QUADRATIC][(j, True)]
        assert m1 - m2 > SE_MULTIPLE * np.hypot(s1, s2), f"j={j}: linear {m1} vs quadratic {m2}"


def test_restricted_record_times_match_full_grid(smile_market, wti_params, leverage_by_kind):
    leverage, _ = leverage_by_kind[AccumulatorKind.LINEAR]
    rates = deterministic_rates(smile_market)
    T = float(smile_market.curve.deliveries[5])
    full = simulate(smile_market.curve, wti_params, rates, SimConfig(n_paths=300, seed=9), leverage)
    restricted = simulate(smile_market.curve, wti_params, rates,
                          SimConfig(n_paths=300, seed=9, record_times=[T]), leverage)
    assert restricted.times.tolist() == [T]
    assert np.array_equal(realized_variance(full, 5, T)[0], realized_variance(restricted, 5, T)[0])
    assert np.array_equal(full.futures[full.time_index(T)], restricted.futures[0])


def test_discount_level_does_not_move_smile_repricing(wti_params, reprice):
    """Deterministic rates discount MC and market prices alike"""
    bundle = synthetic_market("WTI", n_deliveries=3, smile=True, rate=0.08)
    surfaces = build_tiv_surfaces(bundle.slices, AccumulatorKind.LINEAR)
    leverage, _ = calibrate_all(bundle, wti_params, surfaces, CalibrationConfig(slices_per_year=48))
    rates = G1ppModel.deterministic(DiscountCurve.flat(0.08))
    z = reprice(bundle, wti_params, leverage, rates, n_paths=3000, seed=606)
    assert np.mean(np.abs(z) <= 3.0) >= 0.9
