"""
Shared fixtures: synthetic WTI-style markets and a repricing helper
"""
import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from commodity_lv.engine import price_vanillas, simulate
from commodity_lv.models import SimConfig
from commodity_lv.pricing import black_call
from commodity_lv.synthetic import PRESETS, simulate_returns, synthetic_market, write_market
from commodity_lv.tiv import terminal_tiv


@pytest.fixture
def wti_params():
    return PRESETS["WTI"].params


@pytest.fixture
def ng_params():
    return PRESETS["NG"].params


@pytest.fixture
def flat_market():
    return synthetic_market("WTI", n_deliveries=12, smile=False)


@pytest.fixture
def smile_market():
    return synthetic_market("WTI", n_deliveries=12, smile=True)


@pytest.fixture
def market_dir(tmp_path):
    """Small flat WTI market with a returns history written to tmp_path/data"""
    bundle = synthetic_market("WTI", n_deliveries=4, smile=False)
    returns = simulate_returns(PRESETS["WTI"].params, n_days=600)
    write_market(bundle, tmp_path / "data", returns)
    return tmp_path / "data"


@pytest.fixture
def reprice():
    """
    Simulate and compare MC call prices with the market smile

    Returns a function giving the signed z-score (MC - market) / SE per cell,
    shaped (delivery, moneyness).
    """
    def _reprice(bundle, params, leverage, rates, n_paths=5000, seed=11, moneyness=None):
        moneyness = np.linspace(0.6, 1.4, 9) if moneyness is None else np.asarray(moneyness)
        ys = np.log(moneyness)
        deliveries = bundle.curve.deliveries
        requests = [(j, float(T), float(y)) for j, T in enumerate(deliveries) for y in ys]
        config = SimConfig(n_paths=n_paths, seed=seed, record_times=sorted(set(deliveries.tolist())))
        block = simulate(bundle.curve, params, rates, config, leverage)
        z = []
        for q in price_vanillas(block, requests):
            f0 = float(bundle.curve.prices[q.j])
            p0t = float(rates.discount(q.expiry))
            w = terminal_tiv(bundle.slice_for(q.j))(q.y)[0][0]
            market = float(black_call(f0, p0t, q.y, w))
            z.append((q.price - market) / max(q.se, 1e-8 * f0 * p0t))
        return np.array(z).reshape(deliveries.size, ys.size)

    return _reprice
