"""
G1++ short rate tests
"""
import numpy as np
import pytest
from scipy.integrate import quad

from commodity_lv.exceptions import SimulationError
from commodity_lv.market_data import DiscountCurve
from commodity_lv.models import G1ppParams, IntegralScheme
from commodity_lv.rates import G1ppModel, RateState, fit_shift


def pillar_curve():
    times = np.array([0.5, 1.0, 2.0, 5.0])
    zeros = np.array([0.02, 0.025, 0.03, 0.035])
    return DiscountCurve(times, np.exp(-zeros * times))


def test_shift_example():
    model = G1ppModel(G1ppParams(a=0.02, sigma=0.01), DiscountCurve.flat(0.03))
    expected = 0.03 + 0.0001 / 0.0008 * (1.0 - np.exp(-0.02)) ** 2
    assert abs(model.phi(1.0) - expected) < 1e-15
    assert abs(fit_shift(model.params, model.curve)(1.0) - expected) < 1e-15


def test_zero_vol_shift_is_forward():
    curve = pillar_curve()
    model = G1ppModel.deterministic(curve)
    ts = np.linspace(0.0, 6.0, 25)
    assert np.array_equal(model.phi(ts), curve.instantaneous_forward(ts))


def test_integrated_shift_matches_quadrature():
    model = G1ppModel(G1ppParams(a=0.1, sigma=0.02), DiscountCurve.flat(0.03))
    for t1, t2 in ((0.0, 1.0), (0.5, 3.0), (2.0, 10.0)):
        numeric, _ = quad(lambda u: float(model.phi(u)), t1, t2, epsabs=0, epsrel=1e-13)
        assert abs(model.integrated_phi(t1, t2) - numeric) <= 1e-10 * numeric


def test_deterministic_discount_is_exact():
    curve = pillar_curve()
    model = G1ppModel.deterministic(curve)
    state = RateState.initial(4)
    zeros = np.zeros(4)
    t = 0.0
    for dt in (0.3, 0.2, 0.5, 1.0, 1.7, 0.8):
        state = model.step_rate(state, dt, zeros, zeros)
        t += dt
        assert np.allclose(state.discount, curve.discount(t), rtol=1e-13, atol=0)
        assert np.all(state.x == 0.0)


def test_ou_covariance_is_psd():
    for a in (1e-4, 0.02, 0.5, 5.0):
        for sigma in (0.0, 0.005, 0.02):
            model = G1ppModel(G1ppParams(a=a, sigma=sigma), DiscountCurve.flat(0.02))
            for dt in (1e-4, 0.02, 0.5, 10.0):
                cov = model.ou_covariance(dt)
                assert np.all(np.diag(cov) >= 0.0)
                eig = np.linalg.eigvalsh(cov)
                assert eig.min() >= -1e-15 * max(eig.max(), 1e-300), f"a={a} sigma={sigma} dt={dt}"


def test_ou_variance_limit():
    model = G1ppModel(G1ppParams(a=2.0, sigma=0.01), DiscountCurve.flat(0.02))
    assert abs(model.ou_covariance(50.0)[0, 0] - 0.01 ** 2 / 4.0) < 1e-18


def test_ou_covariance_composes_over_half_steps():
    model = G1ppModel(G1ppParams(a=0.3, sigma=0.015), DiscountCurve.flat(0.02))
    dt = 0.8
    h = 0.5 * dt
    a = model.params.a
    half = model.ou_covariance(h)
    d = np.exp(-a * h)
    b = (1.0 - d) / a
    vxx, vxi, vii = half[0, 0], half[0, 1], half[1, 1]
    composed = np.array([
        [d * d * vxx + vxx, d * vxi + d * b * vxx + vxi],
        [d * vxi + d * b * vxx + vxi, vii + b * b * vxx + 2.0 * b * vxi + vii],
    ])
    assert np.allclose(composed, model.ou_covariance(dt), rtol=1e-12, atol=0)


def test_non_positive_step():
    model = G1ppModel(G1ppParams(a=0.1, sigma=0.01), DiscountCurve.flat(0.02))
    with pytest.raises(SimulationError):
        model.ou_covariance(0.0)
    with pytest.raises(SimulationError):
        model.step_rate(RateState.initial(2), -0.1, np.zeros(2), np.zeros(2))


@pytest.mark.parametrize("scheme", [IntegralScheme.EXACT, IntegralScheme.TRAPEZOID])
def test_monte_carlo_discount_fit(scheme):
    curve = pillar_curve()
    model = G1ppModel(G1ppParams(a=0.05, sigma=0.015), curve)
    rng = np.random.default_rng(2024)
    n = 100_000
    state = RateState.initial(n)
    checkpoints = {0.5, 1.0, 2.0, 5.0}
    dt = 0.05 if scheme == IntegralScheme.TRAPEZOID else 0.25
    t = 0.0
    for _ in range(int(round(5.0 / dt))):
        state = model.step_rate(state, dt, rng.standard_normal(n), rng.standard_normal(n), scheme)
        t = round(t + dt, 10)
        if t in checkpoints:
            d = state.discount
            se = d.std(ddof=1) / np.sqrt(n)
            margin = 4.0 * se if scheme == IntegralScheme.EXACT else 4.0 * se + 1e-4
            assert abs(d.mean() - curve.discount(t)) < margin, f"t={t}"
            var_x = state.x.var(ddof=1)
            assert abs(var_x - model.x_variance(t)) < 4.0 * model.x_variance(t) * np.sqrt(2.0 / n)
