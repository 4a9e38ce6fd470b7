"""
Total implied variance surface tests
"""
import numpy as np
import pytest

from commodity_lv.exceptions import TivError
from commodity_lv.models import AccumulatorKind, VolSlice
from commodity_lv.tiv import (
    EPS_W,
    MAX_WING_SLOPE,
    WeightedAccumulator,
    build_tiv_surfaces,
    dump_tiv,
    terminal_tiv,
)

ALL_KINDS = [AccumulatorKind.LINEAR, AccumulatorKind.QUADRATIC, AccumulatorKind.TTM_IV,
             AccumulatorKind.EXP_WEIGHTED, AccumulatorKind.MIXTURE]


def flat_slice(j, expiry, vol, ys=(-0.2, 0.0, 0.2)):
    return VolSlice(label=f"C{j}", delivery_index=j, expiry=expiry,
                    log_moneyness=list(ys), implied_vol=[vol] * len(ys))


def test_flat_slice_is_constant():
    terminal = terminal_tiv(flat_slice(0, 1.0, 0.2))
    y = np.linspace(-3.0, 3.0, 41)
    w, wy, wyy = terminal(y)
    assert np.allclose(w, 0.04, rtol=0, atol=1e-15)
    assert np.all(np.abs(wy) < 1e-15)
    assert np.all(np.abs(wyy) < 1e-15)


def test_three_quote_slice_hits_nodes():
    vol_slice = VolSlice(label="C0", delivery_index=0, expiry=1.0,
                         log_moneyness=[-0.1, 0.0, 0.1], implied_vol=[0.25, 0.20, 0.22])
    w, _, _ = terminal_tiv(vol_slice)([-0.1, 0.0, 0.1])
    assert np.allclose(w, [0.0625, 0.04, 0.0484], rtol=0, atol=1e-15)


def test_too_few_quotes():
    with pytest.raises(ValueError):
        VolSlice(label="C0", delivery_index=0, expiry=1.0, log_moneyness=[0.0, 0.1], implied_vol=[0.2, 0.2])


def test_wing_slopes_are_clipped():
    vol_slice = VolSlice(label="C0", delivery_index=0, expiry=1.0,
                         log_moneyness=[-0.1, 0.0, 0.1], implied_vol=[0.2, 1.0, 3.0])
    terminal = terminal_tiv(vol_slice)
    assert 0.0 <= terminal.right_slope <= MAX_WING_SLOPE
    assert -MAX_WING_SLOPE <= terminal.left_slope <= 0.0
    w, wy, wyy = terminal([5.0, -5.0])
    assert wy[0] == terminal.right_slope
    assert np.all(wyy == 0.0)
    assert np.all(w >= EPS_W)


def test_linear_and_quadratic_examples():
    slices = {0: flat_slice(0, 1.0, 0.2)}
    linear = build_tiv_surfaces(slices, AccumulatorKind.LINEAR)[0]
    w, wt, _, _ = linear.accumulate(0.0, 0.5)
    assert abs(w[0] - 0.02) < 1e-15 and abs(wt[0] - 0.04) < 1e-15

    quadratic = build_tiv_surfaces(slices, AccumulatorKind.QUADRATIC)[0]
    w, wt, _, _ = quadratic.accumulate(0.0, 0.5)
    assert abs(w[0] - 0.01) < 1e-15 and abs(wt[0] - 0.04) < 1e-15


def test_ttm_iv_example():
    slices = {0: flat_slice(0, 1.0, 0.2), 1: flat_slice(1, 2.0, np.sqrt(0.05))}
    surface = build_tiv_surfaces(slices, AccumulatorKind.TTM_IV)[1]
    for t, expected in ((1.0, 0.06), (1.5, 0.08), (2.0, 0.10)):
        w = surface.accumulate(0.0, t)[0][0]
        assert abs(w - expected) < 1e-12, f"t={t}: {w}"
    w, wt, _, _ = surface.accumulate(0.0, 1.5)
    assert abs(wt[0] - 0.04) < 1e-12
    w, wt, _, _ = surface.accumulate(0.0, 0.5)
    assert abs(w[0] - 0.03) < 1e-12 and abs(wt[0] - 0.06) < 1e-12
    assert np.allclose(surface.accumulator.kinks(), [1.0])


def test_ttm_iv_repairs_decreasing_variance():
    slices = {0: flat_slice(0, 1.0, 0.3), 1: flat_slice(1, 2.0, 0.2)}
    surface = build_tiv_surfaces(slices, AccumulatorKind.TTM_IV)[1]
    ys = np.array([-0.1, 0.0, 0.1])
    assert np.allclose(surface.accumulate(ys, 2.0)[0], 0.08, rtol=0, atol=1e-14)
    assert np.allclose(surface.accumulate(ys, 1.0)[0], EPS_W, rtol=0, atol=1e-14)
    ts = np.linspace(0.01, 2.0, 200)
    ws = np.array([surface.accumulate(0.0, t)[0][0] for t in ts])
    assert np.all(np.diff(ws) >= -1e-14)


def test_ttm_iv_unrepairable():
    slices = {0: flat_slice(0, 1.0, 1e-5), 1: flat_slice(1, 2.0, 5e-6)}
    surface = build_tiv_surfaces(slices, AccumulatorKind.TTM_IV)[1]
    with pytest.raises(TivError):
        surface.accumulate(0.0, 1.5)


def test_accumulate_domain():
    surface = build_tiv_surfaces({0: flat_slice(0, 1.0, 0.2)}, AccumulatorKind.LINEAR)[0]
    with pytest.raises(TivError):
        surface.accumulate(0.0, 0.0)
    with pytest.raises(TivError):
        surface.accumulate(0.0, 1.5)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_terminal_consistency(smile_market, kind):
    surfaces = build_tiv_surfaces(smile_market.slices, kind)
    for s in surfaces:
        vol_slice = smile_market.slice_for(s.delivery_index)
        w = s.accumulate(vol_slice.log_moneyness, s.delivery)[0]
        assert np.max(np.abs(w - vol_slice.total_variance)) < 1e-12, f"contract {s.delivery_index}"


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_monotone_in_time(smile_market, kind):
    surfaces = build_tiv_surfaces(smile_market.slices, kind)
    ys = np.linspace(-0.8, 0.6, 15)
    for s in (surfaces[0], surfaces[5], surfaces[11]):
        ts = np.linspace(s.delivery / 100.0, s.delivery, 100)
        ws = np.array([s.accumulate(ys, t)[0] for t in ts])
        assert np.all(np.diff(ws, axis=0) >= -1e-14), f"contract {s.delivery_index}"


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_derivatives_match_finite_differences(smile_market, kind):
    surfaces = build_tiv_surfaces(smile_market.slices, kind)
    s = surfaces[11]
    ys = np.array([-0.3, -0.16, 0.05, 0.14, 0.3])  # off the spline knots
    h = 1e-5
    for t in ((3 + 0.5) / 12.0, (7 + 0.5) / 12.0):  # off the ttm-iv kinks
        w, wt, wy, wyy = s.accumulate(ys, t)
        fd_t = (s.accumulate(ys, t + h)[0] - s.accumulate(ys, t - h)[0]) / (2 * h)
        fd_y = (s.accumulate(ys + h, t)[0] - s.accumulate(ys - h, t)[0]) / (2 * h)
        fd_yy = (s.accumulate(ys + h, t)[2] - s.accumulate(ys - h, t)[2]) / (2 * h)
        assert np.max(np.abs(fd_t - wt)) < 1e-6
        assert np.max(np.abs(fd_y - wy)) < 1e-6
        assert np.max(np.abs(fd_yy - wyy)) < 1e-6


def test_exponential_weighting():
    acc = WeightedAccumulator.exponential()
    f, df = acc.time_factor(1.0)
    assert abs(f - 1.0) < 1e-15
    assert abs(df - np.e / (np.e - 1.0)) < 1e-14
    with pytest.raises(TivError):
        WeightedAccumulator(lambda x: x * 0.5, lambda x: 0.5)


def test_mixture_weights():
    slices = {0: flat_slice(0, 1.0, 0.2)}
    mixed = build_tiv_surfaces(slices, AccumulatorKind.MIXTURE,
                               {AccumulatorKind.LINEAR: 0.25, AccumulatorKind.QUADRATIC: 0.75})[0]
    w = mixed.accumulate(0.0, 0.5)[0][0]
    assert abs(w - (0.25 * 0.02 + 0.75 * 0.01)) < 1e-15
    with pytest.raises(TivError):
        build_tiv_surfaces(slices, AccumulatorKind.MIXTURE, {AccumulatorKind.LINEAR: 0.7})


def test_nudge_off_kinks():
    slices = {0: flat_slice(0, 1.0, 0.2), 1: flat_slice(1, 2.0, 0.25)}
    surface = build_tiv_surfaces(slices, AccumulatorKind.TTM_IV)[1]
    assert surface.nudge_off_kinks(1.0) > 1.0
    assert surface.nudge_off_kinks(0.7) == 0.7


def test_dump_tiv(smile_market):
    surfaces = build_tiv_surfaces(smile_market.slices, AccumulatorKind.LINEAR)[:2]
    frame = dump_tiv(surfaces, np.linspace(-0.5, 0.5, 5), [1.0 / 24.0, 1.0 / 12.0, 0.125])
    assert list(frame.columns) == ["j", "y", "t", "w", "dwdt", "dwdy", "d2wdy2"]
    # contract 0 delivers at 1/12, so t = 0.125 is skipped for it
    assert len(frame) == 5 * 2 + 5 * 3
