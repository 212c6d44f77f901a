import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccprisk.calibration import (
    PriceSeries,
    VolSeries,
    breach_probability,
    calibrate,
    contagion_factor,
    contagion_ratio,
    ewma_backward,
    ewma_forward,
    gaussian_reference_alpha,
    h_day_returns,
    loss_sample,
    pareto_fit,
    stress_quantile,
    wrong_way_factor,
)
from ccprisk.errors import DomainError, TailTooThinError

import oracles

finite_returns = arrays(np.float64, st.integers(1, 200), elements=st.floats(-0.2, 0.2, allow_subnormal=False))


def daily_dates(n, start=dt.date(2000, 1, 3)):
    return tuple(start + dt.timedelta(days=i) for i in range(n))


def prices_from_log_returns(r, level=100.0):
    lv = level * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
    return PriceSeries(daily_dates(len(lv)), lv)


def alternating(n, c):
    return np.where(np.arange(n) % 2 == 0, c, -c)


class TestReturns:
    def test_overlapping_length(self):
        p = prices_from_log_returns(np.full(50, 0.01))
        r = h_day_returns(p, 5)
        assert len(r.values) == len(p) - 5
        assert r.values == pytest.approx(np.full(len(p) - 5, 0.05))

    def test_non_overlapping_steps(self):
        p = prices_from_log_returns(np.full(50, 0.01))
        r = h_day_returns(p, 5, overlap=False)
        assert len(r.values) == 10
        assert r.dates[1] - r.dates[0] == dt.timedelta(days=5)

    def test_log_return_needs_positive_levels(self):
        p = PriceSeries(daily_dates(3), np.array([1.0, 0.0, 1.0]))
        with pytest.raises(DomainError):
            h_day_returns(p, 1)
        assert h_day_returns(p, 1, "absolute_change").values.tolist() == [-1.0, 1.0]

    def test_dates_must_increase(self):
        d = daily_dates(3)
        with pytest.raises(DomainError):
            PriceSeries((d[0], d[2], d[1]), np.ones(3))


class TestEwma:
    def test_fixed_point(self):
        v = ewma_backward(np.full(300, -0.03), 0.99, seed_var=0.03**2).values
        assert v == pytest.approx(np.full(300, 0.03), rel=1e-13)
        f = ewma_forward(np.full(300, 0.03), 0.97, seed_var=0.03**2).values
        assert f == pytest.approx(np.full(300, 0.03), rel=1e-13)

    def test_pure_decay(self):
        v = ewma_backward(np.zeros(50), 0.99, seed_var=4.0).values
        assert v**2 == pytest.approx(4.0 * 0.99 ** np.arange(1, 51), rel=1e-12)

    def test_no_memory(self):
        r = np.array([0.1, -0.3, 0.0, 0.2])
        assert ewma_backward(r, 0.0, seed_var=9.0).values == pytest.approx(np.abs(r))

    def test_single_observation(self):
        f = ewma_forward([0.02], 0.97, seed_var=1e-4).values
        assert f[0] ** 2 == pytest.approx(0.97 * 1e-4 + 0.03 * 0.02**2, rel=1e-14)

    def test_matches_loop(self):
        r = np.random.default_rng(4).standard_normal(500) * 0.01
        v = ewma_backward(r, 0.99, seed_var=2e-4).values
        assert v == pytest.approx(oracles.ewma_loop(r, 0.99, 2e-4), rel=1e-12)

    def test_default_seed_uses_first_twenty(self):
        r = np.r_[np.full(20, 0.02), np.full(30, 0.5)]
        assert ewma_backward(r, 0.99).values[0] == pytest.approx(0.02)
        assert ewma_forward(r, 0.97).values[-1] == pytest.approx(0.5)

    @settings(max_examples=60, deadline=None)
    @given(finite_returns, st.floats(0.0, 0.999), st.floats(1e-8, 0.1))
    def test_time_reversal_duality(self, r, decay, seed):
        f = ewma_forward(r, decay, seed).values
        b = ewma_backward(r[::-1], decay, seed).values[::-1]
        assert np.max(np.abs(f - b)) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, 400, elements=st.floats(1e-3, 0.2)), st.floats(0.5, 0.95))
    def test_bounded_by_squared_returns_after_warmup(self, r, decay):
        v2 = ewma_backward(r, decay, seed_var=1.0).values ** 2
        # seed weight decay**k has dropped below 1e-12 by index k
        k = int(math.ceil(math.log(1e-12) / math.log(decay)))
        tail = v2[k:]
        slack = 1e-12
        assert np.all(tail >= (r**2).min() - slack)
        assert np.all(tail <= (r**2).max() + slack)

    def test_causality(self):
        r = np.random.default_rng(2).standard_normal(100)
        r2 = r.copy()
        r2[60] *= 10
        b, b2 = ewma_backward(r, 0.9, 1.0).values, ewma_backward(r2, 0.9, 1.0).values
        f, f2 = ewma_forward(r, 0.9, 1.0).values, ewma_forward(r2, 0.9, 1.0).values
        assert np.array_equal(b[:60], b2[:60])
        assert np.array_equal(f[61:], f2[61:])

    def test_errors(self):
        with pytest.raises(DomainError):
            ewma_backward([], 0.99)
        with pytest.raises(DomainError):
            ewma_forward([], 0.97)
        with pytest.raises(DomainError):
            ewma_backward([0.1], 1.0)


class TestStressQuantile:
    def test_hand_oracle(self):
        # position 0.99 * 99 = 98.01 between order statistics 99 and 100
        vols = np.arange(1.0, 101.0)
        assert stress_quantile(vols, 0.99) == pytest.approx(99.01, abs=1e-12)
        assert stress_quantile(vols, 0.99) == pytest.approx(oracles.order_statistic_quantile(vols, 0.99))

    def test_constant(self):
        assert stress_quantile(np.full(37, 0.021), 0.99) == pytest.approx(0.021)

    def test_q_one_is_max(self):
        v = np.random.default_rng(1).random(333)
        assert stress_quantile(v, 1.0) == v.max()

    def test_vol_series_input(self):
        assert stress_quantile(VolSeries(np.arange(1.0, 6.0), "backward", 0.99), 0.5) == 3.0

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(0, 10, allow_subnormal=False), min_size=2, max_size=60, unique=True),
        st.floats(0.001, 1.0),
        st.floats(0.001, 1.0),
    )
    def test_monotone_and_order_statistics(self, vals, q1, q2):
        lo, hi = sorted((q1, q2))
        assert stress_quantile(vals, lo) <= stress_quantile(vals, hi)
        k = len(vals) - 1
        for j in range(1, len(vals)):
            assert stress_quantile(vals, j / k) == pytest.approx(sorted(vals)[j], abs=1e-12)

    def test_errors(self):
        with pytest.raises(DomainError):
            stress_quantile([], 0.99)
        with pytest.raises(DomainError):
            stress_quantile([1.0], 0.0)


class TestWrongWayFactor:
    @pytest.mark.parametrize("mapping", ["linear", "exponential"])
    def test_identity(self, mapping):
        assert wrong_way_factor(0.02, 0.02, mapping) == pytest.approx(1.0, rel=1e-14)

    def test_linear_equity_example(self):
        assert wrong_way_factor(0.055, 0.033, "linear") == pytest.approx(5.5 / 3.3, rel=1e-14)
        assert round(wrong_way_factor(0.055, 0.033, "linear"), 1) == 1.7

    def test_exponential_fx_example(self):
        g = 2.3263478740408408
        expected = math.expm1(0.029 * g) / math.expm1(0.012 * g)
        assert wrong_way_factor(0.029, 0.012, "exponential") == pytest.approx(expected, rel=1e-12)
        assert wrong_way_factor(0.029, 0.012, "exponential") == pytest.approx(2.4653, abs=5e-4)

    @pytest.mark.parametrize(
        "stressed, current, w",
        [(0.055, 0.033, 1.7), (0.123, 0.061, 2.2), (0.029, 0.012, 2.5), (0.101, 0.079, 1.3)],
    )
    def test_reference_markets_under_exponential(self, stressed, current, w):
        assert round(wrong_way_factor(stressed, current, "exponential"), 1) == w

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0), st.floats(1e-3, 1e3))
    def test_linear_scale_invariant(self, a, b, c):
        assert wrong_way_factor(a * c, b * c, "linear") == pytest.approx(wrong_way_factor(a, b, "linear"), rel=1e-12)

    @pytest.mark.parametrize("stressed, current", [(0.055, 0.033), (0.123, 0.061), (0.029, 0.012), (0.101, 0.079)])
    def test_exponential_tends_to_linear(self, stressed, current):
        s = 1e-4
        lin = wrong_way_factor(stressed * s, current * s, "linear")
        exp = wrong_way_factor(stressed * s, current * s, "exponential")
        assert abs(exp - lin) / lin < 1e-3

    def test_at_least_one_when_stressed_exceeds_current(self):
        for m in ("linear", "exponential"):
            assert wrong_way_factor(0.03, 0.02, m) >= 1.0

    def test_zero_vol(self):
        with pytest.raises(DomainError, match="zero volatility"):
            wrong_way_factor(0.02, 0.0)


class TestContagion:
    def test_identical_constant_series(self):
        v = VolSeries(np.full(500, 0.02), "backward", 0.99)
        assert contagion_factor(v, VolSeries(v.values, "forward", 0.99), 0.99) == 1.0

    def test_same_returns_same_decay_constant_series(self):
        r = alternating(600, 0.01)
        back, fwd = ewma_backward(r, 0.97), ewma_forward(r, 0.97)
        assert contagion_factor(back, fwd) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("decay, tol", [(0.99, 0.04), (0.999, 0.003), (0.9999, 3e-4)])
    def test_variance_jump(self, decay, tol):
        c, n = 0.01, 2000
        r = alternating(n, c)
        r[n // 2 :] *= 2.0
        back = ewma_backward(r, decay, seed_var=c * c)
        fwd = ewma_forward(r, decay, seed_var=4 * c * c)
        ratio = contagion_ratio(back, fwd)
        assert ratio[n // 2] == pytest.approx(oracles.ewma_step_ratio_at_jump(decay, decay, c), rel=1e-12)
        assert abs(ratio[n // 2] - 2.0) < tol

    def test_misaligned(self):
        a = VolSeries(np.ones(10), "backward", 0.99)
        with pytest.raises(DomainError, match="misaligned"):
            contagion_ratio(a, VolSeries(np.ones(9), "forward", 0.97))
        d = daily_dates(11)
        with pytest.raises(DomainError):
            contagion_ratio(VolSeries(np.ones(10), "backward", 0.99, d[:10]), VolSeries(np.ones(10), "forward", 0.97, d[1:]))


class TestBreachProbability:
    def test_identity(self):
        assert breach_probability(1.0, 0.01) == pytest.approx(0.01, rel=1e-12)

    @pytest.mark.parametrize("gamma, p", [(2.0, 0.1223795), (2.1, 0.1339774), (2.3, 0.1558992), (2.6, 0.1854606)])
    def test_reference_values(self, gamma, p):
        assert breach_probability(gamma) == pytest.approx(p, abs=1e-7)

    @settings(max_examples=80, deadline=None)
    @given(st.floats(1.0, 50.0), st.floats(1.0, 50.0), st.floats(1e-4, 0.45))
    def test_monotone_bounded(self, g1, g2, pm):
        lo, hi = sorted((g1, g2))
        assert pm - 1e-15 <= breach_probability(lo, pm) <= breach_probability(hi, pm) < 0.5

    def test_strictly_above_margin_prob(self):
        assert breach_probability(1.0001, 0.01) > 0.01

    def test_errors(self):
        with pytest.raises(DomainError):
            breach_probability(0.9)
        with pytest.raises(DomainError):
            breach_probability(2.0, 0.5)


class TestParetoFit:
    def test_loss_sample_sides(self):
        x = np.array([1.0, -2.0])
        assert loss_sample(x, "up").tolist() == [1.0, -2.0]
        assert loss_sample(x, "down").tolist() == [-1.0, 2.0]
        assert sorted(loss_sample(x, "both").tolist()) == [-2.0, -1.0, 1.0, 2.0]

    def test_anchor_exact(self):
        x = np.random.default_rng(3).pareto(3.0, 20_000) + 1
        fit = pareto_fit(x)
        assert fit.model_exceedance(fit.anchor_quantile) == 0.01
        assert np.all(fit.tail_x > fit.anchor_quantile)
        assert fit.tail_empirical[-1] <= 0.01

    def test_recovers_known_index(self):
        x = np.random.default_rng(0).pareto(3.3, 100_000) + 1
        assert 3.1 <= pareto_fit(x).alpha <= 3.5

    def test_heavier_tail_smaller_alpha(self):
        x = np.random.default_rng(5).pareto(3.3, 50_000) + 1
        assert pareto_fit(x**1.2).alpha < pareto_fit(x).alpha

    def test_gaussian_reference(self):
        assert 6.5 < gaussian_reference_alpha() < 7.5
        fit = pareto_fit(np.random.default_rng(7).standard_normal(100_000))
        assert 6.0 <= fit.alpha <= 8.0

    def test_log_space_variant_close(self):
        x = np.random.default_rng(8).pareto(2.5, 100_000) + 1
        assert pareto_fit(x, log_space=True).alpha == pytest.approx(2.5, abs=0.25)

    def test_degenerate(self):
        with pytest.raises(TailTooThinError):
            pareto_fit(np.full(1000, 0.5))

    def test_too_short(self):
        with pytest.raises(DomainError):
            pareto_fit(np.arange(100.0))


class TestCalibrate:
    def test_constant_series(self):
        p = PriceSeries(daily_dates(800), np.full(800, 50.0))
        with pytest.raises(DomainError, match="zero volatility"):
            calibrate(p)

    def test_constant_vol_gives_unit_factors(self):
        rng = np.random.default_rng(0)
        r = alternating(1500, 0.01) * (1 + 1e-3 * rng.standard_normal(1500))
        res = calibrate(prices_from_log_returns(r), horizon=1)
        assert res.calibration.wrong_way_factor == pytest.approx(1.0, abs=0.01)
        assert res.calibration.contagion_factor == pytest.approx(1.0, abs=0.01)

    def test_regime_shift_seen_from_early_date(self):
        n = 3000
        rng = np.random.default_rng(0)
        r = alternating(n, 0.01) * (1 + 0.01 * rng.standard_normal(n))
        r[-n // 10 :] *= 2.0
        res = calibrate(prices_from_log_returns(r), horizon=1, asof=1000, mapping="linear")
        assert res.calibration.wrong_way_factor == pytest.approx(2.0, abs=0.1)
        late = calibrate(prices_from_log_returns(r), horizon=1, mapping="linear")
        assert late.calibration.wrong_way_factor == pytest.approx(1.0, abs=0.05)

    def test_pareto_increments(self):
        rng = np.random.default_rng(1)
        inc = (rng.pareto(3.3, 100_000) + 1) * rng.choice([-1.0, 1.0], 100_000)
        lv = 1e4 + np.concatenate([[0.0], np.cumsum(inc)])
        res = calibrate(PriceSeries(daily_dates(len(lv)), lv), horizon=1)
        assert 3.1 <= res.calibration.pareto_index <= 3.5
        assert res.calibration.provenance["pareto_index"] == "estimated"

    def test_short_series_warns(self):
        r = np.random.default_rng(2).standard_normal(501) * 0.01
        res = calibrate(prices_from_log_returns(r), horizon=1)
        assert any("two years" in w for w in res.warnings)
        d = res.diagnostics()
        assert d["n_quantile_dates"] == len(res.backward) - 200
        assert set(d["plausibility"]) == {"wrong_way_factor_in_band", "contagion_factor_in_band"}

    def test_insufficient_data(self):
        with pytest.raises(DomainError, match="insufficient"):
            calibrate(prices_from_log_returns(np.full(150, 0.01)), horizon=1)
