import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgepower import (
    ExponentialSmoothingForecaster,
    OracleForecaster,
    SmoothedDemandEstimator,
    WorkloadTrace,
    forecast_step,
    generate_poisson,
    load_trace,
    parse_trace,
)
from edgepower._validation import EdgePowerError
from edgepower.workload import ForecastError, TraceParseError, expected_tasks, make_forecaster


def test_zero_fraction_matches_poisson_pmf():
    d = generate_poisson(0.3, 100_000, seed=1).demands
    assert np.mean(d == 0) == pytest.approx(math.exp(-0.3), abs=0.01)


def test_mean_at_lambda_two():
    assert generate_poisson(2.0, 100_000, seed=2).demands.mean() == pytest.approx(2.0, abs=0.05)


@pytest.mark.parametrize("lam", [0.3, 1.0, 2.0])
def test_mean_and_variance_within_3_percent(lam):
    d = generate_poisson(lam, 100_000, seed=11).demands
    assert d.mean() == pytest.approx(lam, rel=0.03)
    assert d.var() == pytest.approx(lam, rel=0.03)


def test_empty_and_reproducible():
    assert len(generate_poisson(1.0, 0, seed=0)) == 0
    assert generate_poisson(0.5, 500, seed=4) == generate_poisson(0.5, 500, seed=4)
    assert generate_poisson(0.5, 500, seed=4) != generate_poisson(0.5, 500, seed=5)


def test_frozen_prefix():
    assert generate_poisson(0.5, 12, seed=7).demands.tolist() == [1, 1, 0, 1, 2, 0, 0, 0, 0, 0, 0, 2]


def test_bad_rate():
    with pytest.raises(EdgePowerError):
        generate_poisson(0.0, 10, seed=0)


# --- trace files -------------------------------------------------------------------------------


def test_load_trace(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("0\n3\n1\n")
    assert load_trace(p).demands.tolist() == [0, 3, 1]
    p.write_text("")
    assert len(load_trace(p)) == 0


def test_negative_demand_line_number():
    with pytest.raises(TraceParseError) as exc:
        parse_trace("-1\n")
    assert exc.value.line == 1
    with pytest.raises(TraceParseError) as exc:
        parse_trace("2\n5\nfoo\n")
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


def test_round_trip(tmp_path):
    tr = generate_poisson(1.2, 300, seed=3)
    path = tmp_path / "trace.txt"
    tr.save(path)
    assert load_trace(path) == tr


def test_trace_is_immutable():
    tr = WorkloadTrace([1, 2, 3])
    with pytest.raises(ValueError):
        tr.demands[0] = 5
    with pytest.raises(EdgePowerError):
        WorkloadTrace([1, -2])


# --- forecasters -------------------------------------------------------------------------------


def test_alpha_one_returns_last_observation():
    f = ExponentialSmoothingForecaster(alpha=1.0, estimate=42)
    assert forecast_step(f, 7)[1] == 7


def test_ema_arithmetic():
    f = ExponentialSmoothingForecaster(alpha=0.5, estimate=4)
    f, pred = forecast_step(f, 8)
    assert pred == 6
    assert f.estimate == 6


def test_noiseless_oracle():
    assert forecast_step(OracleForecaster(), 0, true_next=3)[1] == 3
    with pytest.raises(ForecastError):
        OracleForecaster().step(1)


def test_noiseless_oracle_replays_trace_shifted():
    d = generate_poisson(0.8, 200, seed=5).demands
    f = OracleForecaster()
    preds = [f.step(d[t], d[t + 1]) for t in range(len(d) - 1)]
    np.testing.assert_array_equal(preds, d[1:])


def test_noisy_oracle_clamped_and_seeded():
    a = OracleForecaster(noise_sd=5.0, seed=3)
    b = OracleForecaster(noise_sd=5.0, seed=3)
    xs = [a.step(0, 0) for _ in range(200)]
    assert xs == [b.step(0, 0) for _ in range(200)]
    assert min(xs) == 0.0 and max(xs) > 0


@pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"alpha": 1.5}])
def test_alpha_range(kw):
    with pytest.raises(ForecastError):
        ExponentialSmoothingForecaster(**kw)


def test_make_forecaster():
    assert make_forecaster("ema", alpha=0.3).alpha == 0.3
    assert make_forecaster("oracle").kind == "oracle-with-noise"
    with pytest.raises(ForecastError):
        make_forecaster("arima")


@pytest.mark.parametrize("x, n", [(0.0, 0), (0.49, 0), (0.5, 1), (1.49, 1), (2.5, 3)])
def test_expected_tasks_rounds_half_up(x, n):
    assert expected_tasks(x) == n


@settings(max_examples=300)
@given(st.floats(0.01, 1.0), st.floats(0, 1e6), st.floats(0, 1e6))
def test_ema_stays_between_estimate_and_observation(alpha, est, obs):
    f = ExponentialSmoothingForecaster(alpha=alpha, estimate=est)
    pred = f.step(obs)
    lo, hi = min(est, obs), max(est, obs)
    assert lo - 1e-9 * hi <= pred <= hi + 1e-9 * hi


def test_smoothed_estimator():
    est = SmoothedDemandEstimator(alpha=0.5).fit([4, 8])
    assert est.level_ == 5.0  # 0 -> 2 -> 5
    np.testing.assert_allclose(est.predict([1, 3]), [5.0, 3.0])
    assert est.get_params() == {"alpha": 0.5, "initial": 0.0}
