import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmdecay.dynamics import TimeSeries, loschmidt_echo, survival_probability
from nmdecay.lattice import SystemSpec
from nmdecay.rates import (TABLE1, FitError, RateEstimate, Table1Config, envelope,
                           fit_exponential, rate_sweep, resolve_threads, scaled_horizon,
                           series_rate, table1_report)
from nmdecay.spectral import wba_rate

T = np.arange(0, 40.0001, 0.05)


def series(p, kind="SP", **meta):
    return TimeSeries(T, p, kind, meta)


def test_synthetic_exponential():
    est = fit_exponential(series(np.exp(-0.02 * T)))
    assert est.rate == pytest.approx(0.02, abs=1e-12)
    assert est.stderr < 1e-12
    assert est.r_squared == pytest.approx(1.0)
    assert est.window[0] >= 2.0


@settings(max_examples=40, deadline=None)
@given(rate=st.floats(0.002, 0.15), amp=st.floats(0.3, 1.0))
def test_recovers_any_exponential(rate, amp):
    est = fit_exponential(series(amp * np.exp(-rate * T)))
    assert est.rate == pytest.approx(rate, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(0.005, 0.05), omega=st.floats(0.6, 2.0))
def test_envelope_of_damped_oscillation(rate, omega):
    p = np.exp(-rate * T) * np.cos(omega * T) ** 2
    est = fit_exponential(envelope(series(p)))
    assert est.rate == pytest.approx(rate, rel=0.02)


def test_cosine_peaks():
    env = envelope(series(np.cos(T) ** 2))
    k = np.arange(1, env.t.size + 1)
    assert np.allclose(env.t, k * np.pi, atol=1e-3)
    assert np.allclose(env.p, 1.0, atol=1e-5)
    # no decay at all: a zero-slope fit is accepted
    est = fit_exponential(env)
    assert abs(est.rate) < 1e-6
    assert env.meta["dt_source"] == pytest.approx(0.05)


def test_monotone_and_echo_series_pass_through():
    mono = series(np.exp(-0.01 * T))
    assert envelope(mono) is mono
    echo = series(np.exp(-0.01 * T) * (1 + 1e-5 * np.cos(T)), kind="LE")
    assert envelope(echo) is echo


def test_too_few_peaks():
    t = np.arange(0, 5.0001, 0.05)
    with pytest.raises(FitError, match="peaks"):
        envelope(TimeSeries(t, np.cos(t) ** 2, "SP"))


def test_rejects_non_exponential():
    gauss = series(np.exp(-(T / 12) ** 2))
    with pytest.raises(FitError, match="r\\^2"):
        fit_exponential(gauss, window=(2, 40))
    wobble = series(np.exp(-0.001 * T) * (1 + 0.5 * np.sin(0.5 * T)) / 1.5, kind="LE")
    with pytest.raises(FitError, match="r\\^2"):
        fit_exponential(wobble)


def test_explicit_window_and_bad_samples():
    est = fit_exponential(series(np.exp(-0.03 * T)), window=(5, 20))
    assert est.window == (5.0, 20.0)
    assert est.n_points == 301
    p = np.exp(-0.03 * T)
    p[200] = 0.0
    with pytest.raises(FitError, match="non-positive"):
        fit_exponential(series(p), window=(5, 20))


def test_sparse_envelope_inflates_stderr():
    rng = np.random.default_rng(0)
    p = np.exp(-0.02 * T) * np.cos(T) ** 2 * (1 + 1e-3 * rng.standard_normal(T.size))
    env = envelope(series(p))
    direct = TimeSeries(env.t, env.p, "SP", {})
    assert fit_exponential(env).stderr > 3 * fit_exponential(direct).stderr


def test_rate_estimate_scaling():
    est = RateEstimate(0.02, 0.001, (2, 40), 0.999, 100, 0.0005)
    scaled = est.scaled(0.01)
    assert scaled.rate == pytest.approx(2.0)
    assert scaled.stderr == pytest.approx(0.1)
    assert scaled.uncertainty == pytest.approx(np.hypot(0.1, 0.05))
    assert set(est.to_record()) == {"rate", "stderr", "window_sensitivity", "window",
                                    "r_squared", "n_points"}


def test_scaled_horizon():
    assert scaled_horizon(0.1) == 40.0
    assert scaled_horizon(0.05) == 160.0
    assert scaled_horizon(0.2) == 40.0


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("NMDECAY_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("NMDECAY_THREADS")
    assert resolve_threads("auto") >= 1


# -- physics-level fits -------------------------------------------------------

def test_case_ii_sweep_slope():
    res = rate_sweep("II", [0.2, 0.05, 0.15, 0.1], v=1.0)
    assert [p.v0 for p in res.points] == [0.05, 0.1, 0.15, 0.2]
    for kind in ("SP", "LE"):
        slope, err = res.slopes[kind]
        assert slope == pytest.approx(1.0, abs=0.02)
        for p in res.points:
            raw = p.rates[kind].rate * p.v0 ** 2
            # each point sits on the origin-constrained line within 2%
            assert raw == pytest.approx(slope * p.v0 ** 2, rel=0.02)


def test_rate_scales_as_v0_squared():
    res = rate_sweep("III", [0.05, 0.1], v=1.0, kinds=["LE"])
    raw = [p.rates["LE"].rate * p.v0 ** 2 for p in res.points]
    assert raw[1] / raw[0] == pytest.approx(4.0, rel=0.02)


def test_sweep_outputs(tmp_path):
    res = rate_sweep("I", [0.1], v=1.0, kinds=["SP"])
    rec = res.to_record()
    assert rec["schema_version"] == 1 and rec["case"] == "I"
    path = res.to_plot_csv(tmp_path / "s.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "v0_sq_over_v,rate_SP"
    x, y = map(float, lines[1].split(","))
    assert x == pytest.approx(0.01) and y / x == pytest.approx(2.0, abs=0.05)


def test_sweep_rejects_unknown_measure():
    with pytest.raises(ValueError):
        rate_sweep("I", [0.1], kinds=["XX"])


def test_sweep_is_order_independent_across_workers():
    a = rate_sweep("I", [0.1, 0.12], kinds=["SP"], threads=1).to_record()
    b = rate_sweep("I", [0.12, 0.1], kinds=["SP"], threads=2).to_record()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_public_bath_asymmetry():
    spec = SystemSpec("VI", v=1.0)
    sp = series_rate(survival_probability(spec, 40, 0.05))
    le = series_rate(loschmidt_echo(spec, 40, 0.05))
    assert 1.3 <= sp.rate / le.rate <= 1.6


@pytest.mark.parametrize("case", ["III", "IV", "VI"])
@pytest.mark.parametrize("kind", ["SP", "LE"])
def test_markovian_restoration(case, kind):
    run = survival_probability if kind == "SP" else loschmidt_echo
    near = series_rate(run(SystemSpec(case, v=1.0), 40, 0.05)).rate
    far = series_rate(run(SystemSpec(case, v=5.0), 40, 0.05)).rate
    assert abs(far - wba_rate(case)) < abs(near - wba_rate(case))


# -- report -----------------------------------------------------------------

def test_table1_has_nine_rows():
    assert len(TABLE1) == 9
    assert [r.label for r in TABLE1][0] == "I"


def test_table1_report_subset(tmp_path):
    cfg = Table1Config(n_env_min=1, rows=("I", "VI (V=5V_AB)"))
    rep = table1_report(cfg)
    assert [r["row"] for r in rep.rows] == ["I", "VI (V=5V_AB)"]
    assert rep.passed
    rec = json.loads(rep.to_json(tmp_path / "t.json"))
    assert rec["schema_version"] == 1
    row = rec["rows"][1]
    assert row["scfgr"]["backward"] == pytest.approx(0.904, abs=1e-3)
    assert row["wba"] == 1.0
    assert set(row["exact_pole_rate"]) == {"forward", "backward"}
    text = rep.to_text()
    assert text.splitlines()[0].startswith("System")
    assert "pass" in text


def test_table1_failures_are_rows():
    rep = table1_report(Table1Config(n_env_min=1, rows=("II",), tolerance=0.0))
    assert not rep.passed
    assert rep.rows[0]["pass"] is False
    assert "FAIL" in rep.to_text()
