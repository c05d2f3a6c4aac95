"""Calibration tests: log parsing, cleaning, the two-minute cancellation
rule, panel construction against hand-counted books, the exact synthetic
round trip, and every estimator against an independent oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bookvol.calibration import (
    BAR_NS,
    SESSION_END_NS,
    SESSION_START_NS,
    build_panel,
    calibrate,
    clean,
    fit_ar1,
    fit_drift,
    fit_loadings,
    fit_report,
    format_log,
    infer_cancellations,
    jarque_bera,
    jarque_bera_from_moments,
    parse_messages,
    summarize,
    synthesize_log,
    to_model_params,
    PanelData,
)
from bookvol.demand import init_state, step_physical
from bookvol.errors import FitError, ParseError
from bookvol.lob import MessageEvent, Side
from bookvol.params import demo_params
from bookvol.sheet import SheetConfig, increments


# ----------------------------------------------------------------------
# parsing

def test_parse_good_line():
    parsed = parse_messages("A,B,34200000000000,42,20.16,500\n")
    assert parsed.n_ok == 1 and not parsed.issues
    ev = parsed.events[0]
    assert ev.msg_type == "A"
    assert ev.side is Side.BUY
    assert ev.timestamp == 34_200_000_000_000
    assert ev.order_id == "42"
    assert (ev.price, ev.size) == (20.16, 500.0)


def test_parse_skips_blanks_and_comments():
    text = "# header\n\nA,S,100,x,20.0,1\n   \n# trailing\n"
    parsed = parse_messages(text)
    assert parsed.n_ok == 1 and not parsed.issues


@pytest.mark.parametrize("line,reason_bit", [
    ("A,B,100,x,20.0", "field"),             # five fields
    ("X,B,100,x,20.0,1", "type"),
    ("A,Q,100,x,20.0,1", "side"),
    ("A,B,oops,x,20.0,1", ""),
    ("A,B,100,x,-1.0,1", ""),
    ("A,B,100,x,20.0,0", ""),
    ("A,B,100,x,nan,1", ""),
    ("A,B,100,,20.0,1", ""),
])
def test_parse_rejects_malformed(line, reason_bit):
    parsed = parse_messages(line + "\n")
    assert parsed.n_ok == 0
    assert len(parsed.issues) == 1
    assert parsed.issues[0].line_no == 1
    assert reason_bit in parsed.issues[0].reason
    with pytest.raises(ParseError):
        parse_messages(line + "\n", strict=True)


def test_parse_reports_correct_line_numbers():
    text = "# head\nA,B,100,a,20.0,1\nbroken\nA,S,200,b,20.1,1\n"
    parsed = parse_messages(text)
    assert parsed.n_ok == 2
    assert [i.line_no for i in parsed.issues] == [3]


@given(price=st.floats(min_value=1e-3, max_value=1e6,
                       allow_nan=False, allow_infinity=False),
       size=st.floats(min_value=1e-3, max_value=1e9,
                      allow_nan=False, allow_infinity=False))
@settings(max_examples=80, deadline=None)
def test_format_parse_round_trip_is_bit_exact(price, size):
    ev = MessageEvent("A", Side.SELL, 123456789, "oid", price, size)
    back = parse_messages(format_log([ev])).events[0]
    assert back.price == price and back.size == size
    assert back == ev


# ----------------------------------------------------------------------
# cleaning and the cancellation rule

def _ev(ts, msg="A", side=Side.BUY, oid="x", price=20.3, size=1.0):
    return MessageEvent(msg, side, ts, oid, price, size)


def test_clean_is_inclusive_on_both_windows():
    inside = [
        _ev(SESSION_START_NS, price=20.00),
        _ev(SESSION_END_NS, price=20.62),
    ]
    outside = [
        _ev(SESSION_START_NS - 1, price=20.3),
        _ev(SESSION_END_NS + 1, price=20.3),
        _ev(SESSION_START_NS, price=19.9999),
        _ev(SESSION_START_NS, price=20.6201),
    ]
    result = clean(inside + outside)
    assert list(result.events) == inside
    assert result.retention == pytest.approx(2 / 6)


def test_clean_is_idempotent():
    events = [_ev(SESSION_START_NS + i, price=20.0 + 0.001 * i) for i in range(50)]
    once = clean(events)
    twice = clean(once.events)
    assert list(twice.events) == list(once.events)
    assert twice.retention == 1.0


def test_two_minute_rule_boundary():
    t0 = SESSION_START_NS
    two_min = 120_000_000_000
    events = [
        _ev(t0, msg="A", oid="a"),
        _ev(t0 + 1, msg="M", oid="a"),
        _ev(t0 + 1 + two_min, msg="D", oid="a"),      # exactly two minutes: cancelled
        _ev(t0, msg="A", oid="b"),
        _ev(t0 + 1, msg="M", oid="b"),
        _ev(t0 + 2 + two_min, msg="D", oid="b"),      # one ns late: removal by trade
        _ev(t0, msg="A", oid="c"),
        _ev(t0 + 1, msg="D", oid="c"),                # no modify first
    ]
    out = infer_cancellations(events)
    flags = {ev.order_id: ev.cancelled for ev in out if ev.msg_type == "D"}
    assert flags == {"a": True, "b": False, "c": False}


def test_orphan_deletes_warn():
    with pytest.warns(RuntimeWarning, match="never added"):
        infer_cancellations([_ev(SESSION_START_NS, msg="D", oid="ghost")])


# ----------------------------------------------------------------------
# panel construction

def test_panel_counts_a_hand_book():
    start = 0
    events = [
        MessageEvent("A", Side.BUY, 1000, "b1", 19.9, 5.0),    # bucket -1
        MessageEvent("A", Side.BUY, 1001, "b2", 19.7, 4.0),    # below the grid
        MessageEvent("A", Side.SELL, 1002, "s1", 20.1, 7.0),   # bucket +1
        MessageEvent("A", Side.SELL, 1003, "s2", 20.2, 3.0),   # bucket +2
        MessageEvent("A", Side.SELL, 1004, "s3", 20.3, 2.0),   # clips into +2
    ]
    panel = build_panel(events, pi0=20.0, K=2, delta_p=0.1,
                        delta_t_ns=60_000_000_000, session=(start, 60_000_000_000))
    assert panel.n_bars == 1
    assert panel.pi[0] == 20.0                      # no trade: opening price holds
    assert panel.q[0].tolist() == [5.0, 0.0, 7.0, 5.0]
    assert panel.below_grid[0] == 4.0
    assert panel.edge[0] == 9.0                     # all buys; no sells below floor
    # conservation: buckets + clipped tails account for all resting quantity
    assert panel.q[0].sum() + panel.below_grid[0] == 21.0


def test_panel_carries_book_across_empty_bars():
    events = [MessageEvent("A", Side.BUY, 50, "b", 19.9, 5.0)]
    panel = build_panel(events, pi0=20.0, K=2, delta_p=0.1,
                        delta_t_ns=100, session=(0, 400))
    assert panel.n_bars == 4
    assert not panel.gap[0] and panel.gap[1:].all()
    assert np.all(panel.q[:, 0] == 5.0)


def test_panel_requires_some_events():
    with pytest.raises(FitError):
        build_panel([], pi0=20.0, K=2, delta_p=0.1,
                    delta_t_ns=100, session=(0, 400))


def test_synthetic_log_round_trip_is_exact():
    params = demo_params()
    n_bars = 50
    events = synthesize_log(params, n_bars, seed=3)
    text = format_log(events)

    parsed = parse_messages(text, strict=True)
    cleaned = clean(parsed.events, p_min=19.0, p_max=21.5)
    assert cleaned.retention == 1.0
    panel = build_panel(cleaned.events, pi0=params.pi0, K=params.K,
                        delta_p=params.delta_p,
                        session=(SESSION_START_NS, SESSION_START_NS + n_bars * BAR_NS))

    # replay the generating path independently
    state = init_state(params)
    cfg = SheetConfig(2 * params.K, params.delta_p, seed=3)
    for bar in range(n_bars):
        if bar > 0:
            state = step_physical(state, params, increments(cfg, 1 / 60, bar - 1), 1 / 60)
        assert panel.pi[bar] == state.pi
        assert np.array_equal(panel.q[bar], state.quantities())
        assert panel.edge[bar] == pytest.approx(state.edge(), rel=1e-12)
        assert panel.below_grid[bar] == pytest.approx(
            0.5 * state.quantities()[params.K - 1], rel=1e-12)
    assert not panel.gap.any()


# ----------------------------------------------------------------------
# estimators

def test_ar1_recovers_known_parameters():
    a, mean, sigma, dt, n = 0.3, 5.0, 0.05, 1.0, 10_000
    phi = math.exp(-a * dt)
    noise_sd = sigma * math.sqrt((1 - phi**2) / (2 * a))
    rng = np.random.default_rng(42)
    x = np.empty(n)
    x[0] = mean
    for i in range(1, n):
        x[i] = mean + phi * (x[i - 1] - mean) + noise_sd * rng.standard_normal()
    fit = fit_ar1(x, dt)
    assert fit.a == pytest.approx(a, rel=0.05)
    assert fit.mean == pytest.approx(mean, abs=0.01)
    assert fit.sigma_rel == pytest.approx(sigma, rel=0.03)


def test_ar1_random_walk_limit():
    x = np.exp(np.linspace(0.0, 1.0, 200))          # slope above one
    fit = fit_ar1(x, 1.0)
    assert fit.a == 0.0
    assert fit.mean == pytest.approx(x.mean())


def test_ar1_error_paths():
    with pytest.raises(FitError):
        fit_ar1(np.ones(29), 1.0)
    with pytest.raises(FitError):
        fit_ar1(np.ones(100), 1.0)
    with pytest.raises(FitError):
        fit_ar1(np.linspace(0, 1, 100), 0.0)
    with pytest.raises(FitError):
        fit_ar1(np.concatenate([[np.nan], np.ones(99)]), 1.0)


def test_jarque_bera_moment_oracle():
    jb, p = jarque_bera_from_moments(390, -0.289841, 0.277282)
    assert jb == pytest.approx(390 / 6 * 0.289841**2 + 390 / 24 * 0.277282**2, rel=1e-12)
    assert jb == pytest.approx(6.709894, abs=1e-6)
    assert p == pytest.approx(math.exp(-jb / 2), rel=1e-12)
    assert 0.026 <= p <= 0.037

    assert jarque_bera_from_moments(1000, 0.0, 0.0) == (0.0, 1.0)


def test_jarque_bera_on_samples():
    rng = np.random.default_rng(1)
    _, p_normal = jarque_bera(rng.standard_normal(4000))
    assert p_normal > 0.01
    _, p_skewed = jarque_bera(rng.exponential(size=4000))
    assert p_skewed < 1e-8
    assert jarque_bera(np.full(100, 3.0)) == (0.0, 1.0)
    with pytest.raises(FitError):
        jarque_bera(np.ones(7))


def test_fit_drift_exact_on_linear_series():
    pi = 20.0 + 0.00037 * np.arange(400)
    assert fit_drift(pi) == pytest.approx(0.00037, rel=1e-9)
    assert fit_drift(np.full(50, 20.0)) == pytest.approx(0.0, abs=1e-12)


def test_summarize_by_hand():
    s = summarize([1.0, 2.0, 3.0, 4.0, 5.0])
    assert (s.nobs, s.minimum, s.maximum) == (5, 1.0, 5.0)
    assert (s.q1, s.median, s.q3) == (2.0, 3.0, 4.0)
    assert s.mean == 3.0
    assert s.variance == pytest.approx(2.5)          # ddof = 1
    assert s.skewness == pytest.approx(0.0, abs=1e-12)
    assert s.kurtosis == pytest.approx(6.8 / 4.0 - 3.0)   # population moments
    assert s.se_mean == pytest.approx(math.sqrt(2.5 / 5))
    lo, hi = s.ci95
    assert lo < 3.0 < hi
    assert "excess kurtosis" in s.to_text()


def test_summarize_constant_series():
    s = summarize(np.full(10, 7.0))
    assert s.skewness is None and s.kurtosis is None
    assert "missing" in s.to_text()


def _loadings_panel(n_bars=4000, K=3, delta_p=0.1, seed=9):
    n = 2 * K
    corr = 0.4 ** np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    chol = np.linalg.cholesky(corr)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n_bars, n)) @ chol.T * 0.01
    logq = 10.0 + np.cumsum(d, axis=0)
    return PanelData(
        times=np.arange(n_bars) * BAR_NS + SESSION_START_NS,
        pi=np.full(n_bars, 20.0), q=np.exp(logq),
        edge=np.ones(n_bars), below_grid=np.zeros(n_bars),
        gap=np.zeros(n_bars, dtype=bool), K=K, delta_p=delta_p,
    ), corr


def test_fit_loadings_recovers_correlation():
    panel, corr = _loadings_panel()
    b = fit_loadings(panel)
    assert np.allclose((b**2).sum(axis=1) * panel.delta_p, 1.0, rtol=1e-12)
    assert np.max(np.abs(b @ b.T * panel.delta_p - corr)) < 0.05


def test_fit_loadings_degenerate_panel_warns():
    panel, _ = _loadings_panel(n_bars=200)
    panel.q[:, 2] = 5.0                              # a constant column
    with pytest.warns(RuntimeWarning, match="rank-deficient"):
        b = fit_loadings(panel)
    assert np.allclose(b, np.eye(6) / math.sqrt(panel.delta_p))


def test_fit_loadings_needs_enough_bars():
    panel, _ = _loadings_panel(n_bars=99)
    with pytest.raises(FitError):
        fit_loadings(panel)


# ----------------------------------------------------------------------
# the full pipeline

def test_fit_report_and_model_params_hand_off():
    params = demo_params()
    n_bars = 120
    text = format_log(synthesize_log(params, n_bars, seed=5))
    report = calibrate(text, pi0=params.pi0, K=params.K, delta_p=params.delta_p,
                       p_min=19.0, p_max=21.5,
                       session=(SESSION_START_NS, SESSION_START_NS + n_bars * BAR_NS))
    assert report.K == params.K
    assert report.bars_per_hour == pytest.approx(60.0)

    fitted = to_model_params(report)
    fitted.validate()
    assert fitted.pi0 == report.pi_last
    assert np.allclose(fitted.q0, np.exp(report.mean_logq))
    assert fitted.drift_c == pytest.approx(report.drift_c * 60.0)
    # the fitted book must itself support simulation from a consistent state
    assert fitted.edge0 > 0


def test_calibrate_matches_manual_chain():
    params = demo_params()
    n_bars = 120
    text = format_log(synthesize_log(params, n_bars, seed=5))
    session = (SESSION_START_NS, SESSION_START_NS + n_bars * BAR_NS)

    auto = calibrate(text, pi0=params.pi0, K=params.K, delta_p=params.delta_p,
                     p_min=19.0, p_max=21.5, session=session)

    cleaned = clean(parse_messages(text).events, p_min=19.0, p_max=21.5,
                    session=session)
    panel = build_panel(infer_cancellations(cleaned.events), pi0=params.pi0,
                        K=params.K, delta_p=params.delta_p, session=session)
    manual = fit_report(panel)
    assert np.array_equal(auto.a, manual.a)
    assert auto.jb_stat == manual.jb_stat
    assert auto.pi_last == manual.pi_last
