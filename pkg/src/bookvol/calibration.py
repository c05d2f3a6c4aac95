"""Calibration pipeline: exchange message logs to fitted model parameters.

Stages, each a pure transformation:

    parse_messages -> clean -> infer_cancellations -> build_panel -> fits

The panel replays the cleaned log through the matching engine, snapshots
the book at one-minute bar ends, and books every resting order into a
relative price bucket k = round((p - pi)/delta_p).  The fits are then
straight time-series work: AR(1) per log-mass series (mapped to
Ornstein-Uhlenbeck rates per hour), a correlation square root for the
factor loadings, an OLS trend for the clearing-price drift, a Jarque-Bera
normality check, and descriptive statistics.

``fit_report`` bundles all of it into a FitReport that converts to a full
ModelParams via ``to_model_params``, closing the calibrate -> simulate
loop.  ``synthesize_log`` runs the loop the other way: it simulates a
physical-measure path and writes a message log whose replayed panel
reproduces the simulated state exactly, which is what the round-trip
estimation tests are built on.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .demand import init_state, step_physical
from .errors import FitError, ParseError
from .lob import MessageEvent, OrderBook, Side, replay
from .params import ModelParams
from .sheet import SheetConfig, increments

SESSION_START_NS = 34_200_000_000_000   # 09:30
SESSION_END_NS = 57_600_000_000_000     # 16:00
BAR_NS = 60_000_000_000                 # one minute
TWO_MINUTES_NS = 120_000_000_000

# Default price sanity window for the cleaning stage.
PRICE_WINDOW = (20.00, 20.62)

_SIDES = {"B": Side.BUY, "S": Side.SELL}


# ----------------------------------------------------------------------
# parsing and cleaning

@dataclass(frozen=True)
class ParseIssue:
    line_no: int
    reason: str
    raw: str


@dataclass
class ParseResult:
    events: list
    issues: list

    @property
    def n_ok(self) -> int:
        return len(self.events)


def parse_messages(source, strict: bool = False) -> ParseResult:
    """Parse a message-log text stream.

    One event per line: ``msg_type,side,timestamp_ns,order_id,price,size``
    (e.g. ``A,B,34200000000000,42,20.16,500``).  Blank lines and ``#``
    comments are skipped.  Malformed lines are collected into the issue
    list with their line numbers; ``strict=True`` aborts on the first one.
    """
    if isinstance(source, str):
        lines: Iterable[str] = source.splitlines()
    else:
        lines = source
    events: list = []
    issues: list = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            events.append(_parse_line(line))
        except ValueError as exc:
            if strict:
                raise ParseError(f"line {line_no}: {exc}") from None
            issues.append(ParseIssue(line_no, str(exc), line))
    return ParseResult(events, issues)


def _parse_line(line: str) -> MessageEvent:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 6:
        raise ValueError(f"expected 6 fields, got {len(parts)}")
    msg_type, side_code, ts_s, order_id, price_s, size_s = parts
    if msg_type not in ("A", "M", "D"):
        raise ValueError(f"unknown message type {msg_type!r}")
    side = _SIDES.get(side_code)
    if side is None:
        raise ValueError(f"unknown side {side_code!r}")
    timestamp = int(ts_s)
    price = float(price_s)
    size = float(size_s)
    if not math.isfinite(price) or price <= 0:
        raise ValueError(f"price must be positive, got {price_s!r}")
    if not math.isfinite(size) or size <= 0:
        raise ValueError(f"size must be positive, got {size_s!r}")
    if not order_id:
        raise ValueError("empty order id")
    return MessageEvent(msg_type, side, timestamp, order_id, price, size)


@dataclass(frozen=True)
class CleanResult:
    events: tuple
    retention: float


def clean(events: Sequence, p_min: float = PRICE_WINDOW[0],
          p_max: float = PRICE_WINDOW[1],
          session: tuple = (SESSION_START_NS, SESSION_END_NS)) -> CleanResult:
    """Drop events with prices outside [p_min, p_max] or off-session times.

    Returns the kept events and the retention fraction.  Idempotent: the
    output always survives a second pass unchanged.
    """
    if not p_min < p_max:
        raise ValueError(f"need p_min < p_max, got [{p_min}, {p_max}]")
    lo, hi = session
    kept = tuple(
        ev for ev in events
        if p_min <= ev.price <= p_max and lo <= ev.timestamp <= hi
    )
    retention = len(kept) / len(events) if events else 1.0
    return CleanResult(kept, retention)


def infer_cancellations(events: Sequence) -> tuple:
    """Annotate deletes with the two-minute cancellation rule.

    A Delete at most two minutes (inclusive) after a Modify of the same
    order id is a cancellation; any other Delete is treated as removal by
    fill.  Deletes of ids never added are counted and reported through an
    orphan warning.  Events must be time-sorted per order id.
    """
    seen_add: set = set()
    last_modify: dict = {}
    out: list = []
    orphans = 0
    for ev in events:
        if ev.msg_type == "A":
            seen_add.add(ev.order_id)
            out.append(ev)
        elif ev.msg_type == "M":
            last_modify[ev.order_id] = ev.timestamp
            out.append(ev)
        else:  # Delete
            if ev.order_id not in seen_add:
                orphans += 1
            t_mod = last_modify.get(ev.order_id)
            cancelled = (
                t_mod is not None and 0 <= ev.timestamp - t_mod <= TWO_MINUTES_NS
            )
            out.append(replace(ev, cancelled=cancelled))
    if orphans:
        warnings.warn(
            f"{orphans} delete message(s) referenced order ids never added",
            RuntimeWarning,
            stacklevel=2,
        )
    return tuple(out)


# ----------------------------------------------------------------------
# panel construction

@dataclass
class PanelData:
    """Bar-sampled book state in relative coordinates.

    ``q`` has one column per bucket k = -K+1 .. K; ``edge`` is the net
    demand below the lowest bucket (all resting buys minus any sells under
    the grid floor); ``below_grid`` holds quantity clipped into bucket -K,
    kept out of ``q`` as a diagnostic.  ``gap`` flags bars that carried the
    previous bar forward because the book was empty.
    """

    times: np.ndarray          # bar-end timestamps, ns
    pi: np.ndarray
    q: np.ndarray              # (n_bars, 2K)
    edge: np.ndarray
    below_grid: np.ndarray
    gap: np.ndarray
    K: int
    delta_p: float

    @property
    def n_bars(self) -> int:
        return len(self.times)


def _snapshot(book: OrderBook, K: int, delta_p: float):
    """Book state as (pi, bucket masses -K..K, edge net demand)."""
    pi = book.clearing_price
    masses = np.zeros(2 * K + 1)
    edge = 0.0
    floor = pi - (K - 0.5) * delta_p
    for order, remaining in book.resting_orders():
        k = int(np.clip(round((order.price - pi) / delta_p), -K, K))
        masses[k + K] += remaining
        if order.side is Side.BUY:
            edge += remaining
        elif order.price < floor:
            edge -= remaining
    return pi, masses, edge


def build_panel(events: Sequence, pi0: float, K: int, delta_p: float,
                delta_t_ns: int = BAR_NS,
                session: tuple = (SESSION_START_NS, SESSION_END_NS)) -> PanelData:
    """Replay events through the matching engine and sample bars.

    The book is snapshotted at every bar end (390 bars for a 6.5-hour
    session at one minute); resting quantity is assigned to relative
    buckets by round-to-nearest with clipping.  Bars where the book is
    empty carry the adjacent snapshot forward and are flagged as gaps.
    """
    start, end = session
    n_bars = int((end - start) // delta_t_ns)
    if n_bars < 1:
        raise ValueError("session shorter than one bar")
    events = sorted(events, key=lambda ev: ev.timestamp)

    # Bar index of each event; an event at exactly the session start joins
    # the first bar.
    def bar_of(ts: int) -> int:
        rel = ts - start
        return min(n_bars - 1, (rel - 1) // delta_t_ns if rel > 0 else 0)

    pi = np.full(n_bars, np.nan)
    q_all = np.zeros((n_bars, 2 * K + 1))
    edge = np.full(n_bars, np.nan)
    filled = np.zeros(n_bars, dtype=bool)

    last_of_bar = {}
    for i, ev in enumerate(events):
        last_of_bar[bar_of(ev.timestamp)] = i

    counter = {"i": 0}

    def on_event(ev, book):
        i = counter["i"]
        counter["i"] = i + 1
        b = bar_of(ev.timestamp)
        if last_of_bar.get(b) == i:
            p, masses, e = _snapshot(book, K, delta_p)
            pi[b] = p
            q_all[b] = masses
            edge[b] = e
            filled[b] = True

    replay(list(events), pi0, on_event=on_event)

    # Carry snapshots into empty bars: forward from the last filled bar,
    # or backward from the first one for a leading gap.
    gap = ~filled
    idx = np.where(filled)[0]
    if idx.size == 0:
        raise FitError("no bars could be filled: the log produced an empty book")
    last = idx[0]
    for b in range(n_bars):
        if filled[b]:
            last = b
        else:
            pi[b] = pi[last]
            q_all[b] = q_all[last]
            edge[b] = edge[last]

    times = start + delta_t_ns * np.arange(1, n_bars + 1)
    return PanelData(
        times=times,
        pi=pi,
        q=q_all[:, 1:],          # k = -K+1 .. K
        edge=edge,
        below_grid=q_all[:, 0],  # clipped into k = -K
        gap=gap,
        K=K,
        delta_p=delta_p,
    )


# ----------------------------------------------------------------------
# fits

@dataclass(frozen=True)
class Ar1Fit:
    a: float          # mean-reversion rate per hour (>= 0 after truncation)
    mean: float       # long-run level of the series
    sigma_rel: float  # driving volatility per sqrt(hour)


def fit_ar1(x: Sequence, delta_t: float) -> Ar1Fit:
    """Ornstein-Uhlenbeck parameters from a sampled log-value series.

    OLS of x_{i+1} on x_i gives the AR(1) slope phi and intercept; then
    a = -ln(phi)/delta_t (truncated to 0 when phi >= 1, the random-walk
    limit, where the long-run mean falls back to the sample mean),
    mean = intercept/(1 - phi), and the residual standard deviation is
    scaled back to the continuous-time volatility through the exact
    relation Var(eps) = sigma^2 (1 - phi^2) / (2a).

    ``delta_t`` is the sampling interval in hours, making ``a`` per hour
    and ``sigma_rel`` per square-root hour.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 30:
        raise FitError(f"need a 1-d series of at least 30 points, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise FitError("series contains non-finite values")
    if delta_t <= 0:
        raise FitError(f"sampling interval must be positive, got {delta_t}")
    x0, x1 = x[:-1], x[1:]
    var0 = float(np.var(x0))
    if var0 == 0.0 or float(np.ptp(x)) == 0.0:
        raise FitError("degenerate fit: the series is constant")
    phi = float(np.cov(x0, x1, bias=True)[0, 1] / var0)
    if phi <= 0.0:
        raise FitError(f"unstable fit: AR(1) slope {phi:.6g} is not positive")
    intercept = float(x1.mean() - phi * x0.mean())
    resid = x1 - (intercept + phi * x0)
    s = float(resid.std(ddof=2))
    if phi >= 1.0:
        a = 0.0
        mean = float(x.mean())
        sigma = s / math.sqrt(delta_t)
    else:
        a = -math.log(phi) / delta_t
        mean = intercept / (1.0 - phi)
        sigma = s * math.sqrt(2.0 * a / (1.0 - phi * phi))
    return Ar1Fit(a=a, mean=mean, sigma_rel=sigma)


def fit_loadings(panel: PanelData) -> np.ndarray:
    """Factor loadings from the correlation of per-bar log-mass changes.

    Only the product b bᵀ delta_p (= the correlation matrix) is
    identifiable from the panel, so the symmetric square root is taken and
    every row is rescaled to the normalization sum_j b(k,j)^2 delta_p = 1.
    A non-positive-semidefinite empirical matrix is repaired by clipping
    its eigenvalues at zero.  A rank-deficient panel (constant or
    non-finite columns) falls back to identity loadings with a warning.
    """
    if panel.n_bars < 100:
        raise FitError(f"need at least 100 bars to fit loadings, got {panel.n_bars}")
    n = 2 * panel.K
    scale = 1.0 / math.sqrt(panel.delta_p)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.diff(np.log(panel.q), axis=0)
    good = np.all(np.isfinite(d), axis=0) & (d.std(axis=0) > 0)
    if not np.all(good):
        warnings.warn(
            "degenerate loadings: panel is rank-deficient, using identity",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.eye(n) * scale
    corr = np.corrcoef(d, rowvar=False)
    vals, vecs = np.linalg.eigh(corr)
    vals = np.clip(vals, 0.0, None)
    root = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
    norms = np.linalg.norm(root, axis=1)
    if np.any(norms == 0.0):
        warnings.warn(
            "degenerate loadings: panel is rank-deficient, using identity",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.eye(n) * scale
    return root / norms[:, None] * scale


def jarque_bera_from_moments(n: int, skewness: float,
                             excess_kurtosis: float) -> tuple:
    """JB statistic and p-value from sample size and standardized moments.

    JB = (sqrt(n/6) S)^2 + (sqrt(n/24) K_excess)^2, compared against a
    chi-square(2) law whose survival function is exp(-JB/2) exactly.  The
    kurtosis argument is the excess (normal = 0) convention.
    """
    jb = n / 6.0 * skewness ** 2 + n / 24.0 * excess_kurtosis ** 2
    return jb, math.exp(-jb / 2.0)


def jarque_bera(series: Sequence) -> tuple:
    """Jarque-Bera normality test of a sample; returns (statistic, p-value)."""
    x = np.asarray(series, dtype=float)
    if x.size < 8:
        raise FitError(f"need at least 8 observations, got {x.size}")
    c = x - x.mean()
    m2 = float(np.mean(c ** 2))
    if m2 == 0.0:
        return 0.0, 1.0
    skew = float(np.mean(c ** 3)) / m2 ** 1.5
    kurt = float(np.mean(c ** 4)) / m2 ** 2
    return jarque_bera_from_moments(x.size, skew, kurt - 3.0)


def fit_drift(pi: Sequence) -> float:
    """OLS slope of the clearing price against bar index, per bar."""
    y = np.asarray(pi, dtype=float)
    if y.size < 2:
        raise FitError(f"need at least 2 observations, got {y.size}")
    t = np.arange(y.size, dtype=float)
    return float(np.polyfit(t, y, 1)[0])


@dataclass(frozen=True)
class SummaryStats:
    nobs: int
    minimum: float
    maximum: float
    q1: float
    median: float
    q3: float
    mean: float
    variance: float
    stdev: float
    skewness: Optional[float]
    kurtosis: Optional[float]   # excess convention (normal = 0)
    se_mean: float
    ci95: tuple

    def to_text(self) -> str:
        rows = [
            ("nobs", f"{self.nobs}"),
            ("min", f"{self.minimum:.6g}"),
            ("q1", f"{self.q1:.6g}"),
            ("median", f"{self.median:.6g}"),
            ("q3", f"{self.q3:.6g}"),
            ("max", f"{self.maximum:.6g}"),
            ("mean", f"{self.mean:.6g}"),
            ("variance", f"{self.variance:.6g}"),
            ("stdev", f"{self.stdev:.6g}"),
            ("skewness", "missing" if self.skewness is None else f"{self.skewness:.6g}"),
            ("excess kurtosis", "missing" if self.kurtosis is None else f"{self.kurtosis:.6g}"),
            ("se(mean)", f"{self.se_mean:.6g}"),
            ("95% CI", f"[{self.ci95[0]:.6g}, {self.ci95[1]:.6g}]"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def summarize(series: Sequence) -> SummaryStats:
    """Descriptive statistics of a series (sample variance, excess kurtosis).

    Skewness and kurtosis are reported as missing for a constant series,
    where they are undefined.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise FitError("cannot summarize an empty series")
    mean = float(x.mean())
    var = float(x.var(ddof=1)) if x.size > 1 else 0.0
    std = math.sqrt(var)
    c = x - mean
    m2 = float(np.mean(c ** 2))
    if m2 == 0.0:
        skew = kurt = None
    else:
        skew = float(np.mean(c ** 3)) / m2 ** 1.5
        kurt = float(np.mean(c ** 4)) / m2 ** 2 - 3.0
    se = std / math.sqrt(x.size)
    z = float(norm.ppf(0.975))
    q1, med, q3 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    return SummaryStats(
        nobs=int(x.size),
        minimum=float(x.min()),
        maximum=float(x.max()),
        q1=q1,
        median=med,
        q3=q3,
        mean=mean,
        variance=var,
        stdev=std,
        skewness=skew,
        kurtosis=kurt,
        se_mean=se,
        ci95=(mean - z * se, mean + z * se),
    )


# ----------------------------------------------------------------------
# the full report

@dataclass
class FitReport:
    """Every estimated quantity, plus the grid geometry to rebuild params.

    ``drift_c`` is the clearing-price trend per bar (the convention the
    drift is usually quoted in); ``to_model_params`` converts it to the
    per-hour rate the simulator uses.
    """

    K: int
    delta_p: float
    pi_last: float
    a: np.ndarray              # (2K,) per hour
    mean_logq: np.ndarray      # (2K,)
    sigma_rel: np.ndarray      # (2K,) per sqrt(hour)
    a_edge: float
    mean_log_edge: float
    sigma_edge_rel: float
    loadings: np.ndarray       # (2K, 2K)
    drift_c: float             # per bar
    jb_stat: float
    jb_pvalue: float
    summary: SummaryStats
    bars_per_hour: float = 60.0


def fit_report(panel: PanelData) -> FitReport:
    """Run every estimator over a panel and bundle the results."""
    delta_t = panel.times[1] - panel.times[0] if panel.n_bars > 1 else BAR_NS
    dt_hours = float(delta_t) / 3_600_000_000_000.0
    n = 2 * panel.K
    a = np.empty(n)
    mean_logq = np.empty(n)
    sigma_rel = np.empty(n)
    for j in range(n):
        series = panel.q[:, j]
        if np.any(series <= 0.0):
            k = j - panel.K + 1
            raise FitError(f"bucket k={k} has non-positive mass; cannot take logs")
        fit = fit_ar1(np.log(series), dt_hours)
        a[j], mean_logq[j], sigma_rel[j] = fit.a, fit.mean, fit.sigma_rel
    if np.any(panel.edge <= 0.0):
        raise FitError("edge series has non-positive values; cannot take logs")
    edge_fit = fit_ar1(np.log(panel.edge), dt_hours)
    loadings = fit_loadings(panel)
    jb, p = jarque_bera(panel.pi)
    return FitReport(
        K=panel.K,
        delta_p=panel.delta_p,
        pi_last=float(panel.pi[-1]),
        a=a,
        mean_logq=mean_logq,
        sigma_rel=sigma_rel,
        a_edge=edge_fit.a,
        mean_log_edge=edge_fit.mean,
        sigma_edge_rel=edge_fit.sigma_rel,
        loadings=loadings,
        drift_c=fit_drift(panel.pi),
        jb_stat=jb,
        jb_pvalue=p,
        summary=summarize(panel.pi),
        bars_per_hour=1.0 / dt_hours,
    )


def to_model_params(report: FitReport) -> ModelParams:
    """Materialize fitted parameters as a simulatable ModelParams.

    The simulation starts from the long-run book shape at the last
    observed clearing price.  Edge loadings are not identified by the
    panel (a single series cannot pin a direction in factor space), so the
    uniform normalized profile is used.
    """
    n = 2 * report.K
    edge_loadings = np.full(n, 1.0 / math.sqrt(n * report.delta_p))
    return ModelParams(
        K=report.K,
        delta_p=report.delta_p,
        pi0=report.pi_last,
        q0=np.exp(report.mean_logq),
        a_q=report.a.copy(),
        mean_logq=report.mean_logq.copy(),
        sigma_q_rel=report.sigma_rel.copy(),
        loadings=report.loadings.copy(),
        edge0=math.exp(report.mean_log_edge),
        a_edge=report.a_edge,
        mean_log_edge=report.mean_log_edge,
        sigma_edge_rel=report.sigma_edge_rel,
        edge_loadings=edge_loadings,
        drift_c=report.drift_c * report.bars_per_hour,
    )


def calibrate(source, pi0: float, K: int, delta_p: float,
              strict: bool = False,
              p_min: float = PRICE_WINDOW[0], p_max: float = PRICE_WINDOW[1],
              session: tuple = (SESSION_START_NS, SESSION_END_NS)) -> FitReport:
    """Full pipeline from a message-log text stream to a FitReport."""
    parsed = parse_messages(source, strict=strict)
    cleaned = clean(parsed.events, p_min=p_min, p_max=p_max, session=session)
    annotated = infer_cancellations(cleaned.events)
    panel = build_panel(annotated, pi0=pi0, K=K, delta_p=delta_p, session=session)
    return fit_report(panel)


# ----------------------------------------------------------------------
# synthetic log generation (round-trip oracle and bundled demo data)

def synthesize_log(params: ModelParams, n_bars: int, seed: int = 0,
                   session_start_ns: int = SESSION_START_NS,
                   delta_t_ns: int = BAR_NS) -> list:
    """Message log whose replayed panel equals a simulated physical path.

    One bar at a time: the previous bar's orders are deleted, a crossing
    pair prints a trade exactly at the simulated clearing price, and fresh
    resting orders place each bucket's simulated mass at its bucket-center
    offset (buys below the clearing price, sells at and above it, plus a
    deep buy that makes the edge aggregate match).  Replaying the log and
    rebuilding the panel therefore recovers pi, every q(k), and the edge
    series exactly, which is what makes parameter-recovery tests sharp.
    """
    state = init_state(params)
    cfg = SheetConfig(factor_count=2 * params.K, delta_p=params.delta_p,
                      seed=seed)
    dt_hours = delta_t_ns / 3_600_000_000_000.0
    K = params.K
    events: list = []
    live_ids: list = []

    for bar in range(n_bars):
        t0 = session_start_ns + bar * delta_t_ns
        ts = t0 + 1_000_000  # strictly inside the bar
        if bar > 0:
            inc = increments(cfg, dt_hours, bar - 1)
            state = step_physical(state, params, inc, dt_hours)

        def emit(msg_type, side, order_id, price, size):
            nonlocal ts
            events.append(MessageEvent(msg_type, side, ts, order_id, price, size))
            ts += 1_000_000

        for order_id, side, price, size in live_ids:
            emit("D", side, order_id, price, size)
        live_ids = []

        pi = state.pi
        emit("A", Side.SELL, f"x{bar}s", pi, 1.0)
        emit("A", Side.BUY, f"x{bar}b", pi, 1.0)  # prints the trade at pi

        q = state.quantities()
        for j in range(2 * K):
            k = j - K + 1
            side = Side.BUY if k < 0 else Side.SELL
            oid = f"q{bar}k{j}"
            price = pi + k * params.delta_p
            emit("A", side, oid, price, float(q[j]))
            live_ids.append((oid, side, price, float(q[j])))
        # Deep buy below the grid: brings total buys up to the edge value.
        deep = state.edge() - float(q[: K - 1].sum())
        if deep > 0.0:
            oid = f"e{bar}"
            price = pi - K * params.delta_p
            emit("A", Side.BUY, oid, price, deep)
            live_ids.append((oid, Side.BUY, price, deep))

    return events


def format_log(events: Sequence) -> str:
    """Render events in the text format ``parse_messages`` reads.

    Floats use their shortest round-tripping representation, so a
    parse(format(x)) cycle reproduces prices and sizes bit-for-bit.
    """
    lines = [
        f"{ev.msg_type},{ev.side.value},{ev.timestamp},{ev.order_id},"
        f"{ev.price!r},{ev.size!r}"
        for ev in events
    ]
    return "\n".join(lines) + "\n"
