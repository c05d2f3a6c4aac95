"""Relative net-demand curve: state, dynamics, clearing, and the inverse process.

The resting book is summarized by bucket masses q̃(k,t) on a grid of relative
price offsets around the clearing price π(t).  Bucket k covers offsets
((k-1/2)Δp, (k+1/2)Δp], so bucket 0 straddles the clearing price itself.  The
cumulative net demand is anchored below the grid by the edge value
Q̃(-K,t) and decreases through the buckets:

    Q̃(k,t) = Q̃(-K,t) - sum_{l=-K+1..k} q̃(l,t)

Between the node offsets (k+1/2)Δp the curve is linear (the bucket mass is
spread uniformly), which makes the zero crossing, the inverse process and the
liquidation integral all exact piecewise-linear computations.

Dynamics: each log mass follows an Ornstein-Uhlenbeck process driven by the
factor noise of the sheet module.  After every step the curve is re-cleared:
the zero crossing is interpolated, π moves there, labels rotate by the whole
number of buckets the crossing moved, and the edge is re-anchored so the
re-labelled curve is exactly consistent (its zero sits at the new π).  The
masses themselves are never re-distributed; keeping the profile intact
preserves the stationary book shape that the volatility of π is built from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BoundaryBreachError,
    GridError,
    LiquiditySingularityError,
    SimulationError,
    UndefinedInverseError,
)
from .params import ModelParams
from .sheet import integrate


@dataclass
class DemandState:
    """Book state: log masses, log edge anchor, clearing price, elapsed hours."""

    delta_p: float
    log_edge: float
    log_q: np.ndarray          # (2K,), k = -K+1 .. K
    pi: float
    t: float = 0.0

    @property
    def K(self) -> int:
        return len(self.log_q) // 2

    def quantities(self) -> np.ndarray:
        return np.exp(self.log_q)

    def edge(self) -> float:
        return float(math.exp(self.log_edge))


@dataclass(frozen=True)
class CurveSample:
    k: int
    Qtilde: float


def init_state(params: ModelParams) -> DemandState:
    params.validate()
    return DemandState(
        delta_p=params.delta_p,
        log_edge=float(np.log(params.edge0)),
        log_q=np.log(params.q0),
        pi=params.pi0,
        t=0.0,
    )


def node_offsets(state: DemandState) -> np.ndarray:
    """Offsets (m + 1/2)Δp, m = -K..K, where the cumulative curve has nodes."""
    K = state.K
    return (np.arange(-K, K + 1) + 0.5) * state.delta_p


def node_values(state: DemandState) -> np.ndarray:
    """Cumulative net demand at the node offsets; first entry is the edge."""
    q = state.quantities()
    return state.edge() - np.concatenate(([0.0], np.cumsum(q)))


def net_demand(state: DemandState, k: int) -> float:
    """Q̃(k) = Q̃(-K) - sum_{l<=k} q̃(l); k = -K gives the edge itself."""
    K = state.K
    if not -K <= k <= K:
        raise GridError(f"bucket {k} outside grid [-{K}, {K}]")
    return float(node_values(state)[k + K])


def curve_samples(state: DemandState) -> list[CurveSample]:
    vals = node_values(state)
    return [CurveSample(k=m - state.K, Qtilde=float(v)) for m, v in enumerate(vals)]


def curve_value(state: DemandState, price: float) -> float:
    """Net demand at an absolute price, linear between nodes."""
    offs = node_offsets(state)
    s = price - state.pi
    if not offs[0] <= s <= offs[-1]:
        raise GridError(f"price {price} outside the bucket grid around pi={state.pi}")
    return float(np.interp(s, offs, node_values(state)))


# ----------------------------------------------------------------------
# clearing

def clear(state: DemandState, params: ModelParams) -> tuple[float, DemandState]:
    """Re-locate the clearing price at the curve's zero and re-center the grid.

    Returns (new clearing price, new state).  The crossing offset z is linear
    interpolation inside the bucket where the cumulative curve changes sign;
    labels rotate by round(z/Δp) buckets (fresh far buckets start at their
    long-run mean mass) and the edge is re-anchored so the relabelled curve
    passes through zero exactly at the new π.
    """
    if not (np.all(np.isfinite(state.log_q)) and np.isfinite(state.log_edge)):
        raise SimulationError("non-finite log quantities in state")
    vals = node_values(state)
    offs = node_offsets(state)
    if vals[0] <= 0.0:
        raise BoundaryBreachError("bottom", "net demand non-positive at the bottom of the grid")
    if vals[-1] >= 0.0:
        raise BoundaryBreachError("top", "net demand non-negative at the top of the grid")
    j = int(np.argmax(vals < 0.0))          # first node below zero
    z = offs[j - 1] + state.delta_p * vals[j - 1] / (vals[j - 1] - vals[j])
    pi_new = float(state.pi + z)

    kstar = int(math.floor(z / state.delta_p + 0.5))
    log_q = state.log_q
    if kstar != 0:
        n = 2 * state.K
        src = np.arange(n) + kstar
        inside = (src >= 0) & (src < n)
        rotated = params.mean_logq.astype(float).copy()
        rotated[inside] = log_q[src[inside]]
        log_q = rotated

    q = np.exp(log_q)
    K = state.K
    edge = q[: K - 1].sum() + 0.5 * q[K - 1]   # zero of the curve sits mid-bucket 0
    new = replace(state, log_q=log_q, log_edge=float(np.log(edge)), pi=pi_new)
    return pi_new, new


# ----------------------------------------------------------------------
# physical-measure dynamics

def ou_exact(x, a, mean, sigma, dt: float, z, shift=0.0):
    """One exact step of d(log x) = -a(log x - mean)dt + sigma dB + shift dt.

    `z` is a unit-variance standard normal driver.  a = 0 degenerates to the
    arithmetic step shift*dt + sigma*sqrt(dt)*z.
    """
    a = np.asarray(a, dtype=float)
    safe = np.where(a > 0.0, a, 1.0)
    decay = np.exp(-a * dt)
    drift_scale = np.where(a > 0.0, -np.expm1(-a * dt) / safe, dt)
    vol_scale = np.where(a > 0.0, np.sqrt(-np.expm1(-2.0 * a * dt) / (2.0 * safe)), np.sqrt(dt))
    return mean + (x - mean) * decay + shift * drift_scale + sigma * vol_scale * z


def _advance(state: DemandState, params: ModelParams, inc: np.ndarray, dt: float,
             translation: float) -> DemandState:
    """OU-step the relative book, re-clear, then translate the price level."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    root_dt = math.sqrt(dt)
    z_q = integrate(params.loadings, inc, params.delta_p) / root_dt
    z_e = integrate(params.edge_loadings, inc, params.delta_p) / root_dt
    log_q = ou_exact(state.log_q, params.a_q, params.mean_logq, params.sigma_q_rel, dt, z_q)
    log_edge = ou_exact(state.log_edge, params.a_edge, params.mean_log_edge,
                        params.sigma_edge_rel, dt, float(z_e))
    moved = replace(state, log_q=np.asarray(log_q), log_edge=float(log_edge), t=state.t + dt)
    _, cleared = clear(moved, params)
    if translation:
        cleared = replace(cleared, pi=cleared.pi + translation)
    return cleared


def step_physical(state: DemandState, params: ModelParams, inc: np.ndarray, dt: float) -> DemandState:
    """Advance the book one step under the physical measure and re-clear.

    `inc` holds the factor increments over dt (see sheet.increments); they are
    rescaled to unit variance before entering the exact OU update.  The fitted
    clearing-price drift params.drift_c (a physical-measure diagnostic, per
    hour) translates the price level on top of the relative-book move.
    """
    return _advance(state, params, inc, dt, params.drift_c * dt)


# ----------------------------------------------------------------------
# inverse process and liquidation proceeds

def inverse(state: DemandState, x) -> float:
    """Price at which net demand equals x (unique: the curve is strictly decreasing)."""
    vals = node_values(state)
    offs = node_offsets(state)
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr > vals[0]) or np.any(x_arr < vals[-1]):
        raise UndefinedInverseError(f"net demand level {x} outside curve range "
                                    f"[{vals[-1]:.6g}, {vals[0]:.6g}]")
    s = np.interp(x_arr, vals[::-1], offs[::-1])
    out = state.pi + s
    return float(out) if np.isscalar(x) or x_arr.ndim == 0 else out


def liquidation_proceeds(state: DemandState, theta: float) -> float:
    """L(θ) = ∫_0^θ P(x) dx, the value of unwinding θ shares against the curve.

    The curve is piecewise linear, so the integral is an exact sum of
    trapezoids between the node levels crossed by [0, θ].
    """
    if theta == 0.0:
        return 0.0
    vals = node_values(state)
    lo, hi = (0.0, theta) if theta > 0 else (theta, 0.0)
    if hi > vals[0] or lo < vals[-1]:
        raise UndefinedInverseError(f"liquidation of {theta} shares exceeds the curve range")
    interior = vals[(vals > lo) & (vals < hi)]
    grid = np.concatenate(([lo], np.sort(interior), [hi]))
    prices = inverse(state, grid)
    segments = np.diff(grid) * (prices[:-1] + prices[1:]) / 2.0
    total = float(segments.sum())
    return total if theta > 0 else -total


@dataclass(frozen=True)
class InverseCoeffs:
    mu: float
    sigma: float
    loadings: np.ndarray


def _nodal_drifts(state: DemandState, params: ModelParams) -> np.ndarray:
    """Ito drift of the cumulative curve value at each node, grid frozen."""
    q = state.quantities()
    edge = state.edge()
    mu_q = q * (-params.a_q * (state.log_q - params.mean_logq) + 0.5 * params.sigma_q_rel**2)
    mu_e = edge * (-params.a_edge * (state.log_edge - params.mean_log_edge)
                   + 0.5 * params.sigma_edge_rel**2)
    return mu_e - np.concatenate(([0.0], np.cumsum(mu_q)))


def _nodal_loadings(state: DemandState, params: ModelParams) -> np.ndarray:
    """(2K+1, 2K) factor-loading vectors of the curve value at each node."""
    q = state.quantities()
    edge = state.edge()
    per_bucket = (q * params.sigma_q_rel)[:, None] * params.loadings
    cum = np.vstack([np.zeros(params.factor_count), np.cumsum(per_bucket, axis=0)])
    return edge * params.sigma_edge_rel * params.edge_loadings[None, :] - cum


def inverse_dynamics_coeffs(state: DemandState, params: ModelParams, x: float) -> InverseCoeffs:
    """Drift, volatility, and loadings of the level P(x,t) with the grid frozen.

    The curve value and its loading vector are interpolated at P(x); the
    price derivatives (∂Q/∂p, ∂²Q/∂p², ∂σ_Q/∂p) use central differences on
    the node grid, so the coefficients are those of the piecewise model seen
    through a smooth three-node stencil.
    """
    price = inverse(state, x)
    s = price - state.pi
    offs = node_offsets(state)
    vals = node_values(state)
    dp = state.delta_p

    drifts = _nodal_drifts(state, params)
    vload = _nodal_loadings(state, params)
    sig_nodes = np.sqrt((vload**2).sum(axis=1) * dp)

    # interpolate level quantities at s
    j = min(max(int(np.searchsorted(offs, s, side="right")), 1), len(offs) - 1)
    w = (s - offs[j - 1]) / dp
    mu_Q = (1 - w) * drifts[j - 1] + w * drifts[j]
    v = (1 - w) * vload[j - 1] + w * vload[j]
    sigma_Q = float(np.sqrt((v**2).sum() * dp))

    # central differences at the node nearest to s
    m = min(max(int(np.floor(s / dp + 0.5)) + state.K, 1), len(offs) - 2)
    Q_p = (vals[m + 1] - vals[m - 1]) / (2 * dp)
    Q_pp = (vals[m + 1] - 2 * vals[m] + vals[m - 1]) / dp**2
    dsig_dp = (sig_nodes[m + 1] - sig_nodes[m - 1]) / (2 * dp)

    if Q_p == 0.0 or not np.isfinite(Q_p):
        raise LiquiditySingularityError("curve slope vanishes at the evaluation price")
    sigma_P = -sigma_Q / Q_p
    b_P = v / sigma_Q if sigma_Q > 0 else np.zeros_like(v)
    mu_P = -(mu_Q + 0.5 * Q_pp * sigma_P**2 + dsig_dp * sigma_P) / Q_p
    return InverseCoeffs(mu=float(mu_P), sigma=float(sigma_P), loadings=b_P)


# ----------------------------------------------------------------------
# wealth dynamics of a position held against the curve

def wealth_increment(state_before: DemandState, state_after: DemandState,
                     theta_before: float, theta_after: float, *,
                     jump: bool = True, theta_qv: float = 0.0) -> float:
    """Real-wealth change over one step for a position marked at liquidation value.

    Three contributions: the change of L(θ_before, ·) as the curve moves; a
    quadratic-variation trading cost 0.5*|P'|*d[θ] for strategies with a
    diffusive component (pass the increment of [θ] as theta_qv); and, when the
    position change is a block (jump=True), a displacement penalty equal to
    the area between the curve and the post-trade price over the traded
    interval.  On a strictly decreasing curve the penalty is strictly positive
    for any non-zero block; it vanishes for continuous finite-variation
    trading (jump=False, theta_qv=0).
    """
    dv = liquidation_proceeds(state_after, theta_before) - liquidation_proceeds(state_before, theta_before)

    if theta_qv != 0.0:
        vals = node_values(state_after)
        j = min(max(int(np.searchsorted(-vals, -theta_before, side="left")), 1), len(vals) - 1)
        slope = state_after.delta_p / (vals[j - 1] - vals[j])   # |dP/dx| on the segment
        dv -= 0.5 * slope * theta_qv

    if jump and theta_after != theta_before:
        gained = liquidation_proceeds(state_after, theta_after) - liquidation_proceeds(state_after, theta_before)
        penalty = gained - (theta_after - theta_before) * inverse(state_after, theta_after)
        dv -= penalty
    return float(dv)


def jump_penalty(state: DemandState, theta_before: float, theta_after: float) -> float:
    """Displacement cost of a block trade: area between curve and post-trade price."""
    gained = liquidation_proceeds(state, theta_after) - liquidation_proceeds(state, theta_before)
    return float(gained - (theta_after - theta_before) * inverse(state, theta_after))
