"""Clearing-price volatility, market price of risk, and risk-neutral stepping.

The clearing price moves because the whole curve moves.  Writing the curve
value at the node below bucket i as N(i-1) (noise loading vector V_i over the
2K factors) and the bucket-i mass as q̃(i), the zero-crossing offset inside
bucket i is z = Δp·N(i-1)/q̃(i) + const, so Itô's formula on that ratio gives
the exact drift and loadings of π for the piecewise-linear curve.  Killing
the drift for every possible clearing bucket i yields a square linear system
in the per-factor market prices of risk λ_j:

    Σ(i,j) λ_j = b(i),   Σ(i,j) = [-V_i(j) + w_i·q̃(i)σ(i)B(i,j)]·Δp

where w_i is the zero position each row assumes inside its bucket (see
_row_anchors: mid-bucket for the live clearing row, bucket edge for the
hypothetical ones).  The right side collects the physical drift of the
curve value, the w_i share of the clearing bucket's own drift, and the
covariance between the clearing-bucket mass and the price: see
_mpr_right_side.  Under the changed measure each factor increment picks up
-λ_j√Δp·dt, which is how step_risk_neutral applies the solution.

The quoted volatility identity sigma_pi = ||V||·Δp/q̃(clearing bucket) uses
the curve-value loadings alone (price_vol); the live row of the linear
system additionally carries the clearing bucket's own half-weighted noise,
a sub-percent distinction kept so that doubling the clearing mass halves
sigma_pi exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import sheet
from .demand import DemandState, _advance, _nodal_loadings
from .errors import SimulationError, SingularSystemError
from .params import ModelParams

COND_LIMIT = 1e12


def kill_vectors(state: DemandState, params: ModelParams) -> np.ndarray:
    """Rows i = -K+1..K: factor loadings V_i of the curve value entering bucket i."""
    return _nodal_loadings(state, params)[:-1]


@dataclass(frozen=True)
class PriceVol:
    sigma_pi: float     # currency per sqrt(hour)
    b_pi: np.ndarray    # factor loadings, sum_j b^2 Δp = 1


def price_vol(state: DemandState, params: ModelParams, bucket: int = 0) -> PriceVol:
    """Volatility of π when the curve clears in `bucket`, via loading normalization.

    The unnormalized loading vector of dπ is -V·Δp/q̃(bucket); its Δp-norm is
    sigma_pi and the normalized remainder is b_pi.
    """
    i = params.idx(bucket)
    q_i = float(np.exp(state.log_q[i]))
    u = -kill_vectors(state, params)[i] * state.delta_p / q_i
    sigma = float(np.sqrt((u**2).sum() * state.delta_p))
    if sigma == 0.0:
        return PriceVol(0.0, np.zeros_like(u))
    return PriceVol(sigma, u / sigma)


def sigma_pi_direct(state: DemandState, params: ModelParams, bucket: int = 0) -> float:
    """Same volatility evaluated directly: ||V||·Δp / q̃(bucket)."""
    i = params.idx(bucket)
    v = kill_vectors(state, params)[i]
    q_i = float(np.exp(state.log_q[i]))
    return float(np.sqrt((v**2).sum() * state.delta_p) * state.delta_p / q_i)


@dataclass(frozen=True)
class DriftPieces:
    F_pi: float         # slope of the curve at the clearing price (density, negated)
    F_pipi: float       # central-difference curvature surrogate at the clearing bucket
    C_term: float       # covariance of the clearing-bucket mass with dπ, negated
    H: np.ndarray       # -cumulative σ_q·b_q sums below the clearing price


def drift_pieces(state: DemandState, params: ModelParams) -> DriftPieces:
    q = state.quantities()
    dp = state.delta_p
    i0 = params.idx(0)
    lo = q[i0 - 1] if i0 - 1 >= 0 else q[i0]
    hi = q[i0 + 1] if i0 + 1 < len(q) else q[i0]
    F_pi = -q[i0] / dp
    F_pipi = -(hi - lo) / (2 * dp**2) if 0 < i0 < len(q) - 1 \
        else -(hi - lo) / dp**2                      # one-sided at grid ends
    per_bucket = (q * params.sigma_q_rel)[:, None] * params.loadings
    H = -per_bucket[:i0].sum(axis=0) * dp
    pv = price_vol(state, params)
    C = -pv.sigma_pi * (q[i0] * params.sigma_q_rel[i0] / dp) * \
        float(params.loadings[i0] @ pv.b_pi) * dp
    return DriftPieces(float(F_pi), float(F_pipi), float(C), H)


# ----------------------------------------------------------------------
# the market-price-of-risk system

@dataclass
class MprSystem:
    Sigma: np.ndarray
    b: np.ndarray
    lam: np.ndarray | None = None
    residual_norm: float | None = None
    cond: float | None = None


def _row_anchors(params: ModelParams) -> np.ndarray:
    """Fractional zero position w_i assumed by each drift-kill row.

    The clearing bucket's row sits mid-bucket (w = 1/2), where re-centering
    actually leaves the zero, so the realized price drift is killed exactly.
    Hypothetical rows for the other buckets anchor at the bucket edge
    (w = 0); that choice decouples the row differences — each λ_j is pinned
    by its own bucket's drift instead of an alternating neighbour recursion
    that amplifies through thinly populated buckets.
    """
    w = np.zeros(2 * params.K)
    w[params.idx(0)] = 0.5
    return w


def _mpr_left_side(q, V, w, params: ModelParams, delta_p: float) -> np.ndarray:
    own = (w * q * params.sigma_q_rel)[:, None] * params.loadings
    return (-V + own) * delta_p


def _mpr_right_side(state: DemandState, params: ModelParams, q, V, w) -> np.ndarray:
    dp = state.delta_p
    mu_q = q * (-params.a_q * (state.log_q - params.mean_logq) + 0.5 * params.sigma_q_rel**2)
    mu_e = state.edge() * (-params.a_edge * (state.log_edge - params.mean_log_edge)
                           + 0.5 * params.sigma_edge_rel**2)
    below = np.concatenate(([0.0], np.cumsum(mu_q)))[:-1]   # sum_{l<=i-1} mu_q
    cross = params.sigma_q_rel * (params.loadings * V).sum(axis=1) * dp
    return below - mu_e + w * (mu_q - q * params.sigma_q_rel**2) + cross


def build_mpr_system(state: DemandState, params: ModelParams) -> MprSystem:
    """Assemble the drift-kill equations, one row per potential clearing bucket."""
    q = state.quantities()
    V = kill_vectors(state, params)
    w = _row_anchors(params)
    return MprSystem(Sigma=_mpr_left_side(q, V, w, params, state.delta_p),
                     b=_mpr_right_side(state, params, q, V, w))


def solve_mpr(system: MprSystem, cond_limit: float = COND_LIMIT) -> MprSystem:
    """Solve for λ by dense factorization; record residual and condition number."""
    try:
        cond = float(np.linalg.cond(system.Sigma))
        if not np.isfinite(cond) or cond > cond_limit:
            raise SingularSystemError(
                f"market-price-of-risk system condition number {cond:.3e} exceeds {cond_limit:.0e}")
        lam = np.linalg.solve(system.Sigma, system.b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"market-price-of-risk system is singular: {exc}") from exc
    residual = float(np.linalg.norm(system.Sigma @ lam - system.b))
    return replace(system, lam=lam, residual_norm=residual, cond=cond)


def step_risk_neutral(state: DemandState, params: ModelParams, lam: np.ndarray,
                      inc: np.ndarray, dt: float) -> DemandState:
    """One step under the changed measure: dW_j -> dW_j - λ_j√Δp·dt, then re-clear.

    The physical-measure price translation params.drift_c does not apply here;
    it is a diagnostic of the observed price series, not part of the
    martingale dynamics.
    """
    shifted = inc - lam * math.sqrt(params.delta_p) * dt
    return _advance(state, params, shifted, dt, 0.0)


# ----------------------------------------------------------------------
# vectorized path ensemble
#
# The per-path state is stored as flat arrays so that the OU update, the
# clearing search, and the 2K x 2K solves all run batched.  Logic mirrors
# demand.clear / step_physical exactly; test_risk_neutral pins the two
# implementations against each other path-for-path.

@dataclass
class Ensemble:
    delta_p: float
    log_edge: np.ndarray    # (n,)
    log_q: np.ndarray       # (n, 2K)
    pi: np.ndarray          # (n,)
    alive: np.ndarray       # (n,) bool
    t: float = 0.0


@dataclass
class SimDiagnostics:
    n_steps: int = 0
    n_relabel: int = 0
    n_aborted_top: int = 0
    n_aborted_bottom: int = 0
    n_aborted_singular: int = 0
    max_rel_residual: float = 0.0

    @property
    def n_aborted(self) -> int:
        return self.n_aborted_top + self.n_aborted_bottom + self.n_aborted_singular


def init_ensemble(params: ModelParams, n_paths: int) -> Ensemble:
    params.validate()
    return Ensemble(
        delta_p=params.delta_p,
        log_edge=np.full(n_paths, np.log(params.edge0)),
        log_q=np.tile(np.log(params.q0), (n_paths, 1)),
        pi=np.full(n_paths, params.pi0),
        alive=np.ones(n_paths, dtype=bool),
    )


def _batch_clear(ens: Ensemble, params: ModelParams, diag: SimDiagnostics) -> None:
    """Vectorized zero-crossing, relabeling, and edge re-anchoring (in place)."""
    n, twoK = ens.log_q.shape
    K = twoK // 2
    dp = ens.delta_p
    # overflow to inf is a legitimate outcome here: such rows fail the
    # finiteness screen below and are counted as breached, not crashed
    with np.errstate(over="ignore"):
        q = np.exp(ens.log_q)
        vals = np.exp(ens.log_edge)[:, None] - np.concatenate(
            [np.zeros((n, 1)), np.cumsum(q, axis=1)], axis=1)
    offs = (np.arange(-K, K + 1) + 0.5) * dp

    finite = np.isfinite(vals).all(axis=1)
    bad_top = ens.alive & finite & (vals[:, -1] >= 0.0)
    bad_bot = ens.alive & finite & (vals[:, 0] <= 0.0)
    broken = ens.alive & ~finite
    diag.n_aborted_top += int(bad_top.sum())
    diag.n_aborted_bottom += int((bad_bot | broken).sum())
    ens.alive &= finite & ~(bad_top | bad_bot)
    if broken.any():        # placeholder state so later vector math stays finite
        ens.log_q[broken] = params.mean_logq
        ens.log_edge[broken] = params.mean_log_edge
        vals[broken] = 1.0
    live = ens.alive
    if not live.any():
        raise SimulationError("all simulated paths aborted (grid boundary breached)")

    neg = np.where(np.isfinite(vals), vals, 0.0) < 0.0
    neg[:, 0] = False                      # live rows start positive anyway
    j = np.clip(np.argmax(neg, axis=1), 1, twoK)
    rows = np.arange(n)
    v_hi = vals[rows, j - 1]
    v_lo = vals[rows, j]
    denom = np.where(live, v_hi - v_lo, 1.0)
    z = np.where(live, offs[j - 1] + dp * v_hi / denom, 0.0)
    ens.pi = ens.pi + z

    kstar = np.floor(z / dp + 0.5).astype(int)
    moved = live & (kstar != 0)
    if moved.any():
        diag.n_relabel += int(moved.sum())
        idx = np.where(moved)[0]
        src = np.arange(twoK)[None, :] + kstar[idx][:, None]
        inside = (src >= 0) & (src < twoK)
        block = np.take_along_axis(ens.log_q[idx], np.clip(src, 0, twoK - 1), axis=1)
        ens.log_q[idx] = np.where(inside, block, params.mean_logq[None, :])

    q = np.exp(ens.log_q)
    edge = q[:, : K - 1].sum(axis=1) + 0.5 * q[:, K - 1]
    ens.log_edge = np.log(edge)


class _KillTransform:
    """Per-run constants for the closed-form drift-kill solution.

    Row-differencing the square system leaves a bidiagonal relation in the
    rotated unknowns y_i = B(i,:)·λ and e = B_E·λ, so each path's Girsanov
    shifts (which only involve y and e, never λ itself) come out in O(K)
    arithmetic per bucket instead of a dense solve.  λ is recovered on
    demand as A⁻¹·(e, y_0..y_{2K-2}) with A = [B_E; B rows 0..2K-2].
    """

    def __init__(self, params: ModelParams):
        if np.any(params.sigma_q_rel <= 0) or params.sigma_edge_rel <= 0:
            raise SingularSystemError(
                "every bucket and the edge need positive volatility for a "
                "unique market price of risk")
        self.w = _row_anchors(params)
        self.A = np.vstack([params.edge_loadings, params.loadings[:-1]])
        try:
            self.g = np.linalg.solve(self.A.T, params.loadings[-1])
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(
                f"factor loadings do not identify the market prices of risk: {exc}") from exc
        gram = params.loadings @ params.loadings.T
        self.below_gram = np.tril(gram, k=-1)       # row i picks up buckets l < i
        self.dot_edge = params.loadings @ params.edge_loadings


def _batch_kill_shifts(ens: Ensemble, params: ModelParams,
                       kt: _KillTransform) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotated drift-kill solution (y, e) for every path, plus the b vectors."""
    dp = ens.delta_p
    i0 = params.idx(0)
    q = np.exp(ens.log_q)
    edge = np.exp(ens.log_edge)
    qs = q * params.sigma_q_rel
    cross = params.sigma_q_rel * (
        (edge * params.sigma_edge_rel)[:, None] * kt.dot_edge - qs @ kt.below_gram.T) * dp
    mu_q = q * (-params.a_q * (ens.log_q - params.mean_logq) + 0.5 * params.sigma_q_rel**2)
    mu_e = edge * (-params.a_edge * (ens.log_edge - params.mean_log_edge)
                   + 0.5 * params.sigma_edge_rel**2)
    below = np.cumsum(mu_q, axis=1) - mu_q          # sum over buckets l < i
    b = below - mu_e[:, None] + kt.w * (mu_q - q * params.sigma_q_rel**2) + cross

    db = np.diff(b, axis=1)
    y = np.empty_like(b)
    y[:, :-1] = db / (qs[:, :-1] * dp)
    y[:, i0] = 2.0 * db[:, i0] / (qs[:, i0] * dp)
    if i0 >= 1:
        y[:, i0 - 1] = (db[:, i0 - 1] / dp - 0.5 * qs[:, i0] * y[:, i0]) / qs[:, i0 - 1]
    e = (kt.w[0] * qs[:, 0] * y[:, 0] * dp - b[:, 0]) / (edge * params.sigma_edge_rel * dp)
    c = np.concatenate([e[:, None], y[:, :-1]], axis=1)
    y[:, -1] = c @ kt.g
    return y, e, b


def _path0_rel_residual(ens: Ensemble, params: ModelParams, kt: _KillTransform,
                        y, e, b) -> float:
    """Residual of the full system on path 0, as a solve-quality telltale."""
    lam0 = np.linalg.solve(kt.A, np.concatenate(([e[0]], y[0, :-1])))
    qs0 = np.exp(ens.log_q[0]) * params.sigma_q_rel
    per_bucket = qs0[:, None] * params.loadings
    cum = np.cumsum(per_bucket, axis=0) - per_bucket
    V0 = (np.exp(ens.log_edge[0]) * params.sigma_edge_rel) * params.edge_loadings[None, :] - cum
    Sigma0 = (-V0 + kt.w[:, None] * per_bucket) * ens.delta_p
    bnorm = float(np.linalg.norm(b[0]))
    return float(np.linalg.norm(Sigma0 @ lam0 - b[0])) / (bnorm if bnorm > 0 else 1.0)


def _ou_factors(a, sigma, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact-step decay e^{-a dt} and noise scale sqrt(var of the OU increment)."""
    a = np.asarray(a, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    decay = np.exp(-a * dt)
    var_scale = np.where(a > 0, -np.expm1(-2 * np.where(a > 0, a, 1.0) * dt) / (2 * a + (a <= 0)),
                         dt)
    return decay, sigma * np.sqrt(var_scale)


def simulate_ensemble(params: ModelParams, n_paths: int, horizon_hours: float,
                      dt_hours: float, seed: int = 0, *,
                      risk_neutral: bool = True,
                      record_pi: int = 0) -> tuple[Ensemble, SimDiagnostics, np.ndarray | None]:
    """Run n_paths of the book under the physical or risk-neutral measure.

    The horizon is divided into ceil(horizon/dt) equal steps.  Paths that
    breach the grid are frozen and counted in the diagnostics; their terminal
    π is left at the value before the breach.  When record_pi > 0 the π
    trajectory of that many paths is returned as an array (steps+1, record_pi).
    """
    if horizon_hours <= 0 or dt_hours <= 0:
        raise ValueError("horizon and dt must be positive")
    n_steps = max(1, int(math.ceil(horizon_hours / dt_hours - 1e-12)))
    dt = horizon_hours / n_steps

    ens = init_ensemble(params, n_paths)
    diag = SimDiagnostics(n_steps=n_steps)
    cfg = sheet.SheetConfig(factor_count=params.factor_count, delta_p=params.delta_p, seed=seed)
    noiseless = not (np.any(params.sigma_q_rel > 0) or params.sigma_edge_rel > 0)
    kill = risk_neutral and not noiseless   # no noise: measure change is a no-op
    kt = _KillTransform(params) if kill else None
    translation = 0.0 if risk_neutral else params.drift_c * dt
    track = np.empty((n_steps + 1, record_pi)) if record_pi else None
    if track is not None:
        track[0] = ens.pi[:record_pi]

    root_dt = math.sqrt(dt)
    root_dp = math.sqrt(params.delta_p)
    shift_scale = params.delta_p * root_dt          # z picks up -y·Δp·√dt
    decay_q, vol_q = _ou_factors(params.a_q, params.sigma_q_rel, dt)
    decay_e, vol_e = _ou_factors(params.a_edge, params.sigma_edge_rel, dt)

    for step in range(n_steps):
        inc = sheet.increments_block(cfg, dt, step, n_paths)
        z_q = (inc @ params.loadings.T) * (root_dp / root_dt)
        z_e = (inc @ params.edge_loadings) * (root_dp / root_dt)
        if kill:
            y, e, b = _batch_kill_shifts(ens, params, kt)
            if ens.alive[0]:
                diag.max_rel_residual = max(
                    diag.max_rel_residual, _path0_rel_residual(ens, params, kt, y, e, b))
            z_q -= y * shift_scale
            z_e -= e * shift_scale
        new_log_q = params.mean_logq + (ens.log_q - params.mean_logq) * decay_q + vol_q * z_q
        new_log_edge = (params.mean_log_edge
                        + (ens.log_edge - params.mean_log_edge) * decay_e + vol_e * z_e)
        live = ens.alive
        ens.log_q[live] = new_log_q[live]
        ens.log_edge[live] = new_log_edge[live]
        _batch_clear(ens, params, diag)
        if translation:
            ens.pi[ens.alive] += translation
        ens.t += dt
        if track is not None:
            track[step + 1] = ens.pi[:record_pi]
    return ens, diag, track
