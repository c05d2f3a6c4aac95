"""Monte Carlo valuation of European calls on the clearing price.

The pipeline is: draw a risk-neutral ensemble of demand-curve paths, read
off the terminal clearing prices, average call payoffs per strike, and
invert the Black-Scholes formula (bisection) to express each price as an
annualized implied volatility.  All strikes share one terminal sample
(common random numbers), which makes monotonicity and convexity of the
price curve in strike exact rather than statistical, and makes put-call
parity an algebraic identity on the sample.

Expiries and step sizes are quoted in trading years of
``TRADING_HOURS_PER_YEAR`` hours (252 days x 6.5 hours); the simulation
itself runs in trading hours.  Discounting of the Monte Carlo payoff is
omitted (the model is built at zero rate), but a nonzero ``rate`` is
honored inside the Black-Scholes inversion.

Everything here is deterministic for a fixed (params, request) pair: the
ensemble is driven by counter-based streams keyed on the request seed and
the payoff reduction is a fixed-order numpy sum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, SimulationError
from .params import ModelParams
from .riskneutral import simulate_ensemble

# 252 trading days of 6.5 hours each.
TRADING_HOURS_PER_YEAR = 1638.0

# One calibration bar (one minute) expressed in trading years.
ONE_MINUTE_YEARS = 1.0 / (60.0 * TRADING_HOURS_PER_YEAR)

# Bisection bracket and price tolerance for implied-vol inversion.
VOL_BRACKET = (1e-6, 5.0)
PRICE_TOL = 1e-8


@dataclass(frozen=True)
class PricingRequest:
    """Inputs of one valuation run.

    ``strikes`` are in currency, ``expiry`` and ``dt`` in trading years,
    ``rate`` is an annual rate used only for Black-Scholes inversion.
    """

    strikes: tuple
    expiry: float
    n_paths: int = 10_000
    dt: float = ONE_MINUTE_YEARS
    seed: int = 0
    rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "strikes", tuple(float(k) for k in self.strikes))
        if not self.expiry > 0.0:
            raise ConfigError(f"expiry must be positive, got {self.expiry}")
        if self.n_paths < 1:
            raise ConfigError(f"need at least one path, got {self.n_paths}")
        if not 0.0 < self.dt <= self.expiry:
            raise ConfigError(
                f"dt must be in (0, expiry], got dt={self.dt} expiry={self.expiry}"
            )
        if any(k <= 0.0 for k in self.strikes):
            raise ConfigError("strikes must be positive")


@dataclass(frozen=True)
class OptionQuote:
    """One strike's price, Monte Carlo standard error, and implied vol.

    ``implied_vol`` is None when the price admits no Black-Scholes root
    (below intrinsic from Monte Carlo noise, or at/above spot).
    """

    strike: float
    price: float
    std_error: float
    implied_vol: Optional[float]


@dataclass(frozen=True)
class SmileTable:
    quotes: tuple
    n_aborted_paths: int

    def to_text(self) -> str:
        """Delimiter-separated table, one row per strike.

        Columns: strike, price, std_error, implied_vol, n_aborted_paths.
        An undefined implied vol prints as ``nan``.
        """
        lines = ["strike,price,std_error,implied_vol,n_aborted_paths"]
        for q in self.quotes:
            iv = "nan" if q.implied_vol is None else f"{q.implied_vol:.10g}"
            lines.append(
                f"{q.strike:.10g},{q.price:.10g},{q.std_error:.10g},"
                f"{iv},{self.n_aborted_paths}"
            )
        return "\n".join(lines) + "\n"


def simulate_terminals(params: ModelParams, req: PricingRequest) -> np.ndarray:
    """Terminal clearing prices of a risk-neutral ensemble.

    Runs ``req.n_paths`` paths to ``req.expiry`` and returns the clearing
    prices of the paths that survived.  Paths that breach the price grid
    are excluded and reported through a warning; if none survive the run
    is useless and a simulation-failure error is raised.
    """
    horizon_hours = req.expiry * TRADING_HOURS_PER_YEAR
    dt_hours = req.dt * TRADING_HOURS_PER_YEAR
    ens, diag, _ = simulate_ensemble(
        params, req.n_paths, horizon_hours, dt_hours, seed=req.seed,
        risk_neutral=True,
    )
    terminals = ens.pi[ens.alive]
    n_aborted = req.n_paths - terminals.size
    if terminals.size == 0:
        raise SimulationError(
            f"all {req.n_paths} paths aborted before expiry "
            f"(top {diag.n_aborted_top}, bottom {diag.n_aborted_bottom}, "
            f"singular {diag.n_aborted_singular})"
        )
    if n_aborted:
        warnings.warn(
            f"{n_aborted} of {req.n_paths} paths aborted at a grid boundary "
            "and were excluded from the terminal sample",
            RuntimeWarning,
            stacklevel=2,
        )
    return terminals


def call_price(terminals: np.ndarray, strike: float) -> tuple:
    """Sample mean of the call payoff and its standard error."""
    terminals = np.asarray(terminals, dtype=float)
    if terminals.size == 0:
        raise ValueError("empty terminal sample")
    payoff = np.maximum(terminals - strike, 0.0)
    price = float(payoff.mean())
    if payoff.size > 1:
        se = float(payoff.std(ddof=1) / math.sqrt(payoff.size))
    else:
        se = 0.0
    return price, se


def put_price(terminals: np.ndarray, strike: float) -> tuple:
    """Sample mean of the put payoff and its standard error."""
    terminals = np.asarray(terminals, dtype=float)
    if terminals.size == 0:
        raise ValueError("empty terminal sample")
    payoff = np.maximum(strike - terminals, 0.0)
    price = float(payoff.mean())
    if payoff.size > 1:
        se = float(payoff.std(ddof=1) / math.sqrt(payoff.size))
    else:
        se = 0.0
    return price, se


def bs_call(spot: float, strike: float, expiry: float, rate: float,
            sigma: float) -> float:
    """Black-Scholes value of a European call.

    The zero-volatility (or zero-expiry) limit is the discounted
    intrinsic value max(spot - strike*exp(-rate*expiry), 0).
    """
    disc = math.exp(-rate * expiry)
    if sigma <= 0.0 or expiry <= 0.0:
        return max(spot - strike * disc, 0.0)
    srt = sigma * math.sqrt(expiry)
    d1 = (math.log(spot / strike) + (rate + 0.5 * sigma * sigma) * expiry) / srt
    d2 = d1 - srt
    return spot * float(norm.cdf(d1)) - strike * disc * float(norm.cdf(d2))


def implied_vol(price: float, spot: float, strike: float, expiry: float,
                rate: float = 0.0) -> Optional[float]:
    """Annualized volatility whose Black-Scholes call value matches ``price``.

    Bisection over sigma in [1e-6, 5] to a price tolerance of 1e-8.
    Returns None (undefined, not an exception) when no root exists in the
    bracket: price strictly below the discounted intrinsic value, price at
    or above spot, or price requiring a volatility above 5.  A price that
    equals intrinsic exactly sits on the boundary and maps to 0.
    """
    if not (expiry > 0.0 and spot > 0.0 and strike > 0.0):
        raise ValueError(
            f"expiry, spot and strike must be positive, got "
            f"expiry={expiry} spot={spot} strike={strike}"
        )
    intrinsic = max(spot - strike * math.exp(-rate * expiry), 0.0)
    if price == intrinsic:
        return 0.0
    if price < intrinsic or price >= spot:
        return None

    lo, hi = VOL_BRACKET
    if bs_call(spot, strike, expiry, rate, lo) >= price:
        # Root sits below the bracket floor; the floor is within tolerance
        # of it for any realistic vega.
        return lo
    if bs_call(spot, strike, expiry, rate, hi) < price:
        return None
    # Pinch the bracket to 1e-12 in sigma rather than stopping on the
    # price gap alone: where vega is tiny (deep in the money, short
    # expiry) a 1e-8 price gap can still hide a 1e-5 error in sigma.
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if bs_call(spot, strike, expiry, rate, mid) < price:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def smile(params: ModelParams, req: PricingRequest) -> SmileTable:
    """Option quotes across strikes from one shared terminal sample.

    Common random numbers: every strike is priced on the same terminals,
    so the price curve is non-increasing and convex in strike exactly.
    Implied vols invert Black-Scholes at spot = params.pi0.
    """
    if not req.strikes:
        raise ConfigError("smile needs at least one strike")
    terminals = simulate_terminals(params, req)
    n_aborted = req.n_paths - terminals.size
    quotes = []
    for strike in req.strikes:
        price, se = call_price(terminals, strike)
        iv = implied_vol(price, params.pi0, strike, req.expiry, req.rate)
        quotes.append(OptionQuote(strike, price, se, iv))
    return SmileTable(tuple(quotes), n_aborted)
