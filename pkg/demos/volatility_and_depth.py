"""How book depth at the clearing price sets the price volatility.

The clearing price diffuses with a volatility that is inversely proportional
to the resting quantity in the bucket being cleared: piling orders onto the
clearing price damps it, thinning them amplifies it.  This script sweeps the
depth of that one bucket and prints the resulting volatility, confirms the
exact factor-of-two law, and shows the diagnostics of the drift-kill solve
that makes the simulated price driftless.
"""

import math
from dataclasses import replace

import numpy as np

from bookvol.demand import init_state
from bookvol.params import demo_params
from bookvol.riskneutral import (
    build_mpr_system,
    price_vol,
    sigma_pi_direct,
    solve_mpr,
    step_risk_neutral,
)
from bookvol.sheet import SheetConfig, increments

HOURS_PER_YEAR = 1638.0


def scaled_state(params, factor: float):
    """The demo book with the clearing bucket's mass scaled, all else equal."""
    state = init_state(params)
    bumped = replace(state, log_q=state.log_q.copy())
    bumped.log_q[params.idx(0)] += math.log(factor)
    return bumped


def main() -> None:
    params = demo_params()

    print("== depth sweep at the clearing bucket ==")
    print(f"{'depth x':>8s} {'sigma_pi /sqrt(h)':>18s} {'annualized':>11s}")
    for factor in (0.25, 0.5, 1.0, 2.0, 4.0):
        vol = sigma_pi_direct(scaled_state(params, factor), params)
        print(f"{factor:8.2f} {vol:18.6f} {vol * math.sqrt(HOURS_PER_YEAR):10.4f}")

    state = init_state(params)
    base = sigma_pi_direct(state, params)
    doubled = sigma_pi_direct(scaled_state(params, 2.0), params)
    print(f"\ndoubling check: {doubled:.12f} == {base:.12f}/2 "
          f"(ratio {doubled / base:.15f})")

    pv = price_vol(state, params)
    print(f"normalization route agrees: {pv.sigma_pi:.15f} "
          f"vs direct {base:.15f}")

    print("\n== drift-kill solve over ten one-minute steps ==")
    cfg = SheetConfig(params.factor_count, params.delta_p, seed=3)
    print(f"{'step':>4s} {'cond':>10s} {'residual/|b|':>13s} {'sigma_pi':>10s}")
    dt = 1.0 / 60.0
    for step in range(10):
        system = solve_mpr(build_mpr_system(state, params))
        rel = system.residual_norm / np.linalg.norm(system.b)
        print(f"{step:4d} {system.cond:10.2e} {rel:13.2e} "
              f"{sigma_pi_direct(state, params):10.6f}")
        state = step_risk_neutral(state, params, system.lam,
                                  increments(cfg, dt, step), dt)


if __name__ == "__main__":
    main()
