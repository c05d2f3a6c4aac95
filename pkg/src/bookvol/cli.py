"""Command-line driver for the order-book liquidity toolkit.

Five commands cover the pipeline end to end::

    bookvol replay    LOG   # matching engine: trades, clearing price, book
    bookvol calibrate LOG   # fit model parameters from a message log
    bookvol simulate        # terminal clearing prices under P or Q
    bookvol price           # Monte-Carlo option quotes
    bookvol smile           # quotes plus the implied-vol column

Configuration is a JSON file with optional sections ``model`` (same schema
as a parameter file), ``sheet`` (``seed``), ``pricing`` (``strikes``,
``expiry``, ``dt``, ``paths``, ``seed``, ``rate``), ``simulate``
(``measure``, ``expiry``, ``dt``, ``paths``, ``seed``), ``calibrate``
(``pi0``, ``K``, ``delta_p``, ``p_min``, ``p_max``, ``strict``) and
``replay`` (``opening_price``).  A bare parameter file — such as the one
``calibrate`` writes — is accepted wherever a config is and treated as its
``model`` section, so a fitted file feeds straight back into ``simulate``.
Command-line flags override config values.  Without ``--config`` the
bundled demo parameter set is used.

Every run emits a manifest recording the command, library version, seed and
a SHA-256 hash of the fully resolved inputs; it is written next to the
``--out`` artifact (``<out>.manifest.json``) or to stderr when the artifact
goes to stdout.  Runs with identical configuration and seed produce
byte-identical artifacts; ``--deterministic`` merely asserts that default.

Exit codes:
    0  success
    2  bad input (missing file, malformed log or config, bad flag values)
    3  singular market-price-of-risk system
    4  simulation failure (grid breach, every path aborted, degenerate book)
    5  estimation failure (too few bars, empty panel, unusable series)
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import calibration, demand, pricing, sheet
from .errors import (
    BookVolError,
    BoundaryBreachError,
    ConfigError,
    FitError,
    GridError,
    LiquiditySingularityError,
    OrderError,
    ParseError,
    SimulationError,
    SingularSystemError,
    UndefinedInverseError,
)
from .lob import Side, replay
from .params import ModelParams, demo_params, params_from_dict, params_to_dict
from .riskneutral import build_mpr_system, simulate_ensemble, solve_mpr, step_risk_neutral

_SECTIONS = ("model", "sheet", "pricing", "simulate", "calibrate", "replay")


def _num(x) -> str:
    return format(float(x), ".10g")


# ----------------------------------------------------------------------
# configuration

def _load_config(path: str | None) -> dict:
    """Read a config file; a bare parameter file becomes its model section."""
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if "buckets" in raw:            # a parameter file used directly as config
        return {"model": raw}
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        print(f"warning: ignoring unknown config sections {unknown}", file=sys.stderr)
    return raw


def _resolve_params(cfg: dict) -> ModelParams:
    if "model" in cfg:
        return params_from_dict(cfg["model"])
    return demo_params()


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a JSON object")
    return sec


def _pick(flag, section: dict, key: str, default):
    """Precedence: command-line flag, then config entry, then default."""
    if flag is not None:
        return flag
    return section.get(key, default)


def _parse_strikes(text: str) -> list[float]:
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--strikes must be comma-separated numbers: {exc}") from exc
    if not vals:
        raise ConfigError("--strikes is empty")
    return vals


# ----------------------------------------------------------------------
# manifest and artifact output

def _write_artifact(text: str, out: str | None, command: str, seed: int,
                    effective: dict) -> None:
    """Write the artifact and its manifest.

    The manifest hash covers the fully resolved inputs (flags merged over
    config, model parameters included), so two runs with the same hash and
    seed are guaranteed byte-identical.
    """
    canonical = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
    }
    manifest_text = json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    if out is None:
        sys.stdout.write(text)
        sys.stderr.write("manifest: " + json.dumps(manifest, sort_keys=True) + "\n")
    else:
        Path(out).write_text(text)
        Path(out + ".manifest.json").write_text(manifest_text)
        print(f"wrote {out} and {out}.manifest.json", file=sys.stderr)


def _read_log(path: str, strict: bool, verbose: bool) -> list:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read message log {path}: {exc}") from exc
    parsed = calibration.parse_messages(text, strict=strict)
    if parsed.issues:
        print(f"warning: {len(parsed.issues)} malformed lines skipped", file=sys.stderr)
        if verbose:
            for issue in parsed.issues[:20]:
                print(f"  line {issue.line_no}: {issue.reason}", file=sys.stderr)
    return parsed.events


# ----------------------------------------------------------------------
# commands

def cmd_replay(args) -> int:
    cfg = _load_config(args.config)
    sec = _section(cfg, "replay")
    events = _read_log(args.log, strict=bool(sec.get("strict", False)),
                       verbose=args.verbose)
    if not events:
        raise OrderError(f"message log {args.log} holds no events")
    opening = float(sec.get("opening_price", events[0].price))
    result = replay(events, opening)
    if result.orphan_deletes or result.orphan_modifies:
        print(f"warning: {result.orphan_deletes} orphan deletes, "
              f"{result.orphan_modifies} orphan modifies", file=sys.stderr)

    lines = ["# trades", "price,quantity,maker_id,taker_id"]
    lines += [f"{_num(t.price)},{_num(t.quantity)},{t.maker_id},{t.taker_id}"
              for t in result.trades]
    lines += ["# clearing series", "timestamp_ns,price"]
    lines += [f"{ts},{_num(p)}" for ts, p in result.clearing_prices]
    lines += ["# clearing price", f"pi,{_num(result.book.clearing_price)}"]
    for label, side in (("buy book", Side.BUY), ("sell book", Side.SELL)):
        lines += [f"# {label}", "price,quantity"]
        lines += [f"{_num(p)},{_num(q)}" for p, q in result.book.book_table(side).items()]
    text = "\n".join(lines) + "\n"

    effective = {"command": "replay", "log": args.log, "opening_price": opening}
    _write_artifact(text, args.out, "replay", seed=0, effective=effective)
    return 0


def _report_text(report) -> str:
    lines = ["# per-bucket fits", "k,a_per_hour,mean_logq,sigma_rel"]
    for i, k in enumerate(range(-report.K + 1, report.K + 1)):
        lines.append(f"{k},{_num(report.a[i])},{_num(report.mean_logq[i])},"
                     f"{_num(report.sigma_rel[i])}")
    lines += [
        "# edge aggregate",
        f"a_per_hour,{_num(report.a_edge)}",
        f"mean_log,{_num(report.mean_log_edge)}",
        f"sigma_rel,{_num(report.sigma_edge_rel)}",
        "# clearing-price diagnostics",
        f"pi_last,{_num(report.pi_last)}",
        f"drift_per_bar,{_num(report.drift_c)}",
        f"jarque_bera,{_num(report.jb_stat)}",
        f"jarque_bera_pvalue,{_num(report.jb_pvalue)}",
        "# clearing-price summary",
        report.summary.to_text().rstrip("\n"),
    ]
    return "\n".join(lines) + "\n"


def cmd_calibrate(args) -> int:
    cfg = _load_config(args.config)
    sec = _section(cfg, "calibrate")
    try:
        pi0 = float(sec["pi0"])
        K = int(sec["K"])
        delta_p = float(sec["delta_p"])
    except KeyError as exc:
        raise ConfigError(
            f"calibrate needs a config with a 'calibrate' section holding {exc}"
        ) from exc
    p_min = float(sec.get("p_min", calibration.PRICE_WINDOW[0]))
    p_max = float(sec.get("p_max", calibration.PRICE_WINDOW[1]))
    strict = bool(sec.get("strict", False))

    text = Path(args.log).read_text() if Path(args.log).exists() else None
    if text is None:
        raise ConfigError(f"cannot read message log {args.log}: no such file")
    report = calibration.calibrate(text, pi0=pi0, K=K, delta_p=delta_p,
                                   strict=strict, p_min=p_min, p_max=p_max)
    fitted = calibration.to_model_params(report)
    artifact = json.dumps(params_to_dict(fitted), indent=1) + "\n"
    if args.verbose:
        sys.stderr.write(_report_text(report))

    effective = {"command": "calibrate", "log": args.log, "pi0": pi0, "K": K,
                 "delta_p": delta_p, "p_min": p_min, "p_max": p_max,
                 "strict": strict}
    _write_artifact(artifact, args.out, "calibrate", seed=0, effective=effective)
    return 0


def _dump_mpr_steps(params: ModelParams, horizon_hours: float, dt_hours: float,
                    seed: int, stream) -> None:
    """Per-step dump of the drift-kill system along noise stream 0.

    Emits, for every step, the system matrix Sigma, right side b, solution
    lambda, residual norm and condition estimate as delimiter-separated
    text.  The path replayed here is the same stream the first ensemble
    member consumes, so the dump describes path 0 of the artifact.
    """
    if not (np.any(params.sigma_q_rel > 0) or params.sigma_edge_rel > 0):
        print("noiseless model: the measure change is a no-op, no systems to solve",
              file=stream)
        return
    n_steps = max(1, int(math.ceil(horizon_hours / dt_hours - 1e-12)))
    dt = horizon_hours / n_steps
    cfg = sheet.SheetConfig(factor_count=params.factor_count,
                            delta_p=params.delta_p, seed=seed)
    state = demand.init_state(params)
    for step in range(n_steps):
        system = build_mpr_system(state, params)
        try:
            system = solve_mpr(system)
        except SingularSystemError as exc:
            print(f"step,{step},singular,{exc}", file=stream)
            return
        print(f"step,{step},cond,{system.cond:.6e},residual,{system.residual_norm:.6e}",
              file=stream)
        for i, row in enumerate(system.Sigma):
            print(f"Sigma[{i}]," + ",".join(format(v, ".9e") for v in row), file=stream)
        print("b," + ",".join(format(v, ".9e") for v in system.b), file=stream)
        print("lambda," + ",".join(format(v, ".9e") for v in system.lam), file=stream)
        inc = sheet.increments(cfg, dt, step, 0)
        try:
            state = step_risk_neutral(state, params, system.lam, inc, dt)
        except (BoundaryBreachError, SimulationError) as exc:
            print(f"step,{step},aborted,{exc}", file=stream)
            return


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    params = _resolve_params(cfg)
    sec = _section(cfg, "simulate")
    seed = int(_pick(args.seed, sec, "seed", _section(cfg, "sheet").get("seed", 0)))
    n_paths = int(_pick(args.paths, sec, "paths", 100))
    expiry = float(_pick(args.expiry, sec, "expiry", 0.02))
    dt = float(_pick(args.dt, sec, "dt", pricing.ONE_MINUTE_YEARS))
    measure = str(sec.get("measure", "risk_neutral"))
    if measure not in ("risk_neutral", "physical"):
        raise ConfigError(f"simulate.measure must be 'risk_neutral' or 'physical', "
                          f"got {measure!r}")
    if expiry <= 0 or dt <= 0 or n_paths < 1:
        raise ConfigError("expiry and dt must be positive and paths >= 1")

    horizon_hours = expiry * pricing.TRADING_HOURS_PER_YEAR
    dt_hours = dt * pricing.TRADING_HOURS_PER_YEAR
    if args.verbose:
        if measure == "risk_neutral":
            _dump_mpr_steps(params, horizon_hours, dt_hours, seed, sys.stderr)
        else:
            print("physical measure: no risk adjustment solved", file=sys.stderr)
    ens, diag, _ = simulate_ensemble(params, n_paths, horizon_hours, dt_hours,
                                     seed=seed, risk_neutral=measure == "risk_neutral")
    if diag.n_aborted_singular == n_paths:
        raise SingularSystemError(
            "every path hit a singular market-price-of-risk system at step 0")
    if diag.n_aborted == n_paths:
        raise SimulationError(
            f"every path aborted (top {diag.n_aborted_top}, bottom "
            f"{diag.n_aborted_bottom}, singular {diag.n_aborted_singular})")
    if diag.n_aborted:
        print(f"warning: {diag.n_aborted} of {n_paths} paths aborted", file=sys.stderr)

    lines = ["# terminal clearing prices", "path,pi,alive"]
    lines += [f"{i},{_num(ens.pi[i])},{int(ens.alive[i])}" for i in range(n_paths)]
    lines += [
        "# diagnostics",
        f"measure,{measure}",
        f"n_paths,{n_paths}",
        f"n_steps,{diag.n_steps}",
        f"n_relabel,{diag.n_relabel}",
        f"n_aborted_top,{diag.n_aborted_top}",
        f"n_aborted_bottom,{diag.n_aborted_bottom}",
        f"n_aborted_singular,{diag.n_aborted_singular}",
        f"max_rel_residual,{diag.max_rel_residual:.6e}",
    ]
    text = "\n".join(lines) + "\n"

    effective = {"command": "simulate", "measure": measure, "expiry": expiry,
                 "dt": dt, "paths": n_paths, "seed": seed,
                 "model": params_to_dict(params)}
    _write_artifact(text, args.out, "simulate", seed=seed, effective=effective)
    return 0


def _build_request(args, cfg: dict, params: ModelParams) -> pricing.PricingRequest:
    sec = _section(cfg, "pricing")
    seed = int(_pick(args.seed, sec, "seed", _section(cfg, "sheet").get("seed", 0)))
    n_paths = int(_pick(args.paths, sec, "paths", 10_000))
    expiry = float(_pick(args.expiry, sec, "expiry", 0.02))
    dt = float(_pick(args.dt, sec, "dt", pricing.ONE_MINUTE_YEARS))
    rate = float(sec.get("rate", 0.0))
    if args.strikes is not None:
        strikes = _parse_strikes(args.strikes)
    else:
        strikes = [float(s) for s in sec.get("strikes", [params.pi0])]
    return pricing.PricingRequest(strikes=tuple(strikes), expiry=expiry,
                                  n_paths=n_paths, dt=dt, seed=seed, rate=rate)


def cmd_price(args) -> int:
    cfg = _load_config(args.config)
    params = _resolve_params(cfg)
    req = _build_request(args, cfg, params)
    table = pricing.smile(params, req)
    lines = ["strike,price,std_error"]
    lines += [f"{_num(q.strike)},{_num(q.price)},{_num(q.std_error)}"
              for q in table.quotes]
    lines += ["# diagnostics", f"n_aborted_paths,{table.n_aborted_paths}"]
    text = "\n".join(lines) + "\n"

    effective = {"command": "price", "strikes": list(req.strikes),
                 "expiry": req.expiry, "dt": req.dt, "paths": req.n_paths,
                 "seed": req.seed, "rate": req.rate,
                 "model": params_to_dict(params)}
    _write_artifact(text, args.out, "price", seed=req.seed, effective=effective)
    return 0


def cmd_smile(args) -> int:
    cfg = _load_config(args.config)
    params = _resolve_params(cfg)
    req = _build_request(args, cfg, params)
    table = pricing.smile(params, req)
    text = table.to_text()

    effective = {"command": "smile", "strikes": list(req.strikes),
                 "expiry": req.expiry, "dt": req.dt, "paths": req.n_paths,
                 "seed": req.seed, "rate": req.rate,
                 "model": params_to_dict(params)}
    _write_artifact(text, args.out, "smile", seed=req.seed, effective=effective)
    return 0


# ----------------------------------------------------------------------
# parser and entry point

def _add_common(sub, *, paths=False, strikes=False, log=False):
    if log:
        sub.add_argument("log", help="message-log file (msg_type,side,ts_ns,id,price,size)")
    sub.add_argument("--config", help="JSON config file (or a parameter file)")
    sub.add_argument("--seed", type=int, help="noise seed (overrides config)")
    if paths:
        sub.add_argument("--paths", type=int, help="number of Monte-Carlo paths")
        sub.add_argument("--expiry", type=float, help="horizon in trading years")
        sub.add_argument("--dt", type=float,
                         help="step in trading years (default: one minute)")
    if strikes:
        sub.add_argument("--strikes", help="comma-separated strike list")
    sub.add_argument("--out", help="artifact path (default: stdout)")
    sub.add_argument("--deterministic", action="store_true",
                     help="assert bit-reproducible output (always on)")
    sub.add_argument("--verbose", action="store_true",
                     help="extra diagnostics on stderr")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bookvol",
        description="Order-book liquidity model: matching, calibration, "
                    "simulation and option pricing.",
        epilog="exit codes: 0 ok, 2 bad input, 3 singular risk system, "
               "4 simulation failure, 5 estimation failure",
    )
    parser.add_argument("--version", action="version", version=f"bookvol {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("replay", help="replay a message log through the matching engine")
    _add_common(p, log=True)
    p.set_defaults(func=cmd_replay)

    p = subs.add_parser("calibrate", help="fit model parameters from a message log")
    _add_common(p, log=True)
    p.set_defaults(func=cmd_calibrate)

    p = subs.add_parser("simulate", help="simulate terminal clearing prices")
    _add_common(p, paths=True)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("price", help="Monte-Carlo option quotes")
    _add_common(p, paths=True, strikes=True)
    p.set_defaults(func=cmd_price)

    p = subs.add_parser("smile", help="option quotes with implied vols")
    _add_common(p, paths=True, strikes=True)
    p.set_defaults(func=cmd_smile)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, OrderError, GridError,
            UndefinedInverseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SingularSystemError as exc:
        print(f"numerical failure (singular risk system): {exc}", file=sys.stderr)
        return 3
    except (SimulationError, BoundaryBreachError, LiquiditySingularityError) as exc:
        print(f"numerical failure (simulation): {exc}", file=sys.stderr)
        return 4
    except FitError as exc:
        print(f"numerical failure (estimation): {exc}", file=sys.stderr)
        return 5
    except BookVolError as exc:        # anything new defaults to "bad input"
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
