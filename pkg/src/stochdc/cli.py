"""Command-line entry point: ``stochdc <command> [options]``.

Exit status: 0 success, 1 failed check or runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import engine, io, verify
from .analysis import (EquilibriumError, LyapunovWeights, steady_state_residuals, fixed_point_equilibrium,
                       goal_metrics, max_residual, omega_matrix, solve_equilibrium)
from .loads import check_assumptions
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
_CONDITIONS = {"current": "mu_I > sigma_I^2/2 - 1/2", "power": "mu_P > sigma_P^2",
               "conductance": "mu_G > sigma_G^2"}


class CheckFailed(Exception):
    pass


def _say(*parts):
    print(*parts, file=sys.stderr if _STATE["quiet_stdout"] else sys.stdout)


_STATE = {"quiet_stdout": False}
_TABLE_COMMANDS = ("simulate", "ensemble", "scan")


def _pair(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'low,high', got {text!r}")
    if not lo < hi:
        raise argparse.ArgumentTypeError(f"range must be increasing, got {text!r}")
    return lo, hi


def _scenario(args):
    sc = load_scenario(args.scenario)
    changes = {k: v for k, v in (("seed", getattr(args, "seed", None)), ("dt", getattr(args, "dt", None)),
                                  ("t_end", getattr(args, "t_end", None)),
                                  ("record_stride", getattr(args, "stride", None))) if v is not None}
    return sc.with_settings(**changes) if changes else sc


def _weights(args, sc):
    n = sc.plant.n
    w = sc.weights
    return LyapunovWeights.build(n, args.Pi if args.Pi is not None else w.Pi,
                                 args.Sigma if args.Sigma is not None else w.Sigma,
                                 args.Lambda if args.Lambda is not None else w.Lambda)


# ------------------------------------------------------------------ commands

def cmd_simulate(args):
    sc = _scenario(args)
    traj = engine.simulate(sc, backend=args.backend)
    header, rows = io.trajectory_rows(traj)
    io.write_table(args.output, header, rows)
    if args.svg:
        io.plot_trajectory(args.svg, traj)
    for ev in traj.events:
        _say(f"event t={ev['time']:.6g} {ev['kind']}")
    if not traj.ok:
        raise CheckFailed(f"trajectory aborted at t={traj.fail_time:.6g} s")


def cmd_ensemble(args):
    sc = _scenario(args)
    res = engine.run_ensemble(sc, args.runs, backend=args.backend, workers=args.workers)
    header, rows = io.ensemble_rows(res)
    io.write_table(args.output, header, rows)
    plant = sc.plant
    c = plant.controller
    t_end = sc.settings.t_end
    starts = [s for s, _ in plant.loads.segments() if s < t_end] + [t_end]
    segments = []
    for t0, t1 in zip(starts[:-1], starts[1:]):
        window = (t1 - args.tail * (t1 - t0), t1)
        metrics = goal_metrics(res.times, res.mean[:, :plant.n], res.mean[:, plant.n:2 * plant.n],
                               c.Q, c.V_star, window)
        segments.append({"window": list(window), **metrics})
    summary = {"scenario": sc.name, "runs": args.runs, "backend": args.backend or engine.BACKEND,
               "failed_runs": int(np.count_nonzero(res.status)), "segments": segments,
               "events": res.events}
    if args.summary:
        io.write_json(args.summary, summary)
    for seg in segments:
        _say(f"window [{seg['window'][0]:.4g}, {seg['window'][1]:.4g}] s: "
             f"sharing dispersion {seg['sharing_dispersion']:.4g} A "
             f"(mean I_g {seg['mean_generated_current']:.4g} A), "
             f"voltage error {100 * seg['voltage_error']:.4g} %")
    if summary["failed_runs"]:
        raise CheckFailed(f"{summary['failed_runs']} of {args.runs} runs aborted")


def cmd_check(args):
    sc = _scenario(args)
    ok = True
    for name, flags in check_assumptions(sc.plant.stochastic).items():
        passed = bool(np.all(flags))
        ok &= passed
        _say(f"{'PASS' if passed else 'FAIL'} assumption {name}: {_CONDITIONS[name]}"
             + ("" if passed else f" (violated at nodes {np.flatnonzero(~flags).tolist()})"))
    w = _weights(args, sc)
    for idx, (start, consts) in enumerate(sc.plant.loads.segments()):
        eq = solve_equilibrium(sc.plant, consts)
        L, inside = omega_matrix(eq.V_bar, eq, w, sc.plant, "ZIP", args.form, loads=consts)
        ok &= bool(inside)
        _say(f"{'PASS' if inside else 'FAIL'} Omega membership at equilibrium of segment {idx} "
             f"(t >= {start:g} s): min L_ii = {L.min():.6g}")
    if not ok:
        raise CheckFailed("one or more checks failed")


def cmd_equilibrium(args):
    sc = _scenario(args)
    report = {"scenario": sc.name, "segments": []}
    ok = True
    for start, consts in sc.plant.loads.segments():
        eq = solve_equilibrium(sc.plant, consts, tol=args.tol)
        res = steady_state_residuals(sc.plant, eq, consts)
        worst = max_residual(res)
        oracle = fixed_point_equilibrium(sc.plant, consts)
        gap = float(np.max(np.abs(oracle.V_bar - eq.V_bar)))
        ok &= worst < args.residual_limit
        report["segments"].append({
            "start": start, "iterations": eq.iterations, "max_residual": worst,
            "residuals": {k: float(np.max(np.abs(v))) for k, v in res.items()},
            "oracle_voltage_gap": gap, "i_g_star": eq.i_g_star,
            "V_bar": eq.V_bar, "I_g_bar": eq.I_g_bar, "I_bar": eq.I_bar, "xi_bar": eq.xi_bar,
        })
        _say(f"segment t >= {start:g} s: {eq.iterations} Newton iterations, max residual {worst:.3g}, "
             f"oracle gap {gap:.3g} V, i_g* = {eq.i_g_star:.10g}")
    if args.output:
        io.write_json(args.output, report)
    if not ok:
        raise CheckFailed(f"residual above {args.residual_limit:g}")


def cmd_scan(args):
    sc = _scenario(args)
    i = args.node
    plant, w = sc.plant, _weights(args, sc)
    consts = plant.loads.segments()[0][1]
    V_bar = args.V_bar if args.V_bar is not None else float(plant.controller.V_star[i])
    V, P, L = verify.omega_scan(args.v_range, args.p_range, args.points, float(consts.G_star[i]),
                               float(w.Pi[i]), float(w.Sigma[i]), float(w.Lambda[i]),
                               float(plant.stochastic.mu_P[i]), float(plant.stochastic.mu_G[i]),
                               V_bar, args.form)
    header, rows = io.scan_rows(V, P, L)
    io.write_table(args.output, header, rows)
    if args.svg:
        io.plot_scan(args.svg, V, P, L)
    negative = int(np.count_nonzero(L <= 0.0))
    _say(f"{'PASS' if negative == 0 else 'FAIL'} scan: {negative} of {L.size} cells with L_ii <= 0 "
         f"(min {L.min():.6g})")
    if negative:
        raise CheckFailed("negative L_ii cells")


def cmd_lyapunov(args):
    sc = _scenario(args)
    w = _weights(args, sc)
    ident = verify.ito_identity_suite(sc.plant, w, args.samples, args.seed_base, args.form,
                                      eta_gain=args.eta_gain)
    passiv = verify.passivity_suite(sc.plant, w, args.samples, args.inputs, args.seed_base + 1, args.form)
    sign = verify.closed_loop_sign_suite(sc.plant, w, args.samples, args.seed_base + 2, args.form,
                                         eta_gain=args.eta_gain)
    for v, r in ident["variants"].items():
        _say(f"{'PASS' if r['passed'] else 'FAIL'} identity {v}: max gap {r['max_relative_gap']:.3g}")
    for v, r in passiv["variants"].items():
        _say(f"{'PASS' if r['passed'] else 'FAIL'} passivity {v}: max excess {r['max_excess']:.3g}, "
             f"violating fraction {r['fraction_violating']:.3g}")
    _say(f"{'PASS' if sign['passed'] else 'FAIL'} closed-loop sign: max {sign['expanded_max']:.3g}")
    if args.output:
        io.write_json(args.output, {"identity": ident, "passivity": passiv, "closed_loop_sign": sign})
    if not (ident["passed"] and passiv["passed"] and sign["passed"]):
        raise CheckFailed("one or more suites failed")


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochdc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text, integration=False, weights=False, form=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        p.add_argument("-s", "--scenario", default="paper-sec5",
                       help="bundled scenario name or YAML path (default: paper-sec5)")
        if integration:
            p.add_argument("--seed", type=int, help="override integration.seed")
            p.add_argument("--dt", type=float, help="override integration.dt [s]")
            p.add_argument("--t-end", type=float, help="override integration.t_end [s]")
            p.add_argument("--stride", type=int, help="override integration.record_stride")
            p.add_argument("--backend", choices=("compiled", "python"), help=f"default: {engine.BACKEND}")
        if weights:
            p.add_argument("--Pi", type=float, help="override lyapunov.Pi (all nodes)")
            p.add_argument("--Sigma", type=float, help="override lyapunov.Sigma (all nodes)")
            p.add_argument("--Lambda", type=float, help="override lyapunov.Lambda (all nodes)")
        if form:
            p.add_argument("--form", choices=("published", "exact"), default="published",
                           help="published or corrected quadratic-term coefficients")
        return p

    p = add("simulate", cmd_simulate, "integrate one trajectory and write it as CSV", integration=True)
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.add_argument("--svg", help="also render currents and voltages to this SVG file")

    p = add("ensemble", cmd_ensemble, "integrate an ensemble and write per-time statistics as CSV",
            integration=True)
    p.add_argument("-n", "--runs", type=int, default=64)
    p.add_argument("--workers", type=int, help=f"thread cap (default: ${engine.WORKERS_ENV} or CPU count)")
    p.add_argument("--tail", type=float, default=0.2, help="tail-window fraction of each load segment")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.add_argument("--summary", help="write the JSON summary here")

    add("check", cmd_check, "parameter assumptions and Omega membership at equilibrium",
        weights=True, form=True)

    p = add("equilibrium", cmd_equilibrium, "solve the steady state of every load segment")
    p.add_argument("--tol", type=float, default=1e-11)
    p.add_argument("--residual-limit", type=float, default=1e-10)
    p.add_argument("-o", "--output", help="JSON report path")

    p = add("scan", cmd_scan, "tabulate L_ii over a (V, P*) grid", weights=True, form=True)
    p.add_argument("--node", type=int, default=0, help="node whose parameters are used")
    p.add_argument("--v-range", type=_pair, default=(60.0, 800.0))
    p.add_argument("--p-range", type=_pair, default=(5.0, 200.0))
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--V-bar", type=float, help="equilibrium voltage (default: node reference)")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.add_argument("--svg", help="also render a heat map to this SVG file")

    p = add("lyapunov", cmd_lyapunov, "Ito identity, passivity and closed-loop sign suites",
            weights=True, form=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--inputs", type=int, default=100, help="random inputs per sample (passivity)")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--eta-gain", action="store_true", help="weight the filter storage by tau_eta*K")
    p.add_argument("-o", "--output", help="JSON report path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    # keep stdout clean when a table is streamed there
    _STATE["quiet_stdout"] = args.command in _TABLE_COMMANDS and args.output in (None, "-")
    try:
        args.func(args)
    except CheckFailed as exc:
        print(f"stochdc: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ScenarioError, EquilibriumError, engine.SimulationError, ValueError, RuntimeError, OSError) as exc:
        print(f"stochdc: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
