"""Command line entry point: ``opinion-nash {solve,simulate,verify,pde} CONFIG [--out DIR]``.

The output directory is ``--out`` if given, else ``$OPINION_NASH_OUTPUT_DIR``,
else ``outputs.directory`` from the config.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import coefficients as co
from .cubic import solve_cubic_real
from .equilibrium import (
    Follower,
    FullConsensus,
    GameState,
    Leader,
    control_cubic,
    f_derivatives,
    stationarity_residual,
)
from .errors import OpinionNashError
from .scenario import (
    ConfigError,
    _coefficients_fc,
    _follower_params,
    _followers,
    _leader_params,
    equilibrium_csv,
    export_results,
    load_scenario,
    run_scenario,
    solve_equilibrium,
)
from .spectral import PDECoefficients, SpatialGrid, WaveField, solve_diffusion_fourier, transition_wave, wick_rhs


def _out_dir(cfg, flag):
    return Path(flag) if flag else cfg.outputs.resolve()


def _agent_regimes(cfg, eq):
    """(regime, coefficient params, counterpart opinion, mean aggregate) per agent, label order."""
    n = cfg.network.n
    if cfg.regime.type == "full_consensus":
        cp = _coefficients_fc(cfg)
        x = eq.x_star
        m = float(x.mean())
        return [(FullConsensus(cfg.regime.sigma), cp, (x.sum() - x[i]) / (n - 1), m) for i in range(n)]
    lid = cfg.network.leader_id
    out = [None] * n
    mt = float(np.mean(eq.x_tilde))
    out[lid - 1] = (Leader(cfg.regime.sigma_1, eq.x_tilde), _leader_params(cfg), mt, mt)
    for i in _followers(cfg):
        rg = Follower(cfg.regime.sigma, eq.x_bar_1, cfg.solver.follower_drift_sign)
        out[i - 1] = (rg, _follower_params(cfg, i), eq.x_bar_1, 0.0)
    return out


def cmd_solve(cfg, out):
    eq = solve_equilibrium(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "equilibrium.csv").write_text(equilibrium_csv(eq))
    print(f"regime {cfg.regime.type}, s_eval = {eq.s_eval:g}")
    if eq.x_bar_1 is not None:
        print(f"leader opinion x_bar_1 = {eq.x_bar_1:.10g} (roots {', '.join(f'{r:.6g}' for r in eq.leader_roots)})")
    for a in range(len(eq.x0)):
        print(f"agent {a + 1}: x0 = {eq.x0[a]:.6g}  x* = {eq.x_star[a]:.10g}  phi* = {eq.u_star[a]:.10g}")
    return 0


def cmd_simulate(cfg, out):
    res = run_scenario(cfg)
    files = export_results(res, out)
    sm = res.summary
    print(f"{len(sm.replicas)} replicas, {cfg.grid.steps} steps; final spread {sm.spread_mean[-1]:.6g}; "
          f"gap-bound pass rate {sm.gap_pass_rate:.4f} ({sm.gap_checks} checks)")
    for name, p in files.items():
        print(f"wrote {p}")
    return 0


def _verify_checks(cfg, res):
    eq = res.equilibrium
    hp = cfg.h_params
    checks = []
    # root soundness and stationarity at the equilibrium state and along sampled path states
    mults = cfg.multiplier_models()
    worst_root = worst_stat = 0.0
    regs = _agent_regimes(cfg, eq)
    s_pts = cfg.grid.points[1:: max(1, cfg.grid.steps // 20)]
    for a, (rg, cp, xj, m) in enumerate(regs):
        for s in s_pts:
            lam = co.multiplier_eval(mults[a], s)
            xs = res.path.x[0, int(round(s / cfg.grid.ds)), a]
            st = GameState(s, xs, xj, eq.x0[a], m, 0.0, lam)
            poly = control_cubic(rg, st, hp, cp)
            for r in solve_cubic_real(poly):
                worst_root = max(worst_root, abs(poly(r)) / max(1.0, poly.term_scale(r)))
            u = res.path.u[0, int(round(s / cfg.grid.ds)), a]
            worst_stat = max(worst_stat, stationarity_residual(rg, st, hp, cp, u))
    # backward error: large control roots (~1/s^3) put the rounding floor far above 1e-8 * |coeffs|
    checks.append(("cubic roots back-substitute", worst_root <= 1e-12, f"max backward error {worst_root:.3g}"))
    checks.append(("path controls are stationary", worst_stat < 1e-6, f"max residual {worst_stat:.3g}"))
    rate = res.summary.gap_pass_rate
    checks.append(("opinion-gap bound", rate == 1.0, f"pass rate {rate:.4f} over {res.summary.gap_checks} pairs"))
    s = np.linspace(0.0, cfg.grid.t, 10001)
    if cfg.regime.type == "full_consensus":
        g = np.asarray(co.gamma(s, _coefficients_fc(cfg)))
        name = "gamma"
    else:
        g = np.asarray(co.gamma_hat(s, _leader_params(cfg)))
        name = "gamma_hat"
    ok = abs(g[0] - 1.0) <= 1e-14 and np.all(np.diff(g) <= 0)
    checks.append((f"{name}(0) = 1 and nonincreasing", bool(ok), f"{name}(0) - 1 = {g[0] - 1:.3g}"))
    finite = bool(np.all(np.isfinite(res.path.x)))
    checks.append(("trajectories finite", finite, f"excursions outside [0,1]: {list(map(int, res.summary.excursions))}"))
    return checks


def cmd_verify(cfg, out):
    res = run_scenario(cfg)
    checks = _verify_checks(cfg, res)
    out.mkdir(parents=True, exist_ok=True)
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    report = [{"check": n, "passed": bool(ok), "detail": d} for n, ok, d in checks]
    (out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0 if all(ok for _, ok, _ in checks) else 1


def cmd_pde(cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    grid = SpatialGrid()
    I = WaveField.gaussian(grid, mean=0.5, var=0.05)
    wide = SpatialGrid(-20.0, 21.0, 2048)
    heat = solve_diffusion_fourier(PDECoefficients(w=1.0), WaveField.gaussian(wide, 0.5, 0.05), 1.0)
    _, _, var = heat.moments()
    print(f"heat kernel: variance at s=1 is {var:.10g} (expected {0.05 + 2.0:.10g})")
    eq = solve_equilibrium(cfg)
    rg, cp, xj, m = _agent_regimes(cfg, eq)[0]
    lam = co.multiplier_eval(cfg.multiplier_models()[0], eq.s_eval)
    x = grid.points
    v = np.empty_like(x)
    for k, xk in enumerate(x):
        try:
            v[k] = wick_rhs(f_derivatives(rg, GameState(eq.s_eval, xk, xj, eq.x0[0], m, eq.u_star[0], lam),
                                          cfg.h_params, cp))
        except OpinionNashError:
            v[k] = math.nan
    v = np.where(np.isfinite(v), v, 0.0)
    psi = transition_wave(I, v, min(eq.s_eval, 0.1))
    for name, field in (("pde_heat.csv", heat), ("pde_transition.csv", psi)):
        rec = field.records()
        lines = ["x,re,im"] + [f"{r[0]!r},{r[1]!r},{r[2]!r}" for r in rec.tolist()]
        (out / name).write_text("\n".join(lines) + "\n")
        print(f"wrote {out / name}")
    return 0


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify, "pde": cmd_pde}


def build_parser():
    ap = argparse.ArgumentParser(prog="opinion-nash", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "solve": "equilibrium profile only",
        "simulate": "full Monte Carlo ensemble and exports",
        "verify": "invariant and bound checks on a simulated ensemble",
        "pde": "transition-function demos on the spectral grid",
    }
    for name, h in helps.items():
        p = sub.add_parser(name, help=h)
        p.add_argument("config", help="scenario YAML file")
        p.add_argument("--out", default=None, help="output directory (overrides env and config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out_hint = args.out
        cfg = load_scenario(args.config)
        out = _out_dir(cfg, out_hint)
        load_scenario(args.config, echo_dir=out)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OpinionNashError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
