"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--replicas R] [--steps S] [--repeat N]
"""
import argparse
import timeit

import numpy as np

from opinion_nash import kernels
from opinion_nash.coefficients import CoefficientParams
from opinion_nash.equilibrium import FullConsensus
from opinion_nash.sde import NoisePaths, TimeGrid, full_consensus_dynamics


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicas", type=int, default=20)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--agents", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    n = args.agents
    cp = CoefficientParams(k=1.0, w=0.5, n=n, t=1.0)
    grid = TimeGrid(1.0, args.steps)
    x0 = np.linspace(0.2, 0.8, n)
    dyn = full_consensus_dynamics(cp, FullConsensus(0.05), x0, x0, grid)
    dB = NoisePaths.generate(1, grid, n, replicas=args.replicas).dB
    em_args = (grid.points, dyn.alpha, dyn.beta, dyn.lam, dyn.dlam, dyn.W, dyn.K, dyn.x_ref, dyn.x0, dyn.sigma,
               dyn.diffusion, 0.5, 0.1, dB, True)
    rng = np.random.default_rng(0)
    coeffs = rng.uniform(-5, 5, (4, 100_000))

    impls = kernels.backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(sorted(impls))}")
    print(f"closed loop: {args.replicas} replicas x {args.steps} steps x {n} agents; select_control: 1e5 cubics")
    times = {}
    for name, impl in sorted(impls.items()):
        t_em = min(timeit.repeat(lambda: impl.closed_loop_em(*em_args), number=1, repeat=args.repeat))
        t_sel = min(timeit.repeat(lambda: impl.select_control(*coeffs), number=1, repeat=args.repeat))
        times[name] = (t_em, t_sel)
        print(f"{name:>7}: closed_loop_em {t_em * 1e3:9.2f} ms   select_control {t_sel * 1e3:9.2f} ms")
    if "cython" in times:
        c, p = times["cython"], times["python"]
        print(f"speed-up: closed_loop_em x{p[0] / c[0]:.1f}, select_control x{p[1] / c[1]:.1f}")
        xc, *_ = impls["cython"].closed_loop_em(*em_args)
        xp, *_ = impls["python"].closed_loop_em(*em_args)
        print(f"max |x_cython - x_python| = {np.max(np.abs(xc - xp)):.2e}")


if __name__ == "__main__":
    main()
