"""Time the compiled and pure-Python RK4 kernels on bundled scenarios.

    python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""

from __future__ import annotations

import argparse
import dataclasses
import time

import numpy as np

from tbgflow import cli, kernels
from tbgflow.integrator import IntegratorConfig, integrate


def bench(name: str, steps: int, repeat: int) -> dict[str, float]:
    s = cli.bundled_scenario(name)
    s = dataclasses.replace(s, t_p=steps * s.dt, t_end=steps * s.dt)
    system = cli.build_system(s)
    cfg = IntegratorConfig(s.dt, s.t_end, max(1, steps // 100))
    out: dict[str, float] = {}
    finals = {}
    for label, be in (("cython", kernels.backend), ("python", kernels.python_backend)):
        if label == "cython" and not kernels.HAVE_EXTENSION:
            continue
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            traj = integrate(system, cli.initial_state(s), system.tbg, cfg, backend=be)
            best = min(best, time.perf_counter() - t0)
        out[label] = best
        finals[label] = traj.states[-1]
    if len(finals) == 2:
        out["max_diff"] = float(np.max(np.abs(finals["cython"] - finals["python"])))
    return out


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--scenarios", nargs="*", default=["example_5_1", "example_5_3", "example_5_6"])
    args = p.parse_args()
    print(f"{'scenario':<14} {'cython_s':>10} {'python_s':>10} {'speedup':>9} {'max_diff':>10}")
    for name in args.scenarios:
        r = bench(name, args.steps, args.repeat)
        cy = r.get("cython", float("nan"))
        print(f"{name:<14} {cy:>10.4f} {r['python']:>10.4f} {r['python'] / cy:>9.1f} "
              f"{r.get('max_diff', float('nan')):>10.2e}")


if __name__ == "__main__":
    main()
