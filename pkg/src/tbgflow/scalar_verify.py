"""Scalar harnesses for the contraction theorems: linear, perturbed and forced TBG systems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .integrator import IntegratorConfig, integrate
from .tbg import Tbg, evolution_bound, make_theta_tbg

BOUND_TOL = 1e-6


class MarginError(ValueError):
    """The disturbance exceeds the contraction margin α/D."""


class ForcingBoundError(ValueError):
    """The forcing exceeded its declared bound on a sample."""


@dataclass
class ScalarRun:
    times: NDArray[np.float64]
    values: NDArray[np.float64]
    bound: NDArray[np.float64]
    violations: int
    info: dict[str, float] = field(default_factory=dict)

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist()))

    @property
    def final(self) -> float:
        return float(self.values[-1])


def _integrate_scalar(tbg: Tbg, extra: Callable[[float, float], float], v0: float, t_end: float,
                      dt: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end!r}")

    def rhs(t: float, s: NDArray[np.float64]) -> NDArray[np.float64]:
        v = s[0]
        return np.array([-tbg.gain(t) * v + extra(t, v)])

    traj = integrate(rhs, np.array([float(v0)]), tbg, IntegratorConfig(dt, t_end))
    return traj.times, traj.states[:, 0]


def _count(values: NDArray[np.float64], bound: NDArray[np.float64]) -> int:
    return int(np.sum(np.abs(values) > bound * (1 + BOUND_TOL) + 1e-300))


def run_linear(tbg: Tbg, v0: float, t_end: float, dt: float) -> ScalarRun:
    """v' = -A(t) v against the bound D mu(t,0)^alpha |v0|."""
    times, values = _integrate_scalar(tbg, lambda t, v: 0.0, v0, t_end, dt)
    bound = np.array([evolution_bound(tbg, t, 0.0) for t in times]) * abs(v0)
    return ScalarRun(times, values, bound, _count(values, bound))


def sup_on_grid(fn: Callable[[float], float], t_end: float, points: int = 2001) -> float:
    return max(abs(fn(float(t))) for t in np.linspace(0.0, t_end, points))


def run_perturbed(tbg: Tbg, disturbance: Callable[[float], float], v0: float, t_end: float,
                  dt: float) -> ScalarRun:
    """v' = -A(t) v + Ã(t) v against D mu(t,0)^(alpha - delta D) |v0|, delta = sup |Ã|."""
    delta = sup_on_grid(disturbance, t_end)
    if delta > tbg.alpha / tbg.d_const:
        raise MarginError(f"sup |disturbance| = {delta} exceeds alpha/D = {tbg.alpha / tbg.d_const}")
    times, values = _integrate_scalar(tbg, lambda t, v: disturbance(t) * v, v0, t_end, dt)
    exponent = tbg.alpha - delta * tbg.d_const
    bound = np.array([evolution_bound(tbg, t, 0.0, alpha=exponent) for t in times]) * abs(v0)
    return ScalarRun(times, values, bound, _count(values, bound), {"delta": delta, "exponent": exponent})


def run_forced(tbg: Tbg, forcing: Callable[[float, float], float], forcing_bound: float, v0: float,
               t_end: float, dt: float) -> ScalarRun:
    """v' = -A(t) v + F(t, v); the tail is compared with D M̂ / alpha_eff, alpha_eff = post-t_p gain."""
    times, values = _integrate_scalar(tbg, forcing, v0, t_end, dt)
    seen = max(abs(forcing(float(t), float(v))) for t, v in zip(times, values))
    if seen > forcing_bound * (1 + 1e-12):
        raise ForcingBoundError(f"|F| reached {seen}, above the declared bound {forcing_bound}")
    alpha_eff = tbg.post_gain
    tail_bound = tbg.d_const * forcing_bound / alpha_eff
    tail = values[int(math.floor(0.9 * len(values))):]
    settled = times > tbg.t_p + 5.0 / alpha_eff
    bound = np.where(settled, tail_bound * 1.05, np.inf)
    info = {
        "alpha_eff": alpha_eff,
        "tail_bound": tail_bound,
        "tail_max": float(np.max(np.abs(tail))),
        "settled_max": float(np.max(np.abs(values[settled]))) if settled.any() else math.nan,
    }
    return ScalarRun(times, values, bound, _count(values, bound), info)


@dataclass(frozen=True)
class GronwallReport:
    tau: float
    delta: float
    min_slack: float
    max_violation: float
    refinements: int

    @property
    def passed(self) -> bool:
        return self.max_violation <= 1e-6


def gronwall_check(tbg: Tbg, delta: float, grid: Sequence[float], tol: float = 1e-8,
                   max_refinements: int = 12) -> GronwallReport:
    """Check that v(t) = mu_{alpha - D delta, D}(t, tau) satisfies the integral inequality

        v(t) <= mu_{alpha,D}(t, tau) + delta * int_tau^t mu_{alpha,D}(t, s) k(s) v(s) ds,

    with k(s) the log-rate of mu(0, s) (gain / alpha for catalog generators),
    tau = grid[0], by composite trapezoid quadrature refined until the slack
    changes by less than tol.
    """
    d = tbg.d_const
    if delta < 0 or delta >= tbg.alpha / d:
        raise MarginError(f"delta = {delta} must lie in [0, alpha/D = {tbg.alpha / d})")
    ts = [float(t) for t in grid]
    if not ts:
        raise ValueError("grid must be nonempty")
    tau = ts[0]
    reduced = tbg.alpha - d * delta

    def v(t: float) -> float:
        return evolution_bound(tbg, t, tau, alpha=reduced)

    def slack(t: float, pieces: int) -> float:
        if t == tau:
            return evolution_bound(tbg, t, tau) - v(t)
        ss = np.linspace(tau, t, pieces + 1)
        vals = np.array([evolution_bound(tbg, t, s) * tbg.log_rate(s) * v(s) for s in ss])
        integral = float(np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(ss)))
        return evolution_bound(tbg, t, tau) + delta * integral - v(t)

    worst_slack, refinements = math.inf, 0
    for t in ts:
        pieces = 16
        prev = slack(t, pieces)
        for _ in range(max_refinements):
            pieces *= 2
            cur = slack(t, pieces)
            refinements += 1
            done = abs(cur - prev) < tol
            prev = cur
            if done:
                break
        worst_slack = min(worst_slack, prev)
    return GronwallReport(tau, delta, worst_slack, max(0.0, -worst_slack), refinements)


# ------------------------------------------------------------------ scalar suite

@dataclass(frozen=True)
class CaseResult:
    case: int
    description: str
    run: ScalarRun
    passed: bool
    detail: str


def example_4_8_suite(v0: float = 10.0, t_p: float = 0.05, dt_short: float = 1e-5,
                      dt_long: float = 1e-4, t_end_forced: float = 1.0) -> list[CaseResult]:
    """Six scalar cases: theta gain with alpha = 100, post gains 10 (cases 1-3) and 200 (cases 4-6).

    Perturbed cases are evaluated on [0, t_p]; past t_p the post gain 10 is below
    the disturbance and the pre-t_p bound no longer applies.
    """
    a1 = make_theta_tbg(100.0, t_p, post_gain=10.0)
    a2 = make_theta_tbg(100.0, t_p, post_gain=200.0)
    results: list[CaseResult] = []
    lin = run_linear(a1, v0, t_p, dt_short)
    results.append(CaseResult(1, "theta gain, no disturbance", lin, lin.violations == 0,
                              f"violations={lin.violations} final={lin.final:.6e}"))
    for case, level in ((2, 20.0), (3, 30.0)):
        run = run_perturbed(a1, lambda t, c=level: c, v0, t_p, dt_short)
        results.append(CaseResult(case, f"theta gain, disturbance {level:g}", run, run.violations == 0,
                                  f"violations={run.violations} final={run.final:.6e}"))
    forcings = (
        (4, "40 sin t", lambda t, v: 40.0 * math.sin(t), 40.0),
        (5, "50 cos t", lambda t, v: 50.0 * math.cos(t), 50.0),
        (6, "constant 60", lambda t, v: 60.0, 60.0),
    )
    for case, label, fn, bound in forcings:
        run = run_forced(a2, fn, bound, v0, t_end_forced, dt_long)
        ok = run.info["tail_max"] <= run.info["tail_bound"] * 1.05 and run.violations == 0
        results.append(CaseResult(case, f"theta gain, forcing {label}", run, ok,
                                  f"tail_max={run.info['tail_max']:.6f} bound={run.info['tail_bound']:.4f}"))
    finals = [abs(r.run.final) for r in results[:3]]
    ordered = finals[0] < finals[1] < finals[2]
    if not ordered:
        results = [CaseResult(r.case, r.description, r.run, False if r.case <= 3 else r.passed,
                              r.detail + " (ordering broken)" if r.case <= 3 else r.detail)
                   for r in results]
    return results
