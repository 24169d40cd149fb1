"""Reference optima, convergence verdicts, Lyapunov audits and trajectory diagnostics.

Distances between states are measured in the max-norm over all agent components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq, least_squares, minimize_scalar

from .costs import CostFunction
from .dynamics import (
    CoefficientSet,
    ConsensusState,
    MasSystem,
    OrthogonalFrame,
    Problem,
    RapState,
    consensus_equilibrium,
    rap_equilibrium,
)
from .integrator import Trajectory
from .tbg import evolution_bound


class Method(str, Enum):
    LINEAR_KKT = "LinearKKT"
    GRID_REFINE = "GridRefine"
    PAPER_STATED = "PaperStated"


class Verdict(str, Enum):
    PREDEFINED_TIME_OPTIMAL = "PredefinedTimeOptimal"
    APPROXIMATE_ONLY = "ApproximateOnly"
    FAILED = "Failed"


class OracleError(RuntimeError):
    """The reference-optimum search found no KKT point."""


class AuditError(RuntimeError):
    """The equilibrium needed by the Lyapunov audit could not be recovered."""


@dataclass
class ReferenceOptimum:
    x_star: NDArray[np.float64]
    method: Method
    objective_value: float | None = None
    candidates: list[NDArray[np.float64]] = field(default_factory=list)
    non_unique: bool = False

    def __post_init__(self) -> None:
        self.x_star = np.asarray(self.x_star, dtype=np.float64).ravel()
        if not self.candidates:
            self.candidates = [self.x_star]

    def distance(self, x: NDArray[np.float64]) -> float:
        """Max-norm distance to the nearest known KKT point."""
        return float(self.distances(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])

    def nearest(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64).ravel()
        return self.candidates[int(np.argmin([np.max(np.abs(x - c)) for c in self.candidates]))]

    def distances(self, xs: NDArray[np.float64]) -> NDArray[np.float64]:
        """Row-wise `distance` for a stack of points."""
        cands = np.array(self.candidates)
        gaps = np.abs(np.asarray(xs, dtype=np.float64)[:, None, :] - cands[None, :, :]).max(axis=2)
        return gaps.min(axis=1)


def _objective(costs: Sequence[CostFunction], x: NDArray[np.float64]) -> float | None:
    if not all(c.has_value for c in costs):
        return None
    return float(sum(c.value(x[i:i + 1]) for i, c in enumerate(costs)))


def _scalar_grads(costs: Sequence[CostFunction]) -> list:
    if any(c.dim != 1 for c in costs):
        raise OracleError("the reference-optimum oracle handles scalar agents only")
    return [c.scalar_grad if c.scalar_grad is not None else (lambda x, c=c: float(c.grad([x])[0]))
            for c in costs]


def _is_increasing(g, lo: float = -200.0, hi: float = 200.0, points: int = 40001) -> bool:
    xs = np.linspace(lo, hi, points)
    vals = np.array([g(float(x)) for x in xs])
    return bool(np.all(np.diff(vals) > 0))


def _inverse(g, lam: float) -> float:
    """Solve g(x) = lam for an increasing g by bracket expansion."""
    lo, hi = -1.0, 1.0
    while g(lo) > lam:
        lo *= 2.0
        if lo < -1e12:
            raise OracleError("no bracket for the gradient inverse")
    while g(hi) < lam:
        hi *= 2.0
        if hi > 1e12:
            raise OracleError("no bracket for the gradient inverse")
    return brentq(lambda x: g(x) - lam, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)


def reference_optimum_rap(costs: Sequence[CostFunction], q0: float,
                          seeds: Sequence[NDArray[np.float64]] = (),
                          stated: NDArray[np.float64] | None = None) -> ReferenceOptimum:
    """KKT points of min Σf_i s.t. Σx_i = q0: equal gradients plus the demand constraint.

    Affine gradients give a linear solve. Strictly increasing gradients give a
    one-dimensional root-find on the common gradient value λ. Otherwise
    least-squares refinement from the seeds and from a multistart set collects
    every distinct KKT point it reaches.
    """
    n = len(costs)
    if all(c.kind == "quadratic" for c in costs):
        a = np.array([c.params["a"] for c in costs])
        b = np.array([c.params["b"] for c in costs])
        lam = (q0 + np.sum(b / a)) / np.sum(1.0 / a)
        x = (lam - b) / a
        return ReferenceOptimum(x, Method.LINEAR_KKT, _objective(costs, x))
    grads = _scalar_grads(costs)
    if all(_is_increasing(g) for g in grads):
        def excess(lam: float) -> float:
            return sum(_inverse(g, lam) for g in grads) - q0

        lo, hi = -1.0, 1.0
        while excess(lo) > 0:
            lo *= 2.0
        while excess(hi) < 0:
            hi *= 2.0
        # Bisect down to adjacent floats, then interpolate the two bracketing allocations:
        # near a flat gradient the inverse is steep and a tolerance on λ alone leaves a demand gap.
        for _ in range(2000):
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            if excess(mid) > 0:
                hi = mid
            else:
                lo = mid
        x_lo = np.array([_inverse(g, lo) for g in grads])
        x_hi = np.array([_inverse(g, hi) for g in grads])
        s_lo, s_hi = x_lo.sum(), x_hi.sum()
        theta = 0.0 if s_hi == s_lo else (q0 - s_lo) / (s_hi - s_lo)
        x = x_lo + theta * (x_hi - x_lo)
        return ReferenceOptimum(x, Method.GRID_REFINE, _objective(costs, x))

    def residual(x: NDArray[np.float64]) -> NDArray[np.float64]:
        gv = np.array([g(float(v)) for g, v in zip(grads, x)])
        return np.append(np.diff(gv), np.sum(x) - q0)

    starts = [np.asarray(s, dtype=np.float64).ravel() for s in seeds]
    rng = np.random.default_rng(0)
    spread = max([1.0] + [float(np.max(np.abs(s))) for s in starts])
    starts += [np.full(n, q0 / n)] + [q0 / n + spread * rng.uniform(-1, 1, n) for _ in range(24)]
    found: list[NDArray[np.float64]] = []
    for x0 in starts:
        sol = least_squares(residual, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if np.max(np.abs(residual(sol.x))) <= 1e-7 and not any(np.max(np.abs(sol.x - f)) < 1e-6 for f in found):
            found.append(sol.x)
    if not found:
        if stated is None:
            raise OracleError("no KKT point found")
        x = np.asarray(stated, dtype=np.float64)
        return ReferenceOptimum(x, Method.PAPER_STATED, _objective(costs, x))
    values = [_objective(costs, f) for f in found]
    best = 0 if values[0] is None else int(np.argmin(values))
    # A flat KKT set shows up as a singular equal-gradient Jacobian at the solution.
    flat = any(_flat_at(grads, f) for f in found)
    return ReferenceOptimum(found[best], Method.GRID_REFINE, values[best], found,
                            non_unique=len(found) > 1 or flat)


def _flat_at(grads, x: NDArray[np.float64], h: float = 1e-6) -> bool:
    slopes = [(g(float(v) + h) - g(float(v) - h)) / (2 * h) for g, v in zip(grads, x)]
    return sum(abs(s) < 1e-9 for s in slopes) >= 2


def reference_optimum_consensus(costs: Sequence[CostFunction],
                                interval: tuple[float, float] | None = None,
                                initial: NDArray[np.float64] | None = None,
                                stated: float | None = None,
                                points: int = 20001) -> ReferenceOptimum:
    """Stationary points of the summed cost along the consensus line x_1 = ... = x_N.

    The search interval defaults to [min x(0) - 1, max x(0) + 1], widened while the
    minimizer sits on its boundary. All sign changes of Σ∇f_i on the grid are
    refined and kept as KKT candidates; x* is the lowest objective among them
    (or the first upward crossing when no primitive is available).
    """
    n = len(costs)
    if all(c.kind == "quadratic" for c in costs):
        a = sum(c.params["a"] for c in costs)
        b = sum(c.params["b"] for c in costs)
        x = np.full(n, -b / a)
        return ReferenceOptimum(x, Method.LINEAR_KKT, _objective(costs, x))
    grads = _scalar_grads(costs)

    def total(x: float) -> float:
        return sum(g(x) for g in grads)

    if interval is None:
        x0 = np.zeros(1) if initial is None else np.asarray(initial, dtype=np.float64)
        interval = (float(np.min(x0)) - 1.0, float(np.max(x0)) + 1.0)
    lo, hi = interval
    has_value = all(c.has_value for c in costs)
    for _ in range(40):
        xs = np.linspace(lo, hi, points)
        gs = np.array([total(float(x)) for x in xs])
        if has_value:
            fs = np.array([_objective(costs, np.full(n, x)) for x in xs])
            k = int(np.argmin(fs))
            at_edge = k in (0, points - 1)
        else:
            at_edge = gs[0] > 0 or gs[-1] < 0
        if not at_edge:
            break
        width = hi - lo
        lo, hi = lo - width, hi + width
    roots = []
    for i in np.flatnonzero(np.sign(gs[:-1]) * np.sign(gs[1:]) <= 0):
        a_, b_ = float(xs[i]), float(xs[i + 1])
        if gs[i] == 0.0:
            roots.append(a_)
        elif gs[i + 1] != 0.0:
            roots.append(brentq(total, a_, b_, xtol=1e-14))
    roots = sorted(set(roots))
    if not roots:
        if stated is None:
            raise OracleError("no stationary point of the summed cost in the search interval")
        x = np.full(n, float(stated))
        return ReferenceOptimum(x, Method.PAPER_STATED, _objective(costs, x))
    if has_value:
        k = int(np.argmin(fs))
        lo_k, hi_k = float(xs[max(k - 1, 0)]), float(xs[min(k + 1, points - 1)])
        res = minimize_scalar(lambda x: _objective(costs, np.full(n, x)), bounds=(lo_k, hi_k),
                              method="bounded", options={"xatol": 1e-13})
        best = min(roots, key=lambda r: abs(r - res.x))
        objective = _objective(costs, np.full(n, best))
    else:
        ups = [r for r in roots if total(r - 1e-7) < 0 < total(r + 1e-7)]
        best = (ups or roots)[0]
        objective = None
    return ReferenceOptimum(np.full(n, best), Method.GRID_REFINE, objective,
                            [np.full(n, r) for r in roots], non_unique=len(roots) > 1)


# ------------------------------------------------------------------ reports

@dataclass(frozen=True)
class ConvergenceReport:
    epsilon_used: float
    dist_at_tp: float
    post_tp_max: float
    tail_dist: float
    tail_tolerance: float
    verdict: Verdict


def _positions(traj: Trajectory, n_components: int) -> NDArray[np.float64]:
    return traj.states[:, :n_components]


def convergence_report(traj: Trajectory, ref: ReferenceOptimum, t_p: float, epsilon: float,
                       tail_tolerance: float | None = None) -> ConvergenceReport:
    """Entry into the ε-ball by t_p, staying inside after t_p, and the distance at the end."""
    if traj.times[-1] < t_p - 1e-12:
        raise ValueError(f"trajectory ends at {traj.times[-1]}, before t_p = {t_p}")
    m = ref.x_star.size
    xs = _positions(traj, m)
    k = int(np.argmin(np.abs(traj.times - t_p)))
    dists = ref.distances(xs[k:])
    tail_tol = epsilon if tail_tolerance is None else tail_tolerance
    at_tp, post, tail = float(dists[0]), float(np.max(dists)), float(dists[-1])
    if at_tp <= epsilon and post <= epsilon and tail <= tail_tol:
        verdict = Verdict.PREDEFINED_TIME_OPTIMAL
    elif at_tp <= epsilon or tail <= tail_tol:
        verdict = Verdict.APPROXIMATE_ONLY
    else:
        verdict = Verdict.FAILED
    return ConvergenceReport(epsilon, at_tp, post, tail, tail_tol, verdict)


def first_entry_time(traj: Trajectory, ref: ReferenceOptimum, epsilon: float) -> float:
    """Earliest sample time after which the trajectory stays within ε; inf if never."""
    m = ref.x_star.size
    dists = ref.distances(_positions(traj, m))
    outside = np.flatnonzero(dists > epsilon)
    if outside.size == 0:
        return float(traj.times[0])
    last = int(outside[-1])
    return math.inf if last == len(dists) - 1 else float(traj.times[last + 1])


def oscillation_metric(traj: Trajectory, t_p: float, n_components: int | None = None) -> float:
    """Total variation of the agent states over [t_p, t_end] divided by the span length."""
    if traj.times[-1] <= t_p:
        raise ValueError("trajectory must extend beyond t_p")
    k = int(np.argmin(np.abs(traj.times - t_p)))
    xs = traj.states[k:] if n_components is None else traj.states[k:, :n_components]
    span = float(traj.times[-1] - traj.times[k])
    return float(np.sum(np.abs(np.diff(xs, axis=0)))) / span


# ------------------------------------------------------------- Lyapunov audit

@dataclass
class LyapunovAudit:
    margin_ok: bool
    delta: float
    exponent: float
    values: NDArray[np.float64]
    bound: NDArray[np.float64]
    violations: int
    max_relative_violation: float
    sandwich_lower_violations: int
    sandwich_upper_violations: int


def equilibrium_for(system: MasSystem, ref: ReferenceOptimum, s0: NDArray[np.float64],
                    x_end: NDArray[np.float64] | None = None):
    """Auxiliary equilibrium around the KKT point nearest `x_end` (x* itself when omitted)."""
    x_star = ref.x_star if x_end is None else ref.nearest(x_end)
    try:
        if system.problem is Problem.RAP:
            return rap_equilibrium(system, x_star, RapState.from_flat(s0))
        return consensus_equilibrium(system, x_star, ConsensusState.from_flat(s0))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise AuditError(f"equilibrium recovery failed: {exc}") from None


def lyapunov_batch(states: NDArray[np.float64], system: MasSystem, coeffs: CoefficientSet,
                   frame: OrthogonalFrame, eq) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """V, sandwich lower and sandwich upper for every row of `states` at once.

    Same quantities as the per-state functions in `dynamics`, evaluated on stacked samples.
    """
    d, m = system.dim, system.n_agents * system.dim
    proj = np.kron(frame.matrix().T, np.eye(d))
    dev = np.asarray(states, dtype=np.float64) - eq.flat()[None, :]
    xi = dev[:, :m] @ proj.T
    sx = np.sum(xi * xi, axis=1)
    rho, beta = coeffs.rho, coeffs.beta
    if system.problem is Problem.RAP:
        eta = dev[:, m:2 * m] @ proj.T
        d2 = (dev[:, 2 * m:3 * m] @ proj.T)[:, d:]
        w2 = (dev[:, 3 * m:] @ proj.T)[:, d:]
        base = sx + np.sum(eta * eta, axis=1)
        mix = np.sum((d2 + w2) ** 2, axis=1)
        v = rho / 2 * base + beta / 2 * mix + coeffs.gamma / 2 * np.sum((xi - eta) ** 2, axis=1)
        lower = min(rho, beta) / 2 * (base + np.sum(w2 * w2, axis=1))
        upper = (rho + beta + 3 * coeffs.gamma) / 2 * (base + mix)
        return v, lower, upper
    eta2 = (dev[:, m:] @ proj.T)[:, d:]
    se = np.sum(eta2 * eta2, axis=1)
    v = rho / 2 * sx + (rho + beta) / 2 * se + beta / 2 * np.sum((xi[:, d:] + eta2) ** 2, axis=1)
    sq = sx + se
    return v, min(rho, beta) / 2 * sq, (rho + 3 * beta) / 2 * sq


def lyapunov_series(traj: Trajectory, system: MasSystem, coeffs: CoefficientSet,
                    frame: OrthogonalFrame, ref: ReferenceOptimum) -> NDArray[np.float64]:
    eq = equilibrium_for(system, ref, traj.states[0], traj.states[-1, :system.n_agents * system.dim])
    return lyapunov_batch(traj.states, system, coeffs, frame, eq)[0]


def lyapunov_audit(traj: Trajectory, system: MasSystem, coeffs: CoefficientSet,
                   frame: OrthogonalFrame, ref: ReferenceOptimum, tol: float = 1e-3) -> LyapunovAudit:
    """Compare V(t) with D mu(t,0)^(alpha - δD) V(0) and check the sandwich bounds at every sample.

    The δ-margin is evaluated first and reported even when the run goes on.
    """
    tbg = system.tbg
    exponent = tbg.alpha - coeffs.delta * tbg.d_const
    eq = equilibrium_for(system, ref, traj.states[0], traj.states[-1, :system.n_agents * system.dim])
    vals, lower, upper = lyapunov_batch(traj.states, system, coeffs, frame, eq)
    slack = 1 + 1e-12
    lower_bad = int(np.sum(lower > vals * slack + 1e-300))
    upper_bad = int(np.sum(vals > upper * slack + 1e-300))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        bound = np.array([_safe_bound(tbg, t, exponent) for t in traj.times]) * vals[0]
        excess = np.where(bound > 0, vals / bound - 1.0, np.where(vals > 0, np.inf, 0.0))
    viol = int(np.sum(excess > tol))
    return LyapunovAudit(coeffs.margin_ok, coeffs.delta, exponent, vals, bound, viol,
                         float(max(np.max(excess), 0.0)), lower_bad, upper_bad)


def _safe_bound(tbg, t: float, exponent: float) -> float:
    try:
        return evolution_bound(tbg, float(t), 0.0, alpha=exponent)
    except OverflowError:
        return math.inf


def epsilon_candidates(system: MasSystem, coeffs: CoefficientSet, v0: float) -> dict[str, float]:
    """ε from the predefined-time bound, in its two normalizations (ρ or α in the denominator).

    ε_rho = sqrt((2D/ρ) mu(t_p,0)^(α-δD) V(0)) and ε_alpha = sqrt((2D/α) mu(t_p,0)^(α-δD)).
    Both are inf when the margin δ <= α/D fails.
    """
    tbg = system.tbg
    exponent = tbg.alpha - coeffs.delta * tbg.d_const
    if not coeffs.margin_ok or exponent <= 0:
        return {"eps_rho": math.inf, "eps_alpha": math.inf}
    base = tbg.mu(tbg.t_p, 0.0) ** exponent
    d = tbg.d_const
    return {"eps_rho": math.sqrt(2 * d / coeffs.rho * base * max(v0, 0.0)),
            "eps_alpha": math.sqrt(2 * d / tbg.alpha * base)}


def diagnostics(traj: Trajectory, system: MasSystem, ref: ReferenceOptimum | None,
                coeffs: CoefficientSet | None, frame: OrthogonalFrame | None,
                q0: float | None = None) -> dict[str, NDArray[np.float64]]:
    """Per-sample V, grad_spread and demand_gap (RAP) or consensus_residual (consensus).

    grad_spread is the largest pairwise gap between agent gradients; demand_gap is
    |Σx_i - q0|; consensus_residual is |𝕃x|.
    """
    d, n = system.dim, system.n_agents
    m = n * d
    k = len(traj.times)
    out: dict[str, NDArray[np.float64]] = {"V": np.full(k, math.nan)}
    if ref is not None and coeffs is not None and frame is not None:
        try:
            out["V"] = lyapunov_series(traj, system, coeffs, frame, ref)
        except AuditError:
            pass
    xs = traj.states[:, :m]
    grads = np.array([system.grad(x) for x in xs]).reshape(k, n, d)
    gap = grads[:, :, None, :] - grads[:, None, :, :]
    out["grad_spread"] = np.sqrt(np.max(np.sum(gap * gap, axis=3), axis=(1, 2)))
    if system.problem is Problem.RAP:
        target = np.sum(system.q.reshape(n, d), axis=0) if q0 is None else np.broadcast_to(q0, (d,))
        out["demand_gap"] = np.linalg.norm(xs.reshape(k, n, d).sum(axis=1) - target, axis=1)
    else:
        out["consensus_residual"] = np.linalg.norm(xs @ system.lap.T, axis=1)
    traj.diagnostics.update(out)
    return out
