"""Fixed-step classical RK4 with an exact break at the predefined time t_p."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import ModuleType
from typing import Any, Callable

import numpy as np
from numpy.typing import NDArray

from . import kernels
from .tbg import Tbg

Rhs = Callable[[float, NDArray[np.float64]], NDArray[np.float64]]

# Largest admissible dt * (Jacobian spectral-radius bound); RK4 is stable up to ~2.78.
STABILITY_GUARD = 0.5


class DivergenceError(RuntimeError):
    """A non-finite state appeared during integration."""

    def __init__(self, time: float):
        super().__init__(f"non-finite state at t = {time:.6g}")
        self.time = time


class StabilityGuardError(ValueError):
    """The requested step exceeds the stability guard of the system."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_end: float
    sample_every: int = 1

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError(f"sample_every must be a positive integer, got {self.sample_every!r}")

    def to_config(self) -> dict[str, Any]:
        return {"dt": self.dt, "t_end": self.t_end, "sample_every": self.sample_every}


@dataclass
class Trajectory:
    times: NDArray[np.float64]
    states: NDArray[np.float64]
    t_p: float
    dt: float
    backend: str
    diagnostics: dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def state_at(self, t: float) -> NDArray[np.float64]:
        """Sample closest to time t."""
        return self.states[int(np.argmin(np.abs(self.times - t)))]

    @property
    def tp_index(self) -> int:
        return int(np.argmin(np.abs(self.times - self.t_p)))


def aligned_step(dt: float, t_p: float) -> float:
    """Largest step <= dt that divides t_p into an integer number of steps."""
    n = max(1, math.ceil(t_p / dt - 1e-9))
    return t_p / n


def _segments(tbg: Tbg, cfg: IntegratorConfig, dt: float) -> list[tuple[float, int, bool]]:
    """(start time, steps, pre-t_p flag) for each side of the break."""
    t_p = tbg.t_p
    if cfg.t_end <= t_p:
        return [(0.0, max(1, math.ceil(cfg.t_end / dt - 1e-9)), True)]
    n_pre = int(round(t_p / dt))
    n_post = max(1, math.ceil((cfg.t_end - t_p) / dt - 1e-9))
    return [(0.0, n_pre, True), (t_p, n_post, False)]


def _rk4_python(rhs: Rhs, s: NDArray[np.float64], t0: float, dt: float, nsteps: int, every: int,
                lo: float, hi: float) -> tuple[list[float], list[NDArray[np.float64]], NDArray[np.float64]]:
    """Stage times are clamped to [lo, hi] so a generic rhs never sees the other side of t_p."""
    times, states = [], []
    half, sixth = 0.5 * dt, dt / 6.0
    for step in range(nsteps):
        t = t0 + step * dt
        ta, tb, tc = min(max(t, lo), hi), min(max(t + half, lo), hi), min(max(t + dt, lo), hi)
        k1 = rhs(ta, s)
        k2 = rhs(tb, s + half * k1)
        k3 = rhs(tb, s + half * k2)
        k4 = rhs(tc, s + dt * k3)
        s = s + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(s)):
            raise DivergenceError(t + dt)
        if (step + 1) % every == 0 or step + 1 == nsteps:
            times.append(t0 + (step + 1) * dt)
            states.append(s)
    return times, states, s


def _rk4_kernel(backend: ModuleType, args: dict[str, Any], gain: tuple[int, tuple[float, ...]],
                s: NDArray[np.float64], t0: float, dt: float, nsteps: int,
                every: int) -> tuple[list[float], list[NDArray[np.float64]], NDArray[np.float64]]:
    state = np.array(s, dtype=np.float64)
    samples = np.empty((nsteps // every, state.size))
    rows, bad = backend.rk4_mas(
        args["system"], state, args["lap"], args["q"], args["codes"], args["ca"], args["cb"],
        args["g_fixed"], args["g_gain"], args["z_fixed"], args["z_gain"],
        gain[0], np.asarray(gain[1], dtype=np.float64), t0, dt, nsteps, every, samples)
    if bad >= 0:
        raise DivergenceError(t0 + (bad + 1) * dt)
    times = [t0 + (j + 1) * every * dt for j in range(rows)]
    states = list(samples[:rows])
    if nsteps % every:
        times.append(t0 + nsteps * dt)
        states.append(state.copy())
    return times, states, state


def stability_limit(rhs: Any) -> float:
    """Largest guarded step for systems that report a stiffness bound; inf otherwise."""
    stiffness = getattr(rhs, "stiffness", None)
    if stiffness is None:
        return math.inf
    return STABILITY_GUARD / float(stiffness())


def integrate(rhs: Rhs, s0: NDArray[np.float64], tbg: Tbg, cfg: IntegratorConfig,
              backend: ModuleType | None = None, guard: bool = True,
              stop: Callable[[float, NDArray[np.float64]], bool] | None = None,
              chunk_steps: int = 2000) -> Trajectory:
    """Integrate s' = rhs(t, s) from s(0) = s0.

    The step is shrunk so t_p falls on the grid and no RK4 stage straddles the
    gain switch. Systems exposing `kernel_args()` run on the compiled backend
    (or `backend` when given); anything else runs the Python loop. When `stop`
    is given it is polled every `chunk_steps` steps and ends the run early once
    it returns True.
    """
    dt = aligned_step(cfg.dt, tbg.t_p)
    if guard:
        limit = stability_limit(rhs)
        if dt > limit * (1 + 1e-12):
            raise StabilityGuardError(f"dt = {dt:.3e} exceeds the stability guard {limit:.3e}")
    s = np.array(s0, dtype=np.float64).ravel()
    if not np.all(np.isfinite(s)):
        raise DivergenceError(0.0)
    be = kernels.backend if backend is None else backend
    args = rhs.kernel_args() if hasattr(rhs, "kernel_args") and getattr(rhs, "tbg", None) is tbg else None
    if args is not None:
        gains = tbg.kernel_segments()
        name = "cython" if be is not kernels.python_backend else "python"
    else:
        name = "python-generic"
    every = cfg.sample_every
    if stop is None:
        chunk = None
    else:
        chunk = max(every, (chunk_steps // every) * every)
    times, states = [0.0], [s.copy()]
    for t0, nsteps, pre in _segments(tbg, cfg, dt):
        done = 0
        while done < nsteps:
            n = nsteps - done if chunk is None else min(chunk, nsteps - done)
            start = t0 + done * dt
            if args is not None:
                ts, xs, s = _rk4_kernel(be, args, gains[0 if pre else 1], s, start, dt, n, every)
            else:
                lo, hi = (-math.inf, tbg.t_p) if pre else (math.nextafter(tbg.t_p, math.inf), math.inf)
                ts, xs, s = _rk4_python(rhs, s, start, dt, n, every, lo, hi)
            done += n
            if pre and done == nsteps and cfg.t_end >= tbg.t_p:
                ts[-1] = tbg.t_p
            times.extend(ts)
            states.extend(xs)
            if stop is not None and stop(times[-1], s):
                return Trajectory(np.array(times), np.array(states), tbg.t_p, dt, name)
    return Trajectory(np.array(times), np.array(states), tbg.t_p, dt, name)


@dataclass(frozen=True)
class RefinementReport:
    """`halvings` counts how often dt was halved before a run agreed with its half-step twin."""

    halvings: int
    dts: list[float]
    changes: list[float]
    converged: bool


def refine_until_stable(rhs: Rhs, s0: NDArray[np.float64], tbg: Tbg, cfg: IntegratorConfig,
                        tol: float = 1e-6, max_halvings: int = 4,
                        backend: ModuleType | None = None) -> tuple[Trajectory, RefinementReport]:
    """Compare runs at dt, dt/2, dt/4, ... until successive end states agree to tol (max-norm).

    Returns the finest trajectory computed and the report.
    """
    traj = integrate(rhs, s0, tbg, cfg, backend=backend)
    dts, changes = [traj.dt], []
    dt, every = traj.dt, cfg.sample_every
    for level in range(max_halvings + 1):
        dt *= 0.5
        every *= 2
        finer = integrate(rhs, s0, tbg, IntegratorConfig(dt, cfg.t_end, every), backend=backend)
        change = float(np.max(np.abs(finer.states[-1] - traj.states[-1])))
        dts.append(finer.dt)
        changes.append(change)
        traj = finer
        if change < tol:
            return traj, RefinementReport(level, dts, changes, True)
    return traj, RefinementReport(max_halvings, dts, changes, False)
