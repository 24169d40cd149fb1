"""Time-base generators (TBGs) and their contraction-bound families.

Every generator here defines its base contraction function through the
cumulative gain, mu(t, tau) = exp(-(G(t) - G(tau)) / alpha) with
G(t) = integral of gain over [0, t]. This makes the semigroup identity
exact and gives D * mu**alpha = exp(-(G(t) - G(tau))) * D, the evolution
operator of v' = -gain(t) v scaled by D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np

GAIN_FLOOR = 1e-6


class TbgKind(str, Enum):
    CONSTANT = "constant"
    THETA = "theta"
    GAMMA = "gamma"
    PRIOR_ZETA = "prior_zeta"


class TbgError(ValueError):
    """Invalid time-base generator parameters."""


def theta(t: float) -> float:
    """(2/pi) e^t (pi/2 + arctan t); equals 1 at t = 0."""
    return (2.0 / math.pi) * math.exp(t) * (math.pi / 2.0 + math.atan(t))


def theta_dot(t: float) -> float:
    return (2.0 / math.pi) * math.exp(t) * (math.pi / 2.0 + math.atan(t) + 1.0 / (1.0 + t * t))


def theta_log_rate(t: float) -> float:
    """theta'(t) / theta(t) = 1 + 1 / ((pi/2 + arctan t)(1 + t^2))."""
    return 1.0 + 1.0 / ((math.pi / 2.0 + math.atan(t)) * (1.0 + t * t))


def quintic_ramp(t: float, t_p: float) -> tuple[float, float]:
    """Smoothstep 6s^5 - 15s^4 + 10s^3 of s = t/t_p, clamped to [0, 1], and its time derivative."""
    s = min(max(t / t_p, 0.0), 1.0)
    value = s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    if t <= 0.0 or t >= t_p:
        return value, 0.0
    slope = 30.0 * s * s * (1.0 - s) * (1.0 - s) / t_p
    return value, slope


def _positive(**values: float) -> None:
    for name, v in values.items():
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise TbgError(f"{name} must be a positive finite number, got {v!r}")


@dataclass(frozen=True)
class Tbg:
    """A piecewise gain A(t, t_p) with its certified bound family D * mu(t, tau)**alpha.

    `params` holds the kind-specific constructor arguments so the generator
    can be serialized and rebuilt.
    """

    kind: TbgKind | None
    alpha: float
    t_p: float
    post_gain: float
    d_const: float = 1.0
    params: dict[str, float] = field(default_factory=dict)
    custom_gain: Callable[[float], float] | None = field(default=None, compare=False, repr=False)
    custom_mu: Callable[[float, float], float] | None = field(default=None, compare=False, repr=False)

    def pre_gain(self, t: float) -> float:
        """Gain formula valid on [0, t_p]."""
        kind = self.kind
        if kind is TbgKind.CONSTANT:
            return self.alpha
        if kind is TbgKind.THETA:
            return self.alpha * theta_log_rate(t)
        if kind is TbgKind.GAMMA:
            g, gdot = quintic_ramp(t, self.t_p)
            return max(self.alpha * gdot / (1.0 + self.params["varsigma"] - g), GAIN_FLOOR)
        if kind is TbgKind.PRIOR_ZETA:
            return self.alpha * self.params["level"]
        assert self.custom_gain is not None
        return float(self.custom_gain(t))

    def gain(self, t: float) -> float:
        """A(t, t_p): the pre-t_p formula up to and including t_p, the constant post gain after."""
        if t > self.t_p:
            return self.post_gain
        return self.pre_gain(t)

    def _pre_integral(self, t: float) -> float:
        kind = self.kind
        if kind is TbgKind.CONSTANT:
            return self.alpha * t
        if kind is TbgKind.THETA:
            return self.alpha * math.log(theta(t))
        if kind is TbgKind.GAMMA:
            vs = self.params["varsigma"]
            g, _ = quintic_ramp(t, self.t_p)
            return self.alpha * (math.log(1.0 + vs) - math.log(1.0 + vs - g))
        if kind is TbgKind.PRIOR_ZETA:
            return self.alpha * self.params["level"] * t
        raise TbgError("custom generators have no cumulative gain")

    def cumulative_gain(self, t: float) -> float:
        """G(t) = integral of the gain over [0, t] (closed form, floor excluded)."""
        if t <= self.t_p:
            return self._pre_integral(t)
        return self._pre_integral(self.t_p) + self.post_gain * (t - self.t_p)

    def mu(self, t: float, tau: float) -> float:
        if self.custom_mu is not None:
            return float(self.custom_mu(t, tau))
        return math.exp(-(self.cumulative_gain(t) - self.cumulative_gain(tau)) / self.alpha)

    def log_rate(self, t: float) -> float:
        """Analytic d/dt of -ln mu(t, 0), i.e. gain(t) / alpha."""
        return self.gain(t) / self.alpha

    def kernel_segments(self) -> tuple[tuple[int, tuple[float, ...]], tuple[int, tuple[float, ...]]]:
        """Gain encodings (code, params) for the compiled integrator on [0, t_p] and after.

        Codes: 0 constant, 1 theta, 2 quintic-ramp prior TBG.
        """
        post = (0, (self.post_gain,))
        kind = self.kind
        if kind is TbgKind.CONSTANT:
            return (0, (self.alpha,)), post
        if kind is TbgKind.THETA:
            return (1, (self.alpha,)), post
        if kind is TbgKind.GAMMA:
            return (2, (self.alpha, self.t_p, self.params["varsigma"], GAIN_FLOOR)), post
        if kind is TbgKind.PRIOR_ZETA:
            return (0, (self.alpha * self.params["level"],)), post
        raise TbgError("custom generators cannot be compiled")

    @property
    def max_gain(self) -> float:
        """Largest gain over [0, inf) on a dense sample of [0, t_p]."""
        ts = np.linspace(0.0, self.t_p, 2001)
        return max(max(self.pre_gain(float(t)) for t in ts), self.post_gain)

    def to_config(self) -> dict[str, Any]:
        if self.kind is None:
            raise TbgError("custom generators are not serializable")
        cfg: dict[str, Any] = {"kind": self.kind.value, "alpha": self.alpha, "t_p": self.t_p,
                               "post_gain": self.post_gain, "d_const": self.d_const}
        cfg.update(self.params)
        return cfg


def make_constant_tbg(alpha: float, t_p: float, post_gain: float | None = None,
                      d_const: float = 1.0) -> Tbg:
    """Constant gain alpha up to t_p; mu(t, tau) = exp(-(t - tau)) there."""
    post = alpha if post_gain is None else post_gain
    _positive(alpha=alpha, t_p=t_p, post_gain=post)
    _check_d(d_const)
    return Tbg(TbgKind.CONSTANT, float(alpha), float(t_p), float(post), float(d_const))


def make_theta_tbg(alpha: float, t_p: float, post_gain: float | None = None,
                   d_const: float = 1.0) -> Tbg:
    """Gain alpha * theta'(t) / theta(t); mu(t, tau) = theta(tau) / theta(t) up to t_p."""
    _positive(alpha=alpha, t_p=t_p)
    post = alpha * theta_log_rate(t_p) if post_gain is None else post_gain
    _positive(post_gain=post)
    _check_d(d_const)
    return Tbg(TbgKind.THETA, float(alpha), float(t_p), float(post), float(d_const))


def make_gamma_tbg(v: float, t_p: float, varsigma: float, post_gain: float | None = None,
                   d_const: float = 1.0) -> Tbg:
    """Ramp gain v * gamma'(t) / (1 - gamma(t) + varsigma) with a quintic ramp gamma.

    The gain is clamped below at GAIN_FLOOR where gamma' vanishes.
    """
    _positive(v=v, t_p=t_p, varsigma=varsigma)
    post = GAIN_FLOOR if post_gain is None else post_gain
    _positive(post_gain=post)
    _check_d(d_const)
    return Tbg(TbgKind.GAMMA, float(v), float(t_p), float(post), float(d_const),
               {"varsigma": float(varsigma)})


def make_prior_zeta_tbg(u: float, t_p: float = 0.05, level: float = 99.0,
                        post_gain: float | None = None, d_const: float = 1.0) -> Tbg:
    """Step gain u * zeta'(t) with zeta' = level on [0, t_p]."""
    _positive(u=u, t_p=t_p, level=level)
    post = u * level if post_gain is None else post_gain
    _positive(post_gain=post)
    _check_d(d_const)
    return Tbg(TbgKind.PRIOR_ZETA, float(u), float(t_p), float(post), float(d_const),
               {"level": float(level)})


def make_custom_tbg(gain: Callable[[float], float], mu: Callable[[float, float], float],
                    alpha: float, t_p: float, d_const: float = 1.0) -> Tbg:
    """Generator from arbitrary callables; used to check candidate mu families."""
    _positive(alpha=alpha, t_p=t_p)
    return Tbg(None, float(alpha), float(t_p), float(gain(t_p + 1.0)), float(d_const),
               custom_gain=gain, custom_mu=mu)


def _check_d(d_const: float) -> None:
    if not (math.isfinite(d_const) and d_const >= 1.0):
        raise TbgError(f"d_const must be >= 1, got {d_const!r}")


def tbg_from_config(cfg: dict[str, Any]) -> Tbg:
    kind = TbgKind(cfg["kind"])
    post = cfg.get("post_gain")
    d = cfg.get("d_const", 1.0)
    if kind is TbgKind.CONSTANT:
        return make_constant_tbg(cfg["alpha"], cfg["t_p"], post, d)
    if kind is TbgKind.THETA:
        return make_theta_tbg(cfg["alpha"], cfg["t_p"], post, d)
    if kind is TbgKind.GAMMA:
        return make_gamma_tbg(cfg["alpha"], cfg["t_p"], cfg["varsigma"], post, d)
    return make_prior_zeta_tbg(cfg["alpha"], cfg["t_p"], cfg.get("level", 99.0), post, d)


def evolution_bound(tbg: Tbg, t: float, tau: float, alpha: float | None = None,
                    d_const: float | None = None) -> float:
    """D * mu(t, tau)**alpha; alpha and D default to the generator's own."""
    if t < tau:
        raise TbgError(f"evolution_bound needs t >= tau, got t={t}, tau={tau}")
    a = tbg.alpha if alpha is None else alpha
    d = tbg.d_const if d_const is None else d_const
    return d * tbg.mu(t, tau) ** a


@dataclass(frozen=True)
class ContractionReport:
    checked_grid: list[tuple[float, float]]
    max_semigroup_violation: float
    min_rate_floor: float
    epsilon_at_tp: float
    monotone: bool

    @property
    def passed(self) -> bool:
        return self.max_semigroup_violation <= 1e-9 and self.min_rate_floor >= 1.0 - 1e-6 and self.monotone


def _rate_floor_fd(tbg: Tbg, t: float, h: float) -> float:
    """Finite-difference -d/dt ln mu(t, 0), one-sided at 0 and at t_p."""
    def f(s: float) -> float:
        return -math.log(tbg.mu(s, 0.0))

    if t - h < 0.0:
        return (-3.0 * f(t) + 4.0 * f(t + h) - f(t + 2 * h)) / (2 * h)
    if tbg.t_p - h < t <= tbg.t_p:
        return (3.0 * f(t) - 4.0 * f(t - h) + f(t - 2 * h)) / (2 * h)
    return (f(t + h) - f(t - h)) / (2 * h)


def verify_contraction(tbg: Tbg, grid: Sequence[float]) -> ContractionReport:
    """Check the semigroup identity, the unit log-rate floor and monotonicity of mu on a grid."""
    ts = [float(t) for t in grid]
    if not ts:
        raise TbgError("grid must be nonempty")
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise TbgError("grid must be sorted ascending")
    n = len(ts)
    mu = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1):
            mu[i, j] = tbg.mu(ts[i], ts[j])
    worst = 0.0
    for k in range(n):
        for j in range(k + 1):
            for i in range(j + 1):
                ref = mu[k, i]
                err = abs(mu[k, j] * mu[j, i] - ref)
                worst = max(worst, err / ref if ref > 0 else err)
    monotone = all(mu[i + 1, j] <= mu[i, j] * (1 + 1e-12) for j in range(n) for i in range(j, n - 1))
    h = 1e-5 * tbg.t_p
    floor = min(_rate_floor_fd(tbg, t, h) for t in ts)
    pairs = [(ts[i], ts[j]) for i in range(n) for j in range(i + 1)]
    return ContractionReport(pairs, worst, floor, evolution_bound(tbg, tbg.t_p, 0.0), monotone)
