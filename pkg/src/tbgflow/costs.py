"""Agent cost functions: gradients, smoothness constants and convexity classes."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

SIN_GUARD = 1e-9


class Convexity(str, Enum):
    STRONGLY_CONVEX = "strongly_convex"
    STRICTLY_CONVEX = "strictly_convex"
    CONVEX = "convex"
    NON_CONVEX = "non_convex"


class CostError(ValueError):
    """Invalid cost parameters or specification."""


@dataclass(frozen=True)
class Smoothness:
    """Bound |grad(x) - grad(y)| <= M |x - y| + M_tilde on the interval `valid_on`."""

    M: float
    M_tilde: float = 0.0
    valid_on: tuple[float, float] = (-math.inf, math.inf)


@dataclass(frozen=True, eq=False)
class CostFunction:
    """A separable agent cost described by its gradient.

    `kind` and `params` identify catalog entries; they drive serialization and
    the compiled integrator. Custom costs use kind "custom" and run on the
    pure-Python path.
    """

    kind: str
    grad_fn: Callable[[NDArray[np.float64]], NDArray[np.float64]] = field(repr=False)
    convexity: Convexity
    smoothness: Smoothness
    params: dict[str, float] = field(default_factory=dict)
    dim: int = 1
    alt_smoothness: tuple[Smoothness, ...] = ()
    value_fn: Callable[[NDArray[np.float64]], float] | None = field(default=None, repr=False)
    scalar_grad: Callable[[float], float] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.smoothness.M + self.smoothness.M_tilde <= 0:
            raise CostError("M + M_tilde must be positive")

    def grad(self, x: ArrayLike) -> NDArray[np.float64]:
        arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if arr.shape != (self.dim,):
            raise CostError(f"expected a vector of length {self.dim}, got shape {arr.shape}")
        return np.asarray(self.grad_fn(arr), dtype=np.float64)

    def value(self, x: ArrayLike) -> float:
        if self.value_fn is None:
            raise CostError(f"cost {self.kind!r} has no primitive")
        return float(self.value_fn(np.atleast_1d(np.asarray(x, dtype=np.float64))))

    @property
    def has_value(self) -> bool:
        return self.value_fn is not None

    def kernel_code(self) -> tuple[int, float, float] | None:
        """(code, a, b) for the compiled integrator, or None when not compilable."""
        if self.dim != 1 or self.kind not in KERNEL_CODES:
            return None
        code = KERNEL_CODES[self.kind]
        if code == 0:
            return 0, self.params["a"], self.params["b"]
        return code, self.params.get("scale", 1.0), 0.0

    def to_config(self) -> dict[str, Any]:
        if self.kind not in CATALOG:
            raise CostError(f"cost {self.kind!r} is not serializable")
        return {"kind": self.kind, **self.params}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CostFunction):
            return NotImplemented
        if self.kind == "custom" or other.kind == "custom":
            return self is other
        return self.kind == other.kind and self.params == other.params and self.dim == other.dim


KERNEL_CODES = {
    "quadratic": 0,
    "piecewise_cubic": 1,
    "clipped_oscillatory": 2,
    "xsq_sin_inv": 3,
    "steep_piecewise_linear": 4,
    "x_sin_inv": 5,
}


def _scalar_cost(kind: str, g: Callable[[float], float], convexity: Convexity,
                 smoothness: Smoothness, params: dict[str, float],
                 value: Callable[[float], float] | None = None,
                 alt: tuple[Smoothness, ...] = ()) -> CostFunction:
    value_fn = None if value is None else (lambda x: value(float(x[0])))
    return CostFunction(kind, lambda x: np.array([g(float(x[0]))]), convexity, smoothness,
                        params, 1, alt, value_fn, g)


def _check_scale(scale: float) -> float:
    if not (math.isfinite(scale) and scale > 0):
        raise CostError(f"scale must be positive, got {scale!r}")
    return float(scale)


def quadratic_cost(a: float, b: float) -> CostFunction:
    """f(x) = a x^2 / 2 + b x with gradient a x + b."""
    if not (math.isfinite(a) and a > 0):
        raise CostError(f"a must be positive, got {a!r}")
    a, b = float(a), float(b)
    return _scalar_cost("quadratic", lambda x: a * x + b, Convexity.STRONGLY_CONVEX,
                        Smoothness(a), {"a": a, "b": b}, lambda x: 0.5 * a * x * x + b * x)


def piecewise_cubic_grad(x: float) -> float:
    """Twelve-branch gradient with cubic pieces of half-width 0.1 between -1 and 1."""
    if x < -1.0:
        return 0.011 * x
    if x >= 1.0:
        return 0.009 * x
    # Branch k covers [-1 + 0.2k, -0.8 + 0.2k); centre c_k, offset o_k.
    k = min(int(math.floor((x + 1.0) / 0.2)), 9)
    lo = -1.0 + 0.2 * k
    if x < lo:
        k -= 1
    elif x >= lo + 0.2 and k < 9:
        k += 1
    centre = -0.9 + 0.2 * k
    offset = -0.01 + 0.002 * k
    return (x - centre) ** 3 + offset


def piecewise_cubic_cost(scale: float = 1.0) -> CostFunction:
    """Convexity is recorded as declared for this catalog entry.

    M is the largest branch slope, 3 * 0.1^2 at the edge of each cubic piece.
    """
    s = _check_scale(scale)
    g = (lambda x: s * piecewise_cubic_grad(x)) if s != 1.0 else piecewise_cubic_grad
    return _scalar_cost("piecewise_cubic", g, Convexity.STRICTLY_CONVEX,
                        Smoothness(0.03 * s), {"scale": s})


_CLIP_HI = 0.8 * math.sin(2.5) - math.cos(2.5)
_CLIP_LO = 0.4 * math.sin(5.0) - math.cos(5.0)


def clipped_oscillatory_grad(x: float) -> float:
    if x >= 0.4:
        return _CLIP_HI
    if x > 0.2:
        return 2.0 * x * math.sin(1.0 / x) - math.cos(1.0 / x)
    return _CLIP_LO


def clipped_oscillatory_cost(scale: float = 1.0) -> CostFunction:
    s = _check_scale(scale)

    def g(x: float) -> float:
        return s * clipped_oscillatory_grad(x)

    return _scalar_cost("clipped_oscillatory", g, Convexity.CONVEX,
                        Smoothness(_clipped_slope() * s * 1.01), {"scale": s})


@functools.lru_cache(maxsize=None)
def _clipped_slope() -> float:
    """Sampled Lipschitz slope of the unscaled clipped gradient; it only varies on (0.2, 0.4)."""
    probe = _scalar_cost("clipped_oscillatory", clipped_oscillatory_grad, Convexity.CONVEX, Smoothness(1.0), {})
    return estimate_smoothness(probe, 0.19, 0.41, 4001)["M_hat"]


def xsq_sin_inv_grad(x: float) -> float:
    if abs(x) <= SIN_GUARD:
        return 0.0
    return 2.0 * x * math.sin(1.0 / x) - math.cos(1.0 / x)


def _xsq_sin_inv_value(x: float) -> float:
    return 0.0 if x == 0.0 else x * x * math.sin(1.0 / x)


def xsq_sin_inv_cost(scale: float = 1.0) -> CostFunction:
    """f(x) = x^2 sin(1/x). |grad| <= 3 everywhere, hence the additive constant 6."""
    s = _check_scale(scale)
    return _scalar_cost("xsq_sin_inv", lambda x: s * xsq_sin_inv_grad(x), Convexity.NON_CONVEX,
                        Smoothness(0.0, 6.0 * s), {"scale": s},
                        lambda x: s * _xsq_sin_inv_value(x))


def steep_piecewise_linear_grad(x: float) -> float:
    if x >= 0.1:
        return 100.0 * x + 90.0
    if x > -0.1:
        return 1000.0 * x
    return 100.0 * x - 90.0


def _steep_value(x: float) -> float:
    if x >= 0.1:
        return 50.0 * x * x + 90.0 * x - 4.5
    if x > -0.1:
        return 500.0 * x * x
    return 50.0 * x * x - 90.0 * x - 4.5


def steep_piecewise_linear_cost(scale: float = 1.0) -> CostFunction:
    """Slope 1000 on (-0.1, 0.1), slope 100 outside, all times `scale`.

    Declared constants: Lipschitz (1000 s, 0) and generalized (100 s, 200 s).
    """
    s = _check_scale(scale)
    return _scalar_cost("steep_piecewise_linear", lambda x: s * steep_piecewise_linear_grad(x),
                        Convexity.CONVEX, Smoothness(1000.0 * s), {"scale": s},
                        lambda x: s * _steep_value(x), (Smoothness(100.0 * s, 200.0 * s),))


def x_sin_inv_grad(x: float) -> float:
    if abs(x) <= SIN_GUARD:
        return 0.0
    u = 1.0 / x
    return math.sin(u) - u * math.cos(u)


def x_sin_inv_cost(scale: float = 1.0) -> CostFunction:
    """f(x) = x sin(1/x). The gradient is unbounded near 0; M is declared for x >= 0.1."""
    s = _check_scale(scale)

    def value(x: float) -> float:
        return 0.0 if x == 0.0 else s * x * math.sin(1.0 / x)

    return _scalar_cost("x_sin_inv", lambda x: s * x_sin_inv_grad(x), Convexity.NON_CONVEX,
                        Smoothness(1000.0 * s, 0.0, (0.1, math.inf)), {"scale": s}, value)


def consensus_quadratics() -> list[CostFunction]:
    """x^2/2 - x, x^2/2 - 9x and x^2/2."""
    return [quadratic_cost(1.0, -1.0), quadratic_cost(1.0, -9.0), quadratic_cost(1.0, 0.0)]


def custom_cost(grad: Callable[[NDArray[np.float64]], ArrayLike], dim: int, M: float,
                M_tilde: float = 0.0, convexity: Convexity = Convexity.NON_CONVEX,
                value: Callable[[NDArray[np.float64]], float] | None = None) -> CostFunction:
    """Wrap an arbitrary gradient; runs only on the pure-Python integrator path."""
    return CostFunction("custom", lambda x: np.asarray(grad(x), dtype=np.float64), convexity,
                        Smoothness(M, M_tilde), {}, dim, (), value)


CATALOG: dict[str, Callable[..., CostFunction]] = {
    "quadratic": quadratic_cost,
    "piecewise_cubic": piecewise_cubic_cost,
    "clipped_oscillatory": clipped_oscillatory_cost,
    "xsq_sin_inv": xsq_sin_inv_cost,
    "steep_piecewise_linear": steep_piecewise_linear_cost,
    "x_sin_inv": x_sin_inv_cost,
}


def cost_from_config(cfg: dict[str, Any]) -> CostFunction:
    if "kind" not in cfg:
        raise CostError("cost entry needs a 'kind'")
    kind = cfg["kind"]
    if kind not in CATALOG:
        raise CostError(f"unknown cost kind {kind!r}; expected one of {sorted(CATALOG)}")
    params = {k: v for k, v in cfg.items() if k != "kind"}
    try:
        return CATALOG[kind](**params)
    except TypeError as exc:
        raise CostError(f"bad parameters for cost {kind!r}: {exc}") from None


def estimate_smoothness(c: CostFunction, lo: float, hi: float, samples: int,
                        M: float | None = None) -> dict[str, float]:
    """Empirical Lipschitz slope and additive excess over sampled pairs on [lo, hi].

    Points lie on the segment from lo*1 to hi*1. M_hat is the largest chord slope
    (attained by neighbouring samples); M_tilde_hat is the largest
    |grad(x) - grad(y)| - M |x - y| over all pairs, with M defaulting to the
    declared constant.
    """
    if not (lo < hi) or samples < 2:
        raise CostError(f"invalid interval [{lo}, {hi}] with {samples} samples")
    ts = np.linspace(lo, hi, int(samples))
    direction = np.ones(c.dim)
    g = np.array([c.grad(t * direction) for t in ts])
    dx = np.diff(ts) * math.sqrt(c.dim)
    dg = np.linalg.norm(np.diff(g, axis=0), axis=1)
    m_hat = float(np.max(dg / dx))
    m_ref = c.smoothness.M if M is None else M
    dist = np.abs(ts[:, None] - ts[None, :]) * math.sqrt(c.dim)
    gdist = np.linalg.norm(g[:, None, :] - g[None, :, :], axis=2)
    mt_hat = float(max(np.max(gdist - m_ref * dist), 0.0))
    return {"M_hat": m_hat, "M_tilde_hat": mt_hat}
