"""The TBG-driven multi-agent systems for resource allocation (RAP) and consensus.

RAP, with 𝕃 = L ⊗ I_n, gain A = A(t, t_p) and gradient weight ϱ:
    x' = A(-(ϱ/A)∇f(x) + y - x)
    y' = A(-𝕃y + (ϱ/A)𝕃z + q - x)
    z' = A(𝕃y - 𝕃z - 𝕃u)
    u' = A(𝕃y - 𝕃x)
Consensus:
    x' = A(-(ϱ/A)∇f(x) - 𝕃x - 𝕃w)
    w' = A 𝕃x
The comparison baseline applies ∇f at full gain: x' = A(-∇f(x) + ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from .costs import CostFunction
from .graph import Graph, SpectralBounds, kron_laplacian
from .tbg import Tbg


class Problem(str, Enum):
    RAP = "rap"
    CONSENSUS = "consensus"


class ConfigurationError(ValueError):
    """Inconsistent system configuration or a nonpositive gain."""


class InfeasibleCoefficients(ValueError):
    """No coefficient set satisfies the selection inequalities."""


@dataclass(frozen=True)
class RapState:
    x: NDArray[np.float64]
    y: NDArray[np.float64]
    z: NDArray[np.float64]
    u: NDArray[np.float64]

    def __post_init__(self) -> None:
        sizes = {np.size(b) for b in (self.x, self.y, self.z, self.u)}
        if len(sizes) != 1:
            raise ConfigurationError("RapState blocks must share one length")

    def flat(self) -> NDArray[np.float64]:
        return np.concatenate([self.x, self.y, self.z, self.u]).astype(np.float64)

    @classmethod
    def from_flat(cls, s: NDArray[np.float64]) -> "RapState":
        x, y, z, u = np.split(np.asarray(s, dtype=np.float64), 4)
        return cls(x, y, z, u)


@dataclass(frozen=True)
class ConsensusState:
    x: NDArray[np.float64]
    w: NDArray[np.float64]

    def __post_init__(self) -> None:
        if np.size(self.x) != np.size(self.w):
            raise ConfigurationError("ConsensusState blocks must share one length")

    def flat(self) -> NDArray[np.float64]:
        return np.concatenate([self.x, self.w]).astype(np.float64)

    @classmethod
    def from_flat(cls, s: NDArray[np.float64]) -> "ConsensusState":
        x, w = np.split(np.asarray(s, dtype=np.float64), 2)
        return cls(x, w)


@dataclass(eq=False)
class MasSystem:
    """Right-hand side of one multi-agent system, callable as rhs(t, flat_state).

    For the baseline, the ϱ/A factor on the 𝕃z coupling is frozen at
    ϱ/nominal_gain, where nominal_gain is the gain of the matching new-design run.
    """

    problem: Problem
    graph: Graph
    costs: Sequence[CostFunction]
    tbg: Tbg
    varrho: float
    q: NDArray[np.float64] | None = None
    baseline: bool = False
    nominal_gain: float | None = None
    lap: NDArray[np.float64] = field(init=False, repr=False)
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        n_agents = self.graph.n_agents
        if len(self.costs) != n_agents:
            raise ConfigurationError(f"{len(self.costs)} costs for {n_agents} agents")
        dims = {c.dim for c in self.costs}
        if len(dims) != 1:
            raise ConfigurationError("all agents must share one state dimension")
        self.dim = dims.pop()
        self.lap = kron_laplacian(self.graph, self.dim)
        if not (self.varrho > 0 and math.isfinite(self.varrho)):
            raise ConfigurationError(f"varrho must be positive, got {self.varrho!r}")
        if self.problem is Problem.RAP:
            if self.q is None:
                raise ConfigurationError("RAP systems need demands q")
            self.q = np.asarray(self.q, dtype=np.float64).ravel()
            if self.q.size != n_agents * self.dim:
                raise ConfigurationError(f"q has {self.q.size} entries, expected {n_agents * self.dim}")
        if self.nominal_gain is None:
            self.nominal_gain = self.tbg.gain(0.0)

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    @property
    def blocks(self) -> int:
        return 4 if self.problem is Problem.RAP else 2

    @property
    def size(self) -> int:
        return self.blocks * self.n_agents * self.dim

    def coupling(self) -> tuple[float, float, float, float]:
        """(g_fixed, g_gain, z_fixed, z_gain): gradient weight g_fixed + g_gain*A, 𝕃z weight z_fixed + z_gain*A."""
        if self.baseline:
            return 0.0, 1.0, 0.0, self.varrho / float(self.nominal_gain)
        return self.varrho, 0.0, self.varrho, 0.0

    def grad(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        d = self.dim
        return np.concatenate([c.grad(x[i * d:(i + 1) * d]) for i, c in enumerate(self.costs)])

    def __call__(self, t: float, s: NDArray[np.float64]) -> NDArray[np.float64]:
        gain = self.tbg.gain(t)
        if not gain > 0:
            raise ConfigurationError(f"gain must be positive, got {gain!r} at t = {t}")
        g_fixed, g_gain, z_fixed, z_gain = self.coupling()
        m = self.n_agents * self.dim
        lap = self.lap
        x = s[:m]
        gterm = (g_fixed + g_gain * gain) * self.grad(x)
        out = np.empty_like(s, dtype=np.float64)
        if self.problem is Problem.RAP:
            y, z, u = s[m:2 * m], s[2 * m:3 * m], s[3 * m:]
            ly, lz = lap @ y, lap @ z
            out[:m] = -gterm + gain * (y - x)
            out[m:2 * m] = gain * (-ly + self.q - x) + (z_fixed + z_gain * gain) * lz
            out[2 * m:3 * m] = gain * (ly - lz - lap @ u)
            out[3 * m:] = gain * (ly - lap @ x)
        else:
            out[:m] = -gterm - gain * (lap @ x + lap @ s[m:])
            out[m:] = gain * (lap @ x)
        return out

    def kernel_args(self) -> dict[str, Any] | None:
        """Arguments for the compiled RK4 kernel, or None when a cost is not in the catalog."""
        encoded = [c.kernel_code() for c in self.costs]
        if any(e is None for e in encoded):
            return None
        g_fixed, g_gain, z_fixed, z_gain = self.coupling()
        return {
            "system": 0 if self.problem is Problem.RAP else 1,
            "lap": np.ascontiguousarray(self.lap),
            "q": np.zeros(self.n_agents) if self.q is None else np.ascontiguousarray(self.q),
            "codes": np.array([e[0] for e in encoded], dtype=np.intc),
            "ca": np.array([e[1] for e in encoded], dtype=np.float64),
            "cb": np.array([e[2] for e in encoded], dtype=np.float64),
            "g_fixed": g_fixed, "g_gain": g_gain, "z_fixed": z_fixed, "z_gain": z_gain,
        }

    def linear_block(self, gain: float) -> NDArray[np.float64]:
        """Jacobian of the system with the gradient term removed, at a given gain."""
        m = self.n_agents * self.dim
        eye, zero, lap = np.eye(m), np.zeros((m, m)), self.lap
        g_fixed, g_gain, z_fixed, z_gain = self.coupling()
        if self.problem is Problem.RAP:
            zc = (z_fixed + z_gain * gain) / gain
            return gain * np.block([[-eye, eye, zero, zero], [-eye, -lap, zc * lap, zero],
                                    [zero, lap, -lap, -lap], [-lap, lap, zero, zero]])
        return gain * np.block([[-lap, -lap], [lap, zero]])

    def stiffness(self) -> float:
        """Upper bound on the Jacobian spectral radius: linear part plus gradient weight times M."""
        peak = self.tbg.max_gain
        radius = float(np.max(np.abs(np.linalg.eigvals(self.linear_block(peak)))))
        g_fixed, g_gain, _, _ = self.coupling()
        m_max = max(c.smoothness.M for c in self.costs)
        return radius + (g_fixed + g_gain * peak) * m_max


def rap_rhs(s: RapState, t: float, system: MasSystem) -> RapState:
    if system.problem is not Problem.RAP:
        raise ConfigurationError("rap_rhs needs a RAP system")
    return RapState.from_flat(system(t, s.flat()))


def consensus_rhs(s: ConsensusState, t: float, system: MasSystem) -> ConsensusState:
    if system.problem is not Problem.CONSENSUS:
        raise ConfigurationError("consensus_rhs needs a consensus system")
    return ConsensusState.from_flat(system(t, s.flat()))


# ---------------------------------------------------------------- coefficients

@dataclass(frozen=True)
class CoefficientSet:
    rho: float
    beta: float
    gamma: float
    varrho: float
    Lambda1: float = 0.0
    Lambda2: float = 0.0
    Lambda3: float = 0.0
    Upsilon1: float = 0.0
    Upsilon2: float = 0.0
    Upsilon3: float = 0.0
    delta: float = 0.0
    margin: float = math.inf
    selected_varrho: bool = True

    @property
    def margin_ok(self) -> bool:
        """δ <= α/D."""
        return self.delta <= self.margin

    @property
    def delta_generalized(self) -> float:
        """ϱΛ₂/min{ρ,β} (RAP) or ϱΥ₂/min{ρ,β} (consensus) for generalized-smooth costs."""
        agg = self.Lambda2 if self.Lambda1 > 0 else self.Upsilon2
        return self.varrho * agg / min(self.rho, self.beta)


def rap_inequality_slacks(c: CoefficientSet, b: SpectralBounds) -> list[float]:
    """Left minus right side of each selection inequality for the RAP system (all >= 0 when satisfied)."""
    l2, ln2 = b.lambda2, b.lambdaN_L2
    return [
        c.gamma - 2.0,
        c.beta * l2 - 1.5 * ln2 - 0.5,
        c.rho - c.beta ** 2 / 2 - c.gamma ** 2 * ln2 / 2 - c.gamma ** 2 / 2 - 0.5,
        c.rho * l2 + c.gamma * l2 - 0.5 - c.beta ** 2,
    ]


def consensus_inequality_slacks(c: CoefficientSet, b: SpectralBounds) -> list[float]:
    return [c.rho * b.lambda2 - 0.5, c.beta * b.lambda2 - 0.5]


def rap_lambdas(rho: float, beta: float, gamma: float, b: SpectralBounds, M: float,
                M_tilde: float = 0.0) -> tuple[float, float, float]:
    ln2 = b.lambdaN_L2
    m2 = M * M
    lam1 = max(((rho + gamma) * (1 + m2) + gamma * (ln2 + m2)) / 2,
               ((rho + gamma) * ln2 + gamma) / 2, (rho + 2 * gamma) / 2)
    lam2 = max((gamma * ln2 + (m2 + 2) * (rho + gamma) + gamma * (m2 + 1)) / 2,
               ((rho + gamma) * ln2 + gamma) / 2, (rho + 2 * gamma) / 2)
    lam3 = (rho + 2 * gamma) * (M_tilde ** 2 * m2 + M_tilde ** 2) / 2
    return lam1, lam2, lam3


def consensus_upsilons(rho: float, beta: float, b: SpectralBounds, M: float,
                       M_tilde: float = 0.0) -> tuple[float, float, float]:
    l2 = b.lambda2
    m2 = M * M
    ups1 = max((rho * (1 + m2) + beta * (m2 + l2)) / 2, beta * l2 / 2)
    ups2 = max((rho * (m2 + 2) + beta * (m2 + 1 + l2)) / 2, beta * l2)
    ups3 = (rho + beta) * (M_tilde ** 2 * m2 + M_tilde ** 2) / 2
    return ups1, ups2, ups3


def select_coefficients_rap(bounds: SpectralBounds, M: float, tbg: Tbg,
                            varrho: float | None = None, M_tilde: float = 0.0) -> CoefficientSet:
    """Smallest γ, then β and ρ meeting the RAP inequalities; ϱ = 0.9 α min{ρ,β} / (D Λ₁) unless given.

    The third inequality uses β²/2 (the stricter of the two candidate forms).
    """
    if M < 0 or bounds.lambda2 <= 0:
        raise InfeasibleCoefficients("need M >= 0 and a connected graph")
    gamma = 2.0
    l2, ln2 = bounds.lambda2, bounds.lambdaN_L2
    beta = (1.0 + 3.0 * ln2) / (2.0 * l2)
    rho = max(0.5 + beta ** 2 / 2 + gamma ** 2 * ln2 / 2 + gamma ** 2 / 2,
              (0.5 + beta ** 2 - gamma * l2) / l2)
    lam1, lam2, lam3 = rap_lambdas(rho, beta, gamma, bounds, M, M_tilde)
    margin = tbg.alpha / tbg.d_const
    chosen = varrho is None
    vr = 0.9 * tbg.alpha * min(rho, beta) / (tbg.d_const * lam1) if chosen else float(varrho)
    c = CoefficientSet(rho, beta, gamma, vr, lam1, lam2, lam3,
                       delta=vr * lam1 / min(rho, beta), margin=margin, selected_varrho=chosen)
    if min(rap_inequality_slacks(c, bounds)) < -1e-9:
        raise InfeasibleCoefficients("selected RAP coefficients violate the inequalities")
    return c


def select_coefficients_consensus(bounds: SpectralBounds, M: float, tbg: Tbg,
                                  varrho: float | None = None, M_tilde: float = 0.0) -> CoefficientSet:
    """ρ = β = 1/(2λ₂); ϱ = 0.9 α min{ρ,β} / (D Υ₁) unless given."""
    if M < 0 or bounds.lambda2 <= 0:
        raise InfeasibleCoefficients("need M >= 0 and a connected graph")
    rho = beta = 1.0 / (2.0 * bounds.lambda2)
    ups1, ups2, ups3 = consensus_upsilons(rho, beta, bounds, M, M_tilde)
    margin = tbg.alpha / tbg.d_const
    chosen = varrho is None
    vr = 0.9 * tbg.alpha * min(rho, beta) / (tbg.d_const * ups1) if chosen else float(varrho)
    c = CoefficientSet(rho, beta, 0.0, vr, Upsilon1=ups1, Upsilon2=ups2, Upsilon3=ups3,
                       delta=vr * ups1 / min(rho, beta), margin=margin, selected_varrho=chosen)
    if min(consensus_inequality_slacks(c, bounds)) < -1e-9:
        raise InfeasibleCoefficients("selected consensus coefficients violate the inequalities")
    return c


# ----------------------------------------------------------- frame and Lyapunov

@dataclass(frozen=True)
class OrthogonalFrame:
    R1: NDArray[np.float64]
    R2: NDArray[np.float64]

    @property
    def n_agents(self) -> int:
        return self.R1.size

    def matrix(self) -> NDArray[np.float64]:
        """[R1, R2] as an N x N orthogonal matrix."""
        return np.column_stack([self.R1, self.R2]) if self.R2.size else self.R1.reshape(-1, 1)

    def apply(self, v: NDArray[np.float64], dim: int = 1) -> NDArray[np.float64]:
        """([R1, R2]^T ⊗ I_dim) v: consensus coordinates first, disagreement coordinates after."""
        return np.kron(self.matrix().T, np.eye(dim)) @ np.asarray(v, dtype=np.float64)


def orthogonal_frame(N: int) -> OrthogonalFrame:
    """R1 = 1/√N; R2 from Gram–Schmidt on e_1, e_2, ... against R1 and earlier columns."""
    if int(N) != N or N < 1:
        raise ConfigurationError(f"N must be a positive integer, got {N!r}")
    r1 = np.full(N, 1.0 / math.sqrt(N))
    basis = [r1]
    for k in range(N):
        if len(basis) == N:
            break
        v = np.zeros(N)
        v[k] = 1.0
        for _ in range(2):
            for b in basis:
                v = v - (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
    r2 = np.column_stack(basis[1:]) if N > 1 else np.zeros((1, 0))
    return OrthogonalFrame(r1, r2)


def _split(v: NDArray[np.float64], dim: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    return v[:dim], v[dim:]


def lyapunov_rap(s: RapState, equilibrium: RapState, coeffs: CoefficientSet,
                 frame: OrthogonalFrame, dim: int = 1) -> float:
    """V = ρ/2 (ξᵀξ + ηᵀη) + β/2 |δ₂ + ω₂|² + γ/2 |ξ - η|²."""
    parts = _rap_coordinates(s, equilibrium, frame, dim)
    xi, eta, d2, w2 = parts
    return float(coeffs.rho / 2 * (xi @ xi + eta @ eta) + coeffs.beta / 2 * np.sum((d2 + w2) ** 2)
                 + coeffs.gamma / 2 * np.sum((xi - eta) ** 2))


def _rap_coordinates(s: RapState, eq: RapState, frame: OrthogonalFrame, dim: int):
    if np.size(s.x) != np.size(eq.x) or np.size(s.x) != frame.n_agents * dim:
        raise ConfigurationError("state, equilibrium and frame sizes disagree")
    xi = frame.apply(s.x - eq.x, dim)
    eta = frame.apply(s.y - eq.y, dim)
    d2 = _split(frame.apply(s.z - eq.z, dim), dim)[1]
    w2 = _split(frame.apply(s.u - eq.u, dim), dim)[1]
    return xi, eta, d2, w2


def rap_sandwich(s: RapState, equilibrium: RapState, coeffs: CoefficientSet,
                 frame: OrthogonalFrame, dim: int = 1) -> tuple[float, float]:
    """(lower, upper) = (min{ρ,β}/2 |col[ξ,η,ω₂]|², (ρ+β+3γ)/2 |col[ξ,η,δ₂+ω₂]|²)."""
    xi, eta, d2, w2 = _rap_coordinates(s, equilibrium, frame, dim)
    base = xi @ xi + eta @ eta
    lower = min(coeffs.rho, coeffs.beta) / 2 * (base + w2 @ w2)
    upper = (coeffs.rho + coeffs.beta + 3 * coeffs.gamma) / 2 * (base + np.sum((d2 + w2) ** 2))
    return float(lower), float(upper)


def _consensus_coordinates(s: ConsensusState, eq: ConsensusState, frame: OrthogonalFrame, dim: int):
    if np.size(s.x) != np.size(eq.x) or np.size(s.x) != frame.n_agents * dim:
        raise ConfigurationError("state, equilibrium and frame sizes disagree")
    xi = frame.apply(s.x - eq.x, dim)
    eta2 = _split(frame.apply(s.w - eq.w, dim), dim)[1]
    return xi, eta2


def lyapunov_consensus(s: ConsensusState, equilibrium: ConsensusState, coeffs: CoefficientSet,
                       frame: OrthogonalFrame, dim: int = 1) -> float:
    """V = ρ/2 ξᵀξ + (ρ+β)/2 |η₂|² + β/2 |ξ₂ + η₂|²."""
    xi, eta2 = _consensus_coordinates(s, equilibrium, frame, dim)
    xi2 = xi[dim:]
    return float(coeffs.rho / 2 * (xi @ xi) + (coeffs.rho + coeffs.beta) / 2 * (eta2 @ eta2)
                 + coeffs.beta / 2 * np.sum((xi2 + eta2) ** 2))


def consensus_sandwich(s: ConsensusState, equilibrium: ConsensusState, coeffs: CoefficientSet,
                       frame: OrthogonalFrame, dim: int = 1) -> tuple[float, float]:
    """(min{ρ,β}/2, (ρ+3β)/2) times |col[ξ, η₂]|²."""
    xi, eta2 = _consensus_coordinates(s, equilibrium, frame, dim)
    sq = float(xi @ xi + eta2 @ eta2)
    return min(coeffs.rho, coeffs.beta) / 2 * sq, (coeffs.rho + 3 * coeffs.beta) / 2 * sq


# -------------------------------------------------------------- KKT residuals

def _agent_grads(x: NDArray[np.float64], costs: Sequence[CostFunction]) -> list[NDArray[np.float64]]:
    d = costs[0].dim
    x = np.asarray(x, dtype=np.float64).ravel()
    return [c.grad(x[i * d:(i + 1) * d]) for i, c in enumerate(costs)]


def kkt_residual_rap(x: NDArray[np.float64], costs: Sequence[CostFunction], q0: float | NDArray[np.float64]) -> dict[str, float]:
    """grad_spread = max pairwise |∇f_i - ∇f_j|; demand_gap = |Σx_i - q0|."""
    grads = _agent_grads(x, costs)
    spread = 0.0
    for i in range(len(grads)):
        for j in range(len(grads)):
            spread = max(spread, float(np.linalg.norm(grads[i] - grads[j])))
    d = costs[0].dim
    total = np.asarray(x, dtype=np.float64).reshape(-1, d).sum(axis=0)
    gap = float(np.linalg.norm(total - np.asarray(q0, dtype=np.float64)))
    return {"grad_spread": spread, "demand_gap": gap}


def kkt_residual_consensus(x: NDArray[np.float64], w: NDArray[np.float64], costs: Sequence[CostFunction],
                           graph: Graph, varrho: float, gain: float) -> dict[str, float]:
    """consensus_residual = |𝕃x|; stationarity_residual = |(ϱ/A)∇f(x) + 𝕃x + 𝕃w|."""
    lap = kron_laplacian(graph, costs[0].dim)
    x = np.asarray(x, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    g = np.concatenate(_agent_grads(x, costs))
    return {
        "consensus_residual": float(np.linalg.norm(lap @ x)),
        "stationarity_residual": float(np.linalg.norm(varrho / gain * g + lap @ x + lap @ w)),
    }


def rap_equilibrium(system: MasSystem, x_star: NDArray[np.float64], s0: RapState,
                    gain: float | None = None) -> RapState:
    """Auxiliary equilibrium (y*, z*, u*) for a KKT point x*, means of z and u fixed to those of s0."""
    a = system.tbg.gain(0.0) if gain is None else gain
    g_fixed, g_gain, z_fixed, z_gain = system.coupling()
    gw = (g_fixed + g_gain * a) / a
    zw = (z_fixed + z_gain * a) / a
    lap, d, n = system.lap, system.dim, system.n_agents
    x_star = np.asarray(x_star, dtype=np.float64).ravel()
    pinv = np.linalg.pinv(lap)
    ones = np.kron(np.ones((n, 1)), np.eye(d))

    def with_mean(v: NDArray[np.float64], target: NDArray[np.float64]) -> NDArray[np.float64]:
        return v - ones @ (ones.T @ v) / n + ones @ (ones.T @ target) / n

    y = x_star + gw * system.grad(x_star)
    z = with_mean(pinv @ ((lap @ y - system.q + x_star) / zw), s0.z)
    u = with_mean(pinv @ (lap @ y - lap @ z), s0.u)
    return RapState(x_star, y, z, u)


def consensus_equilibrium(system: MasSystem, x_star: NDArray[np.float64], s0: ConsensusState,
                          gain: float | None = None) -> ConsensusState:
    """w* solving 𝕃w = -(ϱ/A)∇f(x*) - 𝕃x*, with the mean of w fixed to that of s0."""
    a = system.tbg.gain(0.0) if gain is None else gain
    g_fixed, g_gain, _, _ = system.coupling()
    gw = (g_fixed + g_gain * a) / a
    lap, d, n = system.lap, system.dim, system.n_agents
    x_star = np.asarray(x_star, dtype=np.float64).ravel()
    w = np.linalg.pinv(lap) @ (-gw * system.grad(x_star) - lap @ x_star)
    ones = np.kron(np.ones((n, 1)), np.eye(d))
    w = w - ones @ (ones.T @ w) / n + ones @ (ones.T @ s0.w) / n
    return ConsensusState(x_star, w)
