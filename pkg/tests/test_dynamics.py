import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbgflow import cli
from tbgflow.analysis import lyapunov_batch
from tbgflow.costs import quadratic_cost
from tbgflow.dynamics import (CoefficientSet, ConfigurationError, ConsensusState, MasSystem, Problem, RapState,
                              consensus_equilibrium, consensus_inequality_slacks, consensus_sandwich,
                              kkt_residual_consensus, kkt_residual_rap, lyapunov_consensus, lyapunov_rap,
                              orthogonal_frame, rap_equilibrium, rap_inequality_slacks, rap_sandwich,
                              select_coefficients_consensus, select_coefficients_rap)
from tbgflow.graph import build_graph, cycle_graph, path_graph, spectral_bounds
from tbgflow.tbg import make_constant_tbg

LAM = (145 + 0.75 + 2 + 5 + 2 / 3) / (0.25 + 0.5 + 1 + 1 / 3)
X51 = np.array([(LAM - 3) / 4, (LAM - 4) / 2, LAM - 5, (LAM - 2) / 3])


def test_initial_derivative_5_1():
    s = cli.bundled_scenario("example_5_1")
    d = cli.build_system(s)(0.0, cli.initial_state(s))
    # -8 (4*40 + 3) + 80 (0 - 40)
    assert d[0] == pytest.approx(-4504.0, abs=1e-9)


def test_initial_derivative_5_6():
    s = cli.bundled_scenario("example_5_6")
    d = cli.build_system(s)(0.0, cli.initial_state(s))
    # -0.2 (20 - 1) - 20 (20 - 5)
    assert d[0] == pytest.approx(-303.8, abs=1e-9)


def test_rap_equilibrium_is_stationary():
    s = cli.bundled_scenario("example_5_1")
    system = cli.build_system(s)
    eq = rap_equilibrium(system, X51, RapState.from_flat(cli.initial_state(s)))
    assert np.max(np.abs(system(0.0, eq.flat()))) < 1e-8


def test_consensus_equilibrium_is_stationary():
    s = cli.bundled_scenario("example_5_6")
    system = cli.build_system(s)
    eq = consensus_equilibrium(system, np.full(3, 10 / 3), ConsensusState.from_flat(cli.initial_state(s)))
    assert np.max(np.abs(system(0.0, eq.flat()))) < 1e-10
    res = kkt_residual_consensus(eq.x, eq.w, system.costs, system.graph, system.varrho, 20.0)
    assert res["consensus_residual"] < 1e-12
    assert res["stationarity_residual"] < 1e-8


def test_single_agent_consensus_is_gradient_flow():
    system = MasSystem(Problem.CONSENSUS, build_graph(1, []), [quadratic_cost(2.0, 1.0)],
                       make_constant_tbg(5.0, 1.0), 0.7)
    d = system(0.3, np.array([3.0, 11.0]))
    assert d[0] == pytest.approx(-0.7 * 7.0)
    assert d[1] == 0.0


def test_bad_configuration():
    tbg = make_constant_tbg(1.0, 1.0)
    with pytest.raises(ConfigurationError):
        MasSystem(Problem.RAP, path_graph(3), [quadratic_cost(1, 0)] * 3, tbg, 1.0)
    with pytest.raises(ConfigurationError):
        MasSystem(Problem.CONSENSUS, path_graph(3), [quadratic_cost(1, 0)] * 2, tbg, 1.0)
    with pytest.raises(ConfigurationError):
        MasSystem(Problem.CONSENSUS, path_graph(3), [quadratic_cost(1, 0)] * 3, tbg, -1.0)


@pytest.mark.parametrize("graph", [path_graph(3), cycle_graph(4), path_graph(6)])
@pytest.mark.parametrize("M", [0.03, 4.0, 1000.0])
def test_selector_satisfies_inequalities(graph, M):
    b = spectral_bounds(graph)
    tbg = make_constant_tbg(80.0, 1.0)
    c = select_coefficients_rap(b, M, tbg)
    assert min(rap_inequality_slacks(c, b)) >= -1e-9
    assert c.margin_ok
    assert c.delta <= 0.9 * tbg.alpha * (1 + 1e-12)
    k = select_coefficients_consensus(b, M, tbg)
    assert min(consensus_inequality_slacks(k, b)) >= -1e-12


def test_consensus_coefficients():
    tbg = make_constant_tbg(20.0, 1.0)
    c = select_coefficients_consensus(spectral_bounds(path_graph(3)), 1.0, tbg)
    assert (c.rho, c.beta) == pytest.approx((0.5, 0.5))
    c = select_coefficients_consensus(spectral_bounds(cycle_graph(4)), 1.0, tbg)
    assert (c.rho, c.beta) == pytest.approx((0.25, 0.25))


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
def test_frame_orthogonal(n):
    q = orthogonal_frame(n).matrix()
    assert np.allclose(q.T @ q, np.eye(n), atol=1e-12)
    assert np.allclose(q[:, 0], 1 / math.sqrt(n))


def test_frame_preserves_norm():
    rng = np.random.default_rng(1)
    f = orthogonal_frame(5)
    for _ in range(1000):
        v = rng.normal(size=10)
        assert abs(np.linalg.norm(f.apply(v, dim=2)) - np.linalg.norm(v)) < 1e-12


def test_small_lyapunov_example():
    c = CoefficientSet(rho=2.0, beta=1.0, gamma=2.0, varrho=1.0)
    zero = RapState(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))
    s = RapState(np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1))
    # rho/2 * 1 + gamma/2 * 1
    assert lyapunov_rap(s, zero, c, orthogonal_frame(1)) == pytest.approx(2.0)


vec3 = st.lists(st.floats(-50, 50), min_size=3, max_size=3).map(np.array)


@settings(max_examples=100, deadline=None)
@given(vec3, vec3, vec3, vec3, st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5))
def test_sandwich_bounds(x, y, z, u, rho, beta, gamma):
    frame = orthogonal_frame(3)
    c = CoefficientSet(rho, beta, gamma, 1.0)
    zero = np.zeros(3)
    s, eq = RapState(x, y, z, u), RapState(zero, zero, zero, zero)
    v = lyapunov_rap(s, eq, c, frame)
    assert v <= rap_sandwich(s, eq, c, frame)[1] * (1 + 1e-12) + 1e-12
    cs, ceq = ConsensusState(x, y), ConsensusState(zero, zero)
    v = lyapunov_consensus(cs, ceq, c, frame)
    lo, hi = consensus_sandwich(cs, ceq, c, frame)
    assert lo <= v * (1 + 1e-12) + 1e-12
    assert v <= hi * (1 + 1e-12) + 1e-12


def test_kkt_residual_5_1():
    costs = cli.build_scenario_costs(cli.bundled_scenario("example_5_1"))
    r = kkt_residual_rap(X51, costs, 145.0)
    assert r["grad_spread"] <= 1e-9
    assert r["demand_gap"] <= 1e-9


@pytest.mark.parametrize("name", ["example_5_1", "example_5_6"])
def test_batch_matches_scalar_functions(name):
    s = cli.bundled_scenario(name)
    system = cli.build_system(s)
    coeffs = cli.coefficients_for(s)
    frame = orthogonal_frame(s.n_agents)
    rng = np.random.default_rng(3)
    states = rng.normal(size=(5, system.size))
    eq_flat = rng.normal(size=system.size)
    if system.problem is Problem.RAP:
        eq, cls, lyap, sand = RapState.from_flat(eq_flat), RapState, lyapunov_rap, rap_sandwich
    else:
        eq, cls, lyap, sand = ConsensusState.from_flat(eq_flat), ConsensusState, lyapunov_consensus, consensus_sandwich
    v, lo, hi = lyapunov_batch(states, system, coeffs, frame, eq)
    for k, row in enumerate(states):
        st_ = cls.from_flat(row)
        assert v[k] == pytest.approx(lyap(st_, eq, coeffs, frame), rel=1e-12)
        assert (lo[k], hi[k]) == pytest.approx(sand(st_, eq, coeffs, frame), rel=1e-12)
