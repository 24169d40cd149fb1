import dataclasses
import math

import numpy as np
import pytest

from tbgflow import cli, kernels
from tbgflow.integrator import (DivergenceError, IntegratorConfig, StabilityGuardError, aligned_step, integrate,
                                refine_until_stable)
from tbgflow.tbg import make_constant_tbg


def decay(t, s):
    return -s


def test_exponential_decay():
    traj = integrate(decay, np.array([1.0]), make_constant_tbg(1.0, 0.5), IntegratorConfig(1e-3, 1.0))
    assert traj.states[-1, 0] == pytest.approx(math.exp(-1.0), abs=1e-10)
    assert traj.times[-1] == pytest.approx(1.0)


def test_fourth_order():
    errs = []
    for dt in (0.1, 0.05, 0.025):
        traj = integrate(decay, np.array([1.0]), make_constant_tbg(1.0, 1.0), IntegratorConfig(dt, 1.0))
        errs.append(abs(traj.states[-1, 0] - math.exp(-1.0)))
    for a, b in zip(errs, errs[1:]):
        assert 8.0 <= a / b <= 32.0


def test_tp_on_grid():
    traj = integrate(decay, np.array([1.0]), make_constant_tbg(1.0, 0.3), IntegratorConfig(0.07, 1.0))
    assert 0.3 in traj.times
    assert traj.dt == pytest.approx(aligned_step(0.07, 0.3))
    assert traj.dt <= 0.07


def test_gain_switch_not_straddled():
    tbg = make_constant_tbg(1.0, 0.5, post_gain=3.0)

    def rhs(t, s):
        return -tbg.gain(t) * s

    traj = integrate(rhs, np.array([1.0]), tbg, IntegratorConfig(0.01, 1.0))
    exact = math.exp(-0.5 - 3.0 * 0.5)
    assert traj.states[-1, 0] == pytest.approx(exact, rel=2e-8)


def test_sampling_and_chunking_do_not_change_results():
    s = cli.bundled_scenario("example_5_6")
    system = cli.build_system(s)
    tbg = system.tbg
    a = integrate(system, cli.initial_state(s), tbg, IntegratorConfig(s.dt, 1.5, 1))
    b = integrate(system, cli.initial_state(s), tbg, IntegratorConfig(s.dt, 1.5, 5), stop=lambda t, x: False,
                  chunk_steps=37)
    assert np.array_equal(a.states[-1], b.states[-1])
    assert np.array_equal(a.state_at(1.0), b.state_at(1.0))


def test_deterministic():
    s = cli.bundled_scenario("example_5_1")
    system = cli.build_system(s)
    cfg = IntegratorConfig(s.dt, 1.0, 10)
    a = integrate(system, cli.initial_state(s), system.tbg, cfg)
    b = integrate(system, cli.initial_state(s), system.tbg, cfg)
    assert np.array_equal(a.states, b.states)


def test_stop_callback_truncates():
    traj = integrate(decay, np.array([1.0]), make_constant_tbg(1.0, 0.5), IntegratorConfig(1e-3, 5.0),
                     stop=lambda t, s: s[0] < 0.5, chunk_steps=100)
    assert traj.times[-1] < 1.0
    assert traj.states[-1, 0] < 0.5


def test_divergence():
    with pytest.raises(DivergenceError), np.errstate(over="ignore", invalid="ignore"):
        integrate(lambda t, s: s * s, np.array([1.0]), make_constant_tbg(1.0, 1.0), IntegratorConfig(0.01, 2.0))
    with pytest.raises(DivergenceError):
        integrate(decay, np.array([math.nan]), make_constant_tbg(1.0, 1.0), IntegratorConfig(0.01, 1.0))


def test_stability_guard():
    s = cli.bundled_scenario("example_5_1")
    system = cli.build_system(s)
    with pytest.raises(StabilityGuardError):
        integrate(system, cli.initial_state(s), system.tbg, IntegratorConfig(0.01, 1.0))


@pytest.mark.parametrize("kwargs", [{"dt": 0.0, "t_end": 1.0}, {"dt": 0.1, "t_end": -1.0},
                                    {"dt": 0.1, "t_end": 1.0, "sample_every": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        IntegratorConfig(**kwargs)


def test_refine_linear_problem():
    _, rep = refine_until_stable(decay, np.array([1.0]), make_constant_tbg(1.0, 0.5),
                                 IntegratorConfig(0.05, 1.0), tol=1e-8)
    assert rep.converged
    assert rep.halvings <= 4


def test_refine_tiny_step():
    _, rep = refine_until_stable(decay, np.array([1.0]), make_constant_tbg(1.0, 0.5),
                                 IntegratorConfig(1e-4, 1.0), tol=1e-8)
    assert rep.halvings == 0


def test_refine_steep_scenario_needs_halving():
    s = cli.bundled_scenario("example_5_5")
    s = dataclasses.replace(s, dt=8e-5, t_end=0.5, sample_every=50)
    system = cli.build_system(s)
    _, rep = refine_until_stable(system, cli.initial_state(s), system.tbg,
                                 IntegratorConfig(s.dt, s.t_end, s.sample_every), tol=1e-9, max_halvings=3)
    assert rep.halvings >= 1


def test_backend_name():
    s = cli.bundled_scenario("example_5_6")
    system = cli.build_system(s)
    traj = integrate(system, cli.initial_state(s), system.tbg, IntegratorConfig(s.dt, 1.2, 2))
    assert traj.backend == kernels.BACKEND_NAME
    traj = integrate(decay, np.array([1.0]), make_constant_tbg(1.0, 0.5), IntegratorConfig(0.1, 1.0))
    assert traj.backend == "python-generic"
