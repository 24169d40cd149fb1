import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbgflow.tbg import (TbgError, evolution_bound, make_constant_tbg, make_custom_tbg, make_gamma_tbg,
                         make_theta_tbg, tbg_from_config, theta_log_rate, verify_contraction)


def test_constant_mu():
    g = make_constant_tbg(80.0, 0.05)
    assert g.mu(7.0, 0.0) == pytest.approx(math.exp(-7.0), rel=1e-12)
    assert g.gain(0.01) == 80.0


def test_epsilon_at_tp_with_d2():
    g = make_constant_tbg(100.0, 0.05, d_const=2.0)
    rep = verify_contraction(g, np.linspace(0, 0.05, 20))
    assert rep.epsilon_at_tp == pytest.approx(2.0 * math.exp(-5.0), rel=1e-10)
    assert rep.epsilon_at_tp == pytest.approx(0.013476, abs=1e-6)


def test_theta_mu_matches_closed_form():
    g = make_theta_tbg(100.0, 0.05)
    th = (2 / math.pi) * math.exp(0.05) * (math.pi / 2 + math.atan(0.05))
    assert g.mu(0.05, 0.0) ** 100 == pytest.approx(th ** -100, rel=1e-9)


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 5.0])
def test_theta_rate(t):
    expected = 1 + 1 / ((math.pi / 2 + math.atan(t)) * (1 + t * t))
    assert theta_log_rate(t) == pytest.approx(expected, rel=1e-14)
    assert theta_log_rate(t) >= 1.0


def test_gamma_mu_at_end_of_ramp():
    g = make_gamma_tbg(1.0, 1.0, 0.01)
    assert g.mu(1.0, 0.0) == pytest.approx(0.01 / 1.01, rel=1e-10)


def test_gamma_rate_floor_fails():
    rep = verify_contraction(make_gamma_tbg(1.0, 1.0, 0.1), np.linspace(0, 1, 30))
    assert not rep.passed
    assert rep.min_rate_floor < 0.5


def test_broken_mu_caught():
    bad = make_custom_tbg(lambda t: 1.0, lambda t, tau: math.exp(-(t - tau) ** 2), 1.0, 1.0)
    rep = verify_contraction(bad, np.linspace(0, 1, 25))
    assert rep.max_semigroup_violation > 0.1
    assert not rep.passed


def test_evolution_bound():
    g = make_constant_tbg(2.0, 1.0, d_const=2.0)
    assert evolution_bound(g, 1.0, 0.0) == pytest.approx(2 * math.exp(-2.0), rel=1e-12)
    with pytest.raises(TbgError):
        evolution_bound(g, 0.0, 1.0)


@pytest.mark.parametrize("kwargs", [{"alpha": 0.0, "t_p": 1.0}, {"alpha": 1.0, "t_p": -1.0},
                                    {"alpha": math.nan, "t_p": 1.0}])
def test_bad_parameters(kwargs):
    with pytest.raises(TbgError):
        make_constant_tbg(**kwargs)


def test_d_below_one_rejected():
    with pytest.raises(TbgError):
        make_constant_tbg(1.0, 1.0, d_const=0.5)


@pytest.mark.parametrize("make", [lambda: make_constant_tbg(3.0, 0.5), lambda: make_theta_tbg(5.0, 0.5),
                                  lambda: make_gamma_tbg(2.0, 0.5, 0.1)])
def test_config_round_trip(make):
    g = make()
    assert tbg_from_config(g.to_config()) == g


@settings(max_examples=80, deadline=None)
@given(st.sampled_from(["constant", "theta"]), st.floats(0.5, 50.0),
       st.lists(st.floats(0.0, 3.0), min_size=3, max_size=3))
def test_semigroup_and_monotone(kind, alpha, ts):
    g = make_constant_tbg(alpha, 1.0) if kind == "constant" else make_theta_tbg(alpha, 1.0)
    tau, s, t = sorted(ts)
    assert g.mu(t, s) * g.mu(s, tau) == pytest.approx(g.mu(t, tau), rel=1e-10, abs=1e-300)
    assert g.mu(t, tau) <= g.mu(s, tau) * (1 + 1e-12)
    assert g.mu(t, tau) <= math.exp(-(t - tau)) * (1 + 1e-10)
