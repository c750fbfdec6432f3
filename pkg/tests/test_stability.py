import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from satrack.errors import ConfigError
from satrack.model import linear_drift, linear_rotating, logistic_drift
from satrack.simulate import integrate_slow
from satrack.stability import (
    SoloInput,
    SoloParams,
    compute_M_eps,
    estimate_A_bar,
    estimate_alpha_bar,
    load_matrix_path,
    markus_yamabe_path,
    path_from_model,
    solo_test,
    variation_statistic,
)
from satrack.variational import estimate_exp_stability, random_pairs, reference_path

# max over unit windows of the mean of 2 + sin t is 2 + 2 sin(1/2)
A_BAR_SIN = 2.958851077208406001
# hand evaluation for A = -2I, b = 0.1, eps = 0.5, delta = 0.05, beta = 1e-3, gamma = 1, p = 2
SOLO_M = 14.1
SOLO_V = (-1.5, -0.795, -0.405430461860576580)


def const_path(A, t_end=20.0, dt=0.05, **kw):
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt
    return SoloInput(t, np.broadcast_to(np.asarray(A, float), (n + 1,) + np.shape(A)).copy(), **kw)


def scalar_path(fn, t_end=40.0, dt=0.01, window_T=1.0, params=None):
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt
    return SoloInput(t, fn(t)[:, None, None] * np.eye(2), window_T, None, params or SoloParams())


def test_A_bar_examples():
    assert estimate_A_bar(const_path(-np.eye(2))) == pytest.approx(1.0, abs=1e-12)
    assert estimate_A_bar(const_path(np.zeros((2, 2)))) == 0.0
    inp = scalar_path(lambda t: -(2 + np.sin(t)), t_end=60.0, dt=0.001)
    assert estimate_A_bar(inp) == pytest.approx(A_BAR_SIN, abs=1e-6)


def test_alpha_bar_examples():
    assert estimate_alpha_bar(const_path(np.diag([-1.0, -3.0]))) == pytest.approx(-3.0)
    # literal rule: the larger |real part| wins, even though +0.5 is unstable
    rep = solo_test(const_path(np.diag([-1.0, 0.5])))
    assert rep.alpha_bar == pytest.approx(-1.0)
    assert rep.alpha_max_real == pytest.approx(0.5)
    R = np.array([[0.0, -2.0], [2.0, 0.0]])
    assert estimate_alpha_bar(const_path(-np.eye(2) + R)) == pytest.approx(-1.0)


def test_M_eps_examples():
    assert compute_M_eps(1.0, 1.0, 0.5, 2) == pytest.approx(13.5, abs=1e-14)
    assert compute_M_eps(7.0, 3.0, 0.2, 1) == 1.5
    assert compute_M_eps(1.0, 1.0, 1e12, 3) == pytest.approx(1.5, rel=1e-9)


def test_solo_constant_pass_hand_values():
    prm = SoloParams(epsilon_s=0.5, delta_s=0.05, beta_s=1e-3, gamma_exp=1.0, b=0.1, p=2)
    rep = solo_test(const_path(-2 * np.eye(2), params=prm))
    assert rep.M_eps == pytest.approx(SOLO_M, rel=1e-12)
    assert np.allclose(rep.inequality_values, SOLO_V, rtol=1e-12, atol=1e-12)
    assert rep.variation_ok and rep.perturbation_ok and rep.verdict
    assert "verdict        = pass" in rep.text()
    header, rows = rep.csv()
    assert len(header) == len(rows[0]) and rows[0][-1] == 1


def test_markus_yamabe_fails_variation():
    inp = markus_yamabe_path()
    rep = solo_test(inp)
    # pointwise eigenvalues have real part (1.5 - 2) / 2
    assert rep.alpha_max_real == pytest.approx(-0.25, abs=1e-9)
    assert not rep.variation_ok and not rep.verdict
    # the condition sum grows linearly with the horizon
    short = variation_statistic(markus_yamabe_path(t_end=20.0))
    long = variation_statistic(markus_yamabe_path(t_end=40.0))
    assert long == pytest.approx(2 * short, rel=0.1)


def test_perturbation_condition_violation():
    inp = const_path(-2 * np.eye(2))
    inp.P = np.full_like(inp.A, 0.0)
    inp.P[:, 0, 0] = 0.01  # int |P| = 0.2 over 20 time units
    rep = solo_test(inp)
    assert rep.delta_est == pytest.approx(0.2)
    assert not rep.perturbation_ok and not rep.verdict


def test_degenerate_M_eps_flagged():
    # M_eps <= 1 needs p < 1
    prm = SoloParams(p=0.5)
    rep = solo_test(const_path(-2 * np.eye(2), params=prm))
    assert rep.degenerate and math.isnan(rep.inequality_values[2])
    assert rep.verdict  # falls back to the first two inequalities
    assert "degenerate" in rep.text()


def test_input_validation(tmp_path):
    with pytest.raises(ConfigError):
        SoloInput([0.0, 0.1, 0.3], np.zeros((3, 2, 2)))
    with pytest.raises(ConfigError):
        SoloInput(np.arange(11) * 0.1, np.zeros((11, 2, 2)), window_T=0.15)
    with pytest.raises(ConfigError):
        SoloParams(gamma_exp=1.5)
    f = tmp_path / "path.csv"
    f.write_text("t,a00,a01,a10,a11\n0,-1,0,0,-1\n0.5,-1,0,0,-1\n")
    t, A = load_matrix_path(f)
    assert A.shape == (2, 2, 2) and t[1] == 0.5
    f.write_text("t,a00,a01\n0,1,2\n")
    with pytest.raises(ConfigError):
        load_matrix_path(f)


@pytest.mark.parametrize("model, y0", [(linear_drift(2), [0.0, 0.0]), (linear_rotating(2), [1.0, 0.0]),
                                       (logistic_drift(2), [0.4, -0.3])],
                         ids=["linear", "rotating", "logistic"])
def test_pass_implies_exponential_stability(model, y0):
    slow = integrate_slow(model, 0.5, 0.05, np.array(y0), 20.0, 4)
    base = reference_path(model, slow)
    rep = solo_test(path_from_model(model, base, window_T=1.0, params=SoloParams(b=0.5)))
    assert rep.verdict
    est = estimate_exp_stability(model, base, random_pairs(base.t_end, 40, seed=3))
    assert est.beta > 0


@settings(suppress_health_check=[HealthCheck.filter_too_much])
@given(st.floats(1.0, 6.0), st.floats(0.05, 1.0), st.floats(0.3, 1.2), st.floats(0.01, 2.0))
def test_slower_variation_keeps_pass(kappa, amp, frac, b):
    prm = SoloParams(b=b, beta_s=frac * amp)
    fast = scalar_path(lambda t: -(2 + amp * np.sin(t)), t_end=30.0, dt=0.05, params=prm)
    assume(variation_statistic(fast) <= fast.window_T * b)
    slow = scalar_path(lambda t: -(2 + amp * np.sin(t / kappa)), t_end=30.0, dt=0.05, params=prm)
    assert variation_statistic(slow) <= slow.window_T * b
