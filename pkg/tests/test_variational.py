import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from satrack.errors import ConfigError, PathCoverageError, StabilityAssumptionError
from satrack.model import linear_drift, linear_rotating, linear_tracking, logistic_drift
from satrack.noise import NoiseSpec, PerturbationSpec
from satrack.simulate import SimConfig, integrate_slow, run_sa
from satrack.variational import (
    alekseev_decompose,
    decomposition_csv,
    estimate_exp_stability,
    fit_exp_stability,
    integrate_base,
    interval_weights,
    liouville_gap,
    phi_norms,
    random_pairs,
    reconstruct_residual,
    reference_path,
    solve_fundamental,
    trace_integral,
)

E_INV = 0.367879441171442322  # e^{-1}


def _ideal(model, t_end=10.0, a=0.05, eps=0.0, y0=None, m=4):
    y0 = np.zeros(model.dim) if y0 is None else y0
    return reference_path(model, integrate_slow(model, eps, a, y0, t_end, m))


def test_linear_closed_form():
    base = _ideal(linear_drift(1), eps=0.5)
    P = solve_fundamental(linear_drift(1), base, 2.0, 3.0).value
    assert P[0, 0] == pytest.approx(E_INV, abs=1e-8)


def test_identity_at_equal_times():
    base = _ideal(logistic_drift(2), y0=np.array([0.3, -0.2]), eps=1.0)
    fm = solve_fundamental(logistic_drift(2), base, 1.234, 1.234)
    assert np.array_equal(fm.value, np.eye(2))


def test_rotating_decay_is_isometric():
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    m = linear_tracking(2, gain=np.eye(2) - R)  # D = -I + R
    base = _ideal(m)
    for s, t in [(0.0, 1.0), (0.3, 2.7), (1.0, 6.0)]:
        P = solve_fundamental(m, base, s, t).value
        assert np.linalg.norm(P, 2) == pytest.approx(math.exp(-(t - s)), abs=1e-8)


def test_fundamental_errors():
    m = linear_drift(1)
    base = _ideal(m, t_end=2.0)
    with pytest.raises(ConfigError):
        solve_fundamental(m, base, 1.0, 0.5)
    with pytest.raises(PathCoverageError):
        solve_fundamental(m, base, 0.5, 3.0)


@pytest.mark.parametrize("kappa", [1.0, 2.0])
def test_estimate_linear(kappa):
    m = linear_tracking(1, gain=kappa)
    base = _ideal(m)
    est = estimate_exp_stability(m, base, random_pairs(base.t_end, 40, seed=1))
    assert est.beta == pytest.approx(kappa, abs=1e-3)
    assert est.C_Phi == pytest.approx(1.0, abs=1e-3)
    assert est.mu * est.beta == pytest.approx(1.0)


def test_estimate_marginal_fails():
    m = linear_tracking(1, gain=0.0)
    base = _ideal(m)
    with pytest.raises(StabilityAssumptionError, match="violated"):
        estimate_exp_stability(m, base, random_pairs(base.t_end, 40, seed=1))


def test_fit_needs_pairs():
    with pytest.raises(ConfigError):
        fit_exp_stability(np.linspace(0, 1, 10), np.ones(10))
    with pytest.raises(ConfigError):
        fit_exp_stability(np.ones(30), np.ones(30))


@pytest.mark.parametrize("model, y0", [(linear_drift(1), [0.0]), (linear_rotating(2), [1.0, 0.0]),
                                       (logistic_drift(1), [0.3]), (logistic_drift(2), [0.5, -0.4])],
                         ids=["linear", "rotating", "logistic1", "logistic2"])
def test_exponential_bound_holds_on_held_out_pairs(model, y0):
    base = _ideal(model, t_end=12.0, eps=0.5, y0=np.array(y0))
    est = estimate_exp_stability(model, base, random_pairs(base.t_end, 40, seed=2))
    taus, norms = phi_norms(model, base, random_pairs(base.t_end, 50, seed=99))
    assert np.all(norms <= est.bound(taus) * (1 + 1e-9))


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_cocycle_off_equilibrium(u1, u2, u3):
    m = logistic_drift(2)
    base = integrate_base(m, 0.1, np.array([1.0, -0.6]), np.array([0.2, 0.4]), 6.0, 0.01)
    s, u, t = sorted(v * base.t_end for v in (u1, u2, u3))
    P_ts = solve_fundamental(m, base, s, t).value
    P_tu = solve_fundamental(m, base, u, t).value
    P_us = solve_fundamental(m, base, s, u).value
    assert np.allclose(P_ts, P_tu @ P_us, rtol=1e-6, atol=1e-9)


def test_liouville_off_equilibrium():
    m = logistic_drift(2)
    base = integrate_base(m, 0.1, np.array([1.0, -0.6]), np.array([0.2, 0.4]), 6.0, 0.01)
    assert liouville_gap(m, base, 0.137, 4.913) < 1e-6
    # D = diag(-3 e^2 - 1) is not constant along this path
    assert trace_integral(m, base, 0.0, 1.0) < -2.0 - 1e-3


def test_decompose_unperturbed_matched_start_is_zero():
    m = logistic_drift(1)
    cfg = SimConfig(a=0.05, horizon_N=60, x0=[0.4], y0=[0.4])
    tr = run_sa(m, None, None, cfg)
    t = alekseev_decompose(m, tr, 60)
    for v in t.as_dict().values():
        assert np.all(np.abs(v) < 1e-14)
    assert t.residual < 1e-14


def test_decompose_constant_perturbation_closed_form():
    m = linear_drift(1)
    cfg = SimConfig(a=0.05, horizon_N=80)
    tr = run_sa(m, None, PerturbationSpec(0.1, "constant_direction"), cfg)
    t = alekseev_decompose(m, tr, 80)
    exact = 0.1 * (1 - math.exp(-t.t_n))
    assert t.D[0] == pytest.approx(exact, abs=1e-9)
    assert t.D[0] <= 0.1


def test_decompose_initial_term_closed_form():
    m = linear_drift(1)
    cfg = SimConfig(a=0.05, horizon_N=40, x0=[1.3], y0=[0.3])
    tr = run_sa(m, None, None, cfg)
    t = alekseev_decompose(m, tr, 40)
    assert t.rho[0] == pytest.approx(math.exp(-2.0) * 1.0, abs=1e-9)


def test_residual_converges_linear_with_noise():
    m = linear_drift(1)
    cfg = SimConfig(a=0.1, eps=0.5, horizon_N=60, seed=3, y0=[0.2])
    tr = run_sa(m, NoiseSpec.gaussian(1.0), None, cfg)
    r10 = reconstruct_residual(m, tr, 60, 10)
    r40 = reconstruct_residual(m, tr, 60, 40)
    assert r40 <= r10 / 4 or r40 < 1e-13


def test_residual_order_logistic():
    m = logistic_drift(1)
    cfg = SimConfig(a=0.05, eps=0.5, horizon_N=60, seed=7, x0=[0.3], y0=[0.3])
    tr = run_sa(m, NoiseSpec.gaussian(0.5), None, cfg)
    r = [reconstruct_residual(m, tr, 60, s) for s in (2, 4, 8)]
    # empirical order >= 2 on doubling
    assert r[1] <= r[0] / 4 and r[2] <= r[1] / 4


def test_anchor_gap_linear_zero_logistic_shrinks():
    nz = NoiseSpec.gaussian(0.3)
    t_lin = alekseev_decompose(linear_drift(1), run_sa(linear_drift(1), nz, None,
                               SimConfig(a=0.1, horizon_N=20, seed=1)), 20, 2, integrands=True)
    gap = np.abs(t_lin.integrands["Phi"] - t_lin.integrands["Phi_anchor_k"]).max()
    assert gap < 1e-13
    gaps = []
    for a in (0.1, 0.05, 0.025):
        n = int(round(2.0 / a))
        cfg = SimConfig(a=a, eps=0.5, horizon_N=n, x0=[1.0], y0=[0.0])
        tr = run_sa(logistic_drift(1), None, None, cfg)
        t = alekseev_decompose(logistic_drift(1), tr, n, 2, integrands=True)
        gaps.append(np.abs(t.integrands["Phi"] - t.integrands["Phi_anchor_k"]).max())
    assert gaps[1] < 0.6 * gaps[0] and gaps[2] < 0.6 * gaps[1]


def test_c_term_matches_weights():
    m = logistic_drift(1)
    cfg = SimConfig(a=0.05, eps=0.5, horizon_N=30, seed=2, y0=[0.5], x0=[0.5])
    tr = run_sa(m, NoiseSpec.laplace(0.5), None, cfg)
    t = alekseev_decompose(m, tr, 30, 3)
    w = interval_weights(m, tr.x[:30], tr.y[:30], 0.05, cfg.rate, 30, 3)
    assert np.allclose(t.C, np.einsum("kij,kj->i", w, tr.M[:30]), atol=1e-15)
    assert np.allclose(t.B_minus_C + t.C, t.B)


def test_linear_weights_shortcut_matches_generic():
    m = linear_rotating(2)
    x = np.random.default_rng(0).normal(size=(25, 2))
    fast = interval_weights(m, x, x, 0.1, 0.05, 25, 4)
    m_generic = m.__class__(**{**m.__dict__, "kernel": None})
    slow = interval_weights(m_generic, x, x, 0.1, 0.05, 25, 4)
    assert np.allclose(fast, slow, atol=1e-13)


def test_missing_noise_records_rejected():
    m = linear_drift(1)
    tr = run_sa(m, NoiseSpec.gaussian(1.0), None, SimConfig(a=0.1, horizon_N=10, seed=0))
    tr.M = tr.M[:5]
    with pytest.raises(ConfigError, match="noise records"):
        alekseev_decompose(m, tr, 8)


def test_decomposition_csv_layout():
    m = linear_drift(2)
    tr = run_sa(m, NoiseSpec.gaussian(1.0), None, SimConfig(a=0.1, horizon_N=10, seed=0))
    header, rows = decomposition_csv([alekseev_decompose(m, tr, 10, 2)])
    assert header == ["n", "term", "coordinate", "value", "residual"]
    assert {r[1] for r in rows} == {"rho", "A", "B", "C", "B_minus_C", "D", "E"}
    assert len(rows) == 7 * 2


def test_residual_logistic_long_horizon():
    m = logistic_drift(1)
    cfg = SimConfig(a=0.05, eps=0.5, horizon_N=200, seed=8, x0=[0.3], y0=[0.3])
    tr = run_sa(m, NoiseSpec.gaussian(0.5), None, cfg)
    r = reconstruct_residual(m, tr, 200, 40)
    assert r <= 1e-4 * (1 + np.linalg.norm(tr.x[200]))
