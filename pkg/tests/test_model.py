import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from satrack.errors import ConfigError, DimensionError
from satrack.model import (
    ModelConstants,
    build_model,
    estimate_constants,
    eval_h_tilde,
    linear_drift,
    linear_rotating,
    linear_tracking,
    logistic_drift,
    merge_constants,
    verify_equilibrium,
)

BUILTINS = [linear_drift(1), linear_drift(3), linear_rotating(2), linear_rotating(4), logistic_drift(1),
            logistic_drift(3)]


def _fd_jacobian(f, x, y, step=1e-5):
    d = len(x)
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        J[:, j] = (f(x + e, y) - f(x - e, y)) / (2 * step)
    return J


def test_h_tilde_linear_direct_substitution():
    m = linear_drift(1)
    assert eval_h_tilde(m, [0.0], [0.0], 0.01)[0] == pytest.approx(0.01, abs=1e-15)


def test_h_tilde_zero_eps_is_h(rng):
    for m in BUILTINS:
        x = rng.normal(size=m.dim)
        y = rng.normal(size=m.dim)
        assert np.array_equal(eval_h_tilde(m, x, y, 0.0), m.h(x, y))


def test_h_tilde_logistic_hand_value():
    # -(0.3)^3 - 0.3 + 0.01 sin(0.2), evaluated in 30-digit arithmetic
    m = logistic_drift(1)
    assert eval_h_tilde(m, [0.5], [0.2], 0.01)[0] == pytest.approx(-0.325013306692049387, abs=1e-15)


def test_h_tilde_dimension_error_names_argument():
    m = linear_drift(2)
    with pytest.raises(DimensionError, match="y"):
        eval_h_tilde(m, [0.0, 0.0], [0.0], 0.0)
    with pytest.raises(DimensionError, match="x"):
        eval_h_tilde(m, [0.0], [0.0, 0.0], 0.0)


def test_verify_equilibrium_examples(rng):
    assert verify_equilibrium(linear_drift(1), rng.normal(size=(10, 1)), 1e-12).max_residual == 0.0
    bad = dataclasses.replace(linear_drift(1), lambda_map=lambda y: 2 * np.asarray(y))
    rep = verify_equilibrium(bad, [[1.0]], 1e-8)
    assert rep.max_residual == pytest.approx(1.0) and not rep.passed
    y = rng.uniform(-1, 1, size=(100, 1))
    assert verify_equilibrium(logistic_drift(1), y, 1e-10).passed
    with pytest.raises(ConfigError):
        verify_equilibrium(linear_drift(1), np.zeros((0, 1)), 1e-8)


@pytest.mark.parametrize("model", BUILTINS, ids=lambda m: f"{m.name}-{m.dim}")
def test_equilibrium_identity_builtins(model, rng):
    y = rng.normal(size=(50, model.dim))
    assert verify_equilibrium(model, y, 1e-10).passed


@pytest.mark.parametrize("model", BUILTINS, ids=lambda m: f"{m.name}-{m.dim}")
def test_jacobian_matches_finite_differences(model, rng):
    for _ in range(100):
        x, y = rng.normal(size=model.dim), rng.normal(size=model.dim)
        J = model.jac_D(x, y)
        fd = _fd_jacobian(model.h, x, y)
        assert np.linalg.norm(J - fd, 2) <= 1e-5 * (1 + np.linalg.norm(J, 2))


@pytest.mark.parametrize("model", BUILTINS, ids=lambda m: f"{m.name}-{m.dim}")
def test_grad_lambda_matches_finite_differences(model, rng):
    for _ in range(20):
        y = rng.normal(size=model.dim)
        G = model.grad_lambda(y)
        fd = _fd_jacobian(lambda u, _: model.lambda_map(u), y, None)
        assert np.linalg.norm(G - fd, 2) <= 1e-5 * (1 + np.linalg.norm(G, 2))


def test_estimate_linear_lipschitz_approaches_one_from_below():
    m = linear_drift(1, drift=[0.0])
    vals = [estimate_constants(m, 1.0, n, seed=3).L_h_tilde for n in (10, 100, 1000)]
    assert all(v <= 1.0 + 1e-12 for v in vals)
    assert vals[-1] > 0.95


def test_estimate_constant_field_zero():
    m = dataclasses.replace(linear_drift(2), h=lambda x, y: np.ones(np.broadcast_shapes(
        np.shape(x), np.shape(y))))
    assert estimate_constants(m, 1.0, 50, seed=0).L_h_tilde == 0.0


def test_estimate_rotation_L_gamma():
    est = estimate_constants(linear_rotating(2), 1.0, 500, seed=1)
    assert 0.95 < est.L_gamma <= 1.0 + 1e-12


def test_estimate_deterministic_and_errors():
    m = logistic_drift(2)
    assert estimate_constants(m, 1.0, 50, seed=9) == estimate_constants(m, 1.0, 50, seed=9)
    with pytest.raises(ConfigError):
        estimate_constants(m, 1.0, 1, seed=0)
    with pytest.raises(ConfigError):
        estimate_constants(m, 0.0, 10, seed=0)


@given(st.integers(min_value=2, max_value=60), st.integers(min_value=0, max_value=2 ** 31))
def test_estimate_monotone_in_n_samples(n, seed):
    m = logistic_drift(1)
    a = estimate_constants(m, 1.5, n, seed).as_dict()
    b = estimate_constants(m, 1.5, n + 15, seed).as_dict()
    for k in ("L_h_tilde", "L_gamma", "L_lambda", "L_D", "G_h_tilde"):
        assert b[k] >= a[k] - 1e-15


def test_constants_k_gamma_covers_path():
    m = logistic_drift(1)
    path = np.linspace(0.0, 1.2, 50)[:, None]
    est = estimate_constants(m, 1.0, 100, seed=0, path_y=path)
    assert est.C_gamma >= 1.2 - 1e-12
    assert est.K_gamma >= np.max(np.abs(np.sin(path))) - 1e-12


def test_merge_prefers_supplied_and_warns():
    sup = ModelConstants(L_h_tilde=0.5)
    est = ModelConstants(L_h_tilde=1.0, G_h_tilde=2.0)
    with pytest.warns(UserWarning, match="L_h_tilde"):
        out = merge_constants(sup, est)
    assert out.L_h_tilde == 0.5 and out.G_h_tilde == 2.0


def test_constants_nonnegative():
    with pytest.raises(ConfigError):
        ModelConstants(L_D=-1.0)


def test_build_model_registry():
    assert build_model("linear_rotating", dim=4, rotation_rate=2.0).dim == 4
    with pytest.raises(ConfigError):
        build_model("nope")
    with pytest.raises(ConfigError):
        build_model("logistic_drift", dim=1, gain=2.0)
    with pytest.raises(ConfigError):
        linear_rotating(3)


def test_matrix_gain():
    K = np.array([[2.0, 0.5], [0.0, 1.0]])
    m = linear_tracking(2, gain=K)
    x, y = np.array([1.0, 2.0]), np.array([0.5, -1.0])
    assert np.allclose(m.h(x, y), -K @ (x - y))
    assert np.allclose(m.jac_D(x, y), -K)
    assert math.isclose(np.linalg.norm(m.lambda_map(y) - y), 0.0)
