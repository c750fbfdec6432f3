"""Tracking problem instances: vector fields, Jacobians and analytic constants.

Every callable on a :class:`TrackingModel` is vectorised over leading axes:
``h(x, y)`` accepts arrays of shape ``(..., d)`` and returns ``(..., d)``,
Jacobians return ``(..., d, d)``.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .linalg import op_norm, vec_norm

# kernel codes understood by the compiled core
KERNEL_LINEAR = 0
KERNEL_LOGISTIC = 1

CONSTANT_NAMES = (
    "L_h_tilde",
    "G_h_tilde",
    "L_gamma",
    "L_lambda",
    "L_D",
    "C_gamma",
    "K_gamma",
)


@dataclass(frozen=True)
class ModelConstants:
    """Lipschitz and growth constants; ``None`` marks a constant not yet known."""

    L_h_tilde: Optional[float] = None
    G_h_tilde: Optional[float] = None
    L_gamma: Optional[float] = None
    L_lambda: Optional[float] = None
    L_D: Optional[float] = None
    C_gamma: Optional[float] = None
    K_gamma: Optional[float] = None

    def __post_init__(self):
        for name in CONSTANT_NAMES:
            v = getattr(self, name)
            if v is not None and not (v >= 0.0):
                raise ConfigError(f"model constant {name} must be nonnegative, got {v}")

    def missing(self):
        return [n for n in CONSTANT_NAMES if getattr(self, n) is None]

    def as_dict(self):
        return {n: getattr(self, n) for n in CONSTANT_NAMES}


@dataclass(frozen=True)
class KernelSpec:
    """Parameters handed to the compiled core for built-in models."""

    code: int
    gain: np.ndarray
    gamma_matrix: np.ndarray
    gamma_vector: np.ndarray


@dataclass(frozen=True)
class TrackingModel:
    name: str
    dim: int
    h: Callable
    gamma: Callable
    lambda_map: Callable
    jac_D: Callable
    grad_lambda: Callable
    constants: ModelConstants = field(default_factory=ModelConstants)
    kernel: Optional[KernelSpec] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("model dimension must be a positive integer")

    def with_constants(self, constants):
        return dataclasses.replace(self, constants=constants)


def check_dim(model, name, value):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != model.dim:
        got = arr.shape[-1] if arr.ndim else 0
        raise DimensionError(name, model.dim, got)
    return arr


def eval_h_tilde(model, x, y, eps):
    """Return ``h(x, y) + eps * grad_lambda(y) @ gamma(y)``.

    ``eps`` is the drift rate of the target on the clock the caller works in;
    the simulation code passes ``a * eps`` (see :mod:`satrack.simulate`).
    """
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    x = check_dim(model, "x", x)
    y = check_dim(model, "y", y)
    out = model.h(x, y)
    if eps:
        out = out + eps * np.einsum("...ij,...j->...i", model.grad_lambda(y), model.gamma(y))
    return out


@dataclass(frozen=True)
class EquilibriumReport:
    max_residual: float
    tol: float

    @property
    def passed(self):
        return self.max_residual <= self.tol


def verify_equilibrium(model, y_samples, tol):
    """Check ``h(lambda(y), y) = 0`` on every sample."""
    if tol <= 0:
        raise ConfigError("tol must be positive")
    ys = np.asarray(y_samples, dtype=float)
    if ys.size == 0:
        raise ConfigError("verify_equilibrium needs at least one sample")
    ys = check_dim(model, "y_samples", np.atleast_2d(ys))
    res = vec_norm(model.h(model.lambda_map(ys), ys))
    return EquilibriumReport(float(np.max(res)), float(tol))


# ---------------------------------------------------------------------------
# sample-based constants


def _sample_domain(rng, n, d, radius):
    """``n`` points (x, y), each block inside the ball of ``radius``.

    Rows come from a single ``uniform`` call followed by a row-wise map, so the
    first ``m`` rows do not depend on ``n`` (prefix property).
    """
    pts = rng.uniform(-radius, radius, size=(n, 2 * d))
    x, y = pts[:, :d], pts[:, d:]
    for blk in (x, y):
        nrm = vec_norm(blk)
        scale = np.minimum(1.0, radius / np.maximum(nrm, 1e-300))
        blk *= scale[:, None]
    return x, y


def _max_pair_ratio(num_fn, den_fn, n, chunk=256):
    best = 0.0
    for i0 in range(0, n, chunk):
        i = np.arange(i0, min(n, i0 + chunk))
        num, den = num_fn(i), den_fn(i)
        mask = den > 1e-12
        if np.any(mask):
            best = max(best, float(np.max(num[mask] / den[mask])))
    return best


def estimate_constants(model, domain_radius, n_samples, seed, eps=0.0, path_y=None):
    """Empirical (lower) estimates of the model constants.

    Parameters
    ----------
    model : TrackingModel
    domain_radius : float
        Radius of the ball the x and y samples are drawn from.
    n_samples : int
        Number of sample points; all pairs are compared.
    seed : int
    eps : float
        Target drift rate entering ``h_tilde``.
    path_y : array_like, optional
        Target samples along a simulated path; when given, ``C_gamma`` is their
        largest norm instead of ``domain_radius``.
    """
    if domain_radius <= 0:
        raise ConfigError("domain_radius must be positive")
    if n_samples < 2:
        raise ConfigError("estimate_constants needs n_samples >= 2")
    d = model.dim
    rng = np.random.default_rng(seed)
    x, y = _sample_domain(rng, n_samples, d, domain_radius)
    ht = eval_h_tilde(model, x, y, eps)
    gam = model.gamma(y)
    lam = model.lambda_map(y)
    D = model.jac_D(x, y)

    def joint_den(i):
        return vec_norm(x[i, None, :] - x[None, :, :]) + vec_norm(y[i, None, :] - y[None, :, :])

    def y_den(i):
        return vec_norm(y[i, None, :] - y[None, :, :])

    L_h = _max_pair_ratio(lambda i: vec_norm(ht[i, None, :] - ht[None, :, :]), joint_den, n_samples)
    L_g = _max_pair_ratio(lambda i: vec_norm(gam[i, None, :] - gam[None, :, :]), y_den, n_samples)
    L_l = _max_pair_ratio(lambda i: vec_norm(lam[i, None, :] - lam[None, :, :]), y_den, n_samples)
    L_D = _max_pair_ratio(
        lambda i: np.atleast_2d(op_norm(D[i, None, :, :] - D[None, :, :, :])), joint_den, n_samples,
        chunk=32,
    )
    G_h = float(np.max(vec_norm(ht) / (1.0 + vec_norm(x) + vec_norm(y))))

    if path_y is not None:
        C_g = float(np.max(vec_norm(np.atleast_2d(np.asarray(path_y, dtype=float)))))
    else:
        C_g = float(domain_radius)
    # gamma over the ball of radius C_gamma, plus its boundary sphere
    _, yb = _sample_domain(rng, n_samples, d, max(C_g, 1e-12))
    sphere = yb / np.maximum(vec_norm(yb), 1e-300)[:, None] * C_g
    K_g = float(max(np.max(vec_norm(model.gamma(yb))), np.max(vec_norm(model.gamma(sphere)))))
    if path_y is not None:
        K_g = max(K_g, float(np.max(vec_norm(model.gamma(np.atleast_2d(path_y))))))
    return ModelConstants(
        L_h_tilde=L_h, G_h_tilde=G_h, L_gamma=L_g, L_lambda=L_l, L_D=L_D, C_gamma=C_g, K_gamma=K_g
    )


def merge_constants(supplied, estimated):
    """Supplied values win; warn when an estimate exceeds a supplied value."""
    out = {}
    for name in CONSTANT_NAMES:
        s, e = getattr(supplied, name), getattr(estimated, name)
        if s is not None:
            if e is not None and e > s * (1 + 1e-9):
                warnings.warn(
                    f"estimated {name}={e:.6g} exceeds supplied value {s:.6g}", stacklevel=2
                )
            out[name] = s
        else:
            out[name] = e
    return ModelConstants(**out)


def provenance(supplied, name):
    return "supplied" if getattr(supplied, name) is not None else "estimated"


# ---------------------------------------------------------------------------
# built-in models


def _as_matrix(value, d, what):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(d)
    if arr.shape != (d, d):
        raise DimensionError(what, d, arr.shape)
    return arr.copy()


def linear_tracking(dim, gain=1.0, gamma_matrix=None, gamma_vector=None, name="linear"):
    """``h(x, y) = -gain (x - y)``, ``lambda(y) = y``, ``gamma(y) = G y + u``.

    ``gain`` is a scalar rate or a full matrix ``K`` (then ``h = -K (x - y)``).
    """
    d = int(dim)
    K = -_as_matrix(gain, d, "gain")
    G = np.zeros((d, d)) if gamma_matrix is None else _as_matrix(gamma_matrix, d, "gamma_matrix")
    u = np.zeros(d) if gamma_vector is None else np.asarray(gamma_vector, dtype=float).reshape(d)
    eye = np.eye(d)

    def h(x, y):
        return np.einsum("ij,...j->...i", K, np.asarray(x) - np.asarray(y))

    def gamma(y):
        return np.einsum("ij,...j->...i", G, np.asarray(y)) + u

    def jac_D(x, y):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))[:-1]
        return np.broadcast_to(K, shape + (d, d)).copy()

    def grad_lambda(y):
        return np.broadcast_to(eye, np.shape(y)[:-1] + (d, d)).copy()

    return TrackingModel(
        name=name,
        dim=d,
        h=h,
        gamma=gamma,
        lambda_map=lambda y: np.array(y, dtype=float, copy=True),
        jac_D=jac_D,
        grad_lambda=grad_lambda,
        kernel=KernelSpec(KERNEL_LINEAR, K, G, u),
    )


def linear_drift(dim=1, drift=None, gain=1.0):
    """Linear tracker chasing a target that moves along a fixed direction."""
    d = int(dim)
    u = np.eye(d)[0] if drift is None else np.asarray(drift, dtype=float).reshape(d)
    return linear_tracking(d, gain=gain, gamma_vector=u, name="linear_drift")


def rotation_generator(dim, rate=1.0):
    """Block-diagonal skew-symmetric matrix with planar rotation rate ``rate``."""
    if dim % 2:
        raise ConfigError("linear_rotating needs an even dimension")
    R = np.zeros((dim, dim))
    for i in range(0, dim, 2):
        R[i, i + 1] = -rate
        R[i + 1, i] = rate
    return R


def linear_rotating(dim=2, rotation_rate=1.0, gain=1.0):
    d = int(dim)
    return linear_tracking(
        d, gain=gain, gamma_matrix=rotation_generator(d, rotation_rate), name="linear_rotating"
    )


def logistic_drift(dim=1):
    """Per-coordinate ``h = -(x-y)^3 - (x-y)``, ``gamma(y) = sin(y)``, ``lambda(y) = y``."""
    d = int(dim)
    eye = np.eye(d)

    def h(x, y):
        e = np.asarray(x) - np.asarray(y)
        return -(e * e * e) - e

    def jac_D(x, y):
        e = np.asarray(x) - np.asarray(y)
        return (-3.0 * e * e - 1.0)[..., :, None] * eye

    def grad_lambda(y):
        return np.broadcast_to(eye, np.shape(y)[:-1] + (d, d)).copy()

    zero = np.zeros((d, d))
    return TrackingModel(
        name="logistic_drift",
        dim=d,
        h=h,
        gamma=np.sin,
        lambda_map=lambda y: np.array(y, dtype=float, copy=True),
        jac_D=jac_D,
        grad_lambda=grad_lambda,
        kernel=KernelSpec(KERNEL_LOGISTIC, zero, zero, np.zeros(d)),
    )


MODELS = {
    "linear_drift": linear_drift,
    "linear_rotating": linear_rotating,
    "logistic_drift": logistic_drift,
}

MODEL_PARAMS = {
    "linear_drift": {"dim", "drift", "gain"},
    "linear_rotating": {"dim", "rotation_rate", "gain"},
    "logistic_drift": {"dim"},
}


def build_model(name, **params):
    """Instantiate a built-in model by its config identifier."""
    try:
        builder = MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    unknown = set(params) - MODEL_PARAMS[name]
    if unknown:
        raise ConfigError(f"unknown parameters for model {name!r}: {sorted(unknown)}")
    return builder(**params)


def is_finite_constant(v):
    return v is not None and math.isfinite(v)
