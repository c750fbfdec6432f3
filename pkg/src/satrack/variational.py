"""Fundamental matrices of the equation of variation and the exact error decomposition.

Write ``h_tilde(x, y) = h(x, y) + r grad_lambda(y) gamma(y)`` with ``r = a eps``
the target's drift rate on the algorithmic clock, so that ``z(t) = lambda(y(t))``
solves ``dz/dt = h_tilde(z, y)``.  The interpolated iterate ``x_bar`` then obeys
``dx_bar/dt = h_tilde(x_bar, y) + Xi(t)`` and, by the nonlinear
variation-of-constants formula,

    x_bar(t_n) = z(t_n) + rho_n + A_n + B_n + D_n - E_n,

where each term integrates ``Phi(t_n, s; anchor)`` against one piece of ``Xi``.
``Phi(t, s; w, y)`` is the derivative of the flow of the coupled system
``(dw/dt, dy/dt) = (h_tilde(w, y), r gamma(y))`` started at ``(w, y)`` at time
``s``; it is computed by integrating ``dPhi/dt = D(w, y) Phi`` together with the
flow itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from ._fallback import _rk4
from .errors import ConfigError, PathCoverageError, StabilityAssumptionError
from .linalg import op_norm, vec_norm
from .model import KERNEL_LINEAR, eval_h_tilde
from .simulate import integrate_slow

# Gauss-Legendre 3-point rule on [0, 1]
GL_THETA = np.array([0.5 - math.sqrt(15.0) / 10.0, 0.5, 0.5 + math.sqrt(15.0) / 10.0])
GL_WEIGHT = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])

_SNAP = 1e-9


def _grid_position(u):
    """Split grid coordinate ``u >= 0`` into ``(j, theta)`` with ``0 <= theta < 1``."""
    j = int(math.floor(u))
    th = u - j
    if th > 1.0 - _SNAP:
        j, th = j + 1, 0.0
    elif th < _SNAP:
        th = 0.0
    return j, th


# ---------------------------------------------------------------------------
# base paths


@dataclass
class BasePath:
    """Solution ``(w, y)`` of the coupled system on the grid ``t0 + j h``."""

    t0: float
    h: float
    w: np.ndarray
    y: np.ndarray
    rate: float

    @property
    def t_end(self):
        return self.t0 + (len(self.w) - 1) * self.h

    def covers(self, s, t):
        tol = 1e-9 * max(1.0, abs(self.t_end))
        return self.t0 - tol <= s and t <= self.t_end + tol

    def state_at(self, model, tau):
        """``(w(tau), y(tau))``; off-grid times take one partial RK4 step."""
        if not self.covers(tau, tau):
            raise PathCoverageError(f"time {tau} outside base path [{self.t0}, {self.t_end}]")
        j, th = _grid_position((tau - self.t0) / self.h)
        j = min(j, len(self.w) - 1)
        if th == 0.0:
            return self.w[j].copy(), self.y[j].copy()
        d = self.w.shape[1]
        w, y, _ = _rk4(model, self.rate, self.w[j:j + 1], self.y[j:j + 1], np.eye(d)[None], th * self.h)
        return w[0], y[0]


def reference_path(model, slow):
    """The ideal path ``(z, y) = (lambda(y), y)`` on the fine grid of a slow path."""
    return BasePath(0.0, slow.h, model.lambda_map(slow.fine), slow.fine.copy(), slow.rate)


def integrate_base(model, rate, w0, y0, t_end, h):
    """Integrate the coupled system from ``(w0, y0)`` at time 0 on the grid of step ``h``."""
    n = int(math.floor(t_end / h + 1e-9))
    d = model.dim
    w = np.empty((n + 1, d))
    y = np.empty((n + 1, d))
    w[0], y[0] = w0, y0
    ww, yy, P = w[:1].copy(), y[:1].copy(), np.eye(d)[None]
    for j in range(n):
        ww, yy, _ = _rk4(model, rate, ww, yy, P, h)
        w[j + 1], y[j + 1] = ww[0], yy[0]
    return BasePath(0.0, float(h), w, y, float(rate))


def D_along(model, base):
    """``D(w(t_j), y(t_j))`` at every grid point of a base path."""
    return model.jac_D(base.w, base.y)


# ---------------------------------------------------------------------------
# fundamental matrices


@dataclass
class FundamentalMatrix:
    s: float
    t: float
    anchor: tuple
    value: np.ndarray


def solve_fundamental(model, base, s, t, substeps=1, backend=None):
    """``Phi(t, s)`` along ``base``, anchored at the base state at time ``s``.

    ``substeps`` RK4 steps are taken per grid interval of the base path.
    """
    if s > t:
        raise ConfigError(f"need s <= t, got s={s}, t={t}")
    if not base.covers(s, t):
        raise PathCoverageError(f"[{s}, {t}] not covered by base path [{base.t0}, {base.t_end}]")
    w_s, y_s = base.state_at(model, s)
    if s == t:
        return FundamentalMatrix(s, t, (w_s, y_s), np.eye(model.dim))
    hh = base.h / substeps
    j0, th0 = _grid_position((s - base.t0) / hh)
    J, Th = _grid_position((t - base.t0) / hh)
    _, _, P = kernels.flow(
        model, base.rate, w_s[None], y_s[None], np.array([j0]), np.array([th0]), J, Th, hh,
        backend=backend,
    )
    return FundamentalMatrix(s, t, (w_s, y_s), P[0])


def trace_integral(model, base, s, t, substeps=1):
    """``int_s^t trace D(w(tau), y(tau)) dtau`` by composite Gauss-Legendre quadrature."""
    if s >= t:
        return 0.0
    hh = base.h / substeps
    n_int = max(1, int(math.ceil((t - s) / hh - 1e-9)))
    edges = np.linspace(s, t, n_int + 1)
    taus = (edges[:-1, None] + np.diff(edges)[:, None] * GL_THETA[None, :]).ravel()
    wts = (np.diff(edges)[:, None] * GL_WEIGHT[None, :]).ravel()
    states = [base.state_at(model, tau) for tau in taus]
    W = np.array([st[0] for st in states])
    Y = np.array([st[1] for st in states])
    tr = np.trace(model.jac_D(W, Y), axis1=-2, axis2=-1)
    return float(np.sum(wts * tr))


def liouville_gap(model, base, s, t, substeps=1):
    """Relative gap between ``det Phi(t, s)`` and ``exp(int trace D)``."""
    det = float(np.linalg.det(solve_fundamental(model, base, s, t, substeps).value))
    ref = math.exp(trace_integral(model, base, s, t, substeps))
    return abs(det - ref) / abs(ref)


# ---------------------------------------------------------------------------
# exponential stability


@dataclass(frozen=True)
class StabilityEstimate:
    """Fitted ``|Phi(t, s)| <= C_Phi exp(-beta (t - s))``."""

    C_Phi: float
    beta: float
    fit_residual: float
    n_pairs: int

    @property
    def mu(self):
        return 1.0 / self.beta

    def bound(self, tau):
        return self.C_Phi * np.exp(-self.beta * np.asarray(tau, dtype=float))


def random_pairs(t_max, n_pairs, seed, t_min=0.0):
    """``n_pairs`` ordered pairs ``t_min <= s <= t <= t_max``."""
    rng = np.random.default_rng(seed)
    st = np.sort(rng.uniform(t_min, t_max, size=(n_pairs, 2)), axis=1)
    return [tuple(p) for p in st]


def phi_norms(model, base, pairs, substeps=1):
    """Lags ``t - s`` and ``|Phi(t, s)|`` for each pair."""
    taus = np.array([t - s for s, t in pairs], dtype=float)
    norms = np.array([op_norm(solve_fundamental(model, base, s, t, substeps).value) for s, t in pairs])
    return taus, norms


def fit_exp_stability(taus, norms, min_pairs=20):
    """Least-squares fit of ``log |Phi|`` against ``-(t - s)``, then inflate ``C_Phi``."""
    taus = np.asarray(taus, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if len(taus) < min_pairs:
        raise ConfigError(f"need at least {min_pairs} (s, t) pairs, got {len(taus)}")
    if np.ptp(taus) <= 0:
        raise ConfigError("sample pairs need a spread of lags t - s")
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise StabilityAssumptionError(float("nan"))
    logn = np.log(norms)
    X = np.column_stack([np.ones_like(taus), -taus])
    coef, *_ = np.linalg.lstsq(X, logn, rcond=None)
    logC, beta = float(coef[0]), float(coef[1])
    if not beta > 1e-9:
        raise StabilityAssumptionError(beta)
    resid = logn - X @ coef
    # smallest C_Phi >= 1 making the bound dominate every sample
    C = max(1.0, math.exp(logC), float(np.max(norms * np.exp(beta * taus))))
    return StabilityEstimate(C, beta, float(np.sqrt(np.mean(resid ** 2))), len(taus))


def estimate_exp_stability(model, base, sample_pairs, substeps=1):
    """Fit ``(C_Phi, beta)`` to ``|Phi(t, s)|`` over ``sample_pairs``.

    Raises
    ------
    StabilityAssumptionError
        If the fitted decay rate is not positive.
    """
    taus, norms = phi_norms(model, base, sample_pairs, substeps)
    return fit_exp_stability(taus, norms)


# ---------------------------------------------------------------------------
# decomposition


@dataclass
class DecompositionTerms:
    """Terms of ``x_bar(t_n) = z(t_n) + rho + A + B + D - E`` (``C`` is part of ``B``)."""

    n: int
    t_n: float
    rho: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: Optional[np.ndarray]
    D: np.ndarray
    E: np.ndarray
    x_bar: np.ndarray
    z: np.ndarray
    substeps: int
    integrands: Optional[dict] = None

    @property
    def B_minus_C(self):
        return None if self.C is None else self.B - self.C

    @property
    def reconstruction(self):
        return self.z + self.rho + self.A + self.B + self.D - self.E

    @property
    def residual(self):
        return float(vec_norm(self.x_bar - self.reconstruction))

    def as_dict(self):
        out = {"rho": self.rho, "A": self.A, "B": self.B, "D": self.D, "E": self.E}
        if self.C is not None:
            out["C"] = self.C
            out["B_minus_C"] = self.B_minus_C
        return out


def _nodes(n, m):
    """Interval index, fine-grid index and offset of every quadrature node."""
    k = np.repeat(np.arange(n), 3 * m)
    j = np.tile(np.repeat(np.arange(m), 3), n)
    q = np.tile(np.arange(3), n * m)
    return k, k * m + j, (j + GL_THETA[q]) / m, GL_THETA[q], GL_WEIGHT[q]


def _slow_partial(model, rate, y, dt):
    """One RK4 step of ``dy/dt = rate gamma(y)`` per row with per-row ``dt``."""
    if rate == 0.0:
        return y.copy()
    dtv = np.asarray(dt, dtype=float)[:, None]
    k1 = rate * model.gamma(y)
    k2 = rate * model.gamma(y + 0.5 * dtv * k1)
    k3 = rate * model.gamma(y + 0.5 * dtv * k2)
    k4 = rate * model.gamma(y + dtv * k3)
    return y + (dtv / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _weighted(P, v, w):
    return np.einsum("b,bij,bj->i", w, P, v)


def interval_weights(model, x_anchor, y_anchor, a, rate, n, substeps, backend=None):
    """``alpha_k = int_{t_k}^{t_{k+1}} Phi(t_n, s; x_anchor[k], y_anchor[k]) ds``, shape (n, d, d)."""
    d = model.dim
    if n == 0:
        return np.zeros((0, d, d))
    m = int(substeps)
    h = a / m
    if model.kernel is not None and model.kernel.code == KERNEL_LINEAR:
        return _linear_weights(model, a, n, m, backend)
    k, g, _, th, wq = _nodes(n, m)
    _, _, P = kernels.flow(
        model, rate, np.asarray(x_anchor, dtype=float)[k], np.asarray(y_anchor, dtype=float)[k],
        g, th, n * m, 0.0, h, backend=backend,
    )
    W = (h * wq)[:, None, None] * P
    return W.reshape(n, 3 * m, d, d).sum(axis=1)


def _linear_weights(model, a, n, m, backend):
    # D is constant, so Phi(t, s) = Phi(t - s) for every anchor:
    # alpha_k = Phi(a)^(n-k-1) int_0^a Phi(a - s) ds
    d = model.dim
    h = a / m
    _, g, _, th, wq = _nodes(1, m)
    zero = np.zeros((len(g), d))
    _, _, P = kernels.flow(model, 0.0, zero, zero, g, th, m, 0.0, h, backend=backend)
    local = np.einsum("b,bij->ij", h * wq, P)
    _, _, step = kernels.flow(model, 0.0, zero[:1], zero[:1], np.array([0]), np.array([0.0]), m,
                              0.0, h, backend=backend)
    out = np.empty((n, d, d))
    acc = local
    for k in range(n - 1, -1, -1):
        out[k] = acc
        acc = step[0] @ acc
    return out


def alekseev_decompose(model, traj, n, substeps=None, with_c=True, integrands=False, backend=None):
    """Exact decomposition of ``x_bar(t_n) - z(t_n)`` for one trajectory.

    Parameters
    ----------
    model : TrackingModel
    traj : Trajectory
    n : int
        Step index, ``0 <= n <= traj.N``.
    substeps : int, optional
        Quadrature subintervals per SA interval (three Gauss-Legendre nodes
        each); also the RK4 steps per interval for every ``Phi``.  Defaults to
        ``traj.cfg.ode_substeps``.
    with_c : bool
        Also compute ``C_n``, whose anchors ``(x_k, y_k)`` need a second set of
        flows.
    integrands : bool
        Keep the node times, ``zeta_1..zeta_4``, ``Xi`` and the ``Phi`` values.
    """
    cfg = traj.cfg
    if not (0 <= n <= traj.N):
        raise ConfigError(f"n={n} outside [0, {traj.N}]")
    if traj.M.shape[0] < n or traj.pert.shape[0] < n or not (
        np.all(np.isfinite(traj.M[:n])) and np.all(np.isfinite(traj.pert[:n]))
    ):
        raise ConfigError(f"trajectory lacks noise records up to step {n}")
    m = int(cfg.ode_substeps if substeps is None else substeps)
    if m < 1:
        raise ConfigError("substeps must be >= 1")
    a, d = cfg.a, model.dim
    rate = a * cfg.eps
    h = a / m
    slow = integrate_slow(model, cfg.eps, a, traj.y[0], n * a, m, C_gamma=float("inf"), backend=backend)
    x, y = traj.x, traj.y
    z_n = model.lambda_map(slow.fine[n * m])
    x0, y0 = x[0], y[0]
    zero = np.zeros(d)

    _, _, P0 = kernels.flow(model, rate, x0[None], y0[None], np.array([0]), np.array([0.0]),
                            n * m, 0.0, h, backend=backend)
    rho = P0[0] @ (x0 - model.lambda_map(y0))
    if n == 0:
        return DecompositionTerms(0, 0.0, rho, zero, zero.copy(), zero.copy() if with_c else None,
                                  zero.copy(), zero.copy(), x[0].copy(), z_n, m)

    k, g, frac, th, wq = _nodes(n, m)
    wts = h * wq
    xb = x[k] + frac[:, None] * (x[k + 1] - x[k])
    ys = _slow_partial(model, rate, slow.fine[g], th * h)
    _, _, P = kernels.flow(model, rate, xb, ys, g, th, n * m, 0.0, h, backend=backend)

    xk, yk = x[:n], y[:n]
    z1 = eval_h_tilde(model, xk, yk, rate)[k] - eval_h_tilde(model, xb, ys, rate)
    z2 = traj.M[:n][k]
    z3 = traj.pert[:n][k]
    drift = rate * np.einsum("...ij,...j->...i", model.grad_lambda(yk), model.gamma(yk))[k]
    A = _weighted(P, z1, wts)
    B = _weighted(P, z2, wts)
    D = _weighted(P, z3, wts)
    E = _weighted(P, drift, wts)

    C = None
    if with_c:
        alpha = interval_weights(model, xk, yk, a, rate, n, m, backend=backend)
        C = np.einsum("kij,kj->i", alpha, traj.M[:n])

    extra = None
    if integrands:
        extra = {
            "s": (k + frac) * a,
            "weight": wts,
            "zeta1": z1, "zeta2": z2, "zeta3": z3, "zeta4": -drift,
            "Xi": z1 + z2 + z3 - drift,
            "Phi": P,
        }
        if with_c:
            _, _, Pk = kernels.flow(model, rate, xk[k], yk[k], g, th, n * m, 0.0, h, backend=backend)
            extra["Phi_anchor_k"] = Pk
    return DecompositionTerms(n, n * a, rho, A, B, C, D, E, x[n].copy(), z_n, m, extra)


def reconstruct_residual(model, traj, n, substeps=None, backend=None):
    """``|x_bar(t_n) - z(t_n) - rho_n - A_n - B_n - D_n + E_n|``."""
    return alekseev_decompose(model, traj, n, substeps, with_c=False, backend=backend).residual


def decomposition_csv(terms_list):
    header = ["n", "term", "coordinate", "value", "residual"]
    rows = []
    for terms in terms_list:
        res = terms.residual
        for name, vec in terms.as_dict().items():
            for i, v in enumerate(vec):
                rows.append([terms.n, name, i, float(v), res])
    return header, rows
