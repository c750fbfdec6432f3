"""Sufficient test for exponential stability of slowly varying linear systems.

For ``dx/dt = (A(t) + P(t)) x`` sampled on a uniform grid, four data-driven
conditions are checked:

1. window averages of ``|A|`` stay below ``A_bar``;
2. the variation of ``A`` across windows obeys
   ``sum_j |A(t2 + jT) - A(t1 + jT)| <= T b + T^gamma (n + 1) beta_s``;
3. the window averages of ``alpha(t)`` (real part of the eigenvalue whose real
   part is largest in absolute value) stay below ``alpha_bar < 0``;
4. ``int |P| <= delta_s``;

and stability follows when three scalar inequalities in
``(alpha_bar, epsilon_s, delta_s, beta_s, M_eps)`` are all negative.  The test
parameters carry an ``_s`` suffix so they are not confused with the tracking
problem's ``eps``, ``delta`` and ``beta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalError
from .linalg import op_norm


@dataclass(frozen=True)
class SoloParams:
    epsilon_s: float = 0.5
    delta_s: float = 0.01
    beta_s: float = 0.001
    gamma_exp: float = 1.0
    b: float = 0.1
    p: Optional[float] = None  # defaults to the state dimension

    def __post_init__(self):
        if self.epsilon_s <= 0 or self.delta_s <= 0 or self.beta_s <= 0 or self.b <= 0:
            raise ConfigError("epsilon_s, delta_s, beta_s and b must be positive")
        if not (0 < self.gamma_exp <= 1):
            raise ConfigError("gamma_exp must lie in (0, 1]")


@dataclass
class SoloInput:
    """Matrix path ``A(t_j)`` (and optional ``P(t_j)``) on a uniform grid."""

    t: np.ndarray
    A: np.ndarray
    window_T: float = 1.0
    P: Optional[np.ndarray] = None
    params: SoloParams = field(default_factory=SoloParams)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        if self.A.ndim != 3 or self.A.shape[1] != self.A.shape[2] or len(self.A) != len(self.t):
            raise ConfigError("A must have shape (len(t), d, d)")
        if self.P is None:
            self.P = np.zeros_like(self.A)
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != self.A.shape:
            raise ConfigError("P must have the same shape as A")
        if len(self.t) < 2:
            raise ConfigError("need at least two grid points")
        dt = np.diff(self.t)
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=0) or dt[0] <= 0:
            raise ConfigError("grid must be uniform and increasing")
        w = self.window_T / dt[0]
        if self.window_T <= 0 or abs(w - round(w)) > 1e-6:
            raise ConfigError("window_T must be a positive multiple of the grid step")
        if round(w) > len(self.t) - 1:
            raise ConfigError("path shorter than one window")

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @property
    def w(self):
        """Grid points per window."""
        return int(round(self.window_T / self.dt))

    @property
    def d(self):
        return self.A.shape[1]

    @property
    def p(self):
        return float(self.d if self.params.p is None else self.params.p)


def _window_trapezoid_means(values, w, dt):
    """Trapezoid average of ``values`` over every window of ``w`` intervals."""
    c = np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * dt)])
    return (c[w:] - c[:-w]) / (w * dt)


def estimate_A_bar(inp):
    """Largest sliding-window trapezoid average of ``|A(t)|``."""
    norms = np.atleast_1d(op_norm(inp.A))
    return float(np.max(_window_trapezoid_means(norms, inp.w, inp.dt)))


def alpha_path(A):
    """Real part of the eigenvalue whose real part is largest in absolute value."""
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue solve failed: {exc}") from None
    re = ev.real
    idx = np.argmax(np.abs(re), axis=-1)
    return np.take_along_axis(re, idx[:, None], axis=-1)[:, 0], np.max(re, axis=-1)


def _offset_means(values, w):
    """Mean of ``values[i::w]`` for each offset ``i < w``, max over offsets."""
    return float(max(np.mean(values[i::w]) for i in range(w)))


def estimate_alpha_bar(inp):
    """Largest, over offsets, mean of ``alpha`` sampled once per window."""
    alpha, _ = alpha_path(inp.A)
    return _offset_means(alpha, inp.w)


def compute_M_eps(A_bar, b, epsilon_s, p):
    """``M_eps = 3 (2 (A_bar + b) / epsilon_s + 1)^(p - 1) / 2``."""
    return 3.0 * (2.0 * (A_bar + b) / epsilon_s + 1.0) ** (p - 1.0) / 2.0


def variation_statistic(inp):
    """Largest excess ``sum_j (|A(t2 + jT) - A(t1 + jT)| - T^gamma beta_s)`` over runs of ``j``.

    The variation condition holds iff this is at most ``T b``.  Pairs use every
    grid offset ``t1`` within a window and every lag ``0 < t2 - t1 <= T``.
    """
    w = inp.w
    n_g = len(inp.t)
    T = inp.window_T
    slope = T ** inp.params.gamma_exp * inp.params.beta_s
    best = -math.inf
    for lag in range(1, w + 1):
        i1 = np.arange(0, n_g - lag)
        diff = np.atleast_1d(op_norm(inp.A[i1 + lag] - inp.A[i1])) - slope
        n_per = -(-len(diff) // w)
        cols = np.full(n_per * w, -np.inf)
        cols[:len(diff)] = diff
        cols = cols.reshape(n_per, w)  # column i holds the samples of offset i
        # Kadane over each column: largest sum over contiguous runs
        run = np.full(w, -np.inf)
        top = np.full(w, -np.inf)
        for v in cols:
            run = np.maximum(v, run + v)
            top = np.maximum(top, run)
        best = max(best, float(np.max(top)))
    return float(best)


def perturbation_integral(inp):
    """``int |P(t)| dt`` over the whole path (trapezoid)."""
    norms = np.atleast_1d(op_norm(inp.P))
    return float(np.sum(0.5 * (norms[1:] + norms[:-1])) * inp.dt)


@dataclass
class SoloReport:
    A_bar: float
    alpha_bar: float
    alpha_max_real: float
    delta_est: float
    variation_stat: float
    variation_ok: bool
    perturbation_ok: bool
    M_eps: float
    p: float
    inequality_values: tuple
    degenerate: bool
    params: SoloParams

    @property
    def verdict(self):
        vals = self.inequality_values
        used = vals[:2] if self.degenerate else vals
        return bool(all(v < 0 for v in used) and self.variation_ok and self.perturbation_ok)

    def text(self):
        v1, v2, v3 = self.inequality_values
        lines = [
            f"A_bar          = {self.A_bar:.6g}",
            f"alpha_bar      = {self.alpha_bar:.6g}",
            f"max real part  = {self.alpha_max_real:.6g}  (diagnostic)",
            f"int |P|        = {self.delta_est:.6g}  (delta_s = {self.params.delta_s:g}, ok={self.perturbation_ok})",
            f"variation      = {self.variation_stat:.6g}  (ok={self.variation_ok})",
            f"p              = {self.p:g}",
            f"M_eps          = {self.M_eps:.6g}",
            f"inequality 1   = {v1:.6g}",
            f"inequality 2   = {v2:.6g}",
            f"inequality 3   = {v3:.6g}" + ("  (degenerate: ln M_eps <= 0)" if self.degenerate else ""),
            f"verdict        = {'pass' if self.verdict else 'fail'}",
        ]
        return "\n".join(lines)

    def csv(self):
        header = ["A_bar", "alpha_bar", "alpha_max_real", "delta_est", "variation_stat",
                  "variation_ok", "perturbation_ok", "p", "M_eps", "ineq1", "ineq2", "ineq3",
                  "degenerate", "verdict"]
        row = [self.A_bar, self.alpha_bar, self.alpha_max_real, self.delta_est, self.variation_stat,
               int(self.variation_ok), int(self.perturbation_ok), self.p, self.M_eps,
               *self.inequality_values, int(self.degenerate), int(self.verdict)]
        return header, [row]


def solo_test(inp):
    """Evaluate every condition and the three inequalities."""
    prm = inp.params
    A_bar = estimate_A_bar(inp)
    alpha, max_re = alpha_path(inp.A)
    alpha_bar = _offset_means(alpha, inp.w)
    alpha_max = _offset_means(max_re, inp.w)
    delta_est = perturbation_integral(inp)
    var = variation_statistic(inp)
    M = compute_M_eps(A_bar, prm.b, prm.epsilon_s, inp.p)
    v1 = alpha_bar + prm.epsilon_s
    v2 = v1 + M * prm.delta_s
    degenerate = M <= 1.0
    if degenerate:
        v3 = float("nan")
    else:
        g = prm.gamma_exp
        v3 = v2 + 2.0 * math.log(M) ** (g / (g + 1.0)) * (
            prm.beta_s * (M + prm.epsilon_s / (A_bar + prm.b))
        ) ** (1.0 / (g + 1.0))
    return SoloReport(
        A_bar, alpha_bar, alpha_max, delta_est, var, var <= inp.window_T * prm.b,
        delta_est <= prm.delta_s, M, inp.p, (v1, v2, v3), degenerate, prm,
    )


# ---------------------------------------------------------------------------
# matrix paths


def path_from_model(model, base, window_T=1.0, params=None, stride=1):
    """``A(t) = D(w(t), y(t))`` along a base path (every ``stride``-th grid point)."""
    A = model.jac_D(base.w[::stride], base.y[::stride])
    t = base.t0 + np.arange(len(base.w))[::stride] * base.h
    return SoloInput(t, A, window_T, None, params or SoloParams())


def markus_yamabe_path(alpha=1.5, t_end=40.0, dt=0.05, window_T=1.0, params=None):
    """Pointwise-stable but unstable 2x2 system.

    ``A(t) = [[-1 + alpha cos^2 t, 1 - alpha sin t cos t],
    [-1 - alpha sin t cos t, -1 + alpha sin^2 t]]`` has eigenvalues with real
    part ``(alpha - 2) / 2`` for every ``t`` yet ``x(t) = e^{(alpha-1) t} (cos t, -sin t)``.
    """
    n = int(round(t_end / dt))
    t = np.arange(n + 1) * dt
    c, s = np.cos(t), np.sin(t)
    A = np.empty((n + 1, 2, 2))
    A[:, 0, 0] = -1 + alpha * c * c
    A[:, 0, 1] = 1 - alpha * s * c
    A[:, 1, 0] = -1 - alpha * s * c
    A[:, 1, 1] = -1 + alpha * s * s
    return SoloInput(t, A, window_T, None, params or SoloParams())


def load_matrix_path(path):
    """Read ``t, a_00, a_01, ...`` rows (row-major) from a CSV file with a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ConfigError(f"{path}: no data rows")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    k = data.shape[1] - 1
    d = int(round(math.sqrt(k)))
    if d * d != k:
        raise ConfigError(f"{path}: expected 1 + d^2 columns, got {data.shape[1]}")
    return data[:, 0], data[:, 1:].reshape(-1, d, d)
