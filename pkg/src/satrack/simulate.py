"""Constant step-size iteration against a slowly drifting target.

Time convention: everything runs on the algorithmic clock ``t_k = k a``.  The
target solves ``dy/dt = a eps gamma(y)`` on that clock, so one SA step moves the
target by ``O(a^2 eps)``, and ``y_k = y(t_k)``.  The ideal path is
``z(t) = lambda(y(t))``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError, TargetUnboundedError
from .linalg import vec_norm
from .model import check_dim
from .noise import BLOCK, NoiseSpec, NoiseStream, PerturbationSpec, perturbation_block, rng_for

# replicas are grouped in fixed chunks; statistics are reduced in chunk order
CHUNK = 64


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one run.

    ``x0``/``y0`` default to the origin of the model's space.
    """

    a: float
    eps: float = 0.0
    horizon_N: int = 100
    seed: int = 0
    ode_substeps: int = 10
    x0: Optional[tuple] = None
    y0: Optional[tuple] = None

    def __post_init__(self):
        if not (0.0 < self.a < 1.0):
            raise ConfigError(f"stepsize a must lie in (0, 1), got {self.a}")
        if not (self.eps >= 0.0) or not math.isfinite(self.eps):
            raise ConfigError(f"drift rate eps must be finite and >= 0, got {self.eps}")
        if int(self.horizon_N) != self.horizon_N or self.horizon_N < 1:
            raise ConfigError("horizon_N must be an integer >= 1")
        if int(self.ode_substeps) != self.ode_substeps or self.ode_substeps < 1:
            raise ConfigError("ode_substeps must be an integer >= 1")
        for name in ("x0", "y0"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(c) for c in np.ravel(v)))

    @property
    def rate(self):
        """Drift rate of the target on the algorithmic clock."""
        return self.a * self.eps

    @property
    def t_end(self):
        return self.horizon_N * self.a

    def initial(self, model):
        x0 = np.zeros(model.dim) if self.x0 is None else np.asarray(self.x0, dtype=float)
        y0 = np.zeros(model.dim) if self.y0 is None else np.asarray(self.y0, dtype=float)
        return check_dim(model, "x0", x0).copy(), check_dim(model, "y0", y0).copy()


@dataclass
class SlowPath:
    """Target path sampled at ``t_k = k a``; ``fine`` holds every RK4 substep."""

    t: np.ndarray
    y: np.ndarray
    fine: np.ndarray
    a: float
    substeps: int
    rate: float
    ode_error: float

    @property
    def h(self):
        return self.a / self.substeps


def integrate_slow(model, eps, a, y0, t_end, substeps=10, C_gamma=None, backend=None):
    """RK4 path of ``dy/dt = a eps gamma(y)`` on ``[0, t_end]``.

    Parameters
    ----------
    model : TrackingModel
    eps, a : float
        Drift rate and stepsize; the field is scaled by ``a * eps``.
    y0 : array_like
    t_end : float
        Samples are returned at ``k a`` for ``k a <= t_end``.
    substeps : int
        RK4 steps per interval of length ``a``.
    C_gamma : float, optional
        Defaults to ``model.constants.C_gamma``; when known the path must stay
        inside the ball of radius ``10 C_gamma``.

    Returns
    -------
    SlowPath
        ``ode_error`` is a step-doubling estimate of the RK4 error.
    """
    if not (t_end >= 0):
        raise ConfigError("t_end must be >= 0")
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    y0 = check_dim(model, "y0", y0)
    n = int(math.floor(t_end / a + 1e-9))
    rate = a * eps
    h = a / substeps
    fine = kernels.slow_path(model, rate, y0, n * substeps, h, backend=backend)
    coarse_check = kernels.slow_path(model, rate, y0, n * substeps * 2, h / 2, backend=backend)
    # Richardson estimate for a fourth-order method
    err = float(np.max(np.abs(coarse_check[::2] - fine))) * 16.0 / 15.0 if n else 0.0
    if not np.all(np.isfinite(fine)):
        raise TargetUnboundedError(float("inf"))
    if C_gamma is None:
        C_gamma = model.constants.C_gamma
    if C_gamma is not None:
        radius = float(np.max(vec_norm(fine)))
        if radius > 10.0 * C_gamma:
            raise TargetUnboundedError(radius)
    ys = fine[::substeps]
    return SlowPath(np.arange(n + 1) * a, ys, fine, a, int(substeps), rate, err)


@dataclass
class Trajectory:
    """One realised run; ``M[k]`` and ``pert[k]`` are ``M_{k+1}`` and ``eps_{k+1}``."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    M: np.ndarray
    pert: np.ndarray
    cfg: SimConfig
    slow: SlowPath = field(repr=False)

    @property
    def N(self):
        return len(self.t) - 1

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def ode_error(self):
        return self.slow.ode_error

    def errors(self):
        return vec_norm(self.x - self.z)


def _setup(model, cfg, backend):
    x0, y0 = cfg.initial(model)
    slow = integrate_slow(model, cfg.eps, cfg.a, y0, cfg.t_end, cfg.ode_substeps, backend=backend)
    z = model.lambda_map(slow.y)
    return x0, slow, z


def _scale_args(noise):
    if noise.is_zero:
        return 0.0, None
    if noise.scale_fn is None:
        return float(noise.scale), None
    return 0.0, noise.scale_fn


def run_sa(model, noise, perturbation, cfg, stream=0, backend=None):
    """Run ``x_{k+1} = x_k + a (h(x_k, y_k) + M_{k+1} + eps_{k+1})`` for ``N`` steps.

    Noise for ``(cfg.seed, stream)`` is drawn in the same blocks an ensemble
    uses, so replica ``r`` of :func:`run_ensemble` replays ``stream=r``.
    """
    noise = NoiseSpec.zero() if noise is None else noise
    perturbation = PerturbationSpec() if perturbation is None else perturbation
    x0, slow, z = _setup(model, cfg, backend)
    N, d, a = cfg.horizon_N, model.dim, cfg.a
    scale, scale_fn = _scale_args(noise)
    src = NoiseStream(noise, rng_for(cfg.seed, stream), d)
    xs = np.empty((N + 1, d))
    Ms = np.empty((N, d))
    ps = np.empty((N, d))
    x = x0[None, :].copy()
    xs[0] = x[0]
    stats = np.zeros((1, 3))
    for k0 in range(0, N, BLOCK):
        nk = min(BLOCK, N - k0)
        pert = perturbation_block(perturbation, k0 + 1, nk, d)
        for j in range(nk):
            k = k0 + j
            draw = src.take(1)
            if scale_fn is None:
                Ms[k] = scale * draw[0]
            else:
                Ms[k] = np.asarray(scale_fn(x), dtype=float)[0] * draw[0]
            ps[k] = pert[j]
            kernels.sa_advance(
                model, x, slow.y[k:k + 1], z[k:k + 1], draw[None, :, :], scale, scale_fn,
                pert[j:j + 1], a, k, stats, backend=backend,
            )
            xs[k + 1] = x[0]
    return Trajectory(slow.t, xs, slow.y, z, Ms, ps, cfg, slow)


def interpolate(traj, t):
    """Piecewise-linear interpolation ``x_bar(t)`` of the iterates."""
    a = traj.cfg.a
    t_max = traj.N * a
    if not (0.0 <= t <= t_max * (1 + 1e-12)):
        raise ConfigError(f"t={t} outside [0, {t_max}]")
    u = t / a
    k = int(round(u))
    if abs(u - k) <= 1e-12 * max(1.0, abs(u)):
        return traj.x[k].copy()
    k = min(int(math.floor(u)), traj.N - 1)
    theta = u - k
    return traj.x[k] + theta * (traj.x[k + 1] - traj.x[k])


@dataclass
class EnsembleSummary:
    """Per-step Monte Carlo statistics over ``n_replicas`` runs.

    ``rms[k]`` is ``sqrt(mean |x_k - z_k|^2)``, ``m2`` and ``m4`` are the raw
    second and fourth moments of ``|x_k|``.
    """

    t: np.ndarray
    rms: np.ndarray
    m2: np.ndarray
    m4: np.ndarray
    n_replicas: int
    cfg: SimConfig
    ode_error: float = 0.0

    @property
    def q4(self):
        return self.m4 ** 0.25

    @property
    def C_star(self):
        """``max(sup_k E|x_k|^2^(1/2), sup_k E|x_k|^4^(1/4))``."""
        return float(max(np.max(np.sqrt(self.m2)), np.max(self.q4)))

    def stationary_rms(self, fraction=0.25):
        """RMS error over the last ``fraction`` of the horizon."""
        n0 = int(len(self.rms) * (1.0 - fraction))
        return float(np.sqrt(np.mean(self.rms[n0:] ** 2)))

    def c_star_variation(self, fraction=0.25):
        """Relative change of the running max of ``q4`` over the last ``fraction``."""
        run = np.maximum.accumulate(self.q4)
        n0 = int(len(run) * (1.0 - fraction))
        ref = run[-1]
        return float((run[-1] - run[n0]) / ref) if ref > 0 else 0.0


def summarize(traj):
    """Singleton-ensemble statistics of one trajectory."""
    e = traj.x - traj.z
    se = np.sum(e * e, axis=1)
    sq = np.sum(traj.x * traj.x, axis=1)
    return EnsembleSummary(traj.t, np.sqrt(se), sq, sq * sq, 1, traj.cfg, traj.ode_error)


def _run_chunk(model, noise, perturbation, cfg, slow, z, x0, r0, r1, backend):
    N, d = cfg.horizon_N, model.dim
    R = r1 - r0
    scale, scale_fn = _scale_args(noise)
    srcs = [NoiseStream(noise, rng_for(cfg.seed, r), d) for r in range(r0, r1)]
    x = np.broadcast_to(x0, (R, d)).copy()
    stats = np.zeros((N + 1, 3))
    for k0 in range(0, N, BLOCK):
        nk = min(BLOCK, N - k0)
        draws = np.stack([s.take(nk) for s in srcs])
        pert = perturbation_block(perturbation, k0 + 1, nk, d)
        try:
            kernels.sa_advance(
                model, x, slow.y[k0:k0 + nk], z[k0:k0 + nk], draws, scale, scale_fn, pert,
                cfg.a, k0, stats[k0:k0 + nk], backend=backend,
            )
        except DivergenceError as exc:
            raise DivergenceError(exc.step, r0 + (exc.replica or 0)) from None
    # statistics of the final iterate
    e = x - z[N]
    sq = np.sum(x * x, axis=1)
    stats[N, 0] = np.sum(np.sum(e * e, axis=1))
    stats[N, 1] = np.sum(sq)
    stats[N, 2] = np.sum(sq * sq)
    return stats


def run_ensemble(model, noise, perturbation, cfg, n_replicas, threads=1, backend=None):
    """Monte Carlo statistics over independent replicas.

    Replica ``r`` uses the stream ``(cfg.seed, r)``.  Replicas are split into
    fixed chunks whose sums are added in chunk order, so the result does not
    depend on ``threads``.
    """
    if n_replicas < 1:
        raise ConfigError("n_replicas must be >= 1")
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    noise = NoiseSpec.zero() if noise is None else noise
    perturbation = PerturbationSpec() if perturbation is None else perturbation
    x0, slow, z = _setup(model, cfg, backend)
    bounds = [(r, min(r + CHUNK, n_replicas)) for r in range(0, n_replicas, CHUNK)]

    def job(b):
        return _run_chunk(model, noise, perturbation, cfg, slow, z, x0, b[0], b[1], backend)

    if threads == 1 or len(bounds) == 1:
        parts = [job(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, bounds))
    total = np.zeros_like(parts[0])
    for p in parts:
        total += p
    total /= n_replicas
    return EnsembleSummary(
        slow.t, np.sqrt(total[:, 0]), total[:, 1], total[:, 2], n_replicas, cfg, slow.ode_error
    )


def ou_stationary_rms(a, sigma=1.0):
    """Stationary RMS of ``x_{k+1} = (1 - a) x_k + a sigma Z``: ``sqrt(a sigma^2 / (2 - a))``."""
    return math.sqrt(a * sigma * sigma / (2.0 - a))


# ---------------------------------------------------------------------------
# CSV


def trajectory_csv(traj):
    d = traj.dim
    header = ["k", "t"]
    for name in ("x", "y", "z", "M", "eps"):
        header += [f"{name}{i}" for i in range(d)]
    nan = np.full((1, d), np.nan)
    M = np.vstack([traj.M, nan])
    P = np.vstack([traj.pert, nan])
    rows = []
    for k in range(traj.N + 1):
        rows.append([k, traj.t[k], *traj.x[k], *traj.y[k], *traj.z[k], *M[k], *P[k]])
    return header, rows


def summary_csv(summary):
    header = ["k", "t", "rms", "q4"]
    rows = [[k, summary.t[k], summary.rms[k], summary.q4[k]] for k in range(len(summary.t))]
    return header, rows
