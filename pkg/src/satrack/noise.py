"""Martingale-difference noise, bounded perturbations and moment calibration.

Noise is built from a symmetric per-coordinate law multiplied by a state
dependent scale, so ``E[M | x] = 0`` holds by construction.  Random streams are
counter-based (Philox) and derived from a master seed and a stream index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, HeavyTailError
from .linalg import vec_norm

FAMILIES = ("gaussian", "laplace", "gaussian_mixture", "bounded_uniform", "none")
PERTURBATION_MODES = ("zero", "constant_direction", "adversarial_sign")

DELTA_GRID = tuple(2.0 ** k for k in range(0, -7, -1))
SAFETY_FACTOR = 1.1
HALF_SAMPLE_RTOL = 0.10
# largest single term allowed as a fraction of the exponential-moment sum
MAX_TERM_FRACTION = 0.01

# rows drawn per refill; both single runs and ensembles consume streams in
# blocks of this size so that replica r of an ensemble replays run_sa(stream=r)
BLOCK = 1024


def rng_for(seed, stream=0):
    """Counter-based generator for ``(seed, stream)``."""
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseSpec:
    """Conditional law of ``M_{n+1}`` given the current iterate.

    ``scale_fn`` (when given) must return values inside ``[s_min, s_max]``;
    otherwise the constant ``scale`` is used.
    """

    family: str = "gaussian"
    scale: float = 1.0
    scale_fn: Optional[Callable] = None
    s_min: float = 1.0
    s_max: float = 1.0
    delta: Optional[float] = None
    C_M: Optional[float] = None
    tail_threshold_v: float = 1.0
    mixture_weight: float = 0.5
    mixture_sigmas: tuple = (0.5, 1.5)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}; choose from {FAMILIES}")
        if self.family != "none":
            if not (0 < self.s_min <= self.s_max < math.inf):
                raise ConfigError("noise scale bounds need 0 < s_min <= s_max < inf")
            if self.scale_fn is None and not (self.s_min <= self.scale <= self.s_max):
                raise ConfigError("noise scale must lie in [s_min, s_max]")
        if self.delta is not None and self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.C_M is not None and self.C_M <= 0:
            raise ConfigError("C_M must be positive")
        if self.tail_threshold_v <= 0:
            raise ConfigError("tail_threshold_v must be positive")

    @classmethod
    def gaussian(cls, sigma=1.0, **kw):
        return cls("gaussian", scale=sigma, s_min=sigma, s_max=sigma, **kw)

    @classmethod
    def laplace(cls, b=1.0, **kw):
        return cls("laplace", scale=b, s_min=b, s_max=b, **kw)

    @classmethod
    def uniform(cls, half_width=1.0, **kw):
        return cls("bounded_uniform", scale=half_width, s_min=half_width, s_max=half_width, **kw)

    @classmethod
    def mixture(cls, scale=1.0, weight=0.5, sigmas=(0.5, 1.5), **kw):
        return cls(
            "gaussian_mixture", scale=scale, s_min=scale, s_max=scale,
            mixture_weight=weight, mixture_sigmas=tuple(sigmas), **kw,
        )

    @classmethod
    def zero(cls):
        return cls("none")

    @property
    def is_zero(self):
        return self.family == "none"

    @property
    def constant_scale(self):
        return self.scale_fn is None

    def scale_at(self, x):
        """Scale for iterate(s) ``x`` of shape ``(..., d)``; shape ``(...)``."""
        if self.is_zero:
            return np.zeros(np.shape(x)[:-1])
        if self.scale_fn is None:
            return np.full(np.shape(x)[:-1], float(self.scale))
        return np.asarray(self.scale_fn(x), dtype=float)


def standard_draws(spec, rng, shape):
    """Unit-scale symmetric draws of this noise family."""
    fam = spec.family
    if fam == "gaussian":
        return rng.standard_normal(shape)
    if fam == "laplace":
        return rng.laplace(0.0, 1.0, shape)
    if fam == "bounded_uniform":
        return rng.uniform(-1.0, 1.0, shape)
    if fam == "gaussian_mixture":
        pick = rng.random(shape) < spec.mixture_weight
        z = rng.standard_normal(shape)
        s0, s1 = spec.mixture_sigmas
        return z * np.where(pick, s0, s1)
    return np.zeros(shape)


class NoiseStream:
    """Block-buffered unit-scale draws for one replica."""

    def __init__(self, spec, rng, dim):
        self.spec = spec
        self.rng = rng
        self.dim = dim
        self._buf = np.empty((0, dim))
        self._pos = 0

    def _refill(self):
        self._buf = standard_draws(self.spec, self.rng, (BLOCK, self.dim))
        self._pos = 0

    def next(self):
        if self._pos >= len(self._buf):
            self._refill()
        row = self._buf[self._pos]
        self._pos += 1
        return row

    def take(self, k):
        """Next ``k`` rows; ``k`` must not straddle a block boundary unaligned."""
        if self._pos >= len(self._buf):
            self._refill()
        if self._pos + k > len(self._buf):
            raise ValueError("take() would straddle a noise block")
        rows = self._buf[self._pos:self._pos + k]
        self._pos += k
        return rows


def sample_noise(spec, x, rng):
    """One draw of ``M_{n+1}`` given the current iterate ``x``."""
    x = np.asarray(x, dtype=float)
    return spec.scale_at(x)[..., None] * standard_draws(spec, rng, x.shape)


def _draw_norms(spec, n_samples, seed, dim):
    if spec.is_zero:
        return np.zeros(n_samples)
    rng = rng_for(seed)
    # the largest admissible scale gives the most conservative moments
    return spec.s_max * vec_norm(standard_draws(spec, rng, (n_samples, dim)))


def _moment_ok(values):
    n = len(values)
    mean = float(np.mean(values))
    h1, h2 = float(np.mean(values[: n // 2])), float(np.mean(values[n // 2:]))
    if not (math.isfinite(mean) and math.isfinite(h1) and math.isfinite(h2)):
        return False, mean
    stable = abs(h1 - h2) <= HALF_SAMPLE_RTOL * min(h1, h2)
    finite = float(np.max(values)) <= MAX_TERM_FRACTION * float(np.sum(values))
    return stable and finite, mean


def calibrate_moment_constants(spec, n_samples, seed, dim=1):
    """Largest grid ``delta`` with a stable exponential moment, and ``C_M``.

    Returns
    -------
    (delta, C_M) : tuple of float
        ``C_M`` is the empirical ``E[exp(delta |M|)]`` times the safety factor.
    """
    if n_samples < 10_000:
        raise ConfigError("calibrate_moment_constants needs n_samples >= 1e4")
    norms = _draw_norms(spec, n_samples, seed, dim)
    with np.errstate(over="ignore"):
        for delta in DELTA_GRID:
            ok, mean = _moment_ok(np.exp(delta * norms))
            if ok:
                return delta, SAFETY_FACTOR * mean
    raise HeavyTailError(spec.family)


def exponential_moment_ok(samples):
    """True when some grid ``delta`` gives a stable, finite exponential moment."""
    norms = vec_norm(np.atleast_2d(np.asarray(samples, dtype=float)).reshape(len(samples), -1))
    with np.errstate(over="ignore"):
        return any(_moment_ok(np.exp(d * norms))[0] for d in DELTA_GRID)


@dataclass(frozen=True)
class MomentRow:
    family: str
    delta: float
    C_M: float
    m: int
    empirical: float
    bound: float

    @property
    def passed(self):
        return self.empirical <= self.bound


def check_moment_bounds(spec, delta, C_M, n_samples, seed, dim=1, orders=(2, 4)):
    """Compare empirical ``E|M|^m`` with ``C_M m! / delta^m``."""
    if delta <= 0 or C_M <= 0:
        raise ConfigError("delta and C_M must be positive")
    norms = _draw_norms(spec, n_samples, seed, dim)
    rows = []
    for m in orders:
        emp = float(np.mean(norms ** m))
        rows.append(MomentRow(spec.family, delta, C_M, m, emp, C_M * math.factorial(m) / delta ** m))
    return rows


@dataclass(frozen=True)
class TailCheck:
    u: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray

    @property
    def passed(self):
        return bool(np.all(self.empirical <= self.bound))


def check_tail(spec, delta, C_M, n_samples, seed, dim=1, u_grid=None):
    """Empirical ``P(|M| > u)`` against ``C_M exp(-delta u)`` for ``u >= v``.

    By Markov's inequality the calibrated pair gives ``c1 = C_M``, ``c2 = delta``.
    """
    norms = _draw_norms(spec, n_samples, seed, dim)
    v = spec.tail_threshold_v * spec.s_max if not spec.is_zero else spec.tail_threshold_v
    if u_grid is None:
        u_grid = np.linspace(v, v + 8.0 * max(spec.s_max, 1e-12), 17)
    u = np.asarray(u_grid, dtype=float)
    u = u[u >= v]
    emp = np.array([np.mean(norms > ui) for ui in u])
    return TailCheck(u, emp, C_M * np.exp(-delta * u))


def moment_rows_csv(rows):
    header = ["family", "delta", "C_M", "m", "empirical", "bound", "pass"]
    body = [[r.family, r.delta, r.C_M, r.m, r.empirical, r.bound, int(r.passed)] for r in rows]
    return header, body


# ---------------------------------------------------------------------------
# bounded perturbations


@dataclass(frozen=True)
class PerturbationSpec:
    eps_star: float = 0.0
    mode: str = "zero"

    def __post_init__(self):
        if self.eps_star < 0:
            raise ConfigError("eps_star must be nonnegative")
        if self.mode not in PERTURBATION_MODES:
            raise ConfigError(f"unknown perturbation mode {self.mode!r}")


def sample_perturbation(spec, n, d):
    """``eps_{n}`` for step index ``n``; always satisfies ``|eps| <= eps_star``."""
    if d < 1:
        raise ConfigError("dimension must be >= 1")
    out = np.zeros(d)
    if spec.mode == "zero" or spec.eps_star == 0:
        return out
    out[0] = spec.eps_star
    if spec.mode == "adversarial_sign" and n % 2:
        out[0] = -spec.eps_star
    return out


def perturbation_block(spec, n0, k, d):
    """Rows ``eps_{n0}, ..., eps_{n0+k-1}``."""
    out = np.zeros((k, d))
    if spec.mode == "zero" or spec.eps_star == 0:
        return out
    out[:, 0] = spec.eps_star
    if spec.mode == "adversarial_sign":
        odd = (np.arange(n0, n0 + k) % 2).astype(bool)
        out[odd, 0] = -spec.eps_star
    return out
