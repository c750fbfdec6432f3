"""Backend selection for the hot kernels.

The compiled core (``satrack._core``) is used for built-in models when it
imported successfully; anything else goes through the numpy fallback.  Set
``SATRACK_PURE=1`` in the environment to force the fallback everywhere.
"""

import os

import numpy as np

from . import _fallback
from .errors import DivergenceError

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

HAVE_COMPILED = _core is not None
BACKEND = "compiled" if HAVE_COMPILED and not os.environ.get("SATRACK_PURE") else "python"


def _use_core(model, backend):
    backend = BACKEND if backend is None else backend
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "compiled" and not HAVE_COMPILED:
        raise RuntimeError("compiled backend requested but satrack._core is not built")
    return backend == "compiled" and model.kernel is not None


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def sa_advance(model, x, y_blk, z_blk, draws, scale, scale_fn, pert_blk, a, k0, stats,
               backend=None):
    if scale_fn is None and _use_core(model, backend):
        bad_k, bad_r = _core.sa_advance(
            model.kernel.code, _c(model.kernel.gain), x, _c(y_blk), _c(z_blk), _c(draws),
            float(scale), _c(pert_blk), float(a), stats,
        )
        if bad_k >= 0:
            raise DivergenceError(k0 + bad_k, int(bad_r))
        return
    _fallback.sa_advance(model, x, y_blk, z_blk, draws, scale, scale_fn, pert_blk, a, k0, stats)


def flow(model, rate, w0, y0, j0, th0, J, Th, h, backend=None):
    """Propagate anchors of the coupled (w, y, Phi) system; see ``_fallback.flow``."""
    w0, y0 = _c(np.atleast_2d(w0)), _c(np.atleast_2d(y0))
    j0 = np.ascontiguousarray(j0, dtype=np.int64)
    th0 = _c(th0)
    if np.any(j0 > J) or np.any((j0 == J) & (th0 > Th)):
        raise ValueError("flow start after end time")
    if _use_core(model, backend):
        k = model.kernel
        return _core.flow(k.code, _c(k.gain), _c(k.gamma_matrix), _c(k.gamma_vector),
                          float(rate), w0, y0, j0, th0, int(J), float(Th), float(h))
    return _fallback.flow(model, rate, w0, y0, j0, th0, int(J), float(Th), float(h))


def slow_path(model, rate, y0, n_steps, h, backend=None):
    y0 = _c(y0)
    if _use_core(model, backend):
        k = model.kernel
        return _core.slow_path(k.code, _c(k.gamma_matrix), _c(k.gamma_vector), float(rate),
                               y0, int(n_steps), float(h))
    return _fallback.slow_path(model, rate, y0, int(n_steps), float(h))
