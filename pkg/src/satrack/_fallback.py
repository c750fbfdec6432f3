"""Pure numpy implementations of the hot kernels.

These work for any :class:`~satrack.model.TrackingModel` whose callables are
vectorised; the compiled core covers the built-in models only.
"""

import numpy as np

from .errors import DivergenceError

DIVERGENCE_RADIUS = 1e6


def sa_advance(model, x, y_blk, z_blk, draws, scale, scale_fn, pert_blk, a, k0, stats):
    """Advance replicas ``x`` (R, d) through ``len(y_blk)`` steps in place.

    ``stats[k]`` accumulates, over replicas, ``|x_k - z_k|^2``, ``|x_k|^2`` and
    ``|x_k|^4`` before the update of step ``k``.
    """
    for k in range(len(y_blk)):
        e = x - z_blk[k]
        sq = np.sum(x * x, axis=1)
        stats[k, 0] += np.sum(np.sum(e * e, axis=1))
        stats[k, 1] += np.sum(sq)
        stats[k, 2] += np.sum(sq * sq)
        if scale_fn is None:
            M = scale * draws[:, k, :]
        else:
            M = np.asarray(scale_fn(x), dtype=float)[:, None] * draws[:, k, :]
        x += a * (model.h(x, y_blk[k]) + M + pert_blk[k])
        nrm = np.sum(x * x, axis=1)
        bad = ~(nrm <= DIVERGENCE_RADIUS ** 2)
        if np.any(bad):
            raise DivergenceError(k0 + k + 1, int(np.argmax(bad)))


def _deriv(model, rate, w, y, P):
    g = model.gamma(y)
    dw = model.h(w, y)
    if rate:
        dw = dw + rate * np.einsum("...ij,...j->...i", model.grad_lambda(y), g)
    dP = np.einsum("...ij,...jk->...ik", model.jac_D(w, y), P)
    return dw, rate * g, dP


def _rk4(model, rate, w, y, P, dt):
    """One RK4 step of the coupled (w, y, Phi) system; ``dt`` may be per-node."""
    dt = np.asarray(dt, dtype=float)
    if dt.ndim:
        dtv, dtm = dt[:, None], dt[:, None, None]
    else:
        dtv = dtm = dt
    hv, hm = 0.5 * dtv, 0.5 * dtm
    k1 = _deriv(model, rate, w, y, P)
    k2 = _deriv(model, rate, w + hv * k1[0], y + hv * k1[1], P + hm * k1[2])
    k3 = _deriv(model, rate, w + hv * k2[0], y + hv * k2[1], P + hm * k2[2])
    k4 = _deriv(model, rate, w + dtv * k3[0], y + dtv * k3[1], P + dtm * k3[2])
    w = w + (dtv / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    y = y + (dtv / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    P = P + (dtm / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return w, y, P


def flow(model, rate, w0, y0, j0, th0, J, Th, h):
    """Propagate anchors to ``t = (J + Th) h`` on the grid of step ``h``.

    Node ``i`` starts at ``s_i = (j0[i] + th0[i]) h`` from ``(w0[i], y0[i])``
    with ``Phi = I``.  Returns ``(w, y, Phi)`` at the common end time.
    """
    B, d = w0.shape
    w = np.array(w0, dtype=float)
    y = np.array(y0, dtype=float)
    P = np.broadcast_to(np.eye(d), (B, d, d)).copy()
    j0 = np.asarray(j0, dtype=np.int64)
    th0 = np.asarray(th0, dtype=float)

    same = j0 == J
    if np.any(same):
        idx = np.nonzero(same)[0]
        dt = (Th - th0[idx]) * h
        mv = dt > 0
        if np.any(mv):
            sub = idx[mv]
            w[sub], y[sub], P[sub] = _rk4(model, rate, w[sub], y[sub], P[sub], dt[mv])

    rest = np.nonzero(~same)[0]
    if len(rest):
        part = rest[th0[rest] > 0]
        if len(part):
            dt = (1.0 - th0[part]) * h
            w[part], y[part], P[part] = _rk4(model, rate, w[part], y[part], P[part], dt)
        g = j0[rest] + (th0[rest] > 0)
        order = rest[np.argsort(g, kind="stable")]
        g_sorted = np.sort(g, kind="stable")
        ws, ys, Ps = w[order], y[order], P[order]
        start = int(g_sorted[0]) if len(g_sorted) else J
        for step in range(start, J):
            n_act = int(np.searchsorted(g_sorted, step, side="right"))
            ws[:n_act], ys[:n_act], Ps[:n_act] = _rk4(
                model, rate, ws[:n_act], ys[:n_act], Ps[:n_act], h
            )
        if Th > 0:
            ws, ys, Ps = _rk4(model, rate, ws, ys, Ps, Th * h)
        w[order], y[order], P[order] = ws, ys, Ps
    return w, y, P


def slow_path(model, rate, y0, n_steps, h):
    """RK4 samples of ``dy/dt = rate * gamma(y)`` at ``k h``, ``k = 0..n_steps``."""
    d = len(y0)
    out = np.empty((n_steps + 1, d))
    y = np.array(y0, dtype=float)
    out[0] = y
    if rate == 0.0:
        out[:] = y
        return out
    half = 0.5 * h
    for k in range(n_steps):
        k1 = rate * model.gamma(y)
        k2 = rate * model.gamma(y + half * k1)
        k3 = rate * model.gamma(y + half * k2)
        k4 = rate * model.gamma(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = y
    return out
