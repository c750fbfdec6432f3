"""Small dense linear-algebra helpers used by the bounds and stability code."""

import numpy as np

POWER_ITERATIONS = 50
POWER_TOL = 1e-10


def vec_norm(v):
    """Euclidean norm over the last axis."""
    return np.sqrt(np.sum(np.square(v), axis=-1))


def _start_vector(d):
    # irregular entries so the start is not orthogonal to common singular vectors
    v = 1.0 / (1.0 + 0.6180339887 * np.arange(d)) + 0.1 * np.sin(np.arange(1, d + 1))
    return v / np.linalg.norm(v)


def op_norm(A, iterations=POWER_ITERATIONS, tol=POWER_TOL):
    """Induced 2-norm of one matrix or a stack of matrices by power iteration.

    Parameters
    ----------
    A : array_like, shape (..., m, n)
    iterations : int
        Maximum number of iterations on ``A^T A``.
    tol : float
        Stop once the relative change of every estimate is below ``tol``.

    Returns
    -------
    ndarray or float
        Largest singular value(s), shape ``A.shape[:-2]``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2:
        raise ValueError("op_norm expects at least a 2-d array")
    n = A.shape[-1]
    if n == 1 or A.shape[-2] == 1:
        out = np.sqrt(np.sum(A * A, axis=(-2, -1)))
        return float(out) if out.ndim == 0 else out
    batch = A.shape[:-2]
    v = np.broadcast_to(_start_vector(n), batch + (n,)).copy()
    sigma = np.zeros(batch)
    for _ in range(iterations):
        Av = np.einsum("...ij,...j->...i", A, v)
        w = np.einsum("...ji,...j->...i", A, Av)
        wn = vec_norm(w)
        new_sigma = vec_norm(Av)
        zero = wn == 0.0
        v = np.where(zero[..., None], v, w / np.where(zero, 1.0, wn)[..., None])
        done = np.all(np.abs(new_sigma - sigma) <= tol * np.maximum(new_sigma, 1e-300))
        sigma = new_sigma
        if done:
            break
    sigma = vec_norm(np.einsum("...ij,...j->...i", A, v))
    return float(sigma) if sigma.ndim == 0 else sigma
