"""Dense matrix kernels and dominant-eigenvector extraction.

The attack needs one spectral quantity: the dominant eigenpair of the Gram
matrix Z Z^T of an embedding matrix Z.  Power iteration in the factored form
v -> Z (Z^T v) gives it without materializing the N x N Gram when Z is tall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 1000

# Fixed seed for the orthogonal-start escape jitter; a library constant so
# results stay reproducible without threading a seed through every call.
_JITTER_SEED = 0x5EED


class DegenerateEmbeddingError(ValueError):
    """Raised when the embedding matrix is all-zero: no dominant direction."""


@dataclass(frozen=True)
class EigenResult:
    """Dominant eigenpair of a positive semidefinite matrix.

    ``vector`` has unit 2-norm; ``value`` is the eigenvalue (>= 0 for Gram
    matrices).  ``converged`` is False when the residual test
    ||G u - value u|| <= tol * value was not met within max_iter.
    """

    vector: np.ndarray
    value: float
    iterations: int
    converged: bool


def frobenius_norm(m) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.linalg.norm(np.asarray(m, dtype=float)))


def _power_iteration(matvec, n: int, tol: float, max_iter: int) -> EigenResult:
    rng = np.random.default_rng(_JITTER_SEED)
    x = np.full(n, 1.0 / np.sqrt(n))
    # One jittered restart is forced before accepting convergence: a start
    # vector exactly orthogonal to the dominant eigenspace would otherwise
    # settle on a sub-dominant pair and pass the residual test.
    jittered = False
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = matvec(x)
        lam = float(x @ y)
        residual = float(np.linalg.norm(y - lam * x))
        if lam > 0 and residual <= tol * lam:
            if jittered:
                return EigenResult(x, lam, it, True)
            x = x + 1e-6 * rng.standard_normal(n)
            x = x / np.linalg.norm(x)
            jittered = True
            continue
        norm_y = float(np.linalg.norm(y))
        if norm_y == 0.0:
            # x sits in the nullspace; restart off it.
            x = x + 1e-6 * rng.standard_normal(n)
            x = x / np.linalg.norm(x)
            jittered = True
            continue
        x = y / norm_y
    return EigenResult(x, lam, max_iter, False)


def dominant_eigenvector_gram(z, tol: float = DEFAULT_TOL,
                              max_iter: int = DEFAULT_MAX_ITER) -> EigenResult:
    """Dominant eigenpair of Z Z^T via power iteration.

    Uses the factored product Z (Z^T v) whenever Z has fewer columns than
    rows, so the N x N Gram matrix is never formed in that case.  The sign
    of the returned vector is arbitrary; align it downstream if needed.

    Raises :class:`DegenerateEmbeddingError` for an all-zero Z.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError("embedding matrix must be 2-D")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.any(z):
        raise DegenerateEmbeddingError(
            "embedding matrix is all-zero; dominant eigenvector undefined"
        )
    n, d = z.shape
    if d < n:
        matvec = lambda v: z @ (z.T @ v)
    else:
        gram = z @ z.T
        matvec = lambda v: gram @ v
    result = _power_iteration(matvec, n, tol, max_iter)
    return EigenResult(result.vector, max(result.value, 0.0),
                       result.iterations, result.converged)


def dominant_eigenvector_symmetric(g, tol: float = DEFAULT_TOL,
                                   max_iter: int = DEFAULT_MAX_ITER) -> EigenResult:
    """Dominant eigenpair of an explicit symmetric matrix via power iteration."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("matrix must be square")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.any(g):
        raise DegenerateEmbeddingError("matrix is all-zero")
    return _power_iteration(lambda v: g @ v, g.shape[0], tol, max_iter)
