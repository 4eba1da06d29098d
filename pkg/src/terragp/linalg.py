"""Cholesky factorization with the shared jitter-escalation policy."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cholesky, cho_solve, solve_triangular

from .errors import IllConditionedKernelError

JITTER_START = 1e-8
JITTER_CEILING = 1e-3


def chol_with_jitter(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of `mat`, adding the smallest jitter that works.

    Tries jitter 0 first, then 1e-8 escalating by 10x up to 1e-3; past
    the ceiling an IllConditionedKernelError is raised.
    """
    if not np.all(np.isfinite(mat)):
        raise IllConditionedKernelError("matrix contains non-finite values")
    jitter = 0.0
    while True:
        try:
            shifted = mat if jitter == 0.0 else mat + jitter * np.eye(mat.shape[0])
            return cholesky(shifted, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_CEILING * (1.0 + 1e-12):
                raise IllConditionedKernelError(
                    f"Cholesky failed at jitter ceiling {JITTER_CEILING:g}"
                ) from None


def chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b given the lower factor."""
    return cho_solve((L, True), b)


def tri_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b for lower-triangular L."""
    return solve_triangular(L, b, lower=True)
