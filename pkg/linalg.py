"""
Dense matrix primitives behind Cholesky whitening.

All functions are pure: inputs are never modified and no state is kept, so
they can be called from any number of threads. Whitening runs in float64
regardless of the caller's dtype.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

import config
from exceptions import ConfigError, FactorizationError, ShapeError


@dataclass(frozen=True)
class WhiteningStats:
    """Per-batch whitening statistics: mean, covariance, Cholesky factor, W = L^-1"""
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray
    w: np.ndarray
    ridge_used: float

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def _as_matrix(V, name: str = "V") -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {V.shape}")
    return V


def mean_rows(V) -> np.ndarray:
    """
    Column means of a K x k batch.

    Raises:
        ShapeError: if the batch has no rows
    """
    V = _as_matrix(V)
    if V.shape[0] == 0:
        raise ShapeError("mean_rows of an empty matrix")
    return V.mean(axis=0)


def covariance(V, mu) -> np.ndarray:
    """
    Unbiased covariance (1/(K-1) normalization) of a K x k batch around mu.

    Raises:
        ShapeError: if K < 2 or mu does not match the column count
    """
    V = _as_matrix(V)
    mu = np.asarray(mu, dtype=np.float64)
    K, k = V.shape
    if K < 2:
        raise ShapeError(f"covariance needs at least 2 rows, got {K}")
    if mu.shape != (k,):
        raise ShapeError(f"mu has shape {mu.shape}, expected ({k},)")
    centered = V - mu
    sigma = centered.T @ centered / (K - 1)
    return 0.5 * (sigma + sigma.T)


def default_ridge(sigma) -> float:
    """Relative ridge: a small fraction of the mean variance."""
    return float(config.RELATIVE_RIDGE * np.mean(np.diag(sigma)))


def cholesky(S, ridge: float = 0.0) -> np.ndarray:
    """
    Lower Cholesky factor L of (S + S^T)/2 + ridge*I.

    Args:
        S: k x k (near-)symmetric matrix
        ridge: non-negative value added to the diagonal before factorization

    Returns:
        Lower-triangular L with positive diagonal

    Raises:
        FactorizationError: with the 0-based index of the first non-positive pivot
    """
    S = _as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {S.shape}")
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    if not np.all(np.isfinite(S)):
        raise FactorizationError(-1, "matrix has non-finite entries")
    A = 0.5 * (S + S.T) + ridge * np.eye(S.shape[0])
    chol, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(info - 1)
    if info < 0:
        raise ShapeError(f"dpotrf rejected argument {-info}")
    return chol


def lower_tri_inverse(L) -> np.ndarray:
    """
    Inverse of a lower-triangular matrix by forward substitution.

    Raises:
        FactorizationError: if a diagonal entry is zero
    """
    L = _as_matrix(L, "L")
    if L.shape[0] != L.shape[1]:
        raise ShapeError(f"lower_tri_inverse needs a square matrix, got {L.shape}")
    diag = np.diag(L)
    zero = np.flatnonzero(diag == 0)
    if zero.size:
        raise FactorizationError(int(zero[0]), f"zero diagonal entry at {int(zero[0])}")
    W = solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return np.tril(W)


def whitening_stats(V, ridge=None) -> WhiteningStats:
    """Compute mu, sigma, L and W for a K x k batch."""
    V = _as_matrix(V)
    mu = mean_rows(V)
    sigma = covariance(V, mu)
    ridge_used = default_ridge(sigma) if ridge is None else float(ridge)
    chol = cholesky(sigma, ridge_used)
    w = lower_tri_inverse(chol)
    return WhiteningStats(mu=mu, sigma=sigma, chol=chol, w=w, ridge_used=ridge_used)


def whiten_batch(V, ridge=None):
    """
    Whiten a K x k batch: z_i = W (v_i - mu).

    Args:
        V: batch with one sample per row
        ridge: absolute ridge, or None for the relative default

    Returns:
        (Z, stats) with Z in the dtype of V (float64 computation inside)
    """
    V_in = np.asarray(V)
    stats = whitening_stats(V_in, ridge)
    Z = (np.asarray(V_in, dtype=np.float64) - stats.mu) @ stats.w.T
    out_dtype = V_in.dtype if np.issubdtype(V_in.dtype, np.floating) else np.float64
    return Z.astype(out_dtype, copy=False), stats
