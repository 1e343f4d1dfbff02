"""Dense symmetric linear-algebra primitives.

All matrices are plain ``numpy`` arrays in double precision.  Symmetric
matrices are kept exactly symmetric (canonicalized from the upper triangle
or by transpose-averaging); SPD-ness is always established via Cholesky.
Everything here is a pure function, safe to call concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateColumn, DegenerateDenominator, NotPositiveDefinite

SYM_TOL = 1e-8


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def check_symmetric(a, tol: float = SYM_TOL) -> np.ndarray:
    """Validate near-symmetry and return the exactly symmetrized matrix."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix is not square: {a.shape}")
    if np.max(np.abs(a - a.T)) > tol:
        raise ValueError("matrix is not symmetric")
    return symmetrize(a)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Exactly symmetric copy: (A + A^T) / 2."""
    return (a + a.T) / 2.0


def cholesky(a) -> np.ndarray:
    """Lower-triangular L with L L^T = a.

    Raises NotPositiveDefinite when factorization hits a non-positive pivot.
    """
    a = check_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def inverse_spd(a) -> np.ndarray:
    """Inverse of an SPD matrix, returned exactly symmetric."""
    a = check_symmetric(a)
    cholesky(a)  # PD gate
    inv = np.linalg.solve(a, np.eye(a.shape[0]))
    return symmetrize(inv)


def log_det_spd(a) -> float:
    """log|a| for SPD a, via 2 * sum(log diag(chol(a)))."""
    ell = cholesky(a)
    return float(2.0 * np.sum(np.log(np.diag(ell))))


def standardize(x) -> np.ndarray:
    """Center each column and scale to unit variance (divisor n).

    Raises DegenerateColumn when a column is numerically constant.
    """
    x = as_matrix(x)
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"standardize needs at least 2 rows, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    std = np.sqrt(np.mean(centered**2, axis=0))
    floor = 1e-12 * np.maximum(1.0, np.abs(mean))
    bad = np.nonzero(std <= floor)[0]
    if bad.size:
        raise DegenerateColumn(f"column {int(bad[0])} has (near-)zero variance")
    return centered / std


def empirical_covariance(x) -> np.ndarray:
    """Sigma_hat = X^T X / n, exactly symmetric.

    For standardized input this is the empirical correlation matrix with a
    unit diagonal.
    """
    x = as_matrix(x)
    n = x.shape[0]
    return symmetrize(x.T @ x / n)


def partial_corr_from_precision(theta) -> np.ndarray:
    """Partial correlations rho(i,j) = -theta_ij / sqrt(theta_ii theta_jj).

    Diagonal is set to 1.  Requires theta SPD.
    """
    theta = check_symmetric(theta)
    cholesky(theta)
    d = np.sqrt(np.diag(theta))
    rho = -theta / np.outer(d, d)
    np.fill_diagonal(rho, 1.0)
    return symmetrize(rho)


def partial_corr_recursive(corr, i: int, j: int, z) -> float:
    """Partial correlation of (i, j) given index set ``z`` by recursion.

    Peels off the smallest index z0 of the conditioning set at every level:

        rho_{ij|Z} = (rho_{ij|Z'} - rho_{i z0|Z'} rho_{j z0|Z'}) / D,
        D = sqrt((1 - rho_{i z0|Z'}^2) (1 - rho_{j z0|Z'}^2)),  Z' = Z \\ {z0}

    Subproblems are memoized, so the cost is polynomial in the number of
    distinct (pair, subset) states rather than the naive 3^|Z|.
    """
    corr = check_symmetric(corr)
    z = frozenset(int(k) for k in z)
    i, j = int(i), int(j)
    if i == j:
        raise ValueError("i and j must differ")
    if i in z or j in z:
        raise ValueError("i and j must not be in the conditioning set")
    memo: dict = {}

    def rec(a: int, b: int, cond: frozenset) -> float:
        if a > b:
            a, b = b, a
        key = (a, b, cond)
        if key in memo:
            return memo[key]
        if not cond:
            val = float(corr[a, b])
        else:
            z0 = min(cond)
            rest = cond - {z0}
            r_ab = rec(a, b, rest)
            r_az = rec(a, z0, rest)
            r_bz = rec(b, z0, rest)
            denom_sq = (1.0 - r_az * r_az) * (1.0 - r_bz * r_bz)
            denom = np.sqrt(max(denom_sq, 0.0))
            if denom <= 1e-12:
                raise DegenerateDenominator(
                    f"denominator {denom:.3e} while conditioning on {z0}"
                )
            val = (r_ab - r_az * r_bz) / denom
        memo[key] = val
        return val

    return rec(i, j, z)
