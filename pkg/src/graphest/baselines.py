"""Classical penalized-likelihood and shrinkage estimators.

``graphical_lasso`` is a block coordinate-descent solver for the
l1-penalized Gaussian maximum-likelihood precision estimator (penalty on
all entries, diagonal included).  Convergence is declared on the KKT
residual of the assembled precision matrix, not just on parameter change,
so the returned iterate carries a checkable stationarity certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

try:
    from numba import njit
except ImportError:  # pure-Python fallback, same semantics but slower
    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap

from .errors import InfeasibleSupport, NotConverged, NotPositiveDefinite
from .linalg import (
    check_symmetric,
    cholesky,
    empirical_covariance,
    inverse_spd,
    log_det_spd,
    partial_corr_from_precision,
    standardize,
    symmetrize,
)


@dataclass
class GlassoResult:
    theta: np.ndarray
    lam: float
    iterations: int
    converged: bool


@njit(cache=True)
def _cd_sweeps(w11, s12, lam, beta, q, tol, max_sweeps):
    """Gauss-Seidel coordinate descent on 0.5 b'W11 b - s12'b + lam |b|_1.

    Mutates beta and the cached product q = W11 @ beta in place.
    """
    m = beta.size
    for _ in range(max_sweeps):
        max_delta = 0.0
        for i in range(m):
            bi = beta[i]
            r = s12[i] - q[i] + w11[i, i] * bi
            if r > lam:
                bn = (r - lam) / w11[i, i]
            elif r < -lam:
                bn = (r + lam) / w11[i, i]
            else:
                bn = 0.0
            delta = bn - bi
            if delta != 0.0:
                beta[i] = bn
                for k in range(m):
                    q[k] += delta * w11[k, i]
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if max_delta <= tol:
            break


def _lasso_column(w11: np.ndarray, s12: np.ndarray, lam: float,
                  beta: np.ndarray, tol: float = 1e-9,
                  max_sweeps: int = 1000) -> np.ndarray:
    """Warm-started lasso subproblem solve; returns q = W11 @ beta."""
    q = w11 @ beta
    _cd_sweeps(np.ascontiguousarray(w11), np.ascontiguousarray(s12),
               lam, beta, q, tol, max_sweeps)
    return q


def kkt_residual(theta: np.ndarray, sigma: np.ndarray, lam: float) -> float:
    """Max violation of the stationarity conditions of the penalized MLE.

    On the support (and the diagonal): (Theta^-1 - Sigma)_ij = lam*sign(theta_ij);
    off the support: |(Theta^-1 - Sigma)_ij| <= lam.
    """
    r = np.linalg.inv(theta) - sigma
    support = np.abs(theta) > 1e-12
    resid = 0.0
    if support.any():
        resid = float(np.max(np.abs(r[support] - lam * np.sign(theta[support]))))
    off = ~support
    if off.any():
        excess = np.max(np.abs(r[off])) - lam
        resid = max(resid, float(max(excess, 0.0)))
    return resid


def graphical_lasso(sigma, lam: float, tol: float = 1e-5, max_iter: int = 200,
                    init: Optional[Tuple[np.ndarray, np.ndarray]] = None
                    ) -> GlassoResult:
    """Block coordinate descent for the l1-penalized precision estimator.

    Cycles over columns, solving each conditional lasso subproblem by
    coordinate descent on the working covariance W (diagonal fixed at
    sigma_ii + lam).  Stops when both the parameter change and the KKT
    residual fall below ``tol``; otherwise returns the best iterate with
    ``converged=False``.  ``init`` may carry (W, Beta) from a previous
    solve for warm starts along a regularization path.
    """
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if np.any(np.diag(sigma) <= 0):
        raise ValueError("covariance diagonal must be positive")
    if lam == 0.0:
        theta = inverse_spd(sigma)  # raises NotPositiveDefinite when singular
        return GlassoResult(theta=theta, lam=0.0, iterations=0, converged=True)

    if init is not None:
        w = init[0].copy()
        betas = init[1].copy()
    else:
        w = sigma.copy()
        betas = np.zeros((p, p))
    np.fill_diagonal(w, np.diag(sigma) + lam)

    mask = ~np.eye(p, dtype=bool)
    theta = np.eye(p)
    it = 0
    for it in range(1, max_iter + 1):
        w_old = w.copy()
        for j in range(p):
            idx = np.concatenate([np.arange(j), np.arange(j + 1, p)])
            w11 = w[np.ix_(idx, idx)]
            s12 = sigma[idx, j]
            beta = betas[idx, j]
            w12 = _lasso_column(w11, s12, lam, beta)
            betas[idx, j] = beta
            w[idx, j] = w12
            w[j, idx] = w12
        max_delta = float(np.max(np.abs(w - w_old)))
        if max_delta <= tol:
            theta = _assemble_precision(sigma, w, betas)
            if kkt_residual(theta, sigma, lam) <= tol:
                return GlassoResult(theta=theta, lam=lam, iterations=it,
                                    converged=True)
    theta = _assemble_precision(sigma, w, betas)
    return GlassoResult(theta=theta, lam=lam, iterations=it, converged=False)


def _assemble_precision(sigma: np.ndarray, w: np.ndarray,
                        betas: np.ndarray) -> np.ndarray:
    p = sigma.shape[0]
    theta = np.zeros((p, p))
    for j in range(p):
        idx = np.concatenate([np.arange(j), np.arange(j + 1, p)])
        beta = betas[idx, j]
        denom = w[j, j] - float(w[idx, j] @ beta)
        theta[j, j] = 1.0 / denom
        theta[idx, j] = -theta[j, j] * beta
    return symmetrize(theta)


def lambda_grid(sigma: np.ndarray, n_points: int = 20,
                span: Tuple[float, float] = (0.01, 1.0)) -> np.ndarray:
    """Log-spaced grid scaled by the largest off-diagonal covariance magnitude."""
    p = sigma.shape[0]
    off = np.abs(sigma[~np.eye(p, dtype=bool)])
    lam_max = float(off.max()) if off.size else 1.0
    if lam_max <= 0:
        lam_max = 1.0
    return np.geomspace(span[0] * lam_max, span[1] * lam_max, n_points)


def glasso_path(sigma: np.ndarray, grid: Sequence[float], tol: float = 1e-5,
                max_iter: int = 200) -> List[GlassoResult]:
    """Solve the penalized problem along a descending-lambda path, warm-started."""
    order = np.argsort(grid)[::-1]
    results: List[Optional[GlassoResult]] = [None] * len(grid)
    init = None
    p = sigma.shape[0]
    betas = np.zeros((p, p))
    w = None
    for pos in order:
        lam = float(grid[pos])
        res = graphical_lasso(sigma, lam, tol=tol, max_iter=max_iter,
                              init=None if w is None else (w, betas))
        results[pos] = res
        w = np.linalg.inv(res.theta)
        betas = _betas_from_precision(res.theta)
    return results  # type: ignore[return-value]


def _betas_from_precision(theta: np.ndarray) -> np.ndarray:
    p = theta.shape[0]
    betas = np.zeros((p, p))
    for j in range(p):
        idx = np.concatenate([np.arange(j), np.arange(j + 1, p)])
        betas[idx, j] = -theta[idx, j] / theta[j, j]
    return betas


def holdout_loglik(theta, test: np.ndarray) -> float:
    """Average Gaussian log-likelihood of mean-zero rows under precision theta."""
    theta = check_symmetric(theta)
    test = np.asarray(test, dtype=np.float64)
    p = theta.shape[0]
    logdet = log_det_spd(theta)
    quad = float(np.mean(np.einsum("ij,jk,ik->i", test, theta, test)))
    return 0.5 * logdet - 0.5 * quad - 0.5 * p * math.log(2.0 * math.pi)


def graphical_lasso_cv(data: np.ndarray, folds: int = 5,
                       grid: Optional[Sequence[float]] = None,
                       tol: float = 1e-5, max_iter: int = 200,
                       n_grid: int = 20) -> GlassoResult:
    """Pick lambda by K-fold held-out likelihood, then refit on all data.

    The data matrix is standardized once; folds are contiguous blocks of
    rows, so the procedure is deterministic.
    """
    x = standardize(np.asarray(data, dtype=np.float64))
    n, p = x.shape
    if folds < 2 or folds > n:
        raise ValueError(f"folds must be in [2, n], got {folds}")
    sigma_full = empirical_covariance(x)
    if grid is None:
        grid = lambda_grid(sigma_full, n_points=n_grid)
    grid = np.asarray(list(grid), dtype=np.float64)
    if grid.size == 0:
        raise ValueError("lambda grid must be non-empty")

    bounds = np.linspace(0, n, folds + 1).astype(int)
    scores = np.zeros(grid.size)
    for f in range(folds):
        test_rows = np.arange(bounds[f], bounds[f + 1])
        train_rows = np.setdiff1d(np.arange(n), test_rows)
        sigma_tr = empirical_covariance(x[train_rows])
        path = glasso_path(sigma_tr, grid, tol=tol, max_iter=max_iter)
        for g, res in enumerate(path):
            scores[g] += holdout_loglik(res.theta, x[test_rows])
    best = int(np.argmax(scores))
    final = graphical_lasso(sigma_full, float(grid[best]), tol=tol,
                            max_iter=max_iter)
    return final


def glasso_edge_scores(result: GlassoResult) -> np.ndarray:
    """Edge confidences: |partial correlation| of the estimated precision."""
    scores = np.abs(partial_corr_from_precision(result.theta))
    np.fill_diagonal(scores, 0.0)
    return scores


def threshold_partial_corr(sigma, ridge: Optional[float] = None) -> np.ndarray:
    """|partial correlation| scores from (a ridge-stabilized) inverse covariance.

    The ridge (default 1e-3 * tr(Sigma)/p) is applied only when the input is
    singular or near-singular (smallest Cholesky pivot below 1e-8).
    """
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    needs_ridge = True
    try:
        ell = np.linalg.cholesky(sigma)
        needs_ridge = bool(np.min(np.diag(ell)) < 1e-8)
    except np.linalg.LinAlgError:
        needs_ridge = True
    work = sigma
    if needs_ridge:
        if ridge is None:
            ridge = 1e-3 * float(np.trace(sigma)) / p
        work = sigma + ridge * np.eye(p)
    theta = inverse_spd(work)
    scores = np.abs(partial_corr_from_precision(theta))
    np.fill_diagonal(scores, 0.0)
    return scores


def ledoit_wolf(data: np.ndarray) -> Tuple[np.ndarray, float]:
    """Shrinkage covariance (1-s) * S + s * (tr(S)/p) * I with the optimal s.

    Returns (shrunk covariance, shrinkage in [0, 1]).
    """
    x = np.asarray(data, dtype=np.float64)
    n, p = x.shape
    if n < 2:
        raise ValueError("need at least two samples")
    x = x - x.mean(axis=0)
    s = symmetrize(x.T @ x / n)
    mu = float(np.trace(s)) / p
    delta = float(np.sum((s - mu * np.eye(p)) ** 2)) / p
    if delta <= 0.0:
        return mu * np.eye(p), 0.0
    norms4 = float(np.sum((x**2).sum(axis=1) ** 2))
    beta_bar = (norms4 - n * float(np.sum(s**2))) / (n**2 * p)
    beta = min(beta_bar, delta)
    shrink = max(0.0, min(1.0, beta / delta))
    return shrink * mu * np.eye(p) + (1.0 - shrink) * s, shrink


def ml_precision_given_support(sigma, support, tol: float = 1e-6,
                               max_iter: int = 2000) -> np.ndarray:
    """ML precision constrained to a support, by iterative proportional scaling.

    Cycles over the support pairs and the diagonal singletons, each step
    adjusting the corresponding block of Theta so the implied covariance
    matches sigma there; off-support entries stay exactly zero.  The inverse
    is maintained by rank-1/2 Woodbury updates and refreshed exactly once per
    sweep.  Convergence is on the moment residual max |(Theta^-1 - sigma)|
    over support and diagonal.
    """
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    pairs = sorted({(min(i, j), max(i, j)) for i, j in support})
    for i, j in pairs:
        if not (0 <= i < j < p):
            raise ValueError(f"invalid support pair ({i}, {j})")
    if np.any(np.diag(sigma) <= 0):
        raise InfeasibleSupport("covariance has a non-positive diagonal entry")
    for i, j in pairs:
        det = sigma[i, i] * sigma[j, j] - sigma[i, j] ** 2
        if det <= 0:
            raise InfeasibleSupport(f"singular 2x2 marginal for pair ({i}, {j})")

    theta = np.diag(1.0 / np.diag(sigma))
    w = np.diag(np.diag(sigma)).astype(np.float64)
    cells = sorted(pairs + [(i, i) for i in range(p)])
    eye2 = np.eye(2)
    for _ in range(max_iter):
        for i, j in cells:
            if i == j:
                d1 = 1.0 / sigma[i, i] - 1.0 / w[i, i]
                if d1 == 0.0:
                    continue
                theta[i, i] += d1
                wi = w[:, i].copy()
                w -= np.outer(wi, wi) * (d1 / (1.0 + d1 * w[i, i]))
            else:
                b = np.array([[sigma[i, i], sigma[i, j]],
                              [sigma[i, j], sigma[j, j]]])
                m = np.array([[w[i, i], w[i, j]], [w[i, j], w[j, j]]])
                try:
                    delta = np.linalg.inv(b) - np.linalg.inv(m)
                except np.linalg.LinAlgError as exc:
                    raise InfeasibleSupport(str(exc)) from exc
                theta[i, i] += delta[0, 0]
                theta[j, j] += delta[1, 1]
                theta[i, j] += delta[0, 1]
                theta[j, i] += delta[0, 1]
                k = w[:, [i, j]].copy()
                t2 = eye2 + delta @ m
                w -= k @ (np.linalg.solve(t2, delta) @ k.T)
        theta = symmetrize(theta)
        try:
            w = inverse_spd(theta)
        except NotPositiveDefinite as exc:
            raise InfeasibleSupport(
                "iteration left the positive-definite cone") from exc
        resid = max(
            float(np.max(np.abs(np.diag(w) - np.diag(sigma)))),
            max((abs(w[i, j] - sigma[i, j]) for i, j in pairs), default=0.0),
        )
        if resid <= tol:
            return theta
    raise NotConverged(
        f"IPS residual {resid:.3e} > tol {tol:.1e} after {max_iter} sweeps")
