"""Synthetic generators for sparse graphs, precision matrices, and data.

Two structurally independent precision samplers are provided: the
training-side Cholesky-product construction (``sample_sparse_precision``)
and a test-side Erdos-Renyi sampler with diagonally dominant weights
(``sample_er_substitute``), so that evaluation data never shares a code
path with training data.  A Watts-Strogatz small-world family covers
structured sparsity, and a Gaussian scale-mixture gives heavy-tailed
(multivariate Laplace) observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .errors import CalibrationFailed, DegenerateColumn
from .linalg import (
    cholesky,
    empirical_covariance,
    partial_corr_from_precision,
    standardize,
    symmetrize,
)
from .rng import derive_rng

SUPPORT_EPS = 1e-10
FAMILIES = ("uniform-sparse", "small-world", "er-substitute",
            "gram-substitute", "laplace")


def edge_count(p: int) -> int:
    return p * (p - 1) // 2


def edge_index_pairs(p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Canonical edge order: upper triangle, row-major (i < j)."""
    return np.triu_indices(p, 1)


@dataclass(frozen=True)
class GraphSample:
    p: int
    edges: frozenset  # of (i, j) pairs with i < j

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < j < self.p):
                raise ValueError(f"invalid edge ({i}, {j}) for p={self.p}")

    def indicator_vector(self) -> np.ndarray:
        iu, ju = edge_index_pairs(self.p)
        out = np.zeros(iu.size, dtype=np.uint8)
        if self.edges:
            lookup = {(i, j) for i, j in self.edges}
            for e, (i, j) in enumerate(zip(iu, ju)):
                if (int(i), int(j)) in lookup:
                    out[e] = 1
        return out

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.p, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


@dataclass(frozen=True)
class PrecisionSample:
    theta: np.ndarray           # p x p SPD
    graph: GraphSample
    soft_labels: np.ndarray     # p x p, |partial correlation|, zero diagonal

    @property
    def p(self) -> int:
        return self.graph.p

    def y_binary(self) -> np.ndarray:
        iu, ju = edge_index_pairs(self.p)
        return (np.abs(self.theta[iu, ju]) > SUPPORT_EPS).astype(np.uint8)

    def y_soft(self) -> np.ndarray:
        iu, ju = edge_index_pairs(self.p)
        return self.soft_labels[iu, ju].copy()


@dataclass(frozen=True)
class TrainingExample:
    sigma_hat: np.ndarray   # p x p, unit diagonal (standardized data)
    y_binary: np.ndarray    # N_e
    y_soft: np.ndarray      # N_e, in [0, 1]


@dataclass(frozen=True)
class GeneratorConfig:
    p: int
    n: int
    family: str = "uniform-sparse"
    alpha: float = 0.85           # zero probability in the Cholesky factor
    c: float = 1.5                # weight bound; 1.5 makes |partial corr| span ~[0, 0.87]
    edge_prob: float = 0.05       # ER / small-world-free edge probability
    sw_neighbors: int = 4         # ring-lattice degree k (even)
    sw_rewire: float = 0.25       # Watts-Strogatz rewiring probability
    weight_law: str = "uniform"   # "uniform" or "bimodal" edge-weight magnitudes
    strong_frac: float = 0.3      # bimodal: probability an edge is strong
    strong_lo: float = 0.4        # bimodal: strong band is [strong_lo*c, c]
    weak_hi: float = 0.03         # bimodal: weak band is [0, weak_hi*c]
    c_spread: float = 1.0         # per-graph scale: c drawn from c*[c_spread, 1]
    scale_mix_weak: float = 0.0   # two-point scale mixture: weak scale as a
    scale_mix_prob: float = 0.5   # fraction of c; probability of the strong point
    gram_cols: int = 20           # gram-substitute: factor columns m
    gram_density: float = 0.05    # gram-substitute: factor entry density
    gram_ridge: float = 0.3       # gram-substitute: ridge added to B B^T
    draws_per_theta: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.weight_law not in ("uniform", "bimodal"):
            raise ValueError(f"unknown weight_law {self.weight_law!r}")
        if not 0.0 < self.c_spread <= 1.0:
            raise ValueError("c_spread must be in (0, 1]")
        if self.draws_per_theta < 1:
            raise ValueError("draws_per_theta must be >= 1")

    def draw_scale(self, rng: np.random.Generator) -> float:
        """Per-graph weight scale.

        Default is the fixed bound c.  ``c_spread`` < 1 draws log-uniformly
        from c*[c_spread, 1] (a smooth mix of signal strengths);
        ``scale_mix_weak`` > 0 instead draws a two-point mixture: c with
        probability ``scale_mix_prob``, else ``scale_mix_weak``*c.  Exactly
        one uniform variate is consumed either way, keeping streams aligned.
        """
        if self.scale_mix_weak > 0.0:
            strong = rng.random() < self.scale_mix_prob
            return self.c if strong else self.scale_mix_weak * self.c
        if self.c_spread >= 1.0:
            return self.c
        lo, hi = np.log(self.c * self.c_spread), np.log(self.c)
        return float(np.exp(rng.uniform(lo, hi)))


def _graph_from_support(theta: np.ndarray) -> GraphSample:
    p = theta.shape[0]
    iu, ju = edge_index_pairs(p)
    mask = np.abs(theta[iu, ju]) > SUPPORT_EPS
    edges = frozenset((int(i), int(j)) for i, j in zip(iu[mask], ju[mask]))
    return GraphSample(p=p, edges=edges)


def _finish_sample(theta: np.ndarray) -> PrecisionSample:
    theta = symmetrize(theta)
    soft = np.abs(partial_corr_from_precision(theta))
    np.fill_diagonal(soft, 0.0)
    soft[soft <= SUPPORT_EPS] = 0.0
    return PrecisionSample(theta=theta, graph=_graph_from_support(theta), soft_labels=soft)


def sample_sparse_precision(cfg: GeneratorConfig, rng: np.random.Generator) -> PrecisionSample:
    """Theta = L L^T with L unit-diagonal lower triangular, sparse at rate alpha.

    Strictly-lower entries of L are zero with probability alpha, otherwise
    Uniform(-c, c).  The product is positive definite by construction; the
    graph is the numeric support of Theta (fill-in cancellations count as
    absent edges).
    """
    p = cfg.p
    c_eff = cfg.draw_scale(rng)
    ell = np.eye(p)
    il, jl = np.tril_indices(p, -1)
    keep = rng.random(il.size) >= cfg.alpha
    vals = rng.uniform(-c_eff, c_eff, size=il.size)
    ell[il[keep], jl[keep]] = vals[keep]
    return _finish_sample(ell @ ell.T)


def theta_sparsity(theta: np.ndarray) -> float:
    """Fraction of zero off-diagonal cells (both triangles)."""
    p = theta.shape[0]
    iu, ju = edge_index_pairs(p)
    zeros = int(np.sum(np.abs(theta[iu, ju]) <= SUPPORT_EPS))
    return zeros / edge_count(p)


def calibrate_alpha(p: int, target_sparsity: float, rng: np.random.Generator,
                    draws: int = 100, c: float = 1.5, tol: float = 0.01,
                    max_iter: int = 40) -> float:
    """Bisect alpha so the mean off-diagonal sparsity of Theta hits the target.

    Sparsity of Theta = L L^T is monotone in alpha but not equal to it
    because the product fills in; this recovers the unstated alpha behind a
    stated sparsity band.
    """
    if not 0.5 < target_sparsity < 1.0:
        raise ValueError("target_sparsity must be in (0.5, 1)")

    def mean_sparsity(alpha: float, rho: np.random.Generator) -> float:
        cfg = GeneratorConfig(p=p, n=2, family="uniform-sparse", alpha=alpha, c=c)
        return float(np.mean([theta_sparsity(sample_sparse_precision(cfg, rho).theta)
                              for _ in range(draws)]))

    lo, hi = 0.01, 0.999
    seeds = rng.integers(0, 2**63, size=max_iter + 2)
    f_lo = mean_sparsity(lo, np.random.default_rng(seeds[0]))
    f_hi = mean_sparsity(hi, np.random.default_rng(seeds[1]))
    if not f_lo <= target_sparsity <= f_hi:
        raise CalibrationFailed(
            f"target {target_sparsity} outside achievable range "
            f"[{f_lo:.3f}, {f_hi:.3f}] for p={p}")
    for it in range(max_iter):
        mid = (lo + hi) / 2.0
        f_mid = mean_sparsity(mid, np.random.default_rng(seeds[it + 2]))
        if abs(f_mid - target_sparsity) <= tol:
            return mid
        if f_mid < target_sparsity:
            lo = mid
        else:
            hi = mid
    raise CalibrationFailed(
        f"bisection did not reach +-{tol} of {target_sparsity} in {max_iter} steps")


def _watts_strogatz_edges(p: int, k: int, beta: float,
                          rng: np.random.Generator) -> frozenset:
    if k % 2 != 0 or not 0 < k < p:
        raise ValueError("small-world degree k must be even and 0 < k < p")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("rewiring probability must be in [0, 1]")
    adj = [set() for _ in range(p)]
    for i in range(p):
        for off in range(1, k // 2 + 1):
            j = (i + off) % p
            adj[i].add(j)
            adj[j].add(i)
    # Rewire each original forward edge with probability beta; keep the edge
    # if no valid target exists so the edge count is preserved exactly.
    for i in range(p):
        for off in range(1, k // 2 + 1):
            j = (i + off) % p
            if j not in adj[i]:
                continue
            if rng.random() < beta:
                candidates = [t for t in range(p) if t != i and t not in adj[i]]
                if not candidates:
                    continue
                t = int(candidates[rng.integers(0, len(candidates))])
                adj[i].remove(j)
                adj[j].remove(i)
                adj[i].add(t)
                adj[t].add(i)
    return frozenset((min(i, j), max(i, j)) for i in range(p) for j in adj[i] if i < j)


def _edge_weight(cfg: GeneratorConfig, scale: float,
                 rng: np.random.Generator) -> float:
    if cfg.weight_law == "uniform":
        return float(rng.uniform(-scale, scale))
    # bimodal: a strong minority of edges over a near-invisible bulk, which
    # matches the heterogeneous edge strengths of typical test beds better
    # than a flat law
    if rng.random() < cfg.strong_frac:
        mag = rng.uniform(cfg.strong_lo * scale, scale)
    else:
        mag = rng.uniform(0.0, cfg.weak_hi * scale)
    return float(mag if rng.random() < 0.5 else -mag)


def _precision_on_edges(p: int, edges: frozenset, cfg: GeneratorConfig,
                        rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
    """Random weights on the edges, diagonal forced dominant."""
    theta = np.zeros((p, p))
    scale = cfg.draw_scale(rng)
    for i, j in sorted(edges):
        w = _edge_weight(cfg, scale, rng)
        theta[i, j] = w
        theta[j, i] = w
    np.fill_diagonal(theta, np.sum(np.abs(theta), axis=1) + margin)
    return theta


def sample_small_world_precision(cfg: GeneratorConfig,
                                 rng: np.random.Generator) -> PrecisionSample:
    """Watts-Strogatz support with diagonally dominant random weights."""
    edges = _watts_strogatz_edges(cfg.p, cfg.sw_neighbors, cfg.sw_rewire, rng)
    return _finish_sample(_precision_on_edges(cfg.p, edges, cfg, rng))


def sample_er_substitute(cfg: GeneratorConfig,
                         rng: np.random.Generator) -> PrecisionSample:
    """Erdos-Renyi support at cfg.edge_prob with diagonally dominant weights.

    Deliberately a different construction from the Cholesky-product training
    sampler, for contamination-free evaluation.
    """
    p = cfg.p
    iu, ju = edge_index_pairs(p)
    mask = rng.random(iu.size) < cfg.edge_prob
    edges = frozenset((int(i), int(j)) for i, j in zip(iu[mask], ju[mask]))
    return _finish_sample(_precision_on_edges(p, edges, cfg, rng))


def sample_gram_substitute(cfg: GeneratorConfig,
                           rng: np.random.Generator) -> PrecisionSample:
    """Sparse-Gram precision: Theta = B B^T + ridge*I with rectangular sparse B.

    An independent product-type test construction: edges arise from factor
    co-occurrence (so the support is triangle-rich and the matrix can be
    ill-conditioned like realistic test beds), while sharing no code or
    parametrization with the Cholesky-product training sampler.
    """
    scale = cfg.draw_scale(rng)
    b = np.zeros((cfg.p, cfg.gram_cols))
    mask = rng.random((cfg.p, cfg.gram_cols)) < cfg.gram_density
    b[mask] = rng.uniform(-1.0, 1.0, size=int(mask.sum())) * scale
    theta = b @ b.T + cfg.gram_ridge * np.eye(cfg.p)
    return _finish_sample(theta)


def sample_precision(cfg: GeneratorConfig, rng: np.random.Generator) -> PrecisionSample:
    """Dispatch on cfg.family (laplace reuses the gram-substitute structure)."""
    if cfg.family == "uniform-sparse":
        return sample_sparse_precision(cfg, rng)
    if cfg.family == "small-world":
        return sample_small_world_precision(cfg, rng)
    if cfg.family == "er-substitute":
        return sample_er_substitute(cfg, rng)
    return sample_gram_substitute(cfg, rng)


def sample_gaussian(theta: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. rows from N(0, Theta^{-1}) via a triangular solve.

    With L = chol(Theta) and z standard normal, x = L^{-T} z has covariance
    (L L^T)^{-1} = Theta^{-1}.
    """
    ell = cholesky(theta)
    z = rng.standard_normal((theta.shape[0], n))
    return np.linalg.solve(ell.T, z).T


def sample_laplace(theta: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Heavy-tailed rows x = sqrt(w) * s, s ~ N(0, Theta^{-1}), w ~ Exp(1).

    E[w] = 1 keeps the covariance equal to Theta^{-1} while the exponential
    mixer pushes the marginal excess kurtosis to 3.
    """
    gauss = sample_gaussian(theta, n, rng)
    w = rng.exponential(1.0, size=n)
    return gauss * np.sqrt(w)[:, None]


def sample_observations(ps: PrecisionSample, cfg: GeneratorConfig,
                        rng: np.random.Generator) -> np.ndarray:
    if cfg.family == "laplace":
        return sample_laplace(ps.theta, cfg.n, rng)
    return sample_gaussian(ps.theta, cfg.n, rng)


def make_training_examples(ps: PrecisionSample, n: int, draws: int,
                           rng: np.random.Generator,
                           heavy_tailed: bool = False,
                           max_retries: int = 10) -> List[TrainingExample]:
    """``draws`` examples sharing labels from ps, each with a fresh Sigma_hat."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    y_bin = ps.y_binary()
    y_soft = ps.y_soft()
    out = []
    sampler = sample_laplace if heavy_tailed else sample_gaussian
    for _ in range(draws):
        for attempt in range(max_retries + 1):
            x = sampler(ps.theta, n, rng)
            try:
                sigma = empirical_covariance(standardize(x))
                break
            except DegenerateColumn:
                if attempt == max_retries:
                    raise
        out.append(TrainingExample(sigma_hat=sigma, y_binary=y_bin, y_soft=y_soft))
    return out


def stream_example(cfg: GeneratorConfig, k: int) -> TrainingExample:
    """Example k of the stream, a pure function of (cfg.seed, k).

    Examples come in runs of cfg.draws_per_theta sharing one precision
    matrix; the precision for run t is regenerated from a seed derived from
    (seed, "theta", t), the observations from (seed, "x", k), so any index
    can be produced independently of iteration order.
    """
    theta_index, _ = divmod(k, cfg.draws_per_theta)
    ps = sample_precision(cfg, derive_rng(cfg.seed, "theta", theta_index))
    rng_x = derive_rng(cfg.seed, "x", k)
    return make_training_examples(ps, cfg.n, 1, rng_x,
                                  heavy_tailed=(cfg.family == "laplace"))[0]


def dataset_stream(cfg: GeneratorConfig, start: int = 0) -> Iterator[TrainingExample]:
    """Endless deterministic stream of training examples."""
    k = start
    while True:
        yield stream_example(cfg, k)
        k += 1
