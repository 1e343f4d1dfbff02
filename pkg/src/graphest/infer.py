"""Edge-probability prediction, permutation ensembling, and size padding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeMismatch
from .linalg import check_symmetric, empirical_covariance, standardize
from .net import EdgeNet, forward
from .rng import derive_rng


@dataclass(frozen=True)
class PermutationSpec:
    count: int = 20
    include_identity: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("permutation count must be >= 1")


def _scores_from_forward(model: EdgeNet, sigmas: np.ndarray) -> np.ndarray:
    """Eval-mode forward on a stack of covariance matrices -> (B, p, p) scores."""
    out, _ = forward(model, sigmas[:, None, :, :], mode="eval")
    return out[:, 0].astype(np.float64)


def predict_from_cov(model: EdgeNet, sigma: np.ndarray) -> np.ndarray:
    """Score matrix for a single covariance; pads when it is smaller than the net."""
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    if p > model.p_train:
        raise ShapeMismatch(
            f"covariance size {p} exceeds model size {model.p_train}")
    if p < model.p_train:
        return pad_and_predict(model, sigma)
    scores = _scores_from_forward(model, sigma[None])[0]
    np.fill_diagonal(scores, 0.0)
    return scores


def predict(model: EdgeNet, data: np.ndarray) -> np.ndarray:
    """Standardize -> covariance -> network scores, symmetric with zero diagonal."""
    x = standardize(np.asarray(data, dtype=np.float64))
    return predict_from_cov(model, empirical_covariance(x))


def pad_and_predict(model: EdgeNet, sigma: np.ndarray) -> np.ndarray:
    """Embed a small covariance in an identity block and crop the scores.

    Padding variables are uncorrelated with everything (identity covariance),
    the unique fill that implies no spurious edges.
    """
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    if p > model.p_train:
        raise ShapeMismatch(
            f"covariance size {p} exceeds model size {model.p_train}")
    big = np.eye(model.p_train)
    big[:p, :p] = sigma
    scores = _scores_from_forward(model, big[None])[0][:p, :p]
    np.fill_diagonal(scores, 0.0)
    return scores


def predict_ensemble(model: EdgeNet, sigma: np.ndarray,
                     spec: PermutationSpec = PermutationSpec(),
                     rng: Optional[np.random.Generator] = None,
                     aggregate: str = "mean") -> np.ndarray:
    """Average scores over random node relabelings of the input covariance.

    Each member permutes rows/columns, runs the network, and undoes the
    permutation; members are batched through one forward pass.
    """
    if aggregate not in ("mean", "median"):
        raise ValueError(f"aggregate must be 'mean' or 'median', got {aggregate!r}")
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    if p != model.p_train:
        if p > model.p_train:
            raise ShapeMismatch(
                f"covariance size {p} exceeds model size {model.p_train}")
        sigma_full = np.eye(model.p_train)
        sigma_full[:p, :p] = sigma
    else:
        sigma_full = sigma
    pf = sigma_full.shape[0]
    if rng is None:
        rng = derive_rng(spec.seed, "permutation-ensemble")

    perms = []
    remaining = spec.count
    if spec.include_identity:
        perms.append(np.arange(pf))
        remaining -= 1
    for _ in range(remaining):
        perms.append(rng.permutation(pf))

    batch = np.stack([sigma_full[np.ix_(perm, perm)] for perm in perms])
    raw = _scores_from_forward(model, batch)
    members = np.empty_like(raw)
    for k, perm in enumerate(perms):
        members[k][np.ix_(perm, perm)] = raw[k]
    combined = np.mean(members, axis=0) if aggregate == "mean" \
        else np.median(members, axis=0)
    combined = combined[:p, :p]
    np.fill_diagonal(combined, 0.0)
    return combined
