"""Optimization of the edge scorer: loss, Adam, streaming training loop.

Training consumes a deterministic stream of freshly generated examples
(never reusing one), evaluates on a fixed held-out validation set drawn
from an independent seed, and stops when the validation loss saturates,
returning the best-validation checkpoint.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DivergenceDetected
from .metrics import auc
from .net import EdgeNet, backward, forward, named_params
from .samplers import (
    GeneratorConfig,
    PrecisionSample,
    TrainingExample,
    edge_index_pairs,
    stream_example,
)
from .rng import derive_rng

CE_CLAMP = 1e-7


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    val_examples: int = 200
    eval_every: int = 200          # batches between validation evaluations
    patience: int = 10             # evaluations without improvement before stop
    min_delta: float = 1e-4
    max_examples: int = 100_000
    label_mode: str = "soft"       # "soft" -> |partial correlation|, "binary"

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1")
        if self.label_mode not in ("soft", "binary"):
            raise ValueError(f"unknown label_mode {self.label_mode!r}")


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: Dict[str, np.ndarray], lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for name, arr in params.items():
        state.m[name] = np.zeros_like(arr, dtype=np.float64)
        state.v[name] = np.zeros_like(arr, dtype=np.float64)
    return state


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def cross_entropy_loss(pred: np.ndarray,
                       target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean off-diagonal cross-entropy between probabilities and soft labels.

    ``pred`` and ``target`` are (B, 1, p, p) or (B, p, p); the diagonal is
    excluded from both the loss and the gradient.  Predictions are clamped
    to [1e-7, 1 - 1e-7] against overflow; the gradient is evaluated at the
    clamped value so saturated entries keep a restoring signal.
    """
    pred = np.asarray(pred)
    squeeze = pred.ndim == 4
    y_hat = pred[:, 0] if squeeze else pred
    y = np.asarray(target)
    y = y[:, 0] if y.ndim == 4 else y
    if y_hat.shape != y.shape or y_hat.shape[-1] != y_hat.shape[-2]:
        raise ValueError(f"shape mismatch: pred {y_hat.shape}, target {y.shape}")
    b, p = y_hat.shape[0], y_hat.shape[-1]
    yc = np.clip(y_hat, CE_CLAMP, 1.0 - CE_CLAMP).astype(np.float64)
    off = ~np.eye(p, dtype=bool)
    count = b * p * (p - 1)
    terms = y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)
    loss = -float(terms[:, off].sum()) / count
    grad = np.zeros_like(yc)
    grad[:, off] = (yc[:, off] - y[:, off]) / (yc[:, off] * (1.0 - yc[:, off]))
    grad /= count
    return loss, (grad[:, None] if squeeze else grad)


def soft_labels(ps: PrecisionSample, mode: str = "soft") -> np.ndarray:
    """Training targets for one precision sample, in canonical edge order."""
    if mode == "soft":
        return ps.y_soft()
    if mode == "binary":
        return ps.y_binary().astype(np.float64)
    raise ValueError(f"unknown label mode {mode!r}")


def edge_vector_to_matrix(y: np.ndarray, p: int) -> np.ndarray:
    out = np.zeros((p, p))
    iu, ju = edge_index_pairs(p)
    out[iu, ju] = y
    out[ju, iu] = y
    return out


def batch_arrays(examples: Sequence[TrainingExample],
                 label_mode: str) -> Tuple[np.ndarray, np.ndarray]:
    p = examples[0].sigma_hat.shape[0]
    x = np.stack([ex.sigma_hat for ex in examples])[:, None, :, :]
    key = "y_soft" if label_mode == "soft" else "y_binary"
    y = np.stack([edge_vector_to_matrix(np.asarray(getattr(ex, key), dtype=np.float64), p)
                  for ex in examples])
    return x, y


def _evaluate(model: EdgeNet, val_x: np.ndarray, val_y: np.ndarray,
              val_bin: np.ndarray, batch_size: int) -> Tuple[float, float]:
    """Validation loss and pooled AUC in eval mode."""
    losses = []
    scores = []
    p = val_x.shape[-1]
    iu, ju = edge_index_pairs(p)
    for lo in range(0, val_x.shape[0], batch_size):
        xb = val_x[lo:lo + batch_size]
        out, _ = forward(model, xb, mode="eval")
        loss, _ = cross_entropy_loss(out, val_y[lo:lo + batch_size])
        losses.append(loss * xb.shape[0])
        scores.append(out[:, 0][:, iu, ju].reshape(-1))
    val_loss = float(np.sum(losses) / val_x.shape[0])
    val_auc = auc(np.concatenate(scores), val_bin.reshape(-1))
    return val_loss, val_auc


def train_loop(model: EdgeNet, stream: Iterator[TrainingExample],
               cfg: TrainConfig,
               val_set: Sequence[TrainingExample]) -> Tuple[EdgeNet, List[dict]]:
    """Stream-train ``model``; returns (best-validation checkpoint, history).

    Raises DivergenceDetected (with partial history attached) if the
    training loss becomes non-finite.
    """
    if not val_set:
        raise ValueError("validation set must be non-empty")
    params = named_params(model)
    adam = init_adam(params, cfg.lr)
    val_x, val_y = batch_arrays(list(val_set), cfg.label_mode)
    val_bin = np.stack([ex.y_binary for ex in val_set])

    history: List[dict] = []
    best_loss = np.inf
    best_model = copy.deepcopy(model)
    stale_evals = 0
    examples_seen = 0
    step = 0
    loss_accum: List[float] = []
    t0 = time.perf_counter()

    def run_eval() -> bool:
        """Returns True when the patience budget is exhausted."""
        nonlocal best_loss, best_model, stale_evals
        val_loss, val_auc = _evaluate(model, val_x, val_y, val_bin, cfg.batch_size)
        history.append({
            "step": step,
            "examples_seen": examples_seen,
            "train_loss": float(np.mean(loss_accum)) if loss_accum else float("nan"),
            "val_loss": val_loss,
            "val_auc": val_auc,
            "wall_seconds": time.perf_counter() - t0,
        })
        loss_accum.clear()
        if val_loss < best_loss - cfg.min_delta:
            best_loss = val_loss
            best_model = copy.deepcopy(model)
            stale_evals = 0
        else:
            if val_loss < best_loss:
                best_loss = val_loss
                best_model = copy.deepcopy(model)
            stale_evals += 1
        return stale_evals >= cfg.patience

    while examples_seen < cfg.max_examples:
        take = min(cfg.batch_size, cfg.max_examples - examples_seen)
        batch = [next(stream) for _ in range(take)]
        x, y = batch_arrays(batch, cfg.label_mode)
        out, cache = forward(model, x, mode="train")
        loss, grad = cross_entropy_loss(out, y)
        if not np.isfinite(loss):
            raise DivergenceDetected(
                f"non-finite training loss at step {step}", history=history)
        grads = backward(model, cache, grad)
        adam_step(params, grads, adam)
        step += 1
        examples_seen += take
        loss_accum.append(loss)
        if step % cfg.eval_every == 0:
            if run_eval():
                return best_model, history
    run_eval()
    return best_model, history


def fine_tune(model: EdgeNet, mixture: Iterable[TrainingExample],
              cfg: TrainConfig) -> EdgeNet:
    """Exactly one pass over ``mixture`` with Adam at cfg.lr.

    Each example is consumed once; an empty mixture returns the model
    unchanged.  The caller picks the (typically reduced) learning rate.
    """
    params = named_params(model)
    adam = init_adam(params, cfg.lr)
    batch: List[TrainingExample] = []

    def flush():
        x, y = batch_arrays(batch, cfg.label_mode)
        out, cache = forward(model, x, mode="train")
        loss, grad = cross_entropy_loss(out, y)
        if not np.isfinite(loss):
            raise DivergenceDetected("non-finite loss during fine-tuning")
        adam_step(params, backward(model, cache, grad), adam)
        batch.clear()

    for ex in mixture:
        batch.append(ex)
        if len(batch) == cfg.batch_size:
            flush()
    if batch:
        flush()
    return model


def mixture_examples(cfg_a: GeneratorConfig, cfg_b: GeneratorConfig,
                     count_each: int, seed: int) -> List[TrainingExample]:
    """count_each examples from each generator, deterministically interleaved."""
    examples = [stream_example(cfg_a, k) for k in range(count_each)]
    examples += [stream_example(cfg_b, k) for k in range(count_each)]
    order = derive_rng(seed, "mixture-order").permutation(len(examples))
    return [examples[i] for i in order]


def write_history(path, history: List[dict]) -> None:
    fields = ["step", "examples_seen", "train_loss", "val_loss", "val_auc",
              "wall_seconds"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in fields})
