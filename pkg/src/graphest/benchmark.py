"""Benchmark harness: scenario runner, method registry, report files.

Each trial draws a fresh precision sample and observation matrix; every
method scores edges from the same data; metrics are aggregated as
mean +- standard error.  Per-trial seeds derive from the scenario seed and
trial index, so reports are bit-reproducible and trials parallelizable.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import (
    glasso_edge_scores,
    glasso_path,
    graphical_lasso_cv,
    lambda_grid,
    ledoit_wolf,
    ml_precision_given_support,
    holdout_loglik,
    threshold_partial_corr,
)
from .errors import GraphestError
from .infer import PermutationSpec, predict, predict_ensemble, predict_from_cov
from .linalg import empirical_covariance, standardize
from .metrics import auc, calibration_error, pearson, precision_at_fraction
from .net import EdgeNet
from .rng import derive_rng
from .samplers import (
    GeneratorConfig,
    PrecisionSample,
    TrainingExample,
    edge_index_pairs,
    sample_observations,
    sample_precision,
)

# A method maps (data matrix, truth, rng) to a symmetric score matrix.
MethodFn = Callable[[np.ndarray, Optional[PrecisionSample], np.random.Generator],
                    np.ndarray]


@dataclass(frozen=True)
class Scenario:
    name: str
    gen: GeneratorConfig
    trials: int
    seed: int
    prec_fractions: Tuple[float, ...] = (0.05,)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class MetricRecord:
    method: str
    scenario: str
    trials: int
    failures: int
    auc_mean: float
    auc_se: float
    prec: Dict[float, Tuple[float, float]]
    ce_mean: float
    ce_se: float
    wall_mean: float
    wall_median: float


def _cov_of(data: np.ndarray) -> np.ndarray:
    return empirical_covariance(standardize(data))


def method_random(data, truth, rng):
    p = data.shape[1]
    scores = rng.random((p, p))
    scores = (scores + scores.T) / 2.0
    np.fill_diagonal(scores, 0.0)
    return scores


def method_pcorr(data, truth, rng):
    return threshold_partial_corr(_cov_of(data))


def method_ledoit_wolf(data, truth, rng):
    shrunk, _ = ledoit_wolf(standardize(data))
    return threshold_partial_corr(shrunk)


def method_oracle(data, truth, rng):
    if truth is None:
        raise ValueError("oracle method needs the generating precision")
    return truth.soft_labels.copy()


def make_glasso_cv_method(folds: int = 5, n_grid: int = 20) -> MethodFn:
    def fn(data, truth, rng):
        return glasso_edge_scores(graphical_lasso_cv(data, folds=folds,
                                                     n_grid=n_grid))
    return fn


def make_glasso_fixed_method(lam: float) -> MethodFn:
    from .baselines import graphical_lasso

    def fn(data, truth, rng):
        sigma = _cov_of(data)
        return glasso_edge_scores(graphical_lasso(sigma, lam))
    return fn


def make_glasso_optimal_method(n_grid: int = 20) -> MethodFn:
    """Oracle-regularized glasso: picks the path point with the best test AUC."""
    def fn(data, truth, rng):
        if truth is None:
            raise ValueError("glasso-optimal needs the generating precision")
        sigma = _cov_of(data)
        iu, ju = edge_index_pairs(sigma.shape[0])
        y = truth.y_binary()
        best_scores, best_auc = None, -1.0
        for res in glasso_path(sigma, lambda_grid(sigma, n_points=n_grid)):
            scores = glasso_edge_scores(res)
            a = auc(scores[iu, ju], y)
            if a > best_auc:
                best_auc, best_scores = a, scores
        return best_scores
    return fn


def make_net_method(model: EdgeNet) -> MethodFn:
    def fn(data, truth, rng):
        return predict(model, data)
    return fn


def make_net_ensemble_method(model: EdgeNet, count: int = 20,
                             include_identity: bool = True) -> MethodFn:
    def fn(data, truth, rng):
        sigma = _cov_of(data)
        spec = PermutationSpec(count=count, include_identity=include_identity)
        return predict_ensemble(model, sigma, spec, rng=rng)
    return fn


def run_benchmark(scenario: Scenario,
                  methods: Sequence[Tuple[str, MethodFn]]) -> List[MetricRecord]:
    """Run every method on every trial of a scenario and aggregate metrics."""
    if not methods:
        raise ValueError("methods must be non-empty")
    iu, ju = edge_index_pairs(scenario.gen.p)
    per_method: Dict[str, Dict[str, list]] = {
        name: {"auc": [], "ce": [], "wall": [],
               **{f"prec@{f}": [] for f in scenario.prec_fractions},
               "failures": []}
        for name, _ in methods
    }
    for t in range(scenario.trials):
        rng = derive_rng(scenario.seed, "trial", t)
        ps = sample_precision(scenario.gen, rng)
        data = sample_observations(ps, scenario.gen, rng)
        y = ps.y_binary()
        for name, fn in methods:
            m_rng = derive_rng(scenario.seed, "method", name, t)
            t0 = time.perf_counter()
            try:
                scores = fn(data, ps, m_rng)
            except GraphestError as exc:
                per_method[name]["failures"].append((t, str(exc)))
                continue
            wall = time.perf_counter() - t0
            vec = np.asarray(scores)[iu, ju]
            per_method[name]["auc"].append(auc(vec, y))
            probs = np.clip(vec, 0.0, 1.0)
            per_method[name]["ce"].append(calibration_error(probs, y.astype(float)))
            for f in scenario.prec_fractions:
                per_method[name][f"prec@{f}"].append(
                    precision_at_fraction(vec, y, f))
            per_method[name]["wall"].append(wall)

    records = []
    for name, _ in methods:
        stats = per_method[name]
        n_ok = len(stats["auc"])
        records.append(MetricRecord(
            method=name,
            scenario=scenario.name,
            trials=n_ok,
            failures=len(stats["failures"]),
            auc_mean=_mean(stats["auc"]),
            auc_se=_se(stats["auc"]),
            prec={f: (_mean(stats[f"prec@{f}"]), _se(stats[f"prec@{f}"]))
                  for f in scenario.prec_fractions},
            ce_mean=_mean(stats["ce"]),
            ce_se=_se(stats["ce"]),
            wall_mean=_mean(stats["wall"]),
            wall_median=float(np.median(stats["wall"])) if stats["wall"] else float("nan"),
        ))
    return records


def _mean(xs: list) -> float:
    return float(np.mean(xs)) if xs else float("nan")


def _se(xs: list) -> float:
    if len(xs) < 2:
        return float("nan")
    return float(np.std(xs, ddof=1) / np.sqrt(len(xs)))


def edge_selection_likelihood_curve(
        data: np.ndarray, methods: Sequence[Tuple[str, MethodFn]],
        k_list: Sequence[int], splits: int, seed: int,
        selection_n: int = 40,
        truth: Optional[PrecisionSample] = None) -> Dict[str, np.ndarray]:
    """Held-out likelihood of top-k supports refit by constrained MLE.

    For each random split: rank edges on the selection rows, refit the ML
    precision on the selection covariance restricted to the top-k support,
    and score the held-out rows.  Returns mean likelihood per k per method;
    infeasible refits contribute NaN points.
    """
    data = np.asarray(data, dtype=np.float64)
    n, p = data.shape
    if selection_n >= n:
        raise ValueError("selection set must leave held-out rows")
    iu, ju = edge_index_pairs(p)
    curves = {name: np.zeros((splits, len(k_list))) for name, _ in methods}
    for s in range(splits):
        rng = derive_rng(seed, "curve-split", s)
        order = rng.permutation(n)
        sel, held = order[:selection_n], order[selection_n:]
        x_sel = standardize(data[sel])
        sigma_sel = empirical_covariance(x_sel)
        mu = data[sel].mean(axis=0)
        sd = np.sqrt(np.mean((data[sel] - mu) ** 2, axis=0))
        x_held = (data[held] - mu) / sd
        for name, fn in methods:
            scores = fn(data[sel], truth, derive_rng(seed, "curve", name, s))
            ranked = np.argsort(-np.asarray(scores)[iu, ju], kind="stable")
            for ki, k in enumerate(k_list):
                support = frozenset(
                    (int(iu[e]), int(ju[e])) for e in ranked[:k])
                try:
                    theta = ml_precision_given_support(sigma_sel, support)
                    curves[name][s, ki] = holdout_loglik(theta, x_held)
                except GraphestError:
                    curves[name][s, ki] = np.nan
    return {name: np.nanmean(vals, axis=0) for name, vals in curves.items()}


def permutation_error_correlation(model: EdgeNet,
                                  test_set: Sequence[TrainingExample],
                                  m: int, seed: int = 0,
                                  permutations: Optional[Sequence[np.ndarray]]
                                  = None) -> Tuple[float, float]:
    """Error decorrelation across permutation ensemble members.

    Treats each of ``m`` node permutations as a separate estimator, forms its
    per-edge error vector (prediction minus soft label) over the test set,
    and returns (mean pairwise Pearson correlation of errors, mean absolute
    error).  ``permutations`` overrides the seeded random draw.
    """
    if m < 2:
        raise ValueError("need at least two permutations")
    p = test_set[0].sigma_hat.shape[0]
    iu, ju = edge_index_pairs(p)
    if permutations is not None:
        perms = [np.asarray(q) for q in permutations]
        if len(perms) != m:
            raise ValueError("permutation count does not match m")
    else:
        rng = derive_rng(seed, "perm-error")
        perms = [rng.permutation(p) for _ in range(m)]
    targets = np.concatenate([ex.y_soft for ex in test_set])
    errors = np.zeros((m, targets.size))
    for k, perm in enumerate(perms):
        preds = []
        for ex in test_set:
            permuted = ex.sigma_hat[np.ix_(perm, perm)]
            raw = predict_from_cov(model, permuted)
            unperm = np.empty_like(raw)
            unperm[np.ix_(perm, perm)] = raw
            preds.append(unperm[iu, ju])
        errors[k] = np.concatenate(preds) - targets
    corrs = [pearson(errors[a], errors[b])
             for a in range(m) for b in range(a + 1, m)]
    return float(np.mean(corrs)), float(np.mean(np.abs(errors)))


# ---------------------------------------------------------------------------
# report files


def record_rows(records: Sequence[MetricRecord]) -> List[dict]:
    rows = []
    for r in records:
        rows.append({"method": r.method, "scenario": r.scenario,
                     "metric": "auc", "mean": r.auc_mean, "stderr": r.auc_se,
                     "trials": r.trials})
        for f, (mean, se) in r.prec.items():
            rows.append({"method": r.method, "scenario": r.scenario,
                         "metric": f"prec@{f:g}", "mean": mean, "stderr": se,
                         "trials": r.trials})
        rows.append({"method": r.method, "scenario": r.scenario,
                     "metric": "ce", "mean": r.ce_mean, "stderr": r.ce_se,
                     "trials": r.trials})
        rows.append({"method": r.method, "scenario": r.scenario,
                     "metric": "wall_seconds_median", "mean": r.wall_median,
                     "stderr": float("nan"), "trials": r.trials})
        if r.failures:
            rows.append({"method": r.method, "scenario": r.scenario,
                         "metric": "failures", "mean": float(r.failures),
                         "stderr": float("nan"), "trials": r.trials})
    return rows


def write_report_csv(records: Sequence[MetricRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["method", "scenario", "metric", "mean", "stderr",
                            "trials"])
        writer.writeheader()
        for row in record_rows(records):
            writer.writerow(row)


def write_report_json(records: Sequence[MetricRecord], path) -> None:
    with open(path, "w") as fh:
        json.dump(record_rows(records), fh, indent=2)
        fh.write("\n")
