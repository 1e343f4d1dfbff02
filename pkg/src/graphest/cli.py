"""Command-line entry point.

Experiments are described by a flat INI-style config (sections of
``key = value`` pairs); unknown keys are a hard error so typos never pass
silently.  All randomness derives from the single ``--seed`` through
labeled namespaces (gen / init / train / eval), so any component of a run
can be reproduced in isolation.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import baselines, benchmark, io, train as train_mod
from .errors import ConfigError, GraphestError
from .infer import PermutationSpec, predict, predict_ensemble, predict_from_cov
from .linalg import empirical_covariance, standardize
from .net import (
    NetConfig,
    covers_input,
    init_params,
    load_model,
    receptive_field,
    save_model,
)
from .rng import derive_rng
from .samplers import (
    FAMILIES,
    GeneratorConfig,
    calibrate_alpha,
    dataset_stream,
    sample_precision,
    stream_example,
    theta_sparsity,
)

_SCHEMA: Dict[str, Dict[str, type]] = {
    "generator": {
        "family": str, "p": int, "n": int, "alpha": float,
        "target_sparsity": float, "c": float, "edge_prob": float,
        "sw_neighbors": int, "sw_rewire": float, "weight_law": str,
        "strong_frac": float, "strong_lo": float, "weak_hi": float,
        "c_spread": float,
        "draws_per_theta": int, "count": int,
    },
    "net": {"depth": int, "feature_maps": int, "dilation_schedule": str},
    "train": {
        "batch_size": int, "lr": float, "val_examples": int,
        "eval_every": int, "patience": int, "min_delta": float,
        "max_examples": int, "label_mode": str,
    },
    "finetune": {
        "model": str, "examples_smallworld": int, "examples_uniform": int,
        "lr": float, "batch_size": int, "sw_neighbors": int, "sw_rewire": float,
    },
    "predict": {
        "model": str, "data": str, "input_kind": str, "permutations": int,
    },
    "baseline": {
        "method": str, "data": str, "lambda": float, "folds": int,
    },
    "benchmark": {
        "methods": str, "model": str, "trials": int, "prec_fractions": str,
        "ensemble_size": int, "folds": int,
    },
    "curve": {
        "data": str, "methods": str, "model": str, "k_list": str,
        "splits": int, "selection_n": int,
    },
    "inspect": {"path": str},
}


def _load_config(path: Optional[str]) -> Dict[str, Dict[str, str]]:
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    out: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = {}
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            out[section][key] = value
    return out


def _get(cfg, section: str, key: str, default=None, required: bool = False):
    raw = cfg.get(section, {}).get(key)
    if raw is None:
        if required:
            raise ConfigError(f"missing required key '{key}' in [{section}]")
        return default
    typ = _SCHEMA[section][key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}' in [{section}]: {raw!r}") from exc


def _generator_config(cfg, seed: int, require: bool = True) -> GeneratorConfig:
    family = _get(cfg, "generator", "family", "uniform-sparse")
    if family not in FAMILIES:
        raise ConfigError(
            f"invalid value for 'family' in [generator]: {family!r} "
            f"(choose from {', '.join(FAMILIES)})")
    p = _get(cfg, "generator", "p", required=require)
    n = _get(cfg, "generator", "n", required=require)
    alpha = _get(cfg, "generator", "alpha")
    target = _get(cfg, "generator", "target_sparsity")
    if alpha is None:
        if target is not None and family == "uniform-sparse":
            alpha = calibrate_alpha(p, target, derive_rng(seed, "calibrate"),
                                    c=_get(cfg, "generator", "c", 1.5))
        else:
            alpha = 0.85
    edge_prob = _get(cfg, "generator", "edge_prob")
    if edge_prob is None:
        edge_prob = (1.0 - target) if target is not None else 0.05
    return GeneratorConfig(
        p=p, n=n, family=family, alpha=alpha,
        c=_get(cfg, "generator", "c", 1.5),
        edge_prob=edge_prob,
        sw_neighbors=_get(cfg, "generator", "sw_neighbors", 4),
        sw_rewire=_get(cfg, "generator", "sw_rewire", 0.25),
        weight_law=_get(cfg, "generator", "weight_law", "uniform"),
        strong_frac=_get(cfg, "generator", "strong_frac", 0.3),
        strong_lo=_get(cfg, "generator", "strong_lo", 0.4),
        weak_hi=_get(cfg, "generator", "weak_hi", 0.03),
        c_spread=_get(cfg, "generator", "c_spread", 1.0),
        draws_per_theta=_get(cfg, "generator", "draws_per_theta", 5),
        seed=seed,
    )


def _net_config(cfg, p: int) -> NetConfig:
    return NetConfig(
        input_size=p,
        depth=_get(cfg, "net", "depth", 6),
        feature_maps=_get(cfg, "net", "feature_maps", 50),
        dilation_schedule=_get(cfg, "net", "dilation_schedule", "arithmetic"),
    )


def _train_config(cfg) -> train_mod.TrainConfig:
    return train_mod.TrainConfig(
        batch_size=_get(cfg, "train", "batch_size", 32),
        lr=_get(cfg, "train", "lr", 1e-3),
        val_examples=_get(cfg, "train", "val_examples", 200),
        eval_every=_get(cfg, "train", "eval_every", 200),
        patience=_get(cfg, "train", "patience", 10),
        min_delta=_get(cfg, "train", "min_delta", 1e-4),
        max_examples=_get(cfg, "train", "max_examples", 100_000),
        label_mode=_get(cfg, "train", "label_mode", "soft"),
    )


def _write_ranked_edges(path, scores: np.ndarray) -> None:
    p = scores.shape[0]
    iu, ju = np.triu_indices(p, 1)
    vec = scores[iu, ju]
    order = np.argsort(-vec, kind="stable")
    with open(path, "w") as fh:
        fh.write("i,j,score\n")
        for e in order:
            fh.write(f"{iu[e]},{ju[e]},{vec[e]:.10g}\n")


def cmd_gen(cfg, seed: int, out_dir: str) -> int:
    gen = _generator_config(cfg, derive_rng_seed(seed, "gen"))
    count = _get(cfg, "generator", "count", 1000)
    records = []
    sparsities = []
    for k in range(count):
        ex = stream_example(gen, k)
        records.append((ex.sigma_hat, ex.y_binary, ex.y_soft))
        if k % gen.draws_per_theta == 0:
            ps = sample_precision(gen, derive_rng(gen.seed, "theta",
                                                  k // gen.draws_per_theta))
            sparsities.append(theta_sparsity(ps.theta))
    path = os.path.join(out_dir, "dataset.sgld")
    io.write_archive(path, gen.p, gen.n, gen.family, gen.seed, records)
    print(f"wrote {count} examples to {path}")
    print(f"family={gen.family} p={gen.p} n={gen.n} "
          f"mean_sparsity={float(np.mean(sparsities)):.4f}")
    return 0


def derive_rng_seed(seed: int, tag: str) -> int:
    """A derived 63-bit integer seed for namespacing child components."""
    return int(derive_rng(seed, tag).integers(0, 2**63))


def cmd_train(cfg, seed: int, out_dir: str) -> int:
    gen = _generator_config(cfg, derive_rng_seed(seed, "gen"))
    net_cfg = _net_config(cfg, gen.p)
    if not covers_input(net_cfg):
        print(f"error: receptive field {receptive_field(net_cfg)} < p "
              f"{net_cfg.input_size}; increase depth or change the dilation "
              f"schedule", file=sys.stderr)
        return 1
    tcfg = _train_config(cfg)
    model = init_params(net_cfg, derive_rng(seed, "init"))
    train_gen = GeneratorConfig(**{**gen.__dict__,
                                   "seed": derive_rng_seed(seed, "train-stream")})
    val_gen = GeneratorConfig(**{**gen.__dict__,
                                 "seed": derive_rng_seed(seed, "val-stream")})
    val_set = [stream_example(val_gen, k) for k in range(tcfg.val_examples)]
    best, history = train_mod.train_loop(model, dataset_stream(train_gen),
                                         tcfg, val_set)
    model_path = os.path.join(out_dir, "model.dgnn")
    save_model(best, model_path)
    train_mod.write_history(os.path.join(out_dir, "history.csv"), history)
    last = history[-1]
    print(f"trained on {last['examples_seen']} examples; "
          f"val_loss={last['val_loss']:.5f} val_auc={last['val_auc']:.4f}")
    print(f"wrote {model_path}")
    return 0


def cmd_finetune(cfg, seed: int, out_dir: str) -> int:
    model_path = _get(cfg, "finetune", "model", required=True)
    model = load_model(model_path)
    gen = _generator_config(cfg, derive_rng_seed(seed, "gen"), require=False)
    if gen.p != model.p_train:
        raise ConfigError(
            f"generator p={gen.p} does not match model p={model.p_train}")
    count_sw = _get(cfg, "finetune", "examples_smallworld", 1000)
    count_uni = _get(cfg, "finetune", "examples_uniform", 1000)
    sw_gen = GeneratorConfig(**{
        **gen.__dict__, "family": "small-world",
        "sw_neighbors": _get(cfg, "finetune", "sw_neighbors", gen.sw_neighbors),
        "sw_rewire": _get(cfg, "finetune", "sw_rewire", gen.sw_rewire),
        "seed": derive_rng_seed(seed, "finetune-sw")})
    uni_gen = GeneratorConfig(**{**gen.__dict__, "family": "uniform-sparse",
                                 "seed": derive_rng_seed(seed, "finetune-uni")})
    count = min(count_sw, count_uni)
    mixture = train_mod.mixture_examples(sw_gen, uni_gen, count,
                                         derive_rng_seed(seed, "finetune-mix"))
    tcfg = _train_config(cfg)
    lr = _get(cfg, "finetune", "lr", tcfg.lr / 10.0)
    ft_cfg = train_mod.TrainConfig(
        batch_size=_get(cfg, "finetune", "batch_size", tcfg.batch_size),
        lr=lr, label_mode=tcfg.label_mode)
    model = train_mod.fine_tune(model, mixture, ft_cfg)
    out_path = os.path.join(out_dir, "model_finetuned.dgnn")
    save_model(model, out_path)
    print(f"fine-tuned on {len(mixture)} examples; wrote {out_path}")
    return 0


def cmd_predict(cfg, seed: int, out_dir: str, permutations: Optional[int]) -> int:
    model = load_model(_get(cfg, "predict", "model", required=True))
    data_path = _get(cfg, "predict", "data", required=True)
    kind = _get(cfg, "predict", "input_kind", "data")
    if kind not in ("data", "covariance"):
        raise ConfigError(f"invalid value for 'input_kind': {kind!r}")
    mat = io.read_matrix_text(data_path)
    if permutations is None:
        permutations = _get(cfg, "predict", "permutations", 0)
    if kind == "data":
        sigma = empirical_covariance(standardize(mat))
    else:
        sigma = mat
    if permutations and permutations > 1:
        spec = PermutationSpec(count=permutations, include_identity=True,
                               seed=derive_rng_seed(seed, "predict-perm"))
        scores = predict_ensemble(model, sigma, spec)
    else:
        scores = predict_from_cov(model, sigma)
    io.write_matrix_text(os.path.join(out_dir, "scores.txt"), scores)
    _write_ranked_edges(os.path.join(out_dir, "edges.csv"), scores)
    print(f"wrote scores.txt and edges.csv for p={scores.shape[0]}")
    return 0


def cmd_baseline(cfg, seed: int, out_dir: str) -> int:
    method = _get(cfg, "baseline", "method", required=True)
    data = io.read_matrix_text(_get(cfg, "baseline", "data", required=True))
    if method == "glasso-cv":
        res = baselines.graphical_lasso_cv(
            data, folds=_get(cfg, "baseline", "folds", 5))
        theta, scores = res.theta, baselines.glasso_edge_scores(res)
    elif method == "glasso":
        lam = _get(cfg, "baseline", "lambda", required=True)
        sigma = empirical_covariance(standardize(data))
        res = baselines.graphical_lasso(sigma, lam)
        theta, scores = res.theta, baselines.glasso_edge_scores(res)
    elif method == "pcorr":
        sigma = empirical_covariance(standardize(data))
        scores = baselines.threshold_partial_corr(sigma)
        theta = None
    elif method == "ledoit-wolf":
        shrunk, shrink = baselines.ledoit_wolf(standardize(data))
        scores = baselines.threshold_partial_corr(shrunk)
        theta = None
        print(f"shrinkage={shrink:.4f}")
    else:
        raise ConfigError(
            f"invalid value for 'method': {method!r} "
            "(choose from glasso-cv, glasso, pcorr, ledoit-wolf)")
    if theta is not None:
        io.write_matrix_text(os.path.join(out_dir, "theta.txt"), theta)
    _write_ranked_edges(os.path.join(out_dir, "edges.csv"), scores)
    print(f"ran baseline {method}")
    return 0


def _build_methods(cfg, names: List[str]):
    methods = []
    model = None
    for name in names:
        if name in ("convnet", "convnet-perm"):
            if model is None:
                model_path = _get(cfg, "benchmark", "model", required=True)
                model = load_model(model_path)
        if name == "convnet":
            methods.append((name, benchmark.make_net_method(model)))
        elif name == "convnet-perm":
            methods.append((name, benchmark.make_net_ensemble_method(
                model, count=_get(cfg, "benchmark", "ensemble_size", 20))))
        elif name == "glasso-cv":
            methods.append((name, benchmark.make_glasso_cv_method(
                folds=_get(cfg, "benchmark", "folds", 5))))
        elif name == "glasso-optimal":
            methods.append((name, benchmark.make_glasso_optimal_method()))
        elif name == "pcorr":
            methods.append((name, benchmark.method_pcorr))
        elif name == "ledoit-wolf":
            methods.append((name, benchmark.method_ledoit_wolf))
        elif name == "random":
            methods.append((name, benchmark.method_random))
        else:
            raise ConfigError(f"invalid value for 'methods': unknown {name!r}")
    return methods


def cmd_benchmark(cfg, seed: int, out_dir: str) -> int:
    gen = _generator_config(cfg, derive_rng_seed(seed, "scenario"))
    names = [s.strip() for s in
             _get(cfg, "benchmark", "methods", required=True).split(",")
             if s.strip()]
    fractions = tuple(
        float(s) for s in
        _get(cfg, "benchmark", "prec_fractions", "0.05").split(",") if s.strip())
    scenario = benchmark.Scenario(
        name=f"{gen.family}(n={gen.n},p={gen.p})",
        gen=gen,
        trials=_get(cfg, "benchmark", "trials", 100),
        seed=derive_rng_seed(seed, "benchmark"),
        prec_fractions=fractions)
    records = benchmark.run_benchmark(scenario, _build_methods(cfg, names))
    benchmark.write_report_csv(records, os.path.join(out_dir, "report.csv"))
    benchmark.write_report_json(records, os.path.join(out_dir, "report.json"))
    failures = sum(r.failures for r in records)
    for r in records:
        prec_txt = " ".join(f"prec@{f:g}={m:.3f}" for f, (m, _) in r.prec.items())
        print(f"{r.scenario} {r.method}: auc={r.auc_mean:.3f}+-{r.auc_se:.3f} "
              f"{prec_txt} ce={r.ce_mean:.3f} "
              f"median_wall={r.wall_median:.3f}s trials={r.trials}")
    if failures:
        print(f"warning: {failures} per-trial failures (excluded from means)",
              file=sys.stderr)
        return 1
    return 0


def cmd_curve(cfg, seed: int, out_dir: str) -> int:
    data = io.read_matrix_text(_get(cfg, "curve", "data", required=True))
    names = [s.strip() for s in
             _get(cfg, "curve", "methods", required=True).split(",") if s.strip()]
    k_list = [int(s) for s in
              _get(cfg, "curve", "k_list", required=True).split(",") if s.strip()]
    methods = _build_methods({"benchmark": cfg.get("curve", {})}, names)
    curves = benchmark.edge_selection_likelihood_curve(
        data, methods, k_list,
        splits=_get(cfg, "curve", "splits", 50),
        seed=derive_rng_seed(seed, "curve"),
        selection_n=_get(cfg, "curve", "selection_n", 40))
    path = os.path.join(out_dir, "curve.csv")
    with open(path, "w") as fh:
        fh.write("method,k,mean_holdout_loglik\n")
        for name, vals in curves.items():
            for k, v in zip(k_list, vals):
                fh.write(f"{name},{k},{v:.10g}\n")
    print(f"wrote {path}")
    return 0


def cmd_inspect(cfg, seed: int, out_dir: str, path: Optional[str]) -> int:
    target = path or _get(cfg, "inspect", "path", required=True)
    with open(target, "rb") as fh:
        magic = fh.read(4)
    if magic == io.ARCHIVE_MAGIC:
        meta, records = io.read_archive(target)
        print(f"dataset archive: p={meta['p']} n={meta['n']} "
              f"family={meta['family']} seed={meta['seed']} "
              f"records={meta['count']}")
    elif magic == b"DGNN":
        model = load_model(target)
        cfg_m = model.config
        print(f"model: p={model.p_train} depth={cfg_m.depth} "
              f"feature_maps={cfg_m.feature_maps} "
              f"schedule={cfg_m.dilation_schedule} "
              f"receptive_field={receptive_field(cfg_m)}")
    else:
        print(f"error: unrecognized file magic {magic!r}", file=sys.stderr)
        return 1
    return 0


def _limit_threads(threads: int) -> None:
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=threads)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="graphest",
        description="Structure discovery for sparse Gaussian graphical models")
    parser.add_argument("command",
                        choices=["gen", "train", "finetune", "predict",
                                 "baseline", "benchmark", "curve", "inspect"])
    parser.add_argument("--config", help="INI-style run configuration")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None,
                        help="output directory (default: cwd or $GRAPHEST_OUT)")
    parser.add_argument("--threads", type=int, default=0,
                        help="bound internal/BLAS parallelism (0 = leave as is)")
    parser.add_argument("--permutations", type=int, default=None,
                        help="ensemble size for predict")
    parser.add_argument("--path", help="file for inspect")
    args = parser.parse_args(argv)

    out_dir = args.out or os.environ.get("GRAPHEST_OUT", ".")
    os.makedirs(out_dir, exist_ok=True)
    if args.threads:
        _limit_threads(args.threads)

    try:
        cfg = _load_config(args.config)
        if args.command == "gen":
            return cmd_gen(cfg, args.seed, out_dir)
        if args.command == "train":
            return cmd_train(cfg, args.seed, out_dir)
        if args.command == "finetune":
            return cmd_finetune(cfg, args.seed, out_dir)
        if args.command == "predict":
            return cmd_predict(cfg, args.seed, out_dir, args.permutations)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.seed, out_dir)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, args.seed, out_dir)
        if args.command == "curve":
            return cmd_curve(cfg, args.seed, out_dir)
        return cmd_inspect(cfg, args.seed, out_dir, args.path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GraphestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
