import csv
import json

import numpy as np
import pytest

from graphest.benchmark import (
    Scenario,
    edge_selection_likelihood_curve,
    make_net_method,
    method_oracle,
    method_pcorr,
    method_random,
    permutation_error_correlation,
    run_benchmark,
    write_report_csv,
    write_report_json,
)
from graphest.errors import GraphestError
from graphest.net import NetConfig, init_params
from graphest.rng import derive_rng
from graphest.samplers import (
    GeneratorConfig,
    sample_gaussian,
    sample_sparse_precision,
    stream_example,
)


def tiny_scenario(trials=20, p=15, n=20, seed=3):
    gen = GeneratorConfig(p=p, n=n, family="er-substitute", edge_prob=0.1)
    return Scenario(name="tiny", gen=gen, trials=trials, seed=seed,
                    prec_fractions=(0.05, 0.1))


def test_random_scorer_baseline_rates():
    scenario = tiny_scenario(trials=50)
    records = run_benchmark(scenario, [("random", method_random)])
    rec = records[0]
    assert abs(rec.auc_mean - 0.5) < 0.05
    # precision of a random ranking matches the edge base rate
    assert abs(rec.prec[0.1][0] - 0.1) < 0.06
    assert rec.trials == 50 and rec.failures == 0


def test_benchmark_deterministic():
    scenario = tiny_scenario(trials=10)
    methods = [("random", method_random), ("pcorr", method_pcorr)]
    a = run_benchmark(scenario, methods)
    b = run_benchmark(scenario, methods)
    for ra, rb in zip(a, b):
        assert ra.auc_mean == rb.auc_mean
        assert ra.prec == rb.prec
        assert ra.ce_mean == rb.ce_mean


def test_benchmark_records_failures_and_continues():
    calls = {"n": 0}

    def flaky(data, truth, rng):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise GraphestError("synthetic failure")
        return method_random(data, truth, rng)

    scenario = tiny_scenario(trials=9)
    records = run_benchmark(scenario, [("flaky", flaky)])
    assert records[0].failures == 3
    assert records[0].trials == 6
    assert np.isfinite(records[0].auc_mean)


def test_standard_errors_shrink_with_trials():
    small = run_benchmark(tiny_scenario(trials=25), [("random", method_random)])
    large = run_benchmark(tiny_scenario(trials=100), [("random", method_random)])
    ratio = small[0].auc_se / large[0].auc_se
    assert 1.3 < ratio < 3.1  # nominal 2.0 for a 4x trial increase


def test_oracle_method_is_perfect():
    scenario = tiny_scenario(trials=10)
    records = run_benchmark(scenario, [("oracle", method_oracle)])
    assert records[0].auc_mean == pytest.approx(1.0)


def test_report_files(tmp_path):
    records = run_benchmark(tiny_scenario(trials=5),
                            [("random", method_random)])
    csv_path = tmp_path / "report.csv"
    json_path = tmp_path / "report.json"
    write_report_csv(records, csv_path)
    write_report_json(records, json_path)
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    metrics = {r["metric"] for r in rows}
    assert {"auc", "prec@0.05", "prec@0.1", "ce",
            "wall_seconds_median"} <= metrics
    mirrored = json.loads(json_path.read_text())
    assert len(mirrored) == len(rows)
    by_metric = {r["metric"]: r for r in mirrored}
    assert by_metric["auc"]["mean"] == pytest.approx(records[0].auc_mean)


# ---------------------------------------------------------------------------
# edge-selection likelihood curve


def test_curve_k_zero_is_method_independent():
    rng = derive_rng(21, "curve")
    ps = sample_sparse_precision(GeneratorConfig(p=10, n=80, alpha=0.75), rng)
    data = sample_gaussian(ps.theta, 80, rng)
    curves = edge_selection_likelihood_curve(
        data, [("random", method_random), ("oracle", method_oracle)],
        k_list=[0, 3], splits=3, seed=5, selection_n=40, truth=ps)
    assert curves["random"][0] == pytest.approx(curves["oracle"][0], abs=1e-9)


def test_curve_oracle_dominates_random():
    gaps = []
    for t in range(12):
        rng = derive_rng(22, "curve", t)
        ps = sample_sparse_precision(GeneratorConfig(p=12, n=90, alpha=0.8), rng)
        data = sample_gaussian(ps.theta, 90, rng)
        k_list = [2, 5, 10]
        curves = edge_selection_likelihood_curve(
            data, [("random", method_random), ("oracle", method_oracle)],
            k_list=k_list, splits=3, seed=t, selection_n=40, truth=ps)
        gaps.append(np.mean(curves["oracle"] - curves["random"]))
    assert np.mean(gaps) > 0.0


# ---------------------------------------------------------------------------
# permutation error correlation


@pytest.fixture(scope="module")
def small_model_and_examples():
    model = init_params(NetConfig(input_size=10, depth=2, feature_maps=6),
                        derive_rng(30, "init"))
    gen = GeneratorConfig(p=10, n=25, alpha=0.8, seed=77)
    examples = [stream_example(gen, k) for k in range(12)]
    return model, examples


def test_identity_permutations_fully_correlated(small_model_and_examples):
    model, examples = small_model_and_examples
    identity = [np.arange(10)] * 3
    corr, mae = permutation_error_correlation(model, examples, m=3,
                                              permutations=identity)
    assert corr == pytest.approx(1.0, abs=1e-12)
    assert mae >= 0.0


def test_random_permutations_less_correlated(small_model_and_examples):
    model, examples = small_model_and_examples
    corr, mae = permutation_error_correlation(model, examples, m=6, seed=4)
    assert corr < 1.0
    assert np.isfinite(mae)
