"""Retrain the 39-net with a mixed-strength prior; optionally different schedule."""
import sys, time
import numpy as np
from graphest.net import NetConfig, init_params, save_model
from graphest.train import TrainConfig, train_loop, write_history
from graphest.samplers import GeneratorConfig, dataset_stream, stream_example, calibrate_alpha
from graphest.rng import derive_rng

schedule = sys.argv[1] if len(sys.argv) > 1 else "arithmetic"
max_examples = int(sys.argv[2]) if len(sys.argv) > 2 else 100_000
tag = sys.argv[3] if len(sys.argv) > 3 else schedule

alpha = calibrate_alpha(39, 0.94, derive_rng(1001, "alpha"))
gen = GeneratorConfig(p=39, n=35, alpha=alpha, c=1.5, c_spread=0.133,
                      seed=derive_rng(1001, "train").integers(2**62))
val_gen = GeneratorConfig(p=39, n=35, alpha=alpha, c=1.5, c_spread=0.133,
                          seed=derive_rng(1001, "val").integers(2**62))
model = init_params(NetConfig(input_size=39, depth=6, feature_maps=50,
                              dilation_schedule=schedule),
                    derive_rng(1001, "init"))
tcfg = TrainConfig(batch_size=32, lr=3e-3, val_examples=128, eval_every=100,
                   patience=15, min_delta=1e-4, max_examples=max_examples)
val = [stream_example(val_gen, k) for k in range(tcfg.val_examples)]
t0 = time.time()
best, hist = train_loop(model, dataset_stream(gen), tcfg, val)
save_model(best, f"artifacts/exp_{tag}.dgnn")
write_history(f"artifacts/exp_{tag}_history.csv", hist)
print(f"{tag}: best val_loss={min(h['val_loss'] for h in hist):.5f} "
      f"final val_auc={hist[-1]['val_auc']:.4f} "
      f"examples={hist[-1]['examples_seen']} ({time.time()-t0:.0f}s)", flush=True)
