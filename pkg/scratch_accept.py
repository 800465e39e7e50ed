# scratch: dry run of acceptance criteria 7/8/9 at the pinned configuration
import time

import numpy as np

from rvit.harness import ExperimentConfig, evaluate_model, train_model
from rvit.synthdata import SceneSpec, generate_dataset

t0 = time.perf_counter()
SEEDS = (0, 1, 2)
results = {}
for lam, lr in ((16.0, 0.1), (1.0, 0.05)):
    train_ds = generate_dataset(SceneSpec(corr_length=lam, seed=7), 2000)
    eval_ds = generate_dataset(SceneSpec(corr_length=lam, seed=8), 500)
    for seed in SEEDS:
        for r in (0.25, 1.0):
            cfg = ExperimentConfig(
                strategy="ms1", train_ratio=r, width=64, depth=4, heads=4,
                patch_size=8, epochs=8, batch_size=32, learning_rate=lr,
                seed=seed, image_size=64, corr_length=lam,
            )
            model = train_model(cfg, train_ds)
            _, full_eval = evaluate_model(model, eval_ds, "ms1", 1.0)
            _, quarter_eval = evaluate_model(model, eval_ds, "ms1", 0.25)
            results[(lam, seed, r)] = (full_eval, quarter_eval)
            print(f"lam={lam} seed={seed} r_train={r}: eval_full={full_eval:.4f} "
                  f"eval_quarter={quarter_eval:.4f} [{time.perf_counter()-t0:.0f}s]",
                  flush=True)

for lam in (16.0, 1.0):
    masked = np.mean([results[(lam, s, 0.25)][0] for s in SEEDS])
    full = np.mean([results[(lam, s, 1.0)][0] for s in SEEDS])
    print(f"lam={lam}: SettingA masked/full = {masked:.4f}/{full:.4f} = {masked/full:.4f}")
    b_masked = np.mean([results[(lam, s, 0.25)][1] for s in SEEDS])
    b_full = np.mean([results[(lam, s, 1.0)][1] for s in SEEDS])
    print(f"lam={lam}: SettingB eval@0.25: trained-masked {b_masked:.4f} vs trained-full {b_full:.4f}")
deg16 = 1 - np.mean([results[(16.0, s, 0.25)][0] for s in SEEDS]) / np.mean(
    [results[(16.0, s, 1.0)][0] for s in SEEDS])
deg1 = 1 - np.mean([results[(1.0, s, 0.25)][0] for s in SEEDS]) / np.mean(
    [results[(1.0, s, 1.0)][0] for s in SEEDS])
print(f"degradation lam16={deg16:.4f} lam1={deg1:.4f} (criterion 9 needs lam16 < lam1)")
print(f"total {time.perf_counter()-t0:.0f}s")
