# scratch: criterion 10 (curve shapes) and the segmentation A-trend invariant
import time

import numpy as np
from scipy.stats import spearmanr

from rvit.harness import ExperimentConfig, evaluate_model, retention_curve, train_model
from rvit.synthdata import SceneSpec, generate_dataset, merge_classes

t0 = time.perf_counter()
SEEDS = (0, 1, 2)
RATIOS = (0.15, 0.25, 0.5, 1.0)

train_ds = generate_dataset(SceneSpec(corr_length=16.0, seed=7), 800)
eval_ds = generate_dataset(SceneSpec(corr_length=16.0, seed=8), 300)

# -- patch size sweep (Setting B curves) --
curves = {}
for patch in (4, 8, 16):
    per_seed = []
    for seed in SEEDS:
        cfg = ExperimentConfig(train_ratio=1.0, width=64, depth=4, heads=4,
                               patch_size=patch, epochs=5, batch_size=32,
                               learning_rate=0.1, seed=seed, image_size=64,
                               corr_length=16.0)
        model = train_model(cfg, train_ds)
        per_seed.append(retention_curve(model, eval_ds, RATIOS))
        print(f"P={patch} seed={seed}: {np.round(per_seed[-1], 4)} [{time.perf_counter()-t0:.0f}s]", flush=True)
    mean_curve = np.mean(per_seed, axis=0)
    curves[patch] = mean_curve / mean_curve[-1]
    print(f"P={patch} normalized: {np.round(curves[patch], 4)}", flush=True)

for a, b in ((4, 8), (4, 16), (8, 16)):
    rho = spearmanr(curves[a], curves[b]).statistic
    print(f"spearman P{a} vs P{b}: {rho:.3f}")

# -- granularity (coarse vs fine labels, P=8) --
coarse_train = merge_classes(train_ds, [[0, 1], [2, 3]])
coarse_eval = merge_classes(eval_ds, [[0, 1], [2, 3]])
fine_curves, coarse_curves = [], []
for seed in SEEDS:
    cfg = ExperimentConfig(train_ratio=1.0, width=64, depth=4, heads=4,
                           patch_size=8, epochs=5, batch_size=32,
                           learning_rate=0.1, seed=seed, image_size=64,
                           corr_length=16.0)
    fine_model = train_model(cfg, train_ds)
    fine_curves.append(retention_curve(fine_model, eval_ds, RATIOS))
    coarse_model = train_model(cfg, coarse_train)
    coarse_curves.append(retention_curve(coarse_model, coarse_eval, RATIOS))
    print(f"gran seed={seed}: fine {np.round(fine_curves[-1],4)} coarse {np.round(coarse_curves[-1],4)} [{time.perf_counter()-t0:.0f}s]", flush=True)
fine = np.mean(fine_curves, axis=0); fine /= fine[-1]
coarse = np.mean(coarse_curves, axis=0); coarse /= coarse[-1]
print(f"fine {np.round(fine,4)} coarse {np.round(coarse,4)} "
      f"spearman={spearmanr(fine, coarse).statistic:.3f}")

# -- segmentation Setting-A invariant at small scale --
seg_train = generate_dataset(SceneSpec(height=32, width=32, corr_length=8.0, seed=17), 400)
seg_eval = generate_dataset(SceneSpec(height=32, width=32, corr_length=8.0, seed=18), 150)
vals = {}
for r in (0.5, 1.0):
    per_seed = []
    for seed in SEEDS:
        cfg = ExperimentConfig(task="segmentation", train_ratio=r, width=32, depth=4,
                               heads=4, patch_size=8, epochs=5, batch_size=32,
                               learning_rate=0.1, seed=seed, image_size=32, corr_length=8.0)
        m = train_model(cfg, seg_train)
        per_seed.append(evaluate_model(m, seg_eval)[1])
    vals[r] = np.mean(per_seed)
    print(f"seg r_train={r}: mIoU {np.round(per_seed,4)} mean {vals[r]:.4f} [{time.perf_counter()-t0:.0f}s]", flush=True)
print(f"seg SettingA ratio: {vals[0.5]/vals[1.0]:.4f} (need >= 0.9)")
print(f"total {time.perf_counter()-t0:.0f}s")
