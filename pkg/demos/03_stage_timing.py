#!/usr/bin/env python3
"""Where does query time go? Times each pipeline stage on transformer-scale
inputs (32x32 grid, 384-dim features). The class-agnostic k-means pre-pass
dominates; everything per-class is comparatively free, which is why the
pre-pass is computed once and shared across all enrolled classes.

    python demos/03_stage_timing.py
"""

import numpy as np

from patchsearch import (
    ClassModel,
    FeatureMap,
    PatchSet,
    SearchConfig,
    benchmark,
    match_patches,
    query_prepass,
    refine_mask,
    score_candidates,
    select_best,
)

N, DIM, CLASSES = 32, 384, 5
rng = np.random.default_rng(0)
fmap = FeatureMap(rng.normal(size=(N, N, DIM)))
models = [
    ClassModel(c, f"object-{c}", rng.normal(size=DIM), 0.2, PatchSet(N, [(0, 0)]))
    for c in range(CLASSES)
]
config = SearchConfig(k_q=30, alpha_co=200.0, refine=True, seed=0)

# pre-compute stage inputs so each closure times exactly one stage
prepass = query_prepass(fmap, config)
raws = [match_patches(fmap, m) for m in models]
bests = [select_best(score_candidates(fmap, m, r)) for m, r in zip(models, raws)]

timing = benchmark(
    {
        "prepass": lambda: query_prepass(fmap, config),
        "match": lambda: [match_patches(fmap, m) for m in models],
        "score": lambda: [
            select_best(score_candidates(fmap, m, r)) for m, r in zip(models, raws)
        ],
        "refine": lambda: [refine_mask(best, prepass) for best, _ in bests],
    },
    warmup=1,
    iters=5,
)

total = sum(t["mean_ms"] for t in timing.values())
print(f"{'stage':<10}{'mean_ms':>10}{'p95_ms':>10}{'share':>9}")
for name, t in timing.items():
    print(f"{name:<10}{t['mean_ms']:>10.2f}{t['p95_ms']:>10.2f}"
          f"{t['mean_ms'] / total:>8.1%}")
print(f"{'total':<10}{total:>10.2f}")
print("\nthe pre-pass is shared by all classes, so per-query cost stays nearly "
      "flat as more objects are enrolled")
