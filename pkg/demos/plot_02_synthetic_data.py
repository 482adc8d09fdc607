"""
A synthetic two-modality dataset
================================

Each synthetic object has a facade image (a coloured rectangle grid) and an
interior image (a number of circles). With probability ``p`` a picture shows
its own class's motif. Otherwise it shows either the other class's motif or a
grey motif that carries no class at all.
"""

import tempfile
from collections import Counter
from pathlib import Path

from mmfusion.data import ImageLoader, SynthConfig, build_missing_pool, complete_samples, generate_synthetic

cfg = SynthConfig(
    objects_per_class_per_split={"train": 20, "val": 5, "test": 10},
    incomplete_objects_per_class_per_split={"train": 4, "val": 0, "test": 0},
    conflict_fraction=0.25,
    seed=7,
)
out = Path(tempfile.mkdtemp()) / "synthetic"
records = generate_synthetic(cfg, out)
print(len(records), "objects written to", out)
print(Counter((r.split, r.is_complete) for r in records))

###############################################################################
# Pair the complete training objects, then build a pool of single-modality
# samples. Half of the pool has a black facade and half a black interior.

loader = ImageLoader(out, size=64)
train = [r for r in records if r.split == "train"]
pairs = complete_samples([r for r in train if r.is_complete], seed=0, loader=loader, classes=cfg.classes)
pool = build_missing_pool(train, 8, seed=0, loader=loader, classes=cfg.classes)
print(len(pairs), "complete pairs")
print("pool:", Counter("no facade" if not s.facade_present else "no interior" for s in pool))
print("black pixels are exactly zero:", all(not s.facade.any() for s in pool if not s.facade_present))
