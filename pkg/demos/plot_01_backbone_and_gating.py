"""
Feature maps and channel gating
===============================

A DeskNet stream turns a 64x64 image into four feature maps of shrinking size.
An MMTM block looks at two such maps, squeezes each to channel means and
rescales every channel by a factor in (0, 2).
"""

import numpy as np

from mmfusion.backbone import DESKNET, desknet_init, forward_stages
from mmfusion.mmtm import mmtm_forward, mmtm_init

rng = np.random.default_rng(0)
facade = rng.random((64, 64, 3)).astype(np.float32)
interior = rng.random((64, 64, 3)).astype(np.float32)

# two streams with their own weights
maps_f = forward_stages(facade, desknet_init(1), DESKNET)
maps_i = forward_stages(interior, desknet_init(2), DESKNET)
for m in maps_f:
    print(f"stage {m.stage_index}: {m.shape}")

###############################################################################
# Gate the stage-3 maps. The signals live in (0, 2); a value above one boosts
# a channel, below one damps it.

w = mmtm_init(64, 64, seed=3)
out_f, out_i, signals = mmtm_forward(maps_f[2], maps_i[2], w)
print("bottleneck width:", w.cz)
print("facade gate range: %.3f .. %.3f" % (signals.s1.min(), signals.s1.max()))
print("interior gate range: %.3f .. %.3f" % (signals.s2.min(), signals.s2.max()))

###############################################################################
# With the excitation weights zeroed every gate is exactly one and the block
# passes its inputs through untouched.

for name in ("excite_weight_1", "excite_bias_1", "excite_weight_2", "excite_bias_2"):
    getattr(w, name)[...] = 0
same_f, _, signals = mmtm_forward(maps_f[2], maps_i[2], w)
print("identity:", np.array_equal(same_f.tensor, maps_f[2].tensor), signals.s1[:4])
