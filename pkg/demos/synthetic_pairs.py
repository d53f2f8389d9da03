"""
Synthetic bitemporal feature pairs
==================================

Each record is a pair of feature grids plus five captions.  A change adds
a constant to one channel band inside one half of the grid; "no-change"
records are bit-identical pairs.
"""

import numpy as np

from changecap import TEMPLATES, gen_synthetic
from changecap.features import channel_band, quadrant_mask

records = gen_synthetic(seed=7, count=8)

for r in records:
    diff = r.features.f2 - r.features.f1
    cells = np.abs(diff).sum(axis=-1) > 0
    print(f"{r.id:>8}  {r.change_type:<13} {str(r.quadrant):<6} "
          f"changed cells {int(cells.sum()):2d}  -> {' '.join(r.captions[0])}")

###############################################################################
# Where a change lives: the north half of a 4x4 grid, and the channel band
# used by "build-houses" out of 16 channels.

print(quadrant_mask("north", 4, 4).astype(int))
print(channel_band("build-houses", 16))

###############################################################################
# Every caption comes from the five paraphrases of its change type.

for t in TEMPLATES["no-change"]:
    print(" ", t)
