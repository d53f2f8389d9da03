"""
Encoder ablations and parameter counts
======================================

Each flag removes one piece of the encoder: the learned position map, the
per-date self-attention, the joint self-attention, the cosine mask or the
convolutional fusion block.
"""

from changecap import init_encoder, toy_config

rows = {
    "full": {},
    "no JSA": {"jsa": False},
    "no DSA": {"dsa": False},
    "no DSA, no JSA": {"dsa": False, "jsa": False},
    "no position map": {"pos_emb": False},
    "no cosine mask": {"cos_mask": False},
    "no res block": {"res_block": False},
}
for name, flags in rows.items():
    print(f"{name:18s} {init_encoder(toy_config(**flags)).count():7d}")
