"""Attentive encoder: positional embedding, hierarchical self-attention, cosine-mask ResBlock.

Feature tensors are channel-last.  A single pair is ``(h, w, C)``; a batch is
``(B, h, w, C)``.  Inside the attention stack they are flattened to token
sequences ``(..., hw, C)``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .config import ModelConfig
from .errors import DimensionError
from .features import FeaturePair
from .nn import (ParamSet, _param, add_attention_params, add_ffn_params, add_ln_params,
                 add_norm, concat_seq, feed_forward, glorot, self_attention_fused)
from .tensor import Tensor, as_tensor, concat, conv2d, cosine_rows, layer_norm, relu, reshape


class EncoderParams(ParamSet):
    """Learnable encoder weights.

    Names: ``f_pos``; ``hsa{j}.dsa.*`` and ``hsa{j}.jsa.*`` (``qkv``, ``wo``,
    ``ln_g``, ``ln_b``, ``ffn1_w`` ...); ``res.conv{1,2,3}_{k,b}``,
    ``res.ln_g``, ``res.ln_b``; ``out_proj``.
    """

    def zero_blocks(self) -> None:
        """Zero every attention, feed-forward and convolution weight and bias."""
        self.zero_(lambda k: k.startswith("hsa") and "ln_" not in k or k.startswith("res.conv"))


def init_encoder(cfg: ModelConfig, seed: int = 0) -> EncoderParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    C = cfg.channels
    p: dict = {}
    if cfg.pos_emb:
        p["f_pos"] = _param(rng.uniform(-0.1, 0.1, (cfg.h, cfg.w, C)), "f_pos")
    for j in range(cfg.enc_depth):
        for unit, on in (("dsa", cfg.dsa), ("jsa", cfg.jsa)):
            if not on:
                continue
            pre = f"hsa{j}.{unit}."
            add_attention_params(p, rng, pre, C, fused_qkv=True)
            add_ln_params(p, pre, C)
            add_ffn_params(p, rng, pre, C, cfg.ffn_dim)
    if cfg.res_block:
        for name, (k, cin, cout) in {"conv1": (1, 2 * C, C), "conv2": (3, C, C),
                                     "conv3": (1, C, 2 * C)}.items():
            p[f"res.{name}_k"] = _param(glorot(rng, (k, k, cin, cout), k * k * cin, k * k * cout),
                                        f"res.{name}_k")
            p[f"res.{name}_b"] = _param(np.zeros(cout), f"res.{name}_b")
    add_ln_params(p, "res.", 2 * C)
    p["out_proj"] = _param(glorot(rng, (2 * C, cfg.d_emb), 2 * C, cfg.d_emb), "out_proj")
    return EncoderParams(cfg, p)


def _pair_tensors(features) -> tuple:
    if isinstance(features, FeaturePair):
        return Tensor(features.f1), Tensor(features.f2)
    f1, f2 = features
    return as_tensor(f1), as_tensor(f2)


def add_positional(features, f_pos: Optional[Tensor]) -> tuple:
    """Add the same learnable position map to both dates."""
    f1, f2 = _pair_tensors(features)
    if f1.shape != f2.shape:
        raise DimensionError(f"feature pair shapes differ: {f1.shape} vs {f2.shape}")
    if f_pos is None:
        return f1, f2
    if f1.shape[-3:] != f_pos.shape:
        raise DimensionError(f"position embedding {f_pos.shape} vs features {f1.shape}")
    return f1 + f_pos, f2 + f_pos


def _unit(x: Tensor, params: ParamSet, prefix: str) -> Tensor:
    # attention -> add & norm -> feed-forward; the caller adds the outer residual
    heads = params.config.heads
    y = add_norm(self_attention_fused(x, params, prefix, heads), x, params, prefix)
    return feed_forward(y, params, prefix)


def dsa_unit(f: Tensor, params: EncoderParams, depth: int) -> Tensor:
    """Per-date self-attention; call once per date with the same params."""
    if f.shape[-1] % params.config.heads:
        raise DimensionError(f"C={f.shape[-1]} not divisible by {params.config.heads} heads")
    return _unit(f, params, f"hsa{depth}.dsa.") + f


def jsa_unit(f1: Tensor, f2: Tensor, params: EncoderParams, depth: int,
             residual: Optional[tuple] = None) -> tuple:
    """Self-attention over both dates joined along the token axis.

    The joint output is split back per date and added to ``residual``
    (defaults to the unit inputs).
    """
    if f1.shape != f2.shape:
        raise DimensionError(f"jsa_unit: stream shapes differ {f1.shape} vs {f2.shape}")
    n = f1.shape[-2]
    joint = _unit(concat_seq(f1, f2), params, f"hsa{depth}.jsa.")
    r1, r2 = residual if residual is not None else (f1, f2)
    return joint[..., :n, :] + r1, joint[..., n:, :] + r2


def hsa_stack(f1: Tensor, f2: Tensor, params: EncoderParams) -> tuple:
    """``enc_depth`` hierarchical blocks on flattened ``(..., hw, C)`` streams."""
    cfg = params.config
    for j in range(cfg.enc_depth):
        d1, d2 = f1, f2
        if cfg.dsa:
            d1, d2 = dsa_unit(f1, params, j), dsa_unit(f2, params, j)
        if cfg.jsa:
            d1, d2 = jsa_unit(d1, d2, params, j, residual=(f1, f2))
        f1, f2 = d1, d2
    return f1, f2


def cosine_mask(f1: Tensor, f2: Tensor) -> Tensor:
    return cosine_rows(f1, f2)


def res_block(f1: Tensor, f2: Tensor, params: EncoderParams) -> Tensor:
    """Fuse the two streams into the image embedding ``(..., hw, d_emb)``."""
    cfg = params.config
    fused = concat([f1, f2], axis=-1)
    if cfg.cos_mask:
        fused = fused + cosine_mask(f1, f2)
    if cfg.res_block:
        lead = fused.shape[:-2]
        grid = reshape(fused, (*lead, cfg.h, cfg.w, 2 * cfg.channels))
        x = relu(conv2d(grid, params["res.conv1_k"], 0) + params["res.conv1_b"])
        x = relu(conv2d(x, params["res.conv2_k"], 1) + params["res.conv2_b"])
        x = conv2d(x, params["res.conv3_k"], 0) + params["res.conv3_b"]
        fused = reshape(x, fused.shape) + fused
    e = layer_norm(fused, params["res.ln_g"], params["res.ln_b"])
    return e @ params["out_proj"]


def flatten(f: Tensor) -> Tensor:
    *lead, h, w, c = f.shape
    return reshape(f, (*lead, h * w, c))


def encode(features, params: EncoderParams) -> Tensor:
    """Feature pair (or batched ``(f1, f2)``) to image embedding ``(..., hw, d_emb)``."""
    cfg = params.config
    f1, f2 = add_positional(features, params.tensors.get("f_pos"))
    if f1.shape[-3:] != (cfg.h, cfg.w, cfg.channels):
        raise DimensionError(
            f"features {f1.shape} do not match encoder shape {(cfg.h, cfg.w, cfg.channels)}")
    f1, f2 = hsa_stack(flatten(f1), flatten(f2), params)
    return res_block(f1, f2, params)
