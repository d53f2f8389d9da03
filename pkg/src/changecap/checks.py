"""Finite-difference gradient checks for every op and for the composed model."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import TrainConfig, toy_config
from .decoder import (cross_entropy_loss, decode_stack, forward_teacher_forced, init_decoder,
                      project_vocab)
from .encoder import encode, init_encoder
from .features import SyntheticConfig, gen_synthetic
from .tensor import Tensor, grad_check
from .vocab import build_vocab, encode_caption


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * w).sum()


def op_checks(seed: int = 0) -> dict[str, float]:
    """Each op wrapped as sum(op(x) * fixed random weights)."""
    rng = np.random.default_rng(seed)
    r = lambda *s: Tensor(rng.standard_normal(s))  # noqa: E731
    a, b = r(3, 4), r(4, 2)
    x, g, bi = r(5, 6), r(6), r(6)
    img, ker = r(4, 4, 3), r(3, 3, 3, 2)
    c1, c2 = r(5, 4), r(5, 4)
    logits, targets = r(2, 5, 7), np.array([[1, 4, 2, 0, 0], [1, 3, 5, 6, 2]])
    w = {k: rng.standard_normal(s) for k, s in
         {"mm": (3, 2), "sm": (5, 6), "ln": (5, 6), "cv": (4, 4, 2), "cos": (5, 1),
          "msm": (5, 5), "relu": (5, 6), "cat": (5, 12), "tr": (6, 5)}.items()}
    mask = np.tril(np.ones((5, 5), dtype=bool))
    sq = r(5, 5)
    checks = {
        "matmul": lambda: grad_check(lambda v: _weighted(T.matmul(v[0], v[1]), w["mm"]), [a, b]),
        "softmax_rows": lambda: grad_check(lambda v: _weighted(T.softmax_rows(v), w["sm"]), x),
        "masked_softmax": lambda: grad_check(
            lambda v: _weighted(T.softmax(v, mask=mask), w["msm"]), sq),
        "log_softmax": lambda: grad_check(lambda v: _weighted(T.log_softmax(v), w["sm"]), x),
        "layer_norm": lambda: grad_check(
            lambda v: _weighted(T.layer_norm(v[0], v[1], v[2]), w["ln"]), [x, g, bi]),
        "conv2d_3x3": lambda: grad_check(
            lambda v: _weighted(T.conv2d(v[0], v[1], 1), w["cv"]), [img, ker]),
        "cosine_rows": lambda: grad_check(
            lambda v: _weighted(T.cosine_rows(v[0], v[1]), w["cos"]), [c1, c2]),
        "relu": lambda: grad_check(lambda v: _weighted(T.relu(v), w["relu"]), x),
        "concat": lambda: grad_check(
            lambda v: _weighted(T.concat([v, v * 2.0], axis=-1), w["cat"]), x),
        "transpose": lambda: grad_check(lambda v: _weighted(v.T, w["tr"]), x),
        "exp_log": lambda: grad_check(lambda v: T.log(T.exp(v).sum()), x),
        "softmax_cross_entropy": lambda: grad_check(
            lambda v: cross_entropy_loss(T.softmax(v), targets), logits),
    }
    return {k: fn() for k, fn in checks.items()}


def toy_problem(cfg: TrainConfig | None = None, batch: int = 2, seed: int = 7):
    recs = gen_synthetic(seed, batch, SyntheticConfig(cfg.h if cfg else 4, cfg.w if cfg else 4,
                                                      cfg.channels if cfg else 16))
    vocab = build_vocab([c for r in recs for c in r.captions])
    cfg = (cfg or toy_config()).replace(vocab_size=len(vocab))
    enc, dec = init_encoder(cfg, 0), init_decoder(cfg, 1)
    feats = (np.stack([r.features.f1 for r in recs]), np.stack([r.features.f2 for r in recs]))
    ids = np.stack([encode_caption(r.captions[0], vocab, cfg.max_len).ids for r in recs])
    return cfg, enc, dec, feats, ids


def model_checks(max_entries: int | None = 4, seed: int = 0,
                 stats: dict | None = None) -> dict[str, float]:
    """Encoder, decoder and composed loss on a two-record toy batch.

    ``stats`` (if given) receives per-check ``checked``/``skipped`` entry counts.
    """
    stats = {} if stats is None else stats
    for k in ("encoder", "decoder", "encoder+decoder"):
        stats[k] = {}
    cfg, enc, dec, feats, ids = toy_problem()
    wimg = np.random.default_rng(seed).standard_normal((2, cfg.h * cfg.w, cfg.d_emb))
    e_img = Tensor(np.random.default_rng(seed + 1).standard_normal(wimg.shape))
    loss = lambda _: forward_teacher_forced(feats, enc, dec, ids)[1]  # noqa: E731
    return {
        "encoder": grad_check(lambda _: _weighted(encode(feats, enc), wimg),
                              list(enc.values()), max_entries=max_entries, seed=seed,
                              stats=stats["encoder"]),
        "decoder": grad_check(
            lambda _: cross_entropy_loss(project_vocab(decode_stack(ids, e_img, dec), dec), ids),
            list(dec.values()) + [e_img], max_entries=max_entries, seed=seed,
            stats=stats["decoder"]),
        "encoder+decoder": grad_check(loss, list(enc.values()) + list(dec.values()),
                                      max_entries=max_entries, seed=seed,
                                      stats=stats["encoder+decoder"]),
    }


def run_gradchecks(module: str = "all") -> dict[str, float]:
    out = {}
    if module in ("ops", "all"):
        out.update(op_checks())
    if module in ("encoder", "decoder", "model", "all"):
        res = model_checks()
        if module == "encoder":
            res = {"encoder": res["encoder"]}
        elif module == "decoder":
            res = {"decoder": res["decoder"]}
        out.update(res)
    if not out:
        raise ValueError(f"unknown gradcheck module {module!r}")
    return out
