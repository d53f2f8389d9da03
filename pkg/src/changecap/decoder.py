"""Transformer caption decoder with a whole-layer word-embedding residual."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .config import ModelConfig
from .encoder import EncoderParams, encode
from .errors import ContractError, DimensionError, VocabError
from .nn import (ParamSet, _param, add_attention_params, add_ffn_params, add_ln_params,
                 add_norm, attention, feed_forward, glorot)
from .tensor import Tensor, as_tensor, getitem, log, log_softmax, softmax
from .vocab import END, PAD, START, TokenSequence


class DecoderParams(ParamSet):
    """Names: ``tok_emb``; ``layer{j}.self.*``, ``layer{j}.cross.*``,
    ``layer{j}.ffn*``; ``vocab_w``, ``vocab_b``."""

    def zero_layers(self) -> None:
        """Zero all attention projections and feed-forward weights and biases."""
        self.zero_(lambda k: k.startswith("layer") and "ln_" not in k)


def init_decoder(cfg: ModelConfig, seed: int = 1) -> DecoderParams:
    cfg.validate()
    if cfg.vocab_size < 4:
        raise VocabError(f"vocab_size must include the 4 special tokens, got {cfg.vocab_size}")
    rng = np.random.default_rng(seed)
    d, m = cfg.d_emb, cfg.vocab_size
    p: dict = {"tok_emb": _param(glorot(rng, (m, d), m, d), "tok_emb")}
    for j in range(cfg.dec_depth):
        for sub in ("self", "cross"):
            pre = f"layer{j}.{sub}."
            add_attention_params(p, rng, pre, d, fused_qkv=False)
            add_ln_params(p, pre, d)
        add_ffn_params(p, rng, f"layer{j}.", d, cfg.ffn_dim)
    p["vocab_w"] = _param(glorot(rng, (d, m), d, m), "vocab_w")
    p["vocab_b"] = _param(np.zeros(m), "vocab_b")
    return DecoderParams(cfg, p)


def sinusoidal_positions(n: int, d_emb: int) -> np.ndarray:
    """Row ``pos``: sin at even columns, cos at odd, frequency 1/10000^(2k/d)."""
    if d_emb % 2:
        raise ValueError(f"d_emb must be even, got {d_emb}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(d_emb // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * k / d_emb)
    out = np.empty((n, d_emb))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def causal_mask(n: int) -> np.ndarray:
    """Boolean lower-triangular mask; entry (i, j) is True iff j <= i."""
    if n < 1:
        raise ValueError("causal_mask needs n >= 1")
    return np.tril(np.ones((n, n), dtype=bool))


def _ids(t) -> np.ndarray:
    ids = t.ids if isinstance(t, TokenSequence) else t
    return np.asarray(ids, dtype=np.int64)


def embed_tokens(t, params: DecoderParams) -> Tensor:
    ids = _ids(t)
    m = params.config.vocab_size
    if ids.size and (ids.min() < 0 or ids.max() >= m):
        raise VocabError(f"token ids must lie in [0, {m}), got range [{ids.min()}, {ids.max()}]")
    n = ids.shape[-1]
    return getitem(params["tok_emb"], ids) + sinusoidal_positions(n, params.config.d_emb)


def _mha(q_in: Tensor, kv_in: Tensor, p: ParamSet, prefix: str, mask=None, store=None) -> Tensor:
    q = q_in @ p[prefix + "wq"]
    k = kv_in @ p[prefix + "wk"]
    v = kv_in @ p[prefix + "wv"]
    return attention(q, k, v, p.config.heads, mask=mask, store=store) @ p[prefix + "wo"]


def masked_self_attention(e: Tensor, params: DecoderParams, depth: int) -> Tensor:
    pre = f"layer{depth}.self."
    mask = causal_mask(e.shape[-2])
    return add_norm(_mha(e, e, params, pre, mask=mask), e, params, pre)


def cross_attention(s_text: Tensor, e_img: Tensor, params: DecoderParams, depth: int,
                    store: Optional[list] = None) -> Tensor:
    e_img = as_tensor(e_img)
    if e_img.shape[-1] != params.config.d_emb:
        raise DimensionError(
            f"image embedding width {e_img.shape[-1]} != d_emb {params.config.d_emb}")
    pre = f"layer{depth}.cross."
    return add_norm(_mha(s_text, e_img, params, pre, store=store), s_text, params, pre)


def decoder_layer(e_prev: Tensor, e_img: Tensor, params: DecoderParams, depth: int,
                  store: Optional[list] = None) -> Tensor:
    s = masked_self_attention(e_prev, params, depth)
    s = cross_attention(s, e_img, params, depth, store=store)
    return feed_forward(s, params, f"layer{depth}.") + e_prev


def decode_stack(t, e_img: Tensor, params: DecoderParams, store: Optional[list] = None) -> Tensor:
    e = embed_tokens(t, params)
    for j in range(params.config.dec_depth):
        e = decoder_layer(e, e_img, params, j, store=store)
    return e


def vocab_logits(e: Tensor, params: DecoderParams) -> Tensor:
    return e @ params["vocab_w"] + params["vocab_b"]


def project_vocab(e: Tensor, params: DecoderParams) -> Tensor:
    """Word probabilities ``(..., n, m)``."""
    return softmax(vocab_logits(e, params), axis=-1)


def _targets(ids: np.ndarray):
    """Index arrays selecting (position i, token i+1) for non-PAD targets."""
    tgt = ids[..., 1:]
    keep = tgt != PAD
    count = int(keep.sum())
    if count == 0:
        raise ContractError("no non-PAD target positions to score")
    where = np.nonzero(keep)
    return where, tgt[where], count


def _picked(table: Tensor, ids: np.ndarray):
    where, tok, count = _targets(ids)
    return getitem(table, (*where, tok)), count


def cross_entropy_loss(t_hat: Tensor, t) -> Tensor:
    """Mean of -log t_hat[i, t[i+1]] over positions whose target is not PAD."""
    ids = _ids(t)
    if t_hat.shape[:-1] != ids.shape:
        raise DimensionError(f"probabilities {t_hat.shape} vs tokens {ids.shape}")
    picked, count = _picked(t_hat, ids)
    return log(picked).sum() * (-1.0 / count)


def sequence_nll(logits: Tensor, t) -> Tensor:
    """Same loss as :func:`cross_entropy_loss`, computed from logits for stability."""
    ids = _ids(t)
    picked, count = _picked(log_softmax(logits, axis=-1), ids)
    return picked.sum() * (-1.0 / count)


def forward_teacher_forced(features, enc: EncoderParams, dec: DecoderParams, t):
    """Encode, decode the full reference sequence, return (probabilities, loss).

    ``features`` may be a single pair or batched ``(f1, f2)`` arrays with ``t``
    of shape ``(B, n)``.  Only ``loss`` carries gradients.
    """
    e_img = encode(features, enc)
    logits = vocab_logits(decode_stack(t, e_img, dec), dec)
    loss = sequence_nll(logits, t)
    probs = softmax(Tensor(logits.data), axis=-1)
    return probs, loss


def greedy_decode(e_img: Tensor, params: DecoderParams, max_len: Optional[int] = None,
                  attn: Optional[list] = None) -> TokenSequence:
    """Argmax decoding from START until END or ``max_len`` tokens.

    START and PAD are never emitted.  If the length budget runs out the final
    slot is END, so the result is always well formed.  With ``attn`` a list,
    one head-averaged cross-attention vector (last layer, newest position) is
    appended per generated token.
    """
    n = max_len or params.config.max_len
    e_img = as_tensor(e_img)
    ids = [START]
    while len(ids) < n - 1:
        store = [] if attn is not None else None
        e = decode_stack(np.array(ids), e_img, params, store=store)
        logits = vocab_logits(e[-1:, :], params).data[0]
        logits = logits.copy()
        logits[[PAD, START]] = -np.inf
        nxt = int(np.argmax(logits))
        if attn is not None:
            attn.append(store[-1][:, -1, :].mean(axis=0))
        ids.append(nxt)
        if nxt == END:
            break
    if ids[-1] != END:
        ids.append(END)
    valid = len(ids)
    out = np.zeros(n, dtype=np.int64)
    out[:valid] = ids
    return TokenSequence(out, valid)
