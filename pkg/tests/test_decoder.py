import math

import numpy as np
import pytest

from changecap import toy_config
from changecap.config import ModelConfig
from changecap.decoder import (causal_mask, cross_attention, cross_entropy_loss, decode_stack,
                               decoder_layer, embed_tokens, forward_teacher_forced,
                               greedy_decode, init_decoder, masked_self_attention,
                               project_vocab, sequence_nll, sinusoidal_positions, vocab_logits)
from changecap.encoder import init_encoder
from changecap.errors import ContractError, DimensionError, VocabError
from changecap.tensor import Tape, Tensor, softmax
from changecap.train import AdamState, adam_step
from changecap.vocab import END, PAD, START

from .oracles import attention_direct, ln_rows, softmax_direct


def small_cfg(**kw):
    base = dict(h=2, w=2, channels=4, ct=4, d_emb=8, ffn_dim=6, heads=2, enc_depth=1,
                dec_depth=1, max_len=8, vocab_size=11)
    base.update(kw)
    return ModelConfig(**base)


def test_sinusoidal_positions():
    pe = sinusoidal_positions(6, 8)
    assert np.array_equal(pe[0, 0::2], np.zeros(4)) and np.array_equal(pe[0, 1::2], np.ones(4))
    assert np.all(np.abs(pe) <= 1.0)
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-15)
    assert pe[1, 1] == pytest.approx(math.cos(1.0), abs=1e-15)
    assert (round(pe[1, 0], 5), round(pe[1, 1], 5)) == (0.84147, 0.5403)
    assert pe[3, 4] == pytest.approx(math.sin(3 / 10000 ** (4 / 8)), abs=1e-15)
    with pytest.raises(ValueError):
        sinusoidal_positions(3, 7)


def test_embed_tokens():
    cfg = small_cfg()
    p = init_decoder(cfg, 2)
    ids = np.array([1, 5, 5, 2])
    pe = sinusoidal_positions(4, 8)
    np.testing.assert_array_equal(embed_tokens(ids, p).data, p["tok_emb"].data[ids] + pe)
    e = embed_tokens(ids, p).data
    np.testing.assert_allclose(e[2] - e[1], pe[2] - pe[1], atol=1e-15)
    p["tok_emb"].data[...] = 0
    np.testing.assert_array_equal(embed_tokens(ids, p).data, pe)
    with pytest.raises(VocabError):
        embed_tokens(np.array([1, 11]), p)


def test_causal_mask():
    np.testing.assert_array_equal(causal_mask(3).astype(int), [[1, 0, 0], [1, 1, 0], [1, 1, 1]])
    np.testing.assert_array_equal(causal_mask(1), [[True]])
    s = softmax(Tensor(np.random.default_rng(0).standard_normal((5, 5))), mask=causal_mask(5)).data
    for i in range(5):
        assert set(np.nonzero(s[i])[0]) == set(range(i + 1))


def test_masked_self_attention_single_token_and_oracle():
    cfg = small_cfg(d_emb=2, heads=1, ffn_dim=3)
    p = init_decoder(cfg, 4)
    pre = "layer0.self."
    one = np.array([[0.3, -0.7]])
    want = ln_rows(one @ p[pre + "wv"].data @ p[pre + "wo"].data + one,
                   p[pre + "ln_g"].data, p[pre + "ln_b"].data)
    np.testing.assert_allclose(masked_self_attention(Tensor(one), p, 0).data, want, atol=1e-12)

    e = np.array([[0.5, 1.0], [-1.5, 0.25]])
    q, k, v = (e @ p[pre + n].data for n in ("wq", "wk", "wv"))
    att, _ = attention_direct(q, k, v, mask=[[1, 0], [1, 1]])
    want = ln_rows(att @ p[pre + "wo"].data + e, p[pre + "ln_g"].data, p[pre + "ln_b"].data)
    np.testing.assert_allclose(masked_self_attention(Tensor(e), p, 0).data, want, atol=1e-12)


def test_causality_exact():
    cfg = small_cfg()
    rng = np.random.default_rng(1)
    p = init_decoder(cfg, 3)
    e_img = Tensor(rng.standard_normal((4, 8)))
    ids = rng.integers(0, 11, 8)
    base = vocab_logits(decode_stack(ids, e_img, p), p).data
    for k in range(8):
        other = ids.copy()
        other[k] = (other[k] + 1) % 11
        got = vocab_logits(decode_stack(other, e_img, p), p).data
        assert np.max(np.abs(got[:k] - base[:k]), initial=0.0) <= 1e-12
        assert np.any(got[k] != base[k])


def test_cross_attention_cases():
    cfg = small_cfg(d_emb=2, heads=1, ffn_dim=3)
    p = init_decoder(cfg, 5)
    pre = "layer0.cross."
    s = np.array([[0.2, -0.4], [1.0, 0.5]])
    img = np.array([[1.0, 0.0], [0.5, 0.5], [-1.0, 2.0]])
    q, k, v = s @ p[pre + "wq"].data, img @ p[pre + "wk"].data, img @ p[pre + "wv"].data
    att, _ = attention_direct(q, k, v)
    want = ln_rows(att @ p[pre + "wo"].data + s, p[pre + "ln_g"].data, p[pre + "ln_b"].data)
    np.testing.assert_allclose(cross_attention(Tensor(s), Tensor(img), p, 0).data, want, atol=1e-12)

    const = np.tile([[0.7, -0.2]], (3, 1))
    got = cross_attention(Tensor(s), Tensor(const), p, 0).data
    v0 = const[0] @ p[pre + "wv"].data @ p[pre + "wo"].data
    np.testing.assert_allclose(got, ln_rows(s + v0, p[pre + "ln_g"].data, p[pre + "ln_b"].data),
                               atol=1e-12)

    p.zero_layers()
    np.testing.assert_allclose(cross_attention(Tensor(s), Tensor(img), p, 0).data,
                               ln_rows(s, p[pre + "ln_g"].data, p[pre + "ln_b"].data), atol=1e-15)
    with pytest.raises(DimensionError):
        cross_attention(Tensor(s), Tensor(np.ones((3, 5))), p, 0)


def test_decoder_layer_residual():
    cfg = small_cfg()
    p = init_decoder(cfg, 6)
    rng = np.random.default_rng(2)
    e = Tensor(rng.standard_normal((5, 8)))
    img = Tensor(rng.standard_normal((4, 8)))
    p.zero_layers()
    assert np.array_equal(decoder_layer(e, img, p, 0).data, e.data)

    q = init_decoder(cfg, 6)
    q.zero_(lambda k: "ffn" in k)
    e.requires_grad = True
    with Tape() as tape:
        loss = (decoder_layer(e, img, q, 0) * rng.standard_normal((5, 8))).sum()
    tape.backward(loss)
    assert e.grad is not None and np.any(e.grad != 0)


def test_project_vocab():
    cfg = small_cfg()
    p = init_decoder(cfg, 1)
    e = Tensor(np.random.default_rng(3).standard_normal((4, 8)))
    probs = project_vocab(e, p).data
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    logits = e.data @ p["vocab_w"].data + p["vocab_b"].data
    np.testing.assert_allclose(probs[2], softmax_direct(list(logits[2])), atol=1e-12)
    p["vocab_b"].data[7] = 500.0
    assert project_vocab(e, p).data[:, 7] == pytest.approx(np.ones(4))
    p["vocab_w"].data[...] = 0
    p["vocab_b"].data[...] = 0
    np.testing.assert_allclose(project_vocab(e, p).data, 1.0 / 11, atol=1e-15)


def test_cross_entropy_loss():
    ids = np.array([START, 5, 6, END, PAD, PAD])
    one_hot = np.zeros((6, 9))
    for i in range(5):
        one_hot[i, ids[i + 1]] = 1.0
    one_hot[5, 0] = 1.0
    assert cross_entropy_loss(Tensor(one_hot), ids).item() == 0.0
    uniform = Tensor(np.full((6, 9), 1 / 9))
    assert cross_entropy_loss(uniform, ids).item() == pytest.approx(math.log(9), abs=1e-15)

    rng = np.random.default_rng(4)
    probs = rng.uniform(0.1, 1.0, (6, 9))
    probs /= probs.sum(axis=1, keepdims=True)
    want = -sum(math.log(probs[i, ids[i + 1]]) for i in range(3)) / 3
    assert cross_entropy_loss(Tensor(probs), ids).item() == pytest.approx(want, abs=1e-14)
    logits = np.log(probs) + 1.7
    assert sequence_nll(Tensor(logits), ids).item() == pytest.approx(want, abs=1e-13)
    with pytest.raises(ContractError):
        cross_entropy_loss(uniform, np.array([START, PAD, PAD, PAD, PAD, PAD]))


def _toy_pair(cfg, seed=0):
    rng = np.random.default_rng(seed)
    return tuple(rng.standard_normal((cfg.h, cfg.w, cfg.channels)) for _ in range(2))


def test_greedy_decode():
    cfg = small_cfg()
    p = init_decoder(cfg, 8)
    img = Tensor(np.random.default_rng(5).standard_normal((4, 8)))
    a, b = greedy_decode(img, p), greedy_decode(img, p)
    assert a.tolist() == b.tolist()
    ids = a.tolist()[:a.valid_len]
    assert ids[0] == START and ids[-1] == END and ids.count(END) == 1
    assert all(i == PAD for i in a.tolist()[a.valid_len:])

    p["vocab_w"].data[...] = 0
    p["vocab_b"].data[...] = 0
    p["vocab_b"].data[END] = 5.0
    forced = greedy_decode(img, p)
    assert forced.tolist()[:2] == [START, END] and forced.valid_len == 2


def test_greedy_decode_ignores_pad_embedding():
    cfg = small_cfg()
    p = init_decoder(cfg, 9)
    img = Tensor(np.random.default_rng(6).standard_normal((4, 8)))
    before = greedy_decode(img, p).tolist()
    p["tok_emb"].data[PAD] += 100.0
    assert greedy_decode(img, p).tolist() == before


def test_greedy_decode_attention_rows():
    cfg = small_cfg()
    p = init_decoder(cfg, 9)
    img = Tensor(np.random.default_rng(6).standard_normal((4, 8)))
    attn = []
    seq = greedy_decode(img, p, attn=attn)
    # one row per generated token; a forced trailing END has none
    assert len(attn) in (seq.valid_len - 1, seq.valid_len - 2) and attn
    for row in attn:
        assert row.shape == (4,) and abs(row.sum() - 1.0) <= 1e-9


def test_forward_teacher_forced():
    cfg = small_cfg()
    enc, dec = init_encoder(cfg, 0), init_decoder(cfg, 1)
    pair = _toy_pair(cfg)
    ids = np.array([START, 4, 5, 6, END, PAD, PAD, PAD])
    probs, loss = forward_teacher_forced(pair, enc, dec, ids)
    assert np.isfinite(loss.item())
    np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-9)

    dec["vocab_w"].data[...] = 0
    _, loss = forward_teacher_forced(pair, enc, dec, ids)
    assert loss.item() == pytest.approx(math.log(11), abs=1e-12)


def test_loss_decreases_under_adam():
    cfg = small_cfg()
    enc, dec = init_encoder(cfg, 0), init_decoder(cfg, 1)
    named = {**{"e" + k: t for k, t in enc.items()}, **{"d" + k: t for k, t in dec.items()}}
    pair = _toy_pair(cfg)
    ids = np.array([START, 4, 5, 6, END, PAD, PAD, PAD])
    state = AdamState()
    losses = []
    for _ in range(50):
        for t in named.values():
            t.grad = None
        with Tape() as tape:
            _, loss = forward_teacher_forced(pair, enc, dec, ids)
        tape.backward(loss)
        losses.append(loss.item())
        adam_step({k: t.data for k, t in named.items()},
                  {k: t.grad for k, t in named.items()}, state, 1e-2)
    assert losses[-1] < 0.5 * losses[0]


def test_probabilities_normalised_batched():
    cfg = toy_config(vocab_size=30)
    enc, dec = init_encoder(cfg, 0), init_decoder(cfg, 1)
    rng = np.random.default_rng(0)
    feats = tuple(rng.standard_normal((3, 4, 4, 16)) for _ in range(2))
    ids = np.tile([START, 5, 6, 7, END] + [PAD] * 7, (3, 1))
    probs, _ = forward_teacher_forced(feats, enc, dec, ids)
    assert probs.shape == (3, 12, 30)
    assert np.max(np.abs(probs.data.sum(axis=-1) - 1.0)) <= 1e-9
