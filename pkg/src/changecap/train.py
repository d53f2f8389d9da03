"""Training loop, Adam, learning-rate schedule, checkpoints, evaluation and captioning."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import TrainConfig
from .decoder import DecoderParams, forward_teacher_forced, greedy_decode, init_decoder
from .encoder import EncoderParams, encode, init_encoder
from .errors import ConfigError, DataError, DimensionError, NumericError
from .features import DatasetRecord, FeaturePair
from .metrics import EvalReport, bleu_n, evaluate_captions
from .tensor import Tape
from .vocab import Vocabulary, build_vocab, decode_caption, encode_caption

log = logging.getLogger(__name__)

CKPT_MAGIC = b"CGCK"
CKPT_VERSION = 1


# -- optimisation -----------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of ``params`` (name -> ndarray) in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: gradient {g.shape} vs parameter {k} {p.shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr0 * config.lr_decay ** (epoch // config.decay_every)


# -- checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    params: dict  # "enc.<name>" / "dec.<name>" -> ndarray
    epoch: int = -1
    best_bleu4: float = float("nan")

    def model(self) -> tuple[EncoderParams, DecoderParams]:
        enc = init_encoder(self.config, seed=self.config.seed)
        dec = init_decoder(self.config, seed=self.config.seed + 1)
        enc.load_arrays({k[4:]: v for k, v in self.params.items() if k.startswith("enc.")})
        dec.load_arrays({k[4:]: v for k, v in self.params.items() if k.startswith("dec.")})
        return enc.requires_grad_(False), dec.requires_grad_(False)

    def to_bytes(self) -> bytes:
        meta = {"config": self.config.to_dict(), "vocab": self.vocab.id_to_word[4:],
                "epoch": self.epoch, "best_bleu4": self.best_bleu4}
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob]
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            nb = name.encode("utf-8")
            parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes())
        return b"".join(parts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:4] != CKPT_MAGIC:
            raise DataError(f"not a checkpoint: magic {raw[:4]!r}")
        try:
            version, blen = struct.unpack_from("<II", raw, 4)
            if version != CKPT_VERSION:
                raise DataError(f"unsupported checkpoint version {version}")
            off = 12
            meta = json.loads(raw[off:off + blen].decode("utf-8"))
            off += blen
            params = {}
            while off < len(raw):
                (nlen,) = struct.unpack_from("<H", raw, off)
                off += 2
                name = raw[off:off + nlen].decode("utf-8")
                off += nlen
                (rank,) = struct.unpack_from("<B", raw, off)
                off += 1
                shape = struct.unpack_from(f"<{rank}I", raw, off)
                off += 4 * rank
                size = int(np.prod(shape)) * 8
                if off + size > len(raw):
                    raise DataError(f"checkpoint truncated inside tensor {name!r}")
                params[name] = np.frombuffer(raw, "<f8", int(np.prod(shape)), off).reshape(shape).astype(np.float64)
                off += size
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"corrupt checkpoint: {exc}") from exc
        config = TrainConfig.from_dict(meta["config"])
        ckpt = cls(config, Vocabulary(meta["vocab"]), params, meta["epoch"], meta["best_bleu4"])
        ckpt.check_shapes()
        return ckpt

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def check_shapes(self) -> None:
        """Raise ConfigError if stored tensors do not match the stored config."""
        if self.config.vocab_size != len(self.vocab):
            raise ConfigError(f"config vocab_size {self.config.vocab_size} != vocabulary {len(self.vocab)}")
        expected = _param_shapes(self.config)
        got = {k: v.shape for k, v in self.params.items()}
        if expected != got:
            bad = sorted(set(expected) ^ set(got)) or sorted(
                k for k in expected if expected[k] != got[k])
            raise ConfigError(f"checkpoint tensors incompatible with config: {bad[:5]}")


def _param_shapes(cfg: TrainConfig) -> dict:
    enc = init_encoder(cfg, cfg.seed)
    dec = init_decoder(cfg, cfg.seed + 1)
    shapes = {f"enc.{k}": t.shape for k, t in enc.items()}
    shapes.update({f"dec.{k}": t.shape for k, t in dec.items()})
    return shapes


def snapshot(config, vocab, enc, dec, epoch, best) -> Checkpoint:
    params = {f"enc.{k}": v for k, v in enc.arrays().items()}
    params.update({f"dec.{k}": v for k, v in dec.arrays().items()})
    return Checkpoint(config, vocab, params, epoch, best)


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list
    val_bleu4: list
    final: Checkpoint


def _batch(records, captions, vocab, n):
    f1 = np.stack([r.features.f1 for r in records])
    f2 = np.stack([r.features.f2 for r in records])
    ids = np.stack([encode_caption(c, vocab, n).ids for c in captions])
    return (f1, f2), ids


def caption_records(records, enc, dec, vocab, max_len=None) -> list[list[str]]:
    out = []
    for r in records:
        e_img = encode(r.features, enc)
        out.append(decode_caption(greedy_decode(e_img, dec, max_len), vocab))
    return out


def train(train_records, val_records, config: TrainConfig,
          vocab: Optional[Vocabulary] = None) -> TrainResult:
    """Adam on teacher-forced batches; keeps the epoch with the best validation BLEU-4.

    Each epoch shuffles the training set with the seeded generator and samples
    one reference caption per image.  Ties in BLEU-4 keep the earlier epoch.
    """
    if not train_records or not val_records:
        raise ConfigError("train and validation splits must both be non-empty")
    if vocab is None:
        vocab = build_vocab([c for r in train_records for c in r.captions], config.min_freq)
    config = config.replace(vocab_size=len(vocab))
    config.validate()
    shape = (config.h, config.w, config.channels)
    for r in list(train_records) + list(val_records):
        if r.features.shape != shape:
            raise DimensionError(f"record {r.id} features {r.features.shape} != config {shape}")

    enc = init_encoder(config, seed=config.seed)
    dec = init_decoder(config, seed=config.seed + 1)
    named = {f"enc.{k}": t for k, t in enc.items()}
    named.update({f"dec.{k}": t for k, t in dec.items()})
    arrays = {k: t.data for k, t in named.items()}
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    refs = [r.captions for r in val_records]

    losses, val_scores = [], []
    best: Optional[Checkpoint] = None
    for epoch in range(config.epochs):
        lr = lr_at_epoch(epoch, config)
        order = rng.permutation(len(train_records))
        picks = [train_records[i].captions[rng.integers(len(train_records[i].captions))]
                 for i in order]
        total, seen = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            feats, ids = _batch([train_records[i] for i in idx],
                                picks[s:s + config.batch_size], vocab, config.max_len)
            for t in named.values():
                t.grad = None
            with Tape() as tape:
                _, loss = forward_teacher_forced(feats, enc, dec, ids)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            tape.backward(loss)
            adam_step(arrays, {k: t.grad for k, t in named.items() if t.grad is not None}, state, lr)
            total += float(loss.data) * len(idx)
            seen += len(idx)
        losses.append(total / seen)

        if epoch % config.eval_every == 0 or epoch == config.epochs - 1:
            score = bleu_n(caption_records(val_records, enc, dec, vocab, config.max_len), refs, 4)
            val_scores.append((epoch, score))
            if best is None or score > best.best_bleu4:
                best = snapshot(config, vocab, enc, dec, epoch, score)
            log.info("epoch %d lr %.3g loss %.5f val BLEU-4 %.4f", epoch, lr, losses[-1], score)

    final = snapshot(config, vocab, enc, dec, config.epochs - 1,
                     val_scores[-1][1] if val_scores else float("nan"))
    return TrainResult(best, losses, val_scores, final)


def evaluate(checkpoint: Checkpoint, records, per_image: bool = False) -> EvalReport:
    """Greedy-decode every record and score against all of its references."""
    cfg = checkpoint.config
    shape = (cfg.h, cfg.w, cfg.channels)
    if not records:
        raise DataError("no records to evaluate")
    for r in records:
        if r.features.shape != shape:
            raise DimensionError(f"record {r.id} features {r.features.shape} != checkpoint {shape}")
    enc, dec = checkpoint.model()
    cands = caption_records(records, enc, dec, checkpoint.vocab, cfg.max_len)
    ids = [r.id for r in records] if per_image else None
    return evaluate_captions(cands, [r.captions for r in records], ids)


def caption(checkpoint: Checkpoint, pair: FeaturePair, with_attention: bool = False):
    """Caption one feature pair; optionally return per-word attention over the h*w cells."""
    cfg = checkpoint.config
    if pair.shape != (cfg.h, cfg.w, cfg.channels):
        raise DimensionError(f"features {pair.shape} != checkpoint {(cfg.h, cfg.w, cfg.channels)}")
    enc, dec = checkpoint.model()
    attn = [] if with_attention else None
    seq = greedy_decode(encode(pair, enc), dec, cfg.max_len, attn=attn)
    words = decode_caption(seq, checkpoint.vocab)
    sentence = " ".join(words)
    if not with_attention:
        return sentence
    labels = [checkpoint.vocab.id_to_word[i] for i in seq.ids[1:seq.valid_len]]
    dump = [{"word": w, "weights": a.reshape(cfg.h, cfg.w).tolist()} for w, a in zip(labels, attn)]
    return sentence, dump
