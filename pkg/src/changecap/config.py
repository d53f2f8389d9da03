"""Model and training configuration."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    # Defaults are the full-size setting (ResNet-101 features on 256x256 input).
    h: int = 8
    w: int = 8
    channels: int = 2048
    ct: int = 2048
    d_emb: int = 2048
    ffn_dim: int = 512
    heads: int = 8
    enc_depth: int = 3
    dec_depth: int = 1
    max_len: int = 41
    vocab_size: int = 0
    pos_emb: bool = True
    dsa: bool = True
    jsa: bool = True
    cos_mask: bool = True
    res_block: bool = True

    def validate(self) -> None:
        if self.ct != self.channels:
            raise ConfigError(f"projection width ct={self.ct} must equal channels={self.channels}")
        if min(self.h, self.w) < 1 or self.h * self.w < 2 or self.channels < 2:
            raise ConfigError(f"bad feature shape {self.h}x{self.w}x{self.channels}")
        if self.channels % self.heads:
            raise ConfigError(f"channels={self.channels} not divisible by heads={self.heads}")
        if self.d_emb % self.heads:
            raise ConfigError(f"d_emb={self.d_emb} not divisible by heads={self.heads}")
        if self.d_emb % 2:
            raise ConfigError(f"d_emb={self.d_emb} must be even for sinusoidal positions")
        if self.enc_depth < 0 or self.dec_depth < 1:
            raise ConfigError("need enc_depth >= 0 and dec_depth >= 1")
        if self.max_len < 2:
            raise ConfigError("max_len must leave room for START and END")
        if self.ffn_dim < 1:
            raise ConfigError("ffn_dim must be positive")


@dataclass
class TrainConfig(ModelConfig):
    lr0: float = 1e-4
    lr_decay: float = 0.5
    decay_every: int = 5
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    min_freq: int = 1
    eval_every: int = 1

    def validate(self) -> None:
        super().validate()
        if self.epochs < 1 or self.batch_size < 1 or self.decay_every < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size, decay_every and eval_every must be >= 1")
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def toy_config(**overrides) -> TrainConfig:
    """Desk-scale shapes used by the tests and demos."""
    base = dict(h=4, w=4, channels=16, ct=16, d_emb=32, ffn_dim=64, heads=4,
                enc_depth=3, dec_depth=1, max_len=12, batch_size=8,
                lr0=3e-3, lr_decay=0.5, decay_every=200, epochs=300)
    base.update(overrides)
    return TrainConfig(**base)
