"""Parameter containers and the layer building blocks shared by encoder and decoder."""
from __future__ import annotations

import math
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (Tensor, concat, layer_norm, matmul, relu, reshape, softmax,
                     swap_last, transpose)


def glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamSet:
    """Ordered mapping of parameter name to :class:`Tensor`."""

    def __init__(self, config, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.tensors):
            missing = set(self.tensors) - set(arrays)
            extra = set(arrays) - set(self.tensors)
            raise DimensionError(f"parameter names differ: missing {sorted(missing)}, extra {sorted(extra)}")
        for k, t in self.tensors.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                raise DimensionError(f"parameter {k}: shape {a.shape} != expected {t.shape}")
            t.data = a.copy()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def zero_(self, select: Callable[[str], bool]) -> None:
        for k, t in self.tensors.items():
            if select(k):
                t.data[...] = 0.0

    def requires_grad_(self, flag: bool = True) -> "ParamSet":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self


def _param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def add_attention_params(out: dict, rng, prefix: str, d: int, fused_qkv: bool) -> None:
    if fused_qkv:
        out[prefix + "qkv"] = _param(glorot(rng, (d, 3 * d), d, 3 * d), prefix + "qkv")
    else:
        for k in ("wq", "wk", "wv"):
            out[prefix + k] = _param(glorot(rng, (d, d), d, d), prefix + k)
    out[prefix + "wo"] = _param(glorot(rng, (d, d), d, d), prefix + "wo")


def add_ln_params(out: dict, prefix: str, d: int) -> None:
    out[prefix + "ln_g"] = _param(np.ones(d), prefix + "ln_g")
    out[prefix + "ln_b"] = _param(np.zeros(d), prefix + "ln_b")


def add_ffn_params(out: dict, rng, prefix: str, d: int, hidden: int) -> None:
    out[prefix + "ffn1_w"] = _param(glorot(rng, (d, hidden), d, hidden), prefix + "ffn1_w")
    out[prefix + "ffn1_b"] = _param(np.zeros(hidden), prefix + "ffn1_b")
    out[prefix + "ffn2_w"] = _param(glorot(rng, (hidden, d), hidden, d), prefix + "ffn2_w")
    out[prefix + "ffn2_b"] = _param(np.zeros(d), prefix + "ffn2_b")


def feed_forward(x: Tensor, p: ParamSet, prefix: str) -> Tensor:
    hdn = relu(x @ p[prefix + "ffn1_w"] + p[prefix + "ffn1_b"])
    return hdn @ p[prefix + "ffn2_w"] + p[prefix + "ffn2_b"]


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``(..., n, d)`` -> ``(..., heads, n, d/heads)``."""
    *lead, n, d = x.shape
    if d % heads:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    x = reshape(x, (*lead, n, heads, d // heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, n, dk = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return reshape(transpose(x, axes), (*lead, n, heads * dk))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: Optional[np.ndarray] = None,
              store: Optional[list] = None) -> Tensor:
    """Multi-head softmax(QK^T / sqrt(d_k)) V on already-projected inputs.

    ``mask`` is boolean ``(n_q, n_k)``, True where attending is allowed.  When
    ``store`` is a list the attention weights ``(..., heads, n_q, n_k)`` are
    appended to it.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    dk = qh.shape[-1]
    scores = matmul(qh, swap_last(kh)) * (1.0 / math.sqrt(dk))
    weights = softmax(scores, axis=-1, mask=mask)
    if store is not None:
        store.append(weights.data)
    return merge_heads(matmul(weights, vh))


def self_attention_fused(x: Tensor, p: ParamSet, prefix: str, heads: int) -> Tensor:
    """Self-attention with a single ``C x 3C`` projection, then the output projection."""
    qkv = x @ p[prefix + "qkv"]
    d = x.shape[-1]
    q, k, v = qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]
    return attention(q, k, v, heads) @ p[prefix + "wo"]


def add_norm(x: Tensor, residual: Tensor, p: ParamSet, prefix: str) -> Tensor:
    return layer_norm(x + residual, p[prefix + "ln_g"], p[prefix + "ln_b"])


def concat_seq(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b], axis=-2)
