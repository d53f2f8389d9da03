"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever at
least one input requires a gradient.  Outside a tape everything is plain numpy
arithmetic, which is what inference uses.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (x * x).sum()
    >>> tape.backward(loss)
    >>> x.grad
    array([2., 4.])
"""
from __future__ import annotations

import threading
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DeterminismError, DimensionError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Node(NamedTuple):
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so the list is topologically sorted
    by construction; :meth:`backward` walks it once in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: "Tensor") -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(n.output) for n in self.nodes}
        if id(loss) not in produced and not loss.requires_grad:
            raise ContractError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if id(loss) not in produced:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = inp
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: "Tensor", tape: Tape) -> None:
    tape.backward(loss)


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100.0

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return swap_last(self)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, inputs: tuple, bwd: Callable) -> Tensor:
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, needs)
    if needs:
        tape.record(Node(op, inputs, out, bwd))
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    """Natural log; inputs must be strictly positive."""
    xd = x.data
    return _make("log", np.log(xd), (x,), lambda g: (g / xd,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    trace = getattr(_local, "relu_trace", None)
    if trace is not None:
        trace.append(pos)
    return _make("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


# -- reductions and shape ---------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(n))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    src = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape

    def bwd(g):
        z = np.zeros(shape)
        np.add.at(z, idx, g)
        return (z,)

    return _make("getitem", x.data[idx], (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


# -- linear algebra ---------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), bwd)


# -- fused numerics ---------------------------------------------------------

def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Stable softmax.  ``mask`` (bool, broadcastable) marks allowed entries;
    disallowed logits act as -inf.  Every slice needs one allowed entry."""
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _make("softmax", s, (x,), bwd)


def softmax_rows(x: Tensor) -> Tensor:
    return softmax(x, axis=-1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _make("log_softmax", out, (x,),
                 lambda g: (g - s * np.sum(g, axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gain`` and ``bias``."""
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm over a degenerate dimension of size {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        gg = np.sum(g * xhat, axis=lead)
        gb = np.sum(g, axis=lead)
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make("layer_norm", xhat * gd + bias.data, (x, gain, bias), bwd)


def cosine_rows(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Per-row cosine similarity over the last axis, shape ``(..., 1)``.

    Rows where either norm is below ``eps`` score 0 (and get no gradient).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_rows: shapes differ {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    dot = np.sum(ad * bd, axis=-1, keepdims=True)
    na = np.sqrt(np.sum(ad * ad, axis=-1, keepdims=True))
    nb = np.sqrt(np.sum(bd * bd, axis=-1, keepdims=True))
    ok = (na >= eps) & (nb >= eps)
    na_s = np.where(ok, na, 1.0)
    nb_s = np.where(ok, nb, 1.0)
    cos = np.where(ok, dot / (na_s * nb_s), 0.0)

    def bwd(g):
        g = np.where(ok, g, 0.0)
        ga = g * (bd / (na_s * nb_s) - cos * ad / (na_s * na_s))
        gb = g * (ad / (na_s * nb_s) - cos * bd / (nb_s * nb_s))
        return ga, gb

    return _make("cosine_rows", cos, (a, b), bwd)


def conv2d(x: Tensor, kernel: Tensor, padding: int) -> Tensor:
    """2D cross-correlation on channel-last input ``(..., h, w, cin)``.

    ``kernel`` is ``(kh, kw, cin, cout)`` with odd spatial sizes; stride 1.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: unsupported even kernel size {kh}x{kw}")
    if x.ndim < 3 or x.shape[-1] != cin:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    h, w = x.shape[-3], x.shape[-2]
    p = int(padding)
    ho, wo = h + 2 * p - kh + 1, w + 2 * p - kw + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    lead = x.shape[:-3]
    pad = [(0, 0)] * len(lead) + [(p, p), (p, p), (0, 0)]
    xp = np.pad(x.data, pad)
    cols = np.concatenate(
        [xp[..., i:i + ho, j:j + wo, :] for i in range(kh) for j in range(kw)], axis=-1)
    k2 = kernel.data.reshape(kh * kw * cin, cout)
    out = cols @ k2

    def bwd(g):
        gk = np.tensordot(cols, g, axes=(tuple(range(cols.ndim - 1)),) * 2).reshape(kernel.shape)
        gcols = g @ k2.T
        gxp = np.zeros(xp.shape)
        for n, (i, j) in enumerate((i, j) for i in range(kh) for j in range(kw)):
            gxp[..., i:i + ho, j:j + wo, :] += gcols[..., n * cin:(n + 1) * cin]
        gx = gxp[..., p:p + h, p:p + w, :] if p else gxp
        return gx, gk

    return _make("conv2d", out, (x, kernel), bwd)


# -- gradient checking ------------------------------------------------------

def _scalar(y: Tensor) -> float:
    if y.data.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {y.shape}")
    return float(y.data.reshape(-1)[0])


def _traced(f: Callable, x):
    """Evaluate ``f(x)``; also return the on/off pattern of every relu it ran."""
    _local.relu_trace = []
    try:
        y = _scalar(f(x))
        return y, _local.relu_trace
    finally:
        _local.relu_trace = None


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))


def grad_check(f: Callable, x, step: float = 1e-5, max_entries: Optional[int] = None,
               seed: int = 0, stats: Optional[dict] = None) -> float:
    """Max over checked entries of |autodiff - central difference| / max(1, |central|).

    ``x`` is one tensor or a sequence of tensors; ``f(x)`` must return a scalar.
    With ``max_entries`` only a seeded random subset of each tensor is perturbed.
    An entry whose +-step probe flips any relu on or off straddles a kink, where
    the central difference is not a derivative estimate; such entries are skipped
    and counted.  Pass a dict as ``stats`` to receive ``checked`` and ``skipped``.
    """
    if not step > 0:
        raise ValueError(f"grad_check step must be positive, got {step}")
    xs = [x] if isinstance(x, Tensor) else list(x)

    first = f(x).data.copy()
    if not np.array_equal(first, f(x).data):
        raise DeterminismError("function returned different values on identical inputs")

    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad, t.grad = True, None
    try:
        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in xs]
    finally:
        for t, (rg, gr) in zip(xs, saved):
            t.requires_grad, t.grad = rg, gr

    _, base = _traced(f, x)
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for t, ga in zip(xs, analytic):
        flat = t.data.reshape(-1)
        if not np.shares_memory(flat, t.data):
            raise ContractError("grad_check needs contiguous tensor data")
        size = flat.size
        idxs = range(size)
        if max_entries is not None and size > max_entries:
            idxs = np.sort(rng.choice(size, max_entries, replace=False))
        gflat = ga.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            fp, pat_p = _traced(f, x)
            flat[i] = orig - step
            fm, pat_m = _traced(f, x)
            flat[i] = orig
            if not (_same_pattern(base, pat_p) and _same_pattern(base, pat_m)):
                skipped += 1
                continue
            fd = (fp - fm) / (2.0 * step)
            worst = max(worst, abs(gflat[i] - fd) / max(1.0, abs(fd)))
            checked += 1
    if stats is not None:
        stats.update(checked=checked, skipped=skipped)
    return worst
