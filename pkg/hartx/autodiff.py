"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Operations executed inside ``with Tape() as tape:`` are recorded when at least one
input requires a gradient; ``tape.backward(loss)`` then walks the recorded nodes in
reverse order exactly once and accumulates gradients into leaf tensors. Outside a
tape every operation is a plain forward computation.

Gradients accumulate additively: call ``zero_grads`` between optimisation steps.
"""
from __future__ import annotations

import math
import threading
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ShapeError

DTYPE = np.float64
LAYER_NORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

GradRule = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_local = threading.local()


class Tensor:
    """Dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data: Any, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE, order="C")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(self.data) if requires_grad else None
        self.node_id: int | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> Tensor:
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=DTYPE)
        out.data = arr if arr.flags.c_contiguous else arr.copy()
        out.requires_grad = False
        out.grad = None
        out.node_id = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __matmul__(self, other: Any) -> Tensor:
        return matmul(self, other)


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class Node:
    node_id: int
    inputs: tuple[Tensor, ...]
    output: Tensor
    rule: GradRule


@dataclass
class Tape:
    """Ordered record of operations; inputs always precede the nodes that use them."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> Tape:
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _local.stack.pop()

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], rule: GradRule) -> None:
        output.requires_grad = True
        output.node_id = len(self.nodes)
        self.nodes.append(Node(output.node_id, inputs, output, rule))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        nid = loss.node_id
        if nid is None or nid >= len(self.nodes) or self.nodes[nid].output is not loss:
            raise ValueError("loss was not produced on this tape")
        pending: dict[int, tuple[Tensor, np.ndarray]] = {id(loss): (loss, np.ones_like(loss.data))}
        for node in reversed(self.nodes[: nid + 1]):
            entry = pending.pop(id(node.output), None)
            if entry is None:
                continue
            g = entry[1]
            node.output.grad = g
            for inp, gi in zip(node.inputs, node.rule(g), strict=True):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in pending:
                    pending[key] = (inp, pending[key][1] + gi)
                else:
                    pending[key] = (inp, gi)
        # whatever is left has no producing node here: leaves
        for leaf, g in pending.values():
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            leaf.grad += g


def current_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def _result(arr: np.ndarray, inputs: tuple[Tensor, ...], rule: GradRule) -> Tensor:
    out = Tensor._wrap(arr)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, rule)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}") from e
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}") from e
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}") from e
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    d = x.data
    t = np.tanh(_GELU_C * (d + 0.044715 * d**3))
    out = 0.5 * d * (1.0 + t)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * dt),)

    return _result(out, (x,), rule)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- structural


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. ``a`` may carry leading batch dims when ``b`` is 2-D; otherwise
    both operands need identical leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    if b.ndim == 2:
        out = a.data @ b.data

        def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return _result(out, (a, b), rule)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    out = a.data @ b.data
    return _result(
        out,
        (a, b),
        lambda g: (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g),
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from e
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), rule)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def max_over(x: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _result(out, (x,), rule)


def take(x: Tensor, indices: Sequence[int] | np.ndarray, axis: int = 0) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(x.data, idx, axis=axis)

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _result(out, (x,), rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat shape mismatch: {shapes}") from e
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


# ---------------------------------------------------------------- normalisation


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, with max-subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm expects gain/bias of shape ({d},), got {gain.shape}/{bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def rule(g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        return dx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _result(out, (x, gain, bias), rule)


# ---------------------------------------------------------------- losses


def l2_loss(y: Tensor, target: Any) -> Tensor:
    """Mean over the leading (batch) axis of the squared Euclidean distance.

    A 1-D input counts as a batch of one.
    """
    target = as_tensor(target)
    if y.shape != target.shape:
        raise ShapeError(f"l2_loss shape mismatch: {y.shape} vs {target.shape}")
    n = y.shape[0] if y.ndim > 1 else 1
    diff = y.data - target.data
    out = np.array((diff * diff).sum() / n)
    return _result(out, (y, target), lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))


def cross_entropy(logits: Tensor, labels: Sequence[int] | np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true class under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects B x C logits, got {logits.shape}")
    b, c = logits.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (b,):
        raise ShapeError(f"cross_entropy expects {b} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ValueError(f"label out of range [0, {c}): {y.tolist()}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    rows = np.arange(b)
    out = np.array(-logp[rows, y].mean())

    def rule(g: np.ndarray) -> tuple[np.ndarray]:
        p = np.exp(logp)
        p[rows, y] -= 1.0
        return (g * p / b,)

    return _result(out, (logits,), rule)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    worst_index: tuple[int, ...]
    checked: int


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_error > self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict[str, Any]:
        return {
            "tol": self.tol,
            "max_rel_error": self.max_rel_error,
            "ok": self.ok,
            "entries": [
                {
                    "name": e.name,
                    "max_rel_error": e.max_rel_error,
                    "worst_index": list(e.worst_index),
                    "checked": e.checked,
                }
                for e in self.entries
            ],
        }


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | Mapping[str, Tensor],
    tol: float = 1e-4,
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f()`` with central differences.

    ``f`` must be deterministic and read ``params`` directly. ``max_entries`` caps how
    many coordinates of each parameter are checked (sampled with ``seed``).
    """
    if isinstance(params, Mapping):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]
    for _, p in named:
        p.requires_grad = True
        p.zero_grad()
    with Tape() as tape:
        loss = f()
        if loss.node_id is not None:
            tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in named}

    rng = np.random.default_rng(seed)
    entries: list[GradCheckEntry] = []
    for name, p in named:
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst, worst_i = 0.0, 0
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            if err > worst:
                worst, worst_i = err, int(i)
        where = tuple(int(j) for j in np.unravel_index(worst_i, p.shape))
        entries.append(GradCheckEntry(name, worst, where, len(coords)))
    return GradCheckReport(entries, tol)
