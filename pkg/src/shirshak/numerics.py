"""Dense tensor kernels with reverse-mode automatic differentiation.

Just enough for the toy transformer: matmul, embedding lookup, softmax,
layer norm, dropout, relu, reshape/transpose, broadcast add/mul, and
cross-entropy with an ignore sentinel. Arrays are numpy; float32 is the
training default, float64 the verification mode for gradient checks.

Dropout randomness is counter-based on (seed, layer_id, step) so repeated
runs are exactly reproducible.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import ContractError

# When enabled, every forward kernel asserts its output is finite.
DEBUG_CHECKS = False


class Tensor:
    """A numpy array plus the graph edge that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data), requires_grad=True, name=name)


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=False, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if DEBUG_CHECKS and np.issubdtype(np.asarray(data).dtype, np.floating):
        if not np.all(np.isfinite(data)):
            raise ContractError("kernel produced non-finite values (debug check)")
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
    else:
        t.grad = t.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- kernels -----------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(grad, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    out_data = x.data * c

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * c)

    return _make(out_data, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as in numpy.matmul."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(grad: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(grad @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ grad, b.shape))

    return _make(out_data, (a, b), backward)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding ids outside table of {table.shape[0]} rows: "
            f"min {ids.min()}, max {ids.max()}"
        )
    out_data = table.data[ids]

    def backward(grad: np.ndarray) -> None:
        if not table.requires_grad:
            return
        dtable = np.zeros_like(table.data)
        np.add.at(dtable, ids.reshape(-1), grad.reshape(-1, table.shape[-1]))
        _accumulate(table, dtable)

    return _make(out_data, (table,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * (x.data > 0))

    return _make(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    with np.errstate(under="ignore"):
        e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(grad: np.ndarray) -> None:
        inner = (grad * out_data).sum(axis=axis, keepdims=True)
        _accumulate(x, (grad - inner) * out_data)

    return _make(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to mean 0 / variance 1, then scale and shift."""
    gain, shift = _as_tensor(gain), _as_tensor(shift)
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ContractError(
            f"layer_norm gain/shift must have shape ({d},), got {gain.shape} and {shift.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out_data = x_hat * gain.data + shift.data

    def backward(grad: np.ndarray) -> None:
        _accumulate(gain, _unbroadcast(grad * x_hat, gain.shape))
        _accumulate(shift, _unbroadcast(grad, shift.shape))
        if x.requires_grad:
            dx_hat = grad * gain.data
            mean_dx = dx_hat.mean(axis=-1, keepdims=True)
            mean_dx_xhat = (dx_hat * x_hat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv_std * (dx_hat - mean_dx - x_hat * mean_dx_xhat))

    return _make(out_data, (x, gain, shift), backward)


def dropout_mask(shape: tuple[int, ...], p: float, key: tuple[int, int, int], dtype) -> np.ndarray:
    """Keep mask scaled by 1/(1-p); counter-based on (seed, layer_id, step)."""
    seed, layer_id, step = key
    philox = np.random.Philox(
        key=np.array(
            [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(((layer_id & 0xFFFFFFFF) << 32) | (step & 0xFFFFFFFF))],
            dtype=np.uint64,
        )
    )
    rng = np.random.Generator(philox)
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype(1.0 - p)


def dropout(x: Tensor, p: float, key: tuple[int, int, int], training: bool) -> Tensor:
    """Inverted dropout: scales survivors by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = dropout_mask(x.shape, p, key, x.data.dtype.type)
    out_data = x.data * mask

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad * mask)

    return _make(out_data, (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = x.data.reshape(shape)
    in_shape = x.shape

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, grad.reshape(in_shape))

    return _make(out_data, (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    out_data = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, np.transpose(grad, inverse))

    return _make(out_data, (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())

    def backward(grad: np.ndarray) -> None:
        _accumulate(x, np.broadcast_to(grad, x.shape).astype(x.data.dtype, copy=False))

    return _make(out_data, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_sentinel: int = -100) -> Tensor:
    """Mean negative log-softmax over non-ignored positions.

    An all-ignored batch yields loss 0 with zero gradient.
    """
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ContractError(
            f"cross_entropy expects logits [N, V] and targets [N], got {logits.shape} and {targets.shape}"
        )
    n, v = logits.shape
    valid = targets != ignore_sentinel
    bad = valid & ((targets < 0) | (targets >= v))
    if bad.any():
        raise ContractError(
            f"targets outside [0, {v}) at positions {np.flatnonzero(bad)[:8].tolist()}"
        )
    n_valid = int(valid.sum())

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    with np.errstate(under="ignore"):
        exp = np.exp(shifted)
    log_z = np.log(exp.sum(axis=1, keepdims=True))
    log_probs = shifted - log_z

    if n_valid == 0:
        out_data = np.asarray(0.0, dtype=logits.data.dtype)
    else:
        picked = log_probs[valid, targets[valid]]
        out_data = np.asarray(-picked.sum() / n_valid, dtype=logits.data.dtype)

    def backward(grad: np.ndarray) -> None:
        dlogits = np.zeros_like(logits.data)
        if n_valid > 0:
            probs = exp / exp.sum(axis=1, keepdims=True)
            rows = np.flatnonzero(valid)
            dlogits[rows] = probs[rows]
            dlogits[rows, targets[rows]] -= 1.0
            dlogits[rows] *= np.asarray(grad) / n_valid
        _accumulate(logits, dlogits)

    return _make(out_data, (logits,), backward)


# --- reverse-mode sweep --------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every reachable tensor with requires_grad.

    Grads are cleared across the reachable graph first, so calling backward
    twice on the same graph produces identical values.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def gradients(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward and collect gradients for named parameters.

    Parameters untouched by the loss report zero gradients.
    """
    backward(loss)
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
