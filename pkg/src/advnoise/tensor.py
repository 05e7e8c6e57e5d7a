"""A small dense-tensor engine with reverse-mode automatic differentiation.

Tensors hold float64 numpy arrays. Each operation returns a fresh tensor
that remembers its parents and a backward closure; ``backward()`` on a
scalar loss replays the recorded graph in reverse topological order and
accumulates gradients, so a tensor used twice receives the sum of both
path gradients. Graph-tracked tensors are never mutated in place.

Only the operations the layers above need are provided: matmul, conv2d,
relu, tanh, bias add, elementwise add/mul, reshape, sum, and a
numerically stabilized softmax cross-entropy. ``finite_diff_grad`` is the
independent gradient oracle used throughout the test suite.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Rng


class Tensor:
    """Dense float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """Stop-gradient: same values, no graph history."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Populate grads of every tensor reachable from this scalar loss.

        Grads of reachable tensors are reset at the start of the pass;
        within the pass they accumulate across all uses.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # Convenience operators; the named functions below do the work.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return shift(self, -float(other))

    def __neg__(self):
        return scale(self, -1.0)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def backward(g):
        a.grad += g
        b.grad += g

    return Tensor(a.data + b.data, parents=(a, b), backward=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)

    def backward(g):
        a.grad += g * b.data
        b.grad += g * a.data

    return Tensor(a.data * b.data, parents=(a, b), backward=backward)


def scale(a: Tensor, k: float) -> Tensor:
    def backward(g):
        a.grad += g * k

    return Tensor(a.data * k, parents=(a,), backward=backward)


def shift(a: Tensor, k: float) -> Tensor:
    def backward(g):
        a.grad += g

    return Tensor(a.data + k, parents=(a,), backward=backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        a.grad += np.full_like(a.data, float(g))

    return Tensor(a.data.sum(), parents=(a,), backward=backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape

    def backward(g):
        a.grad += g.reshape(old)

    return Tensor(a.data.reshape(shape), parents=(a,), backward=backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a.grad += g * mask

    return Tensor(np.where(mask, a.data, 0.0), parents=(a,), backward=backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        a.grad += g * (1.0 - out_data * out_data)

    return Tensor(out_data, parents=(a,), backward=backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul: shapes {a.shape} and {b.shape} are not compatible")

    def backward(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    return Tensor(a.data @ b.data, parents=(a, b), backward=backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast-add a per-feature bias: b is (K,) for x (N, K), or
    (F,) for x (N, F, H, W)."""
    if x.data.ndim == 2:
        if b.shape != (x.shape[1],):
            raise ValueError(
                f"add_bias: bias {b.shape} does not match input {x.shape}")
        out_data = x.data + b.data[None, :]
        axes = (0,)
    elif x.data.ndim == 4:
        if b.shape != (x.shape[1],):
            raise ValueError(
                f"add_bias: bias {b.shape} does not match input {x.shape}")
        out_data = x.data + b.data[None, :, None, None]
        axes = (0, 2, 3)
    else:
        raise ValueError(f"add_bias: unsupported input shape {x.shape}")

    def backward(g):
        x.grad += g
        b.grad += g.sum(axis=axes)

    return Tensor(out_data, parents=(x, b), backward=backward)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation with zero padding.

    x is (N, C, H, W), kernel is (F, C, kh, kw); output spatial size is
    floor((H + 2*padding - kh) / stride) + 1.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(
            f"conv2d: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, ck, kh, kw = kernel.shape
    if c != ck:
        raise ValueError(
            f"conv2d: input channels {x.shape} do not match kernel {kernel.shape}")
    p, s = int(padding), int(stride)
    hp, wp = h + 2 * p, w + 2 * p
    if kh > hp or kw > wp:
        raise ValueError(
            f"conv2d: kernel {kernel.shape} larger than padded input "
            f"({n}, {c}, {hp}, {wp})")
    oh = (hp - kh) // s + 1
    ow = (wp - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    out_data = np.einsum("ncxyij,fcij->nfxy", win, kernel.data, optimize=True)

    def backward(g):
        kernel.grad += np.einsum("ncxyij,nfxy->fcij", win, g, optimize=True)
        dxp = np.zeros_like(xp)
        contrib = np.einsum("nfxy,fcij->ncxyij", g, kernel.data, optimize=True)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += contrib[:, :, :, :, i, j]
        x.grad += dxp[:, :, p:p + h, p:p + w] if p else dxp

    return Tensor(out_data, parents=(x, kernel), backward=backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Stabilized by max-subtraction, so adding a constant to every logit
    leaves the loss unchanged.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(
            f"softmax_cross_entropy: label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sum_ez = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(sum_ez)
    loss = -log_probs[np.arange(n), labels].mean()

    def backward(g):
        grad = ez / sum_ez
        grad[np.arange(n), labels] -= 1.0
        logits.grad += grad * (float(g) / n)

    return Tensor(loss, parents=(logits,), backward=backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax over the last axis (no graph)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def gaussian(rng: Rng, shape) -> Tensor:
    """Standard-normal tensor drawn from the given stream (no graph)."""
    return Tensor(rng.normal(shape))


def finite_diff_grad(f: Callable[[Tensor], "Tensor | float"], x: Tensor,
                     h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at
    a time. The independent oracle for every analytic gradient in this
    package; O(2 * x.size) evaluations of f."""
    if h <= 0:
        raise ValueError("finite_diff_grad: h must be positive")

    def evaluate(arr: np.ndarray) -> float:
        out = f(Tensor(arr))
        return float(out.data) if isinstance(out, Tensor) else float(out)

    base = x.data.reshape(-1)
    grad = np.zeros_like(base)
    for i in range(base.size):
        plus = base.copy()
        plus[i] += h
        minus = base.copy()
        minus[i] -= h
        grad[i] = (evaluate(plus.reshape(x.shape)) -
                   evaluate(minus.reshape(x.shape))) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))
