"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op returns a fresh :class:`Tensor`; when any input requires a gradient
the result records its parents and a closure that maps the output gradient to
input gradients. :meth:`Tensor.backward` walks the recorded graph in reverse
topological order.

Conventions: ``relu'(0) = 0`` and ``d|x|/dx = 0`` at ``x = 0``.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "elementwise",
    "matmul",
    "reshape",
    "transpose",
    "concat_channels",
    "split_channels",
    "tsum",
    "mean",
    "l1_loss",
    "conv2d",
    "gradcheck",
    "no_grad",
]

_state = threading.local()


@contextlib.contextmanager
def no_grad():
    """Skip tape recording on this thread (inference)."""
    prev = getattr(_state, "off", False)
    _state.off = True
    try:
        yield
    finally:
        _state.off = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every requiring leaf.

        Intermediate gradients live only for the duration of the call, so
        calling twice without zeroing doubles the leaf gradients.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() needs a scalar loss, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if not getattr(_state, "off", False) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: incompatible shapes {a.shape} and {b.shape}"
        ) from None


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_ELEMENTWISE = {"add": add, "mul": mul}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch ``add``/``mul``/``relu``/``scale`` by name."""
    if op == "relu":
        return relu(a)
    if op == "scale":
        return scale(a, b)
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


# ----------------------------------------------------------------------------
# shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _result(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _result(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (g.transpose(inv),),
    )


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate ``[C_i, H, W]`` (or ``[N, C_i, H, W]``) tensors on channels."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_channels: no parts")
    if len(parts) == 1:
        return parts[0]
    axis = parts[0].ndim - 3
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or p.shape[:axis] + p.shape[axis + 1 :] != (
            ref[:axis] + ref[axis + 1 :]
        ):
            raise ValueError(
                f"concat_channels: mismatched extents {ref} and {p.shape}"
            )
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _result(
        np.concatenate([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def split_channels(a: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    axis = a.ndim - 3
    if sum(sizes) != a.shape[axis]:
        raise ValueError(f"split_channels: sizes {list(sizes)} vs {a.shape}")
    out = []
    start = 0
    for n in sizes:
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(start, start + n)
        sl = tuple(sl)

        def back(g, sl=sl):
            full = np.zeros_like(a.data)
            full[sl] = g
            return (full,)

        out.append(_result(a.data[sl].copy(), (a,), back))
        start += n
    return out


# ----------------------------------------------------------------------------
# reductions and losses


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _result(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.full(shape, float(g) / n),),
    )


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference; the subgradient at a tie is 0."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    sign = np.sign(diff)
    return _result(
        np.asarray(np.abs(diff).mean()),
        (pred, target),
        lambda g: (sign * (float(g) / n), sign * (-float(g) / n)),
    )


# ----------------------------------------------------------------------------
# convolution


def _padded_flat(x: np.ndarray, p: int) -> tuple[np.ndarray, int]:
    """Channels-first, zero-padded, flattened copy of ``x`` with guard bands.

    Returns ``buf`` of shape ``(C, guard + N*Hp*Wp + guard)``; shifting a
    window over the flattened padded grid by ``dy*Wp + dx`` realises a
    kernel tap without materialising im2col columns.
    """
    n, c, h, w = x.shape
    hp, wp = h + 2 * p, w + 2 * p
    guard = p * wp + p
    buf = np.zeros((c, n * hp * wp + 2 * guard))
    grid = buf[:, guard : guard + n * hp * wp].reshape(c, n, hp, wp)
    grid[:, :, p : p + h, p : p + w] = x.transpose(1, 0, 2, 3)
    return buf, guard


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1, zero-padded, shape-preserving 2-D cross-correlation.

    ``x`` is ``[C_in, H, W]`` or batched ``[N, C_in, H, W]``; ``kernel`` is
    ``[C_out, C_in, k, k]`` with odd ``k``; ``bias`` is ``[C_out]``.
    """
    if kernel.ndim != 4 or x.ndim not in (3, 4):
        raise ValueError(
            f"conv2d: bad ranks, input {x.shape} and kernel {kernel.shape}"
        )
    c_out, c_in, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square and odd, got {kernel.shape}")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.shape[1] != c_in:
        raise ValueError(
            f"conv2d: input {x.shape} does not match kernel {kernel.shape}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias {bias.shape} does not match kernel {kernel.shape}")
    n, _, h, w = xd.shape
    p = k // 2
    hp, wp = h + 2 * p, w + 2 * p
    length = n * hp * wp
    kd = np.ascontiguousarray(kernel.data.transpose(2, 3, 0, 1))  # k, k, O, C
    buf, guard = _padded_flat(xd, p)
    taps = [(dy, dx, guard + (dy - p) * wp + (dx - p)) for dy in range(k) for dx in range(k)]

    acc = np.zeros((c_out, length))
    for dy, dx, s in taps:
        acc += kd[dy, dx] @ buf[:, s : s + length]
    out = acc.reshape(c_out, n, hp, wp)[:, :, p : p + h, p : p + w]
    if bias is not None:
        out = out + bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    if unbatched:
        out = out[0]

    def back(g):
        g4 = g[None] if unbatched else g
        gpad = np.zeros((c_out, n, hp, wp))
        gpad[:, :, p : p + h, p : p + w] = g4.transpose(1, 0, 2, 3)
        gpad = gpad.reshape(c_out, length)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = np.empty((k, k, c_out, c_in))
            for dy, dx, s in taps:
                gk[dy, dx] = (buf[:, s : s + length] @ gpad.T).T
            gk = gk.transpose(2, 3, 0, 1)
        if x.requires_grad:
            gbuf = np.zeros_like(buf)
            for dy, dx, s in taps:
                gbuf[:, s : s + length] += kd[dy, dx].T @ gpad
            grid = gbuf[:, guard : guard + length].reshape(c_in, n, hp, wp)
            gx = np.ascontiguousarray(
                grid[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3)
            )
            if unbatched:
                gx = gx[0]
        if bias is not None and bias.requires_grad:
            gb = g4.sum(axis=(0, 2, 3))
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, back)


# ----------------------------------------------------------------------------
# verification


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-4,
    indices: Iterable[int] | None = None,
) -> float:
    """Worst-case relative error between ``backward()`` and central differences.

    The error is normwise: ``max|analytic - numeric| / max(max|analytic|,
    max|numeric|)`` over the probed elements, and 0 when both gradients vanish.
    ``indices`` restricts probing to a subset of flat positions of ``x``.
    """
    x.data = np.ascontiguousarray(x.data)
    was = x.requires_grad
    saved = x.grad
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    analytic = (
        np.zeros(x.data.size) if x.grad is None else x.grad.reshape(-1).copy()
    )
    x.grad, x.requires_grad = saved, was

    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(list(indices))
    numeric = np.empty(idx.size)
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        numeric[j] = (fp - fm) / (2 * h)
    a = analytic[idx]
    denom = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if denom < 1e-12:
        return float(np.abs(a - numeric).max(initial=0.0))
    return float(np.abs(a - numeric).max() / denom)
