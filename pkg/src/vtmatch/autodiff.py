"""Dense float64 tensors with reverse-mode automatic differentiation.

This is a deliberately small engine: exactly the operations the match
network needs (strided convolution, affine layers, pointwise
nonlinearities, concatenation, global average pooling, dropout, a
logit-space binary cross entropy) plus the Adam optimizer and a
finite-difference gradient checker.

Execution model: operations run eagerly on numpy arrays.  When a
:class:`Tape` is active (entered as a context manager on the current
thread), every differentiable operation appends a backward closure to
it; :meth:`Tape.backward` replays those closures exactly once each, in
reverse execution order, accumulating gradients into ``Tensor.grad``.
With no active tape the same functions act as plain eager math, which is
what evaluation-mode inference uses.

One tape must only be used from one thread; the active-tape pointer is
thread-local, so independent tapes on different threads do not interact.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "AdamState",
    "conv2d",
    "affine",
    "relu",
    "sigmoid",
    "concat",
    "global_avg_pool",
    "dropout",
    "bce_with_logits",
    "add",
    "mul",
    "reduce_sum",
    "reduce_mean",
    "adam_step",
    "zero_grads",
    "grad_check",
]

_ACTIVE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A row-major float64 array with an optional gradient buffer.

    Invariant: values are finite; constructing a tensor from non-finite
    data raises :class:`NumericError`.  ``requires_grad`` marks leaves
    whose gradient is wanted; derived tensors inherit the flag from
    their inputs so backward work is skipped on dead branches.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("tensor constructed from non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations for one backward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into every recorded tensor's grad.

        Visits each recorded operation exactly once, in reverse
        execution order.  ``root`` must be scalar-sized.
        """
        if root.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for out, backward in reversed(self._records):
            if out.grad is not None:
                backward(out.grad)


def _result(data: np.ndarray, *parents: Tensor) -> Tensor:
    out = Tensor.__new__(Tensor)
    if not np.isfinite(data).all():
        raise NumericError("operation produced non-finite values")
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    return out


def _record(out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, backward)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# convolution


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N,C,Hp,Wp) -> (N, Ho*Wo, C*k*k) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * k * k)
    return np.ascontiguousarray(cols)


def _conv_raw(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    """Plain forward convolution; returns (out, cols) with cols kept for reuse."""
    n, c, h, wdt = x.shape
    f, _, k, _ = w.shape
    cols = _im2col(_pad2d(x, pad), k, stride)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wdt + 2 * pad - k) // stride + 1
    out = cols.reshape(n * ho * wo, c * k * k) @ w.reshape(f, c * k * k).T
    return out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2), cols


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of (N,C,H,W) input with an (F,C,k,k) kernel.

    Output spatial size is floor((H + 2*pad - k)/stride) + 1 per axis.
    Differentiable with respect to both the input and the kernel; the
    input gradient is computed as a stride-dilated transposed
    convolution so the whole pass stays in matrix products.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}"
        )
    n, c, h, wdt = x.shape
    f, ck, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {w.shape}")
    if ck != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, kernel {w.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d invalid stride/pad: {stride}/{pad}")
    if kh > h + 2 * pad or kw > wdt + 2 * pad:
        raise ShapeError(
            f"conv2d kernel {w.shape} larger than padded input {x.shape} (pad={pad})"
        )

    out_data, cols = _conv_raw(x.data, w.data, stride, pad)
    out = _result(out_data, x, w)

    k = kh
    ho, wo = out_data.shape[2], out_data.shape[3]

    def backward(g: np.ndarray) -> None:
        if w.requires_grad:
            go_cols = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
            gw = go_cols.T @ cols.reshape(n * ho * wo, c * k * k)
            _accum(w, gw.reshape(f, c, k, k))
        if x.requires_grad:
            # one matrix product gives every kernel tap's contribution;
            # taps never collide within a strided slice, so scattering
            # them back is nine cheap strided adds in NHWC layout
            contrib = np.tensordot(g, w.data, axes=([1], [0]))  # (N,Ho,Wo,C,k,k)
            gxp = np.zeros((n, h + 2 * pad, wdt + 2 * pad, c))
            for ta in range(k):
                for tb in range(k):
                    gxp[
                        :, ta : ta + stride * ho : stride,
                        tb : tb + stride * wo : stride, :,
                    ] += contrib[..., ta, tb]
            gx = gxp[:, pad : pad + h, pad : pad + wdt, :].transpose(0, 3, 1, 2)
            _accum(x, np.ascontiguousarray(gx))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# dense / pointwise ops


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x:(N,D), w:(D,M), b:(M,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"affine expects (N,D),(D,M),(M,), got {x.shape},{w.shape},{b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(
            f"affine dimension mismatch: {x.shape} @ {w.shape} + {b.shape}"
        )
    out = _result(x.data @ w.data + b.data, x, w, b)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            _accum(w, x.data.T @ g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0))

    _record(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = _result(np.where(mask, x.data, 0.0), x)

    def backward(g: np.ndarray) -> None:
        _accum(x, g * mask)

    _record(out, backward)
    return out


def _sigmoid_raw(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_raw(x.data)
    out = _result(s, x)

    def backward(g: np.ndarray) -> None:
        _accum(x, g * s * (1.0 - s))

    _record(out, backward)
    return out


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate tensors along ``axis``; all other axes must agree."""
    if not parts:
        raise ShapeError("concat of zero tensors")
    ndim = parts[0].data.ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat axis {axis} out of range for {ndim}-d tensors")
    axis = axis % ndim
    ref = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != ndim or any(
            other[i] != ref[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"concat shape mismatch on non-concat axes: {[q.shape for q in parts]}"
            )
    out = _result(np.concatenate([p.data for p in parts], axis=axis), *parts)

    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g: np.ndarray) -> None:
        index = [slice(None)] * ndim
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index[axis] = slice(int(start), int(stop))
                _accum(p, g[tuple(index)].copy())

    _record(out, backward)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) by averaging each channel's feature map."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    out = _result(x.data.mean(axis=(2, 3)), x)

    def backward(g: np.ndarray) -> None:
        _accum(x, np.tile((g / (h * w))[:, :, None, None], (1, 1, h, w)))

    _record(out, backward)
    return out


def dropout(
    x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None
) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors.

    Evaluation mode (or rate 0) returns the input unchanged and consumes
    no randomness, so eval behaviour is the exact identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit generator")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = _result(x.data * keep * scale, x)

    def backward(g: np.ndarray) -> None:
        _accum(x, g * keep * scale)

    _record(out, backward)
    return out


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross entropy evaluated from pre-sigmoid logits.

    Computes -mean[y*log(sigmoid(z)) + (1-y)*log(1-sigmoid(z))] via the
    softplus identity, so the result is finite for every finite logit
    (a logit of -50 with label 1 gives a loss near 50 rather than Inf).
    """
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, float)
    if y.shape != logits.shape:
        raise ShapeError(f"bce shapes differ: logits {logits.shape}, labels {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce labels must be 0 or 1")
    z = logits.data
    out = _result(np.array(np.mean(_softplus(z) - y * z)), logits)

    def backward(g: np.ndarray) -> None:
        _accum(logits, g * (_sigmoid_raw(z) - y) / z.size)

    _record(out, backward)
    return out


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b = Tensor(np.full_like(a.data, float(b)))
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, a, b)

    def backward(g: np.ndarray) -> None:
        _accum(a, g)
        _accum(b, g.copy())

    _record(out, backward)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
        out = _result(a.data * b.data, a, b)

        def backward(g: np.ndarray) -> None:
            _accum(a, g * b.data)
            _accum(b, g * a.data)

    else:
        scale = float(b)
        out = _result(a.data * scale, a)

        def backward(g: np.ndarray) -> None:
            _accum(a, g * scale)

    _record(out, backward)
    return out


def reduce_sum(x: Tensor) -> Tensor:
    out = _result(np.array(x.data.sum()), x)

    def backward(g: np.ndarray) -> None:
        _accum(x, np.full_like(x.data, float(g)))

    _record(out, backward)
    return out


def reduce_mean(x: Tensor) -> Tensor:
    out = _result(np.array(x.data.mean()), x)

    def backward(g: np.ndarray) -> None:
        _accum(x, np.full_like(x.data, float(g) / x.data.size))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def for_params(
        cls,
        params: Sequence[Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            t=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
) -> AdamState:
    """One bias-corrected Adam update; mutates params and state in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step length mismatch: {len(params)} params, "
            f"{len(grads)} grads, {len(state.m)} moments"
        )
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(
                f"adam_step grad shape {g.shape} != param shape {p.data.shape}"
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, points, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central differences.

    ``fn`` must be a pure, deterministic function of the given tensors
    returning a scalar tensor.  Relative error per coordinate is
    |a - n| / (max(|a|, |n|) + 1e-3), which stays meaningful when true
    gradients are near zero.  Non-finite function values raise
    :class:`NumericError` naming the offending coordinate.
    """
    pts = [points] if isinstance(points, Tensor) else list(points)
    for p in pts:
        p.requires_grad = True
        p.grad = None

    with Tape() as tape:
        out = fn(*pts)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ShapeError("grad_check function must return a scalar tensor")
    tape.backward(out)
    analytic = [
        p.grad if p.grad is not None else np.zeros_like(p.data) for p in pts
    ]
    zero_grads(pts)

    def evaluate() -> float:
        return float(fn(*pts).data)

    worst = 0.0
    for pi, p in enumerate(pts):
        flat = p.data.reshape(-1)
        aflat = analytic[pi].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            try:
                f_plus = evaluate()
            except NumericError as exc:
                raise NumericError(
                    f"non-finite value at point {pi}, coordinate {i}: {exc}"
                ) from exc
            flat[i] = saved - h
            try:
                f_minus = evaluate()
            except NumericError as exc:
                raise NumericError(
                    f"non-finite value at point {pi}, coordinate {i}: {exc}"
                ) from exc
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = aflat[i]
            rel = abs(a - numeric) / (max(abs(a), abs(numeric)) + 1e-3)
            if rel > worst:
                worst = rel
    return worst
