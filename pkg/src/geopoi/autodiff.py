"""Minimal dense-tensor engine with reverse-mode differentiation.

Float64 throughout. Operations are module-level functions over `Tensor`;
when a `Tape` is active and an input is tracked, the op records a backward
rule. Replaying the records in reverse execution order accumulates
gradients into every tracked tensor.

Elementwise ops require exactly matching shapes or a scalar operand;
any other broadcast must be spelled out with `broadcast_to`/`reshape`.
`matmul` follows numpy stacking semantics on the last two axes.
"""
from __future__ import annotations

import threading

import numpy as np

_STATE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_STATE, "tapes", None)
    if stack is None:
        stack = []
        _STATE.tapes = stack
    return stack


class Tensor:
    """Dense float64 array, optionally tracked for gradients."""

    __slots__ = ("values", "grad", "requires_grad", "_tracked")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._tracked = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


class Tape:
    """Ordered record of executed differentiable ops (define-by-run)."""

    def __init__(self):
        self._records = []  # (output, inputs, backward_fn)
        self._produced = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every tracked tensor reachable from `loss`."""
        if loss.values.ndim != 0:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._produced and not loss.requires_grad:
            raise ValueError("loss is not on this tape")
        loss.grad = np.ones((), dtype=np.float64)
        for out, inputs, bwd in reversed(self._records):
            if out.grad is None:
                continue
            grads = bwd(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not (t.requires_grad or t._tracked):
                    continue
                if t.grad is None:
                    t.grad = np.zeros(t.shape, dtype=np.float64)
                t.grad += g


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad or t._tracked for t in inputs):
        out._tracked = True
        tape._records.append((out, inputs, bwd))
        tape._produced.add(id(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.values.ndim == 0 or b.values.ndim == 0:
        return
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)
    out = Tensor(a.values + b.values)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)
    out = Tensor(a.values - b.values)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    out = Tensor(a.values * b.values)
    av, bv = a.values, b.values

    def bwd(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record(out, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0:
        raise ValueError(f"matmul: operands must be at least 1-D, got {a.shape} and {b.shape}")
    if av.shape[-1] != (bv.shape[-2] if bv.ndim > 1 else bv.shape[0]):
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(av @ bv)

    def bwd(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:  # (k,) @ (k, m) -> (m,)
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:  # (..., m, k) @ (k,) -> (..., m)
            ga = g[..., :, None] * bv[None, :]
            gb = np.swapaxes(av, -1, -2) @ g
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record(out, (a, b), bwd)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def slice_(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing, differentiable through to `x`."""
    out = Tensor(x.values[key])
    xsh = x.shape

    def bwd(g):
        gx = np.zeros(xsh, dtype=np.float64)
        gx[key] += g
        return (gx,)

    return _record(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.values.reshape(shape))
    xsh = x.shape

    def bwd(g):
        return (g.reshape(xsh),)

    return _record(out, (x,), bwd)


def transpose(x: Tensor, axes=None) -> Tensor:
    out = Tensor(np.transpose(x.values, axes))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _record(out, (x,), bwd)


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = Tensor(np.broadcast_to(x.values, shape).copy())
    xsh = x.shape

    def bwd(g):
        return (_unbroadcast(g, xsh),)

    return _record(out, (x,), bwd)


def embedding_gather(table: Tensor, indices) -> Tensor:
    """Row lookup: out[..., :] = table[indices[...], :]."""
    idx = np.asarray(indices, dtype=np.int64)
    if table.values.ndim != 2:
        raise ValueError(f"embedding_gather: table must be 2-D, got {table.shape}")
    out = Tensor(table.values[idx])
    tsh = table.shape

    def bwd(g):
        gt = np.zeros(tsh, dtype=np.float64)
        np.add.at(gt, idx.ravel(), g.reshape(-1, tsh[1]))
        return (gt,)

    return _record(out, (table,), bwd)


def scatter_rows(x: Tensor, indices, rows: Tensor) -> Tensor:
    """Copy of `x` with row i of `rows` written at position indices[i].

    Indices must be unique; gradient flows to both `x` (outside the
    written rows) and `rows`.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("scatter_rows: indices must be unique")
    if rows.values.shape != (len(idx),) + x.values.shape[1:]:
        raise ValueError(f"scatter_rows: shape mismatch {rows.shape} vs {(len(idx),) + x.values.shape[1:]}")
    vals = x.values.copy()
    vals[idx] = rows.values
    out = Tensor(vals)

    def bwd(g):
        gx = g.copy()
        gx[idx] = 0.0
        return gx, g[idx]

    return _record(out, (x, rows), bwd)


def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis (numerically stabilized)."""
    v = x.values
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        return ((g - (g * s).sum(axis=-1, keepdims=True)) * s,)

    return _record(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    d = x.values.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = Tensor(xhat * gain.values + bias.values)
    gv = gain.values

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gv
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.values, 0.0))
    mask = x.values > 0.0

    def bwd(g):
        return (g * mask,)

    return _record(out, (x,), bwd)


def sin(x: Tensor) -> Tensor:
    out = Tensor(np.sin(x.values))
    xv = x.values

    def bwd(g):
        return (g * np.cos(xv),)

    return _record(out, (x,), bwd)


def cos(x: Tensor) -> Tensor:
    out = Tensor(np.cos(x.values))
    xv = x.values

    def bwd(g):
        return (-g * np.sin(xv),)

    return _record(out, (x,), bwd)


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(x.values.sum(axis=axis))
    xsh = x.shape

    def bwd(g):
        if axis is None:
            return (np.full(xsh, g, dtype=np.float64),)
        return (np.broadcast_to(np.expand_dims(g, axis), xsh).copy(),)

    return _record(out, (x,), bwd)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(x.values.mean(axis=axis))
    xsh = x.shape

    def bwd(g):
        if axis is None:
            return (np.full(xsh, g / np.prod(xsh), dtype=np.float64),)
        g_exp = np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, xsh) / xsh[axis],)

    return _record(out, (x,), bwd)


def cross_entropy_logits(logits: Tensor, targets) -> Tensor:
    """Softmax cross-entropy against integer class targets.

    1-D logits with a scalar target give a scalar loss; 2-D logits with a
    vector of per-row targets give a per-row loss vector.
    """
    v = logits.values
    if v.ndim == 1:
        t = int(targets)
        shifted = v - v.max()
        lse = np.log(np.exp(shifted).sum())
        out = Tensor(lse - shifted[t])
        probs = np.exp(shifted) / np.exp(shifted).sum()

        def bwd(g):
            gl = probs.copy()
            gl[t] -= 1.0
            return (gl * g,)

        return _record(out, (logits,), bwd)
    if v.ndim == 2:
        t = np.asarray(targets, dtype=np.int64)
        if t.shape != (v.shape[0],):
            raise ValueError(f"cross_entropy_logits: targets shape {t.shape} vs logits {logits.shape}")
        shifted = v - v.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=-1))
        rows = np.arange(v.shape[0])
        out = Tensor(lse - shifted[rows, t])
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)

        def bwd(g):
            gl = probs.copy()
            gl[rows, t] -= 1.0
            return (gl * g[:, None],)

        return _record(out, (logits,), bwd)
    raise ValueError(f"cross_entropy_logits: logits must be 1-D or 2-D, got {logits.shape}")


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


class AdamState:
    """Per-parameter Adam moments with bias correction."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One Adam update over `params`; zeroes their grads afterwards."""
    if list(params) != state.params:
        raise ValueError("adam_step: params do not match optimizer state")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1**t)
        v_hat = state.v[i] / (1.0 - b2**t)
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None
