"""Dense-tensor kernel with reverse-mode gradients, Adam, and a finite-difference checker.

Tensors wrap contiguous numpy arrays (float64 by default; float32 in fast mode).
Every op records a backward closure; ``backward()`` replays them in reverse
topological order, so gradients reach exactly the trainable leaves. The module's
defining contract is agreement with central finite differences (see ``gradcheck``).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_GRAD_ENABLED = True
_CHECKED = False


@contextmanager
def no_grad():
    """Disable graph construction (forward values only) inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def checked():
    """Verify after every op that outputs are finite. Slow; for tests."""
    global _CHECKED
    prev = _CHECKED
    _CHECKED = True
    try:
        yield
    finally:
        _CHECKED = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, backward_fn):
    """Wrap an op result, attaching the backward closure only when needed."""
    if _CHECKED and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def back(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _result(data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * c

    def back(g):
        _accum(a, g * c)

    return _result(data, (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def back(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(data, (a, b), back)


def transpose(a: Tensor) -> Tensor:
    data = a.data.T

    def back(g):
        _accum(a, g.T)

    return _result(data, (a,), back)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def back(g):
        _accum(a, g * (a.data > 0))

    return _result(data, (a,), back)


def softmax_rows(a: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction.

    ``additive_mask`` is a constant array added to the logits (use large
    negative entries to exclude positions); no gradient flows through it.
    """
    if a.data.ndim != 2:
        raise ValueError(f"softmax_rows expects a matrix, got shape {a.data.shape}")
    z = a.data if additive_mask is None else a.data + additive_mask
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        _accum(a, (g - dot) * s)

    return _result(s, (a,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with learned elementwise gain and bias."""
    if x.data.ndim != 2:
        raise ValueError(f"layer_norm expects a matrix, got shape {x.data.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    data = y * gain.data + bias.data

    def back(g):
        _accum(gain, _unbroadcast(g * y, gain.data.shape))
        _accum(bias, _unbroadcast(g, bias.data.shape))
        gy = g * gain.data
        n = x.data.shape[1]
        dx = inv * (gy - gy.mean(axis=1, keepdims=True) - y * (gy * y).mean(axis=1, keepdims=True))
        _accum(x, dx)

    return _result(data, (x, gain, bias), back)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError(
            f"embedding_lookup id out of range [0, {table.data.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    data = table.data[ids]

    def back(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _result(data, (table,), back)


def concat_rows(parts: list[Tensor]) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]

    def back(g):
        off = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[off : off + n])
            off += n

    return _result(data, tuple(parts), back)


def concat_cols(parts: list[Tensor]) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def back(g):
        off = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[:, off : off + n])
            off += n

    return _result(data, tuple(parts), back)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[start:stop]

    def back(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)

    return _result(data, (a,), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[:, start:stop]

    def back(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _result(data, (a,), back)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (n, d) -> (1, d)."""
    n = a.data.shape[0]
    data = a.data.mean(axis=0, keepdims=True)

    def back(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _result(data, (a,), back)


def log_floor(dtype) -> float:
    """Smallest probability fed to log; keeps -log(p) finite after underflow."""
    return float(np.finfo(dtype).tiny)


def cross_entropy(probs: Tensor, targets: np.ndarray, reduction: str = "sum") -> Tensor:
    """Negative log-likelihood of integer ``targets`` under row distributions."""
    targets = np.asarray(targets)
    n, c = probs.data.shape
    if targets.shape != (n,):
        raise ValueError(f"cross_entropy targets shape {targets.shape} vs probs {probs.data.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"cross_entropy target class out of range [0, {c})")
    picked = np.maximum(probs.data[np.arange(n), targets], log_floor(probs.data.dtype))
    losses = -np.log(picked)
    coeff = 1.0 if reduction == "sum" else 1.0 / n
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    data = np.asarray(losses.sum() * coeff, dtype=probs.data.dtype)

    def back(g):
        gp = np.zeros_like(probs.data)
        gp[np.arange(n), targets] = -float(g) * coeff / picked
        _accum(probs, gp)

    return _result(data, (probs,), back)


def backward(loss: Tensor):
    """Populate ``grad`` on every trainable leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


class ParamStore:
    """Named parameters with per-parameter trainable flags.

    Iteration order is insertion order everywhere, so accumulation and update
    order is deterministic. Frozen parameters never accumulate gradients and
    never receive optimizer updates.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.adapters: dict[str, "object"] = {}  # managed by afg.lora

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = Tensor(np.ascontiguousarray(data, dtype=self.dtype))
        t.requires_grad = trainable
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def remove(self, name: str):
        del self._params[name]

    def set_trainable(self, name: str, trainable: bool):
        self._params[name].requires_grad = trainable

    def is_trainable(self, name: str) -> bool:
        return self._params[name].requires_grad

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def param_count(self, trainable_only: bool = False) -> int:
        return sum(
            t.data.size
            for t in self._params.values()
            if t.requires_grad or not trainable_only
        )

    def clip_grad_norm(self, max_norm: float) -> float:
        """Scale all trainable gradients so their global L2 norm is <= max_norm."""
        total = 0.0
        for t in self._params.values():
            if t.requires_grad and t.grad is not None:
                total += float((t.grad * t.grad).sum())
        norm = math.sqrt(total)
        if norm > max_norm and norm > 0:
            factor = max_norm / norm
            for t in self._params.values():
                if t.requires_grad and t.grad is not None:
                    t.grad *= factor
        return norm


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)  # name -> (m, v)


def adam_step(store: ParamStore, state: AdamState):
    """One Adam update over the trainable parameters; clears their gradients."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name in store.names():
        p = store[name]
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise ValueError(f"adam_step: no gradient for trainable parameter {name!r}")
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[name]
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad * p.grad
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
        p.grad = None


@dataclass
class GradcheckReport:
    max_rel_err: float
    worst_param: str
    per_param: dict[str, float]

    def lines(self) -> list[str]:
        out = [f"{name}: max_rel_err={err:.3e}" for name, err in self.per_param.items()]
        out.append(f"overall: max_rel_err={self.max_rel_err:.3e} worst={self.worst_param}")
        return out


def gradcheck(
    store: ParamStore,
    loss_fn,
    h: float = 1e-4,
    floor: float = 1e-7,
) -> GradcheckReport:
    """Compare ``backward`` gradients against central finite differences.

    ``loss_fn`` must recompute the scalar loss from the store's current values.
    Entries where both gradients are below ``floor`` count as zero error.
    Use 64-bit parameters; float32 resolution cannot support h=1e-4.
    """
    store.zero_grads()
    loss = loss_fn()
    backward(loss)
    analytic = {
        name: (store[name].grad.copy() if store[name].grad is not None else np.zeros_like(store[name].data))
        for name in store.names()
        if store.is_trainable(name)
    }
    store.zero_grads()

    per_param: dict[str, float] = {}
    worst_param = ""
    worst = 0.0
    with no_grad():
        for name, a_grad in analytic.items():
            p = store[name].data
            flat = p.reshape(-1)
            a_flat = a_grad.reshape(-1)
            err = 0.0
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                fd = (up - down) / (2 * h)
                denom = max(abs(a_flat[i]), abs(fd))
                if denom > floor:
                    err = max(err, abs(a_flat[i] - fd) / denom)
            per_param[name] = err
            if err >= worst:
                worst = err
                worst_param = name
    return GradcheckReport(max_rel_err=worst, worst_param=worst_param, per_param=per_param)
