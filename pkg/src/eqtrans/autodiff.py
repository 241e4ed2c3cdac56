"""A small define-by-run reverse-mode autodiff engine over numpy arrays.

Operations executed while gradients are enabled are appended to the active
:class:`Tape`; :func:`backward` walks that tape in reverse.  Precision is a
process-wide setting (float32 by default, float64 for gradient checks and
theorem audits).
"""

from __future__ import annotations

import contextlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CKPT_HEADER = "EQTD-CKPT 1"

_PRECISIONS = {"f32": np.float32, "f64": np.float64}


class ShapeError(ValueError):
    pass


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True
        self.tape = Tape()


class Tape:
    """Execution-ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def record(self, t: "Tensor"):
        self.nodes.append(t)

    def clear(self):
        self.nodes.clear()

    def __enter__(self):
        self._prev = _state.tape
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev
        self.clear()


_state = _State()


def get_dtype():
    return _state.dtype


def set_precision(mode: str):
    if mode not in _PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}, got {mode!r}")
    _state.dtype = _PRECISIONS[mode]


def precision_name(dtype=None) -> str:
    dtype = np.dtype(dtype or _state.dtype)
    return "f64" if dtype == np.float64 else "f32"


@contextlib.contextmanager
def precision(mode: str):
    prev = _state.dtype
    set_precision(mode)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def current_tape() -> Tape:
    return _state.tape


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None or not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(dtype or _state.dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_state.dtype))


def _make(data, parents: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._parents = ()
    out._backward = None
    out.requires_grad = _state.grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
        _state.tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


# ---------------------------------------------------------------- linear algebra / shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take(x, idx) -> Tensor:
    """x[idx] with numpy indexing semantics (basic or integer-array)."""
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), bw)


def row_select(table, ids) -> Tensor:
    """Embedding gather: rows of a 2-d table."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"row_select: table must be 2-d, got {table.shape}")
    return take(table, np.asarray(ids, dtype=np.int64))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


# ---------------------------------------------------------------- reductions


def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make(
        np.asarray(x.data.sum(axis=axis, keepdims=keepdims)),
        (x,),
        lambda g: (_expand(g, shape, axis, keepdims).copy(),),
    )


def tmax(x, axis: int = -1, keepdims=False) -> Tensor:
    """Max along an axis; the gradient flows to the first maximizer."""
    x = as_tensor(x)
    xd = x.data
    arg = np.expand_dims(xd.argmax(axis=axis), axis)

    def bw(g):
        full = np.zeros_like(xd)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(full, arg, gk, axis=axis)
        return (full,)

    return _make(np.take_along_axis(xd, arg, axis).squeeze(axis) if not keepdims
                 else np.take_along_axis(xd, arg, axis), (x,), bw)


def _lse(xd, axis):
    m = xd.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(xd - m).sum(axis=axis, keepdims=True)) + m


def logsumexp(x, axis: int = -1, keepdims=False) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    lse = _lse(xd, axis)
    out = lse if keepdims else lse.squeeze(axis)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(xd - lse),)

    return _make(out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    y = x.data - _lse(x.data, axis)

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), bw)


# ---------------------------------------------------------------- recurrent


def _lstm_forward(x, W, b, reverse):
    B, T, E = x.shape
    H = W.shape[1] // 4
    Wx, Wh = W[:E], W[E:]
    xw = x @ Wx + b
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    hs = np.empty((B, T, H), dtype=x.dtype)
    cache = []
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = xw[:, t] + h @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c + i * gg
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((t, i, f, gg, o, c_prev, h_prev, tc))
    return hs, cache


def lstm_sequence(x, W, b, reverse: bool = False) -> Tensor:
    """Run a single-layer LSTM over x[B, T, E] from zero state; returns states [B, T, H].

    W stacks input and recurrent weights as [(E + H), 4H] with gate order
    input, forget, cell, output.  ``reverse`` processes t = T-1 .. 0 (the state
    at t then summarizes x[t:]).
    """
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.ndim != 3 or W.ndim != 2 or W.shape[1] % 4 or W.shape[0] != x.shape[2] + W.shape[1] // 4:
        raise ShapeError(f"lstm_sequence: bad shapes x={x.shape} W={W.shape}")
    if b.shape != (W.shape[1],):
        raise ShapeError(f"lstm_sequence: bias shape {b.shape}, expected {(W.shape[1],)}")
    xd, Wd = x.data, W.data
    hs, cache = _lstm_forward(xd, Wd, b.data, reverse)

    def bw(gh):
        B, T, E = xd.shape
        H = Wd.shape[1] // 4
        Wx, Wh = Wd[:E], Wd[E:]
        dz_all = np.empty((B, T, 4 * H), dtype=xd.dtype)
        hprev_all = np.empty((B, T, H), dtype=xd.dtype)
        dh_next = np.zeros((B, H), dtype=xd.dtype)
        dc_next = np.zeros((B, H), dtype=xd.dtype)
        for t, i, f, gg, o, c_prev, h_prev, tc in reversed(cache):
            dh = gh[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.concatenate(
                [dc * gg * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - gg * gg), do * o * (1.0 - o)],
                axis=1,
            )
            dc_next = dc * f
            dh_next = dz @ Wh.T
            dz_all[:, t] = dz
            hprev_all[:, t] = h_prev
        dz2 = dz_all.reshape(B * T, 4 * H)
        dW = np.concatenate([xd.reshape(B * T, E).T @ dz2, hprev_all.reshape(B * T, H).T @ dz2], axis=0)
        return dz_all @ Wx.T, dW, dz2.sum(axis=0)

    return _make(hs, (x, W, b), bw)


def lstm_step(x, h, c, W, b):
    """One LSTM step on plain arrays (inference only): returns (h, c)."""
    H = h.shape[-1]
    z = np.concatenate([x, h], axis=-1) @ W + b
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    gg = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c = f * c + i * gg
    return o * np.tanh(c), c


# ---------------------------------------------------------------- backward


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = _state.tape
    if not loss.requires_grad or not tape.nodes:
        raise RuntimeError("backward: loss does not depend on any tensor requiring grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._backward is None:
                p.grad = np.array(pg, dtype=p.data.dtype) if p.grad is None else p.grad + pg
            else:
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg
    tape.clear()


# ---------------------------------------------------------------- parameters


def init_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named parameter tensors in insertion order."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=_state.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load(self, state: dict[str, np.ndarray], strict: bool = True):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, t in self._params.items():
            if k in state:
                v = np.asarray(state[k])
                if v.shape != t.shape:
                    raise ShapeError(f"parameter {k}: shape {v.shape} != {t.shape}")
                t.data = v.astype(t.dtype).copy()

    def astype(self, dtype):
        for t in self._params.values():
            t.data = t.data.astype(dtype)
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())


def clip_grad_norm(params: ParamStore, max_norm: float) -> float:
    grads = [t.grad for _, t in params if t.grad is not None]
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, t in params:
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState):
    missing = [name for name, t in params if t.grad is None]
    if missing:
        raise RuntimeError(f"adam_step: parameter {missing[0]!r} has no gradient")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, t in params:
        g = t.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        t.data = t.data - (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(t.dtype)
        t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------- gradcheck


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.max_error <= self.tolerance

    @property
    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if v > self.tolerance}


def gradcheck(
    closure: Callable[[], Tensor],
    params: ParamStore,
    tolerance: float = 1e-4,
    eps: float = 1e-5,
    floor: float = 1e-4,
    names: Iterable[str] | None = None,
) -> GradcheckReport:
    """Compare analytic gradients with central differences, per parameter.

    The relative error of an entry is |a - n| / max(|a|, |n|, floor).
    """
    params.zero_grad()
    with Tape():
        loss = closure()
        backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in params}
    errors = {}
    with no_grad():
        for name in names or params.names():
            t = params[name]
            flat = t.data.reshape(-1)
            a = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = closure().item()
                flat[i] = orig - eps
                fm = closure().item()
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                err = abs(a[i] - num) / max(abs(a[i]), abs(num), floor)
                worst = max(worst, err)
            errors[name] = worst
    params.zero_grad()
    return GradcheckReport(errors, tolerance)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, params: ParamStore | dict, meta: dict | None = None):
    """Write the plain-text checkpoint; values carry 17 significant digits."""
    items = params.state().items() if isinstance(params, ParamStore) else params.items()
    lines = [CKPT_HEADER]
    for k, v in (meta or {}).items():
        lines.append(f"@meta {k} {v}")
    for name, arr in items:
        arr = np.asarray(arr)
        lines.append(" ".join([name] + [str(d) for d in arr.shape]))
        lines.append(" ".join(format(float(v), ".17g") for v in arr.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path, dtype=None) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CKPT_HEADER:
        raise ValueError(f"{path}: not a checkpoint (missing {CKPT_HEADER!r} header)")
    meta, state = {}, {}
    i = 1
    while i < len(lines) and lines[i].startswith("@meta "):
        _, key, value = lines[i].split(" ", 2)
        meta[key] = value
        i += 1
    dtype = dtype or _state.dtype
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        name, shape = head[0], tuple(int(d) for d in head[1:])
        body = lines[i + 1].split() if i + 1 < len(lines) else []
        values = np.array([float(v) for v in body], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"{path}: parameter {name} has {values.size} values for shape {shape}")
        state[name] = values.reshape(shape).astype(dtype)
        i += 2
    return state, meta
