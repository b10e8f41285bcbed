"""Dense float64 tensors with reverse-mode automatic differentiation.

Just enough numerics for the policy: linear maps, softmax/log-softmax, tanh,
layer normalization, multi-head attention, gather/scatter-style indexing, and
a bias-corrected Adam update. Everything is float64; desk-scale problem sizes
make single precision pointless and double precision keeps gradient checks
tight.

Recording model: primitives always compute eagerly with numpy. When a Graph
is active (used as a context manager) each primitive also appends its output
tensor to the tape together with parent references and a vector-Jacobian
closure. backward() replays the tape in reverse, so each node is visited
exactly once and fan-out accumulates naturally. Without an active Graph the
same code runs tape-free, which is the fast path for greedy/benchmark
rollouts.

Gradient policy: backward() accumulates into ``.grad`` of tensors flagged
``requires_grad`` (parameters) and leaves plain data leaves untouched. Grads
persist across backward calls until ``zero_grads`` clears them; a Graph is
single-use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_GRAPH_STACK: list = []


class Graph:
    """Tape of recorded primitives, in execution order. Context manager."""

    def __init__(self):
        self.tape = []

    def __enter__(self):
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _GRAPH_STACK.pop()
        assert popped is self
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp", "_graph")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._vjp = None
        self._graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _record(out: Tensor, parents, vjp) -> Tensor:
    if _GRAPH_STACK:
        g = _GRAPH_STACK[-1]
        out._parents = tuple(parents)
        out._vjp = vjp
        out._graph = g
        g.tape.append(out)
    return out


def zero_grads(params):
    """Clear gradients of an iterable (or dict) of tensors."""
    it = params.values() if isinstance(params, dict) else params
    for p in it:
        p.grad = None


def backward(graph: Graph, loss: Tensor):
    """Push d(loss)/d(node) through the tape; loss must be a recorded scalar."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if loss._graph is not graph:
        raise ValueError("loss was not recorded on this graph")
    loss.grad = np.ones_like(loss.data)
    for t in reversed(graph.tape):
        if t.grad is None or t._vjp is None:
            continue
        for p, gp in zip(t._parents, t._vjp(t.grad)):
            if gp is None:
                continue
            if p.requires_grad or p._vjp is not None:
                p.grad = gp if p.grad is None else p.grad + gp


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] > 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- arithmetic --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                           _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                           _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                           _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)
        return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    if a.ndim == 2 and b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)
        return _record(out, (a, b), lambda g: (np.outer(g, b.data), a.data.T @ g))
    if a.ndim == 1 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        out = Tensor(a.data @ b.data)
        return _record(out, (a, b), lambda g: (b.data @ g, np.outer(a.data, g)))
    raise ValueError(f"matmul expects 1D/2D operands, got {a.ndim}D @ {b.ndim}D")


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot needs equal-length vectors, got {a.shape}, {b.shape}")
    out = Tensor(np.dot(a.data, b.data))
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map y = x @ w.T (+ b); w has shape (out_dim, in_dim)."""
    if w.ndim != 2:
        raise ValueError(f"linear weight must be 2D, got {w.shape}")
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight in-dim {w.shape[1]}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)
    if x.ndim == 2:
        def vjp(g):
            gb = g.sum(axis=0) if b is not None else None
            return (g @ w.data, g.T @ x.data, gb)
    else:
        def vjp(g):
            gb = g if b is not None else None
            return (g @ w.data, np.outer(g, x.data), gb)
    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, (lambda g: vjp(g)[:2]) if b is None else vjp)


# -- shape manipulation -------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose expects a 2D tensor")
    out = Tensor(a.data.T)
    return _record(out, (a,), lambda g: (g.T,))


def concat(parts, axis: int = 0) -> Tensor:
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))
    return _record(out, parts, vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise ValueError("slice_cols expects a 2D tensor")
    out = Tensor(a.data[:, start:stop])

    def vjp(g):
        z = np.zeros(a.shape)
        z[:, start:stop] = g
        return (z,)
    return _record(out, (a,), vjp)


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx])

    def vjp(g):
        z = np.zeros(a.shape)
        np.add.at(z, idx, g)
        return (z,)
    return _record(out, (a,), vjp)


def take_row(a: Tensor, i: int) -> Tensor:
    out = Tensor(a.data[i])

    def vjp(g):
        z = np.zeros(a.shape)
        z[i] = g
        return (z,)
    return _record(out, (a,), vjp)


def take_at(a: Tensor, i: int, j: int) -> Tensor:
    """Scalar a[i, j] as a 0-d tensor."""
    out = Tensor(a.data[i, j])

    def vjp(g):
        z = np.zeros(a.shape)
        z[i, j] = g
        return (z,)
    return _record(out, (a,), vjp)


def stack_scalars(parts) -> Tensor:
    parts = list(parts)
    out = Tensor(np.array([float(p.data) for p in parts]))

    def vjp(g):
        return tuple(np.asarray(g[i]) for i in range(len(parts)))
    return _record(out, parts, vjp)


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Each row repeated n times consecutively: (r, c) -> (r*n, c)."""
    out = Tensor(np.repeat(a.data, n, axis=0))
    r, c = a.shape
    return _record(out, (a,), lambda g: (g.reshape(r, n, c).sum(axis=1),))


def tile_rows(a: Tensor, n: int) -> Tensor:
    """Whole block tiled n times: (r, c) -> (n*r, c)."""
    out = Tensor(np.tile(a.data, (n, 1)))
    r, c = a.shape
    return _record(out, (a,), lambda g: (g.reshape(n, r, c).sum(axis=0),))


# -- nonlinearities -----------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    return _record(out, (a,), lambda g: (g * (a.data > 0),))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along `axis`; rows sum to 1."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def vjp(g):
        return ((g - (g * s).sum(axis=axis, keepdims=True)) * s,)
    return _record(out, (a,), vjp)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = Tensor(y)

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)
    return _record(out, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_rows(a: Tensor) -> Tensor:
    """Column means: (r, c) -> (c,)."""
    if a.ndim != 2:
        raise ValueError("mean_rows expects a 2D tensor")
    r = a.shape[0]
    out = Tensor(a.data.mean(axis=0))
    return _record(out, (a,), lambda g: (np.tile(g / r, (r, 1)),))


_LN_EPS = 1e-8


def layernorm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize over the last axis, then apply the elementwise affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layernorm affine shapes must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    s = np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + _LN_EPS)
    xhat = xc / s
    out = Tensor(xhat * gain.data + bias.data)

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gh = g * gain.data
        gx = (gh - gh.mean(axis=-1, keepdims=True)
              - xhat * (gh * xhat).mean(axis=-1, keepdims=True)) / s
        return (gx, (g * xhat).sum(axis=lead), g.sum(axis=lead))
    return _record(out, (x, gain, bias), vjp)


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Write `value` where mask is True; gradient flows only through the rest."""
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, value, a.data))
    return _record(out, (a,), lambda g: (np.where(mask, 0.0, g),))


# -- attention ----------------------------------------------------------------

def mha_forward(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor,
                scale_mode: str = "head") -> Tensor:
    """Multi-head scaled dot-product attention over row sets.

    q is (n_q, d), k and v are (n_kv, d); all four weights are (d, d) applied
    as x @ W.T. Scores are scaled by 1/sqrt(d_head) by default; pass
    scale_mode="model_dim" for the 1/sqrt(d) variant. Returns (n_q, d).
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ValueError("mha_forward expects 2D q/k/v")
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d:
        raise ValueError(f"mha_forward: model dims differ, q {q.shape}, k {k.shape}, v {v.shape}")
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"mha_forward: key rows {k.shape[0]} != value rows {v.shape[0]}")
    if d % n_heads != 0:
        raise ValueError(f"mha_forward: model dim {d} not divisible by {n_heads} heads")
    d_head = d // n_heads
    if scale_mode == "head":
        inv = 1.0 / math.sqrt(d_head)
    elif scale_mode == "model_dim":
        inv = 1.0 / math.sqrt(d)
    else:
        raise ValueError(f"unknown scale_mode {scale_mode!r}")

    qp, kp, vp = linear(q, w_q), linear(k, w_k), linear(v, w_v)
    heads = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh, kh, vh = slice_cols(qp, lo, hi), slice_cols(kp, lo, hi), slice_cols(vp, lo, hi)
        att = softmax(scale(matmul(qh, transpose(kh)), inv), axis=-1)
        heads.append(matmul(att, vh))
    return linear(concat(heads, axis=1), w_o)


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    t: int
    m: dict
    v: dict

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(t=0,
                   m={k: np.zeros(p.shape) for k, p in params.items()},
                   v={k: np.zeros(p.shape) for k, p in params.items()})


def adam_step(params: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, in place on params' data. Missing grads count as 0."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros(p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
    return state


# -- checkpoint io ------------------------------------------------------------

_CKPT_MAGIC = "PVRP-CHECKPOINT 1"


def save_checkpoint(path, named_arrays):
    """Write named f64 arrays: textual manifest + raw little-endian payload.

    Accepts a mapping name -> ndarray or Tensor; insertion order is preserved
    and restored by load_checkpoint. Names must be whitespace-free.
    """
    items = []
    offset = 0
    payload = []
    for name, value in named_arrays.items():
        arr = np.asarray(value.data if isinstance(value, Tensor) else value,
                         dtype="<f8")
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        shape_tok = ",".join(str(s) for s in arr.shape) if arr.ndim else "()"
        items.append(f"{name} {shape_tok} {offset} {arr.size}")
        payload.append(arr.tobytes())
        offset += arr.size * 8
    head = [_CKPT_MAGIC, f"count {len(items)}", *items, "DATA"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path) -> dict:
    """Inverse of save_checkpoint; returns name -> ndarray in manifest order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.index(b"\n")
    if blob[:nl].decode("ascii", "replace") != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    marker = blob.index(b"\nDATA\n")
    header = blob[:marker].decode("ascii").splitlines()
    data = blob[marker + len(b"\nDATA\n"):]
    count = int(header[1].split()[1])
    out = {}
    for line in header[2:2 + count]:
        name, shape_tok, offset, size = line.split()
        shape = () if shape_tok == "()" else tuple(int(s) for s in shape_tok.split(","))
        arr = np.frombuffer(data, dtype="<f8", count=int(size),
                            offset=int(offset)).reshape(shape).copy()
        out[name] = arr
    return out
