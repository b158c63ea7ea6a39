"""Reverse-mode automatic differentiation over dense numpy arrays.

Values are immutable `Tensor` wrappers; the computation graph is a DAG of
`Node` objects built eagerly by the op functions below. `backward(loss)`
runs one reverse topological sweep and accumulates gradients additively
into every reachable node, so parameters shared across time steps pick up
the sum of all path contributions.

Design constraints, enforced here rather than assumed:
  * every op output is finite-checked; NaN/Inf raises NonFiniteError
    instead of propagating silently,
  * no implicit broadcasting beyond scalars; shape mismatches raise, and
    explicit tile/reshape ops exist for the few places expansion is needed,
  * a second backward() through the same loss without rebuilding the graph
    is an error.

The raw forward kernels (`conv_forward_raw` and friends) are shared with
the graph ops and with the fast inference path, so both routes compute
bit-identical values.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

DEFAULT_DTYPE = np.float64


class AutodiffError(Exception):
    pass


class NonFiniteError(AutodiffError):
    """An op produced NaN or Inf."""


class ShapeError(AutodiffError):
    pass


class Tensor:
    """Immutable value carrier: C-contiguous float array plus finiteness guarantee."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None, check: bool = True, _own: bool = False):
        if _own and isinstance(data, np.ndarray) and data.flags["C_CONTIGUOUS"]:
            arr = data
        else:
            arr = np.array(data, dtype=dtype or DEFAULT_DTYPE, order="C")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if check and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


class Node:
    """Graph vertex: a Tensor value, parent edges, and the local backward rule.

    The backward rule maps the incoming gradient (ndarray, same shape as
    value) to one gradient per parent. Leaves have no rule.
    """

    __slots__ = ("value", "parents", "backward_rule", "grad", "name")

    def __init__(self, value: Tensor, parents: tuple = (),
                 backward_rule: Callable | None = None, name: str = ""):
        self.value = value
        self.parents = parents
        self.backward_rule = backward_rule
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Node{tag}(shape={self.value.shape})"


def constant(data, dtype=None) -> Node:
    return Node(data if isinstance(data, Tensor) else Tensor(data, dtype=dtype))


def parameter(data, name: str, dtype=None) -> Node:
    return Node(data if isinstance(data, Tensor) else Tensor(data, dtype=dtype), name=name)


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return constant(np.asarray(x, dtype=DEFAULT_DTYPE))


def _out(arr: np.ndarray, parents: tuple, rule: Callable, name: str = "") -> Node:
    return Node(Tensor(arr, _own=True), parents, rule, name)


def _check_binary_shapes(a: Node, b: Node, op: str) -> bool:
    """True when b is a scalar being broadcast; raises on any other mismatch."""
    if a.shape == b.shape:
        return False
    if b.value.size == 1:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ and rhs is not scalar")


def _reduce_to_scalar_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    bscal = _check_binary_shapes(a, b, "add")
    out = a.data + b.data

    def rule(g):
        return g, (_reduce_to_scalar_shape(g, b.shape) if bscal else g)

    return _out(out, (a, b), rule, "add")


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    bscal = _check_binary_shapes(a, b, "sub")
    out = a.data - b.data

    def rule(g):
        return g, (-_reduce_to_scalar_shape(g, b.shape) if bscal else -g)

    return _out(out, (a, b), rule, "sub")


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    bscal = _check_binary_shapes(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def rule(g):
        ga = g * bd
        gb = g * ad
        return ga, (_reduce_to_scalar_shape(gb, b.shape) if bscal else gb)

    return _out(out, (a, b), rule, "mul")


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    bscal = _check_binary_shapes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    ad, bd = a.data, b.data

    def rule(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        return ga, (_reduce_to_scalar_shape(gb, b.shape) if bscal else gb)

    return _out(out, (a, b), rule, "div")


def scale(a, c: float) -> Node:
    a = _as_node(a)
    c = float(c)
    out = a.data * c

    def rule(g):
        return (g * c,)

    return _out(out, (a,), rule, "scale")


def exp(a) -> Node:
    a = _as_node(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def rule(g):
        return (g * out,)

    return _out(out, (a,), rule, "exp")


def tanh(a) -> Node:
    a = _as_node(a)
    out = np.tanh(a.data)

    def rule(g):
        return (g * (1.0 - out * out),)

    return _out(out, (a,), rule, "tanh")


def sigmoid_raw(x: np.ndarray) -> np.ndarray:
    # stable two-branch form, no overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a) -> Node:
    a = _as_node(a)
    sig = sigmoid_raw(a.data)
    out = a.data * sig

    def rule(g):
        return (g * (sig + out * (1.0 - sig)),)

    return _out(out, (a,), rule, "silu")


def elu(a, alpha: float = 1.0) -> Node:
    a = _as_node(a)
    neg = a.data < 0
    out = np.where(neg, alpha * np.expm1(np.minimum(a.data, 0.0)), a.data)

    def rule(g):
        return (np.where(neg, out + alpha, 1.0) * g,)

    return _out(out, (a,), rule, "elu")


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def rule(g):
        return g @ bd.T, ad.T @ g

    return _out(out, (a, b), rule, "matmul")


# -------------------------------------------------------- conv kernels (raw)

def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int):
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel ({kh},{kw}) too large for input ({h},{w}) pad {padding}")
    return ho, wo


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """[C,H,W] -> [C*kh*kw, Ho*Wo] patch matrix (copies)."""
    c, h, w = x.shape
    ho, wo = _conv_out_hw(h, w, kh, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    sc, sh, sw = xp.strides
    view = as_strided(xp, (c, kh, kw, ho, wo), (sc, sh, sw, stride * sh, stride * sw))
    return view.reshape(c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, c: int, h: int, w: int, kh: int, kw: int,
            stride: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch columns back to [C,H,W]."""
    ho, wo = _conv_out_hw(h, w, kh, kw, stride, padding)
    xp = np.zeros((c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    patches = cols.reshape(c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += patches[:, i, j]
    if padding:
        return np.ascontiguousarray(xp[:, padding:-padding, padding:-padding])
    return xp


def conv_forward_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    cout, cin, kh, kw = w.shape
    if x.shape[0] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape[0]} != weight cin {cin}")
    ho, wo = _conv_out_hw(x.shape[1], x.shape[2], kh, kw, stride, padding)
    cols = _im2col(x, kh, kw, stride, padding)
    return (w.reshape(cout, -1) @ cols).reshape(cout, ho, wo)


def tconv_forward_raw(y: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Exact adjoint of conv_forward_raw with the same weight/stride/padding."""
    ca, cb, kh, kw = w.shape
    if y.shape[0] != ca:
        raise ShapeError(f"transposed_conv2d: input channels {y.shape[0]} != weight dim {ca}")
    ho, wo = y.shape[1], y.shape[2]
    h = (ho - 1) * stride - 2 * padding + kh
    w_out = (wo - 1) * stride - 2 * padding + kw
    cols = w.reshape(ca, -1).T @ y.reshape(ca, ho * wo)
    return _col2im(cols, cb, h, w_out, kh, kw, stride, padding)


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Node:
    """Cross-correlation of [C_in,H,W] with [C_out,C_in,kh,kw]."""
    x, w = _as_node(x), _as_node(w)
    cout, cin, kh, kw = w.shape
    xd, wd = x.data, w.data
    out = conv_forward_raw(xd, wd, stride, padding)
    ho, wo = out.shape[1], out.shape[2]
    cols = _im2col(xd, kh, kw, stride, padding)  # cached for the weight grad

    def rule(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols.T).reshape(wd.shape)
        gx = tconv_forward_raw(g, wd, stride, padding)
        return gx, gw

    return _out(out, (x, w), rule, "conv2d")


def transposed_conv2d(y, w, stride: int = 1, padding: int = 0) -> Node:
    """Adjoint map of conv2d: [C_a,h,w] x [C_a,C_b,kh,kw] -> [C_b,H,W]."""
    y, w = _as_node(y), _as_node(w)
    ca, cb, kh, kw = w.shape
    yd, wd = y.data, w.data
    out = tconv_forward_raw(yd, wd, stride, padding)

    def rule(g):
        gy = conv_forward_raw(g, wd, stride, padding)
        gcols = _im2col(g, kh, kw, stride, padding)
        gw = (yd.reshape(ca, -1) @ gcols.T).reshape(wd.shape)
        return gy, gw

    return _out(out, (y, w), rule, "transposed_conv2d")


def channel_bias(x, b) -> Node:
    """Add per-channel bias [C] to a [C,H,W] map."""
    x, b = _as_node(x), _as_node(b)
    if x.value.ndim != 3 or b.shape != (x.shape[0],):
        raise ShapeError(f"channel_bias: {x.shape} with bias {b.shape}")
    out = x.data + b.data[:, None, None]

    def rule(g):
        return g, g.sum(axis=(1, 2))

    return _out(out, (x, b), rule, "channel_bias")


# ------------------------------------------------------- shape manipulation

def reshape(x, shape: Sequence[int]) -> Node:
    x = _as_node(x)
    shape = tuple(shape)
    out = x.data.reshape(shape)
    orig = x.shape

    def rule(g):
        return (g.reshape(orig),)

    return _out(np.ascontiguousarray(out), (x,), rule, "reshape")


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [_as_node(n) for n in nodes]
    out = np.concatenate([n.data for n in nodes], axis=axis)
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _out(out, tuple(nodes), rule, "concat")


def tile_rows(x, m: int) -> Node:
    """[n] -> [m,n] by row repetition; gradient sums over rows."""
    x = _as_node(x)
    if x.value.ndim != 1:
        raise ShapeError(f"tile_rows expects 1-d input, got {x.shape}")
    out = np.broadcast_to(x.data, (m, x.shape[0])).copy()

    def rule(g):
        return (g.sum(axis=0),)

    return _out(out, (x,), rule, "tile_rows")


def tile_cols(x, m: int) -> Node:
    """[n] -> [n,m] by column repetition; gradient sums over columns."""
    x = _as_node(x)
    if x.value.ndim != 1:
        raise ShapeError(f"tile_cols expects 1-d input, got {x.shape}")
    out = np.repeat(x.data[:, None], m, axis=1)

    def rule(g):
        return (g.sum(axis=1),)

    return _out(out, (x,), rule, "tile_cols")


def take_row(x, i: int) -> Node:
    x = _as_node(x)
    if x.value.ndim != 2:
        raise ShapeError(f"take_row expects 2-d input, got {x.shape}")
    out = x.data[i].copy()
    nrows, _ = x.shape

    def rule(g):
        gx = np.zeros((nrows, g.shape[0]), dtype=g.dtype)
        gx[i] = g
        return (gx,)

    return _out(out, (x,), rule, "take_row")


def reduce_sum(x, axes=None) -> Node:
    x = _as_node(x)
    orig = x.shape
    if axes is None:
        out = np.asarray(x.data.sum()).reshape(())

        def rule(g):
            return (np.broadcast_to(g, orig).astype(g.dtype),)
    else:
        axes = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
        out = x.data.sum(axis=axes)
        kept = tuple(1 if i in axes else s for i, s in enumerate(orig))

        def rule(g):
            return (np.broadcast_to(g.reshape(kept), orig).astype(g.dtype),)

    return _out(np.ascontiguousarray(out), (x,), rule, "reduce_sum")


def reduce_mean(x, axes=None) -> Node:
    x = _as_node(x)
    if axes is None:
        count = x.value.size
    else:
        ax = tuple(axes) if isinstance(axes, (tuple, list)) else (axes,)
        count = int(np.prod([x.shape[i] for i in ax]))
    return scale(reduce_sum(x, axes), 1.0 / count)


def stop_gradient(x) -> Node:
    """Detach: same value, no parents, gradient flow ends here."""
    x = _as_node(x)
    return Node(x.value, (), None, "stop_gradient")


# ------------------------------------------------------------------ backward

def _topo_order(root: Node) -> list:
    order: list[Node] = []
    seen: set[int] = set()
    onstack: set[int] = set()
    stack: list[tuple[Node, int]] = [(root, 0)]
    while stack:
        node, pi = stack.pop()
        if pi == 0:
            nid = id(node)
            if nid in seen:
                continue
            if nid in onstack:
                raise AutodiffError("cycle detected in graph")
            onstack.add(nid)
        if pi < len(node.parents):
            stack.append((node, pi + 1))
            stack.append((node.parents[pi], 0))
        else:
            nid = id(node)
            onstack.discard(nid)
            if nid not in seen:
                seen.add(nid)
                order.append(node)
    return order


def backward(loss: Node) -> None:
    """Accumulate dloss/dnode into .grad for every node reachable from loss.

    loss must be scalar. Calling backward twice on the same loss without
    rebuilding the graph is an error (gradients would double-count).
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.grad is not None:
        raise AutodiffError("backward already ran for this loss; rebuild the graph first")
    order = _topo_order(loss)
    loss.grad = np.ones(loss.shape, dtype=loss.value.dtype)
    for node in reversed(order):
        if node.backward_rule is None or node.grad is None:
            continue
        grads = node.backward_rule(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def reset_grads(nodes) -> None:
    for n in nodes:
        n.grad = None
