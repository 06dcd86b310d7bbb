"""Static computation graph with reverse-mode differentiation.

A :class:`Graph` is built once by calling its op methods, each of which
records a node and returns the node id. Shapes are inferred at build time,
so a malformed network fails before any data flows. ``forward`` evaluates
every node in creation order (which is a topological order by
construction) and ``backward`` walks the same list in reverse.

Arrays are plain ``numpy.ndarray`` objects in NCHW layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shape."""

    def __init__(self, node: str, expected, actual):
        self.node = node
        self.expected = expected
        self.actual = actual
        super().__init__(f"node {node!r}: expected shape {expected}, got {actual}")


class Parameter:
    """A trainable array. Sharing a Parameter object shares its storage."""

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    attrs: dict[str, Any] = field(default_factory=dict)
    name: str = ""


def conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv_transpose_out(n: int, k: int, s: int, p: int) -> int:
    return (n - 1) * s - 2 * p + k


# --------------------------------------------------------------------------
# im2col helpers


def _im2col(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, Hp, Wp) padded input -> (N*ho*wo, C*k*k) patch matrix."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
    # (N, C, ho, wo, k, k) -> (N, ho, wo, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def _col2im(cols_t: np.ndarray, shape, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`.

    ``cols_t`` is the transposed patch matrix, (C*k*k, N*ho*wo); ``shape``
    is the padded (N, C, Hp, Wp) result.
    """
    n, c, hp, wp = shape
    if k % s == 0 and hp == s * (ho - 1 + k // s) and wp == s * (wo - 1 + k // s):
        # tap i = q*s + r lands on row (y + q)*s + r: one add per (q_i, q_j) block
        q = k // s
        cols = cols_t.reshape(c, q, s, q, s, n, ho, wo).transpose(0, 1, 3, 5, 6, 2, 7, 4)
        out = np.zeros((c, n, hp // s, s, wp // s, s), dtype=cols.dtype)
        for qi in range(q):
            for qj in range(q):
                out[:, :, qi : qi + ho, :, qj : qj + wo, :] += cols[:, qi, qj]
        return out.reshape(c, n, hp, wp).transpose(1, 0, 2, 3)
    cols = cols_t.reshape(c, k, k, n, ho, wo)
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += cols[:, i, j]
    return out.transpose(1, 0, 2, 3)


def _pad(x, p):
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p:-p, p:-p] = x
    return out


def _unpad(x, p):
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


# --------------------------------------------------------------------------
# op kernels: forward(vals, attrs) -> (out, cache)
#             backward(g, vals, out, cache, attrs, need) -> grads (None where not needed)


def _conv_fwd(vals, a):
    x, w, b = vals
    k, s, p = a["k"], a["stride"], a["pad"]
    n, _, h, wd = x.shape
    o = w.shape[0]
    ho, wo = conv_out(h, k, s, p), conv_out(wd, k, s, p)
    cols = _im2col(_pad(x, p), k, s, ho, wo)
    out = cols @ w.reshape(o, -1).T + b
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def _conv_bwd(g, vals, out, cols, a, need):
    x, w, _ = vals
    k, s, p = a["k"], a["stride"], a["pad"]
    n, _, ho, wo = g.shape
    o = w.shape[0]
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
    dx = dw = db = None
    if need[1]:
        dw = (g2.T @ cols).reshape(w.shape)
    if need[2]:
        db = g2.sum(axis=0)
    if need[0]:
        dcols_t = w.reshape(o, -1).T @ g2.T
        xp_shape = (n, x.shape[1], x.shape[2] + 2 * p, x.shape[3] + 2 * p)
        dx = np.ascontiguousarray(_unpad(_col2im(dcols_t, xp_shape, k, s, ho, wo), p))
    return [dx, dw, db]


def _convt_fwd(vals, a):
    x, w, b = vals
    k, s, p = a["k"], a["stride"], a["pad"]
    n, ci, h, wd = x.shape
    co = w.shape[1]
    hp, wp = (h - 1) * s + k, (wd - 1) * s + k
    x2 = x.transpose(0, 2, 3, 1).reshape(-1, ci)
    cols_t = w.reshape(ci, -1).T @ x2.T
    out = _unpad(_col2im(cols_t, (n, co, hp, wp), k, s, h, wd), p)
    out = out + b.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out), x2


def _convt_bwd(g, vals, out, x2, a, need):
    x, w, _ = vals
    k, s, p = a["k"], a["stride"], a["pad"]
    n, ci, h, wd = x.shape
    db = g.sum(axis=(0, 2, 3)) if need[2] else None
    dx = dw = None
    if need[0] or need[1]:
        dcols = _im2col(_pad(g, p), k, s, h, wd)
        if need[0]:
            dx = (dcols @ w.reshape(ci, -1).T).reshape(n, h, wd, ci).transpose(0, 3, 1, 2)
            dx = np.ascontiguousarray(dx)
        if need[1]:
            dw = (x2.T @ dcols).reshape(w.shape)
    return [dx, dw, db]


def _lrelu_fwd(vals, a):
    (x,) = vals
    slope = np.asarray(a["slope"], dtype=x.dtype)
    return np.where(x > 0, x, x * slope), None


def _lrelu_bwd(g, vals, out, cache, a, need):
    (x,) = vals
    slope = np.asarray(a["slope"], dtype=x.dtype)
    return [np.where(x > 0, g, g * slope)]


def _tanh_fwd(vals, a):
    return np.tanh(vals[0]), None


def _tanh_bwd(g, vals, out, cache, a, need):
    return [g * (1 - out * out)]


def _inorm_fwd(vals, a):
    (x,) = vals
    mean = x.mean(axis=(2, 3), keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(a["eps"], dtype=x.dtype))
    return xc * inv, inv


def _inorm_bwd(g, vals, y, inv, a, need):
    gm = g.mean(axis=(2, 3), keepdims=True)
    gym = (g * y).mean(axis=(2, 3), keepdims=True)
    return [inv * (g - gm - y * gym)]


def _add_fwd(vals, a):
    return vals[0] + vals[1], None


def _add_bwd(g, vals, out, cache, a, need):
    return [g, g]


def _sub_fwd(vals, a):
    return vals[0] - vals[1], None


def _sub_bwd(g, vals, out, cache, a, need):
    return [g, -g]


def _scale_fwd(vals, a):
    x = vals[0]
    out = x * np.asarray(a["scale"], dtype=x.dtype)
    if a["shift"]:
        out = out + np.asarray(a["shift"], dtype=x.dtype)
    return out, None


def _scale_bwd(g, vals, out, cache, a, need):
    return [g * np.asarray(a["scale"], dtype=g.dtype)]


def _abs_fwd(vals, a):
    return np.abs(vals[0]), None


def _abs_bwd(g, vals, out, cache, a, need):
    return [g * np.sign(vals[0])]


def _square_fwd(vals, a):
    return vals[0] * vals[0], None


def _square_bwd(g, vals, out, cache, a, need):
    return [2 * g * vals[0]]


def _mean_fwd(vals, a):
    x = vals[0]
    return np.asarray(x.mean(), dtype=x.dtype).reshape(()), None


def _mean_bwd(g, vals, out, cache, a, need):
    x = vals[0]
    return [np.full(x.shape, g / x.size, dtype=x.dtype)]


_KERNELS = {
    "conv2d": (_conv_fwd, _conv_bwd),
    "conv_transpose2d": (_convt_fwd, _convt_bwd),
    "leaky_relu": (_lrelu_fwd, _lrelu_bwd),
    "tanh": (_tanh_fwd, _tanh_bwd),
    "instance_norm": (_inorm_fwd, _inorm_bwd),
    "add": (_add_fwd, _add_bwd),
    "sub": (_sub_fwd, _sub_bwd),
    "scale": (_scale_fwd, _scale_bwd),
    "abs": (_abs_fwd, _abs_bwd),
    "square": (_square_fwd, _square_bwd),
    "mean": (_mean_fwd, _mean_bwd),
}

OPS = tuple(_KERNELS)


class Graph:
    """Recorded network of ops over named inputs and shared Parameters."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.inputs: dict[str, int] = {}
        self.outputs: dict[str, int] = {}
        self.params: dict[int, Parameter] = {}  # node id -> Parameter
        self._param_nodes: dict[int, int] = {}  # id(Parameter) -> node id
        self._values: list | None = None
        self._caches: list | None = None

    # -- building -----------------------------------------------------------

    def _add(self, op, inputs, shape, name="", **attrs) -> int:
        node = Node(len(self.nodes), op, tuple(inputs), tuple(shape), attrs, name or f"{op}_{len(self.nodes)}")
        self.nodes.append(node)
        return node.id

    def shape(self, nid: int) -> tuple[int, ...]:
        return self.nodes[nid].shape

    def input(self, name: str, shape) -> int:
        if name in self.inputs:
            raise ValueError(f"duplicate input {name!r}")
        nid = self._add("input", (), shape, name=name)
        self.inputs[name] = nid
        return nid

    def param(self, p: Parameter) -> int:
        key = id(p)
        if key in self._param_nodes:
            return self._param_nodes[key]
        nid = self._add("param", (), p.shape, name=p.name)
        self.params[nid] = p
        self._param_nodes[key] = nid
        return nid

    def output(self, name: str, nid: int) -> int:
        self.outputs[name] = nid
        return nid

    def conv2d(self, x, w: Parameter, b: Parameter, stride=1, pad=0, name=""):
        n, c, h, wd = self.shape(x)
        o, ci, k, k2 = w.shape
        label = name or f"conv2d_{len(self.nodes)}"
        if ci != c or k != k2:
            raise ShapeError(label, (o, c, k, k), w.shape)
        if b.shape != (o,):
            raise ShapeError(label, (o,), b.shape)
        ho, wo = conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad)
        if ho < 1 or wo < 1:
            raise ShapeError(label, f"spatial extent >= {k - 2 * pad}", (h, wd))
        return self._add("conv2d", (x, self.param(w), self.param(b)), (n, o, ho, wo),
                         name=name, k=k, stride=stride, pad=pad)

    def conv_transpose2d(self, x, w: Parameter, b: Parameter, stride=1, pad=0, name=""):
        n, c, h, wd = self.shape(x)
        ci, co, k, k2 = w.shape
        label = name or f"conv_transpose2d_{len(self.nodes)}"
        if ci != c or k != k2:
            raise ShapeError(label, (c, co, k, k), w.shape)
        if b.shape != (co,):
            raise ShapeError(label, (co,), b.shape)
        ho, wo = conv_transpose_out(h, k, stride, pad), conv_transpose_out(wd, k, stride, pad)
        return self._add("conv_transpose2d", (x, self.param(w), self.param(b)), (n, co, ho, wo),
                         name=name, k=k, stride=stride, pad=pad)

    def leaky_relu(self, x, slope=LEAKY_SLOPE, name=""):
        return self._add("leaky_relu", (x,), self.shape(x), name=name, slope=slope)

    def tanh(self, x, name=""):
        return self._add("tanh", (x,), self.shape(x), name=name)

    def instance_norm(self, x, eps=NORM_EPS, name=""):
        if len(self.shape(x)) != 4:
            raise ShapeError(name or "instance_norm", "rank 4", self.shape(x))
        return self._add("instance_norm", (x,), self.shape(x), name=name, eps=eps)

    def _binary(self, op, x, y, name):
        if self.shape(x) != self.shape(y):
            raise ShapeError(name or f"{op}_{len(self.nodes)}", self.shape(x), self.shape(y))
        return self._add(op, (x, y), self.shape(x), name=name)

    def add(self, x, y, name=""):
        return self._binary("add", x, y, name)

    def sub(self, x, y, name=""):
        return self._binary("sub", x, y, name)

    def scale(self, x, scale, shift=0.0, name=""):
        return self._add("scale", (x,), self.shape(x), name=name, scale=float(scale), shift=float(shift))

    def abs(self, x, name=""):
        return self._add("abs", (x,), self.shape(x), name=name)

    def square(self, x, name=""):
        return self._add("square", (x,), self.shape(x), name=name)

    def mean(self, x, name=""):
        return self._add("mean", (x,), (), name=name)

    # -- evaluation ---------------------------------------------------------

    def forward(self, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        missing = set(self.inputs) - set(feeds)
        if missing:
            raise KeyError(f"unbound inputs: {sorted(missing)}")
        values: list = [None] * len(self.nodes)
        caches: list = [None] * len(self.nodes)
        for node in self.nodes:
            if node.op == "input":
                v = np.asarray(feeds[node.name], dtype=self.dtype)
                if v.shape != node.shape:
                    raise ShapeError(node.name, node.shape, v.shape)
                values[node.id] = v
            elif node.op == "param":
                v = self.params[node.id].data
                if v.shape != node.shape:
                    raise ShapeError(node.name, node.shape, v.shape)
                values[node.id] = v.astype(self.dtype, copy=False)
            else:
                fwd = _KERNELS[node.op][0]
                values[node.id], caches[node.id] = fwd([values[i] for i in node.inputs], node.attrs)
        self._values, self._caches = values, caches
        return {name: values[nid] for name, nid in self.outputs.items()}

    def value(self, nid: int) -> np.ndarray:
        if self._values is None:
            raise RuntimeError("forward has not been run")
        return self._values[nid]

    def backward(self, loss, params=None, wrt_inputs=False) -> dict[str, np.ndarray]:
        """Gradients of a scalar node w.r.t. every Parameter reachable from it.

        ``loss`` is a node id or an output name. Returned keys are parameter
        names (and input names when ``wrt_inputs``).
        """
        if self._values is None:
            raise RuntimeError("forward has not been run")
        if isinstance(loss, str):
            loss = self.outputs[loss]
        if self.nodes[loss].shape != ():
            raise ShapeError(self.nodes[loss].name, (), self.nodes[loss].shape)
        values = self._values
        # live[i]: node i depends on a wanted parameter (or input), so its gradient is needed
        live = [False] * len(self.nodes)
        for node in self.nodes[: loss + 1]:
            if node.op == "param":
                live[node.id] = params is None or self.params[node.id].name in params
            elif node.op == "input":
                live[node.id] = wrt_inputs
            else:
                live[node.id] = any(live[i] for i in node.inputs)
        grads: dict[int, np.ndarray] = {loss: np.ones((), dtype=self.dtype)}
        for node in reversed(self.nodes[: loss + 1]):
            if node.op in ("param", "input") or not live[node.id]:
                continue
            g = grads.pop(node.id, None)
            if g is None:
                continue
            need = [live[i] for i in node.inputs]
            bwd = _KERNELS[node.op][1]
            ins = [values[i] for i in node.inputs]
            for i, gi in zip(node.inputs, bwd(g, ins, values[node.id], self._caches[node.id], node.attrs, need)):
                if gi is None or not live[i]:
                    continue
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = gi
        out = {}
        for nid, p in self.params.items():
            if params is not None and p.name not in params:
                continue
            g = grads.get(nid)
            out[p.name] = np.zeros_like(values[nid]) if g is None else g.astype(self.dtype, copy=False)
        if wrt_inputs:
            for name, nid in self.inputs.items():
                g = grads.get(nid)
                out[name] = np.zeros(self.nodes[nid].shape, self.dtype) if g is None else g
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())


def forward(graph: Graph, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return graph.forward(inputs)


def backward(graph: Graph, loss) -> dict[str, np.ndarray]:
    return graph.backward(loss)
