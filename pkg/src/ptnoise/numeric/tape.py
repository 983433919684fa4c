"""Reverse-mode differentiation over a closed set of matrix operations.

Every value on a tape is a 2-D float64 array; vectors are 1 x n rows. A tape
records nodes in creation order, which is already a topological order, so the
backward pass is a single reverse sweep.

>>> t = Tape()
>>> x = t.leaf([[1.0, 2.0]])
>>> y = t.dot(x, x)
>>> t.grad(x)
array([[2., 4.]])
"""

from __future__ import annotations

import numpy as np

from ..errors import DimMismatch, UnsupportedOp
from . import kernels

NORM_EPS = 1e-12


class Node:
    __slots__ = ("op", "inputs", "value", "attrs", "needs_grad")

    def __init__(self, op, inputs, value, attrs, needs_grad):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.attrs = attrs
        self.needs_grad = needs_grad

    def __repr__(self):
        return f"Node({self.op}, inputs={self.inputs}, shape={self.value.shape})"


def as_matrix(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimMismatch(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


# forward rules: (input values, attrs) -> (value, extra cache or None)


def _fw_matmul(vals, attrs):
    a, b = vals
    if a.shape[1] != b.shape[0]:
        raise DimMismatch(f"matmul {a.shape} @ {b.shape}")
    return a @ b, None


def _fw_add(vals, attrs):
    a, b = vals
    if a.shape != b.shape:
        raise DimMismatch(f"add {a.shape} + {b.shape}")
    return a + b, None


def _fw_tanh(vals, attrs):
    return np.tanh(vals[0]), None


def _fw_scale(vals, attrs):
    return vals[0] * attrs["factor"], None


def _fw_softmax(vals, attrs):
    return kernels.softmax_rows(vals[0]), None


def _fw_l2(vals, attrs):
    return kernels.l2_normalize_rows(vals[0], NORM_EPS)


def _fw_select(vals, attrs):
    r = attrs["row"]
    return vals[0][r : r + 1].copy(), None


def _fw_transpose(vals, attrs):
    return np.ascontiguousarray(vals[0].T), None


def _fw_dot(vals, attrs):
    a, b = vals
    if a.shape != b.shape:
        raise DimMismatch(f"dot {a.shape} . {b.shape}")
    return np.array([[np.sum(a * b)]]), None


def _fw_concat(vals, attrs):
    width = {v.shape[1] for v in vals}
    if len(width) != 1:
        raise DimMismatch(f"concat_rows with widths {sorted(width)}")
    return np.concatenate(vals, axis=0), None


def _fw_sum(vals, attrs):
    return np.array([[vals[0].sum()]]), None


def _fw_loss(vals, attrs):
    per_row, dp = kernels.loss_rows(vals[0], attrs["labels"], *attrs["kernel"])
    return np.array([[per_row.mean()]]), dp


# backward rules: (upstream grad, node, input values) -> tuple of input grads


def _bw_matmul(g, node, vals):
    a, b = vals
    return g @ b.T, a.T @ g


def _bw_add(g, node, vals):
    return g, g


def _bw_tanh(g, node, vals):
    return (kernels.tanh_backward(node.value, g),)


def _bw_scale(g, node, vals):
    return (g * node.attrs["factor"],)


def _bw_softmax(g, node, vals):
    return (kernels.softmax_rows_backward(node.value, g),)


def _bw_l2(g, node, vals):
    return (kernels.l2_normalize_rows_backward(node.value, node.attrs["cache"], g),)


def _bw_select(g, node, vals):
    out = np.zeros_like(vals[0])
    r = node.attrs["row"]
    out[r : r + 1] = g
    return (out,)


def _bw_transpose(g, node, vals):
    return (np.ascontiguousarray(g.T),)


def _bw_dot(g, node, vals):
    a, b = vals
    s = g[0, 0]
    return s * b, s * a


def _bw_concat(g, node, vals):
    out, start = [], 0
    for v in vals:
        out.append(g[start : start + v.shape[0]])
        start += v.shape[0]
    return tuple(out)


def _bw_sum(g, node, vals):
    return (np.full_like(vals[0], g[0, 0]),)


def _bw_loss(g, node, vals):
    dp = node.attrs["cache"]
    return (dp * (g[0, 0] / dp.shape[0]),)


FORWARD = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "tanh": _fw_tanh,
    "scale": _fw_scale,
    "softmax_rows": _fw_softmax,
    "l2_normalize_rows": _fw_l2,
    "select_row": _fw_select,
    "transpose": _fw_transpose,
    "dot": _fw_dot,
    "concat_rows": _fw_concat,
    "sum": _fw_sum,
    "loss": _fw_loss,
}

BACKWARD = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "tanh": _bw_tanh,
    "scale": _bw_scale,
    "softmax_rows": _bw_softmax,
    "l2_normalize_rows": _bw_l2,
    "select_row": _bw_select,
    "transpose": _bw_transpose,
    "dot": _bw_dot,
    "concat_rows": _bw_concat,
    "sum": _bw_sum,
    "loss": _bw_loss,
}

SUPPORTED_OPS = frozenset(FORWARD)


class Tape:
    """A linear record of matrix operations with a reverse sweep.

    Leaves are differentiable inputs; constants are not. Node ids are plain
    ints, and the most recently recorded node is the default output.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.output: int | None = None

    def __len__(self):
        return len(self.nodes)

    def value(self, node_id):
        return self.nodes[node_id].value

    def _push(self, node):
        self.nodes.append(node)
        self.output = len(self.nodes) - 1
        return self.output

    def leaf(self, value):
        return self._push(Node("leaf", (), as_matrix(value).copy(), None, True))

    def const(self, value):
        return self._push(Node("const", (), as_matrix(value), None, False))

    def record(self, op, inputs, **attrs):
        """Append ``op`` applied to the nodes ``inputs``; returns the new id."""
        fw = FORWARD.get(op)
        if fw is None:
            raise UnsupportedOp(op)
        inputs = tuple(inputs)
        ins = [self.nodes[i] for i in inputs]
        value, cache = fw([n.value for n in ins], attrs)
        if cache is not None:
            attrs["cache"] = cache
        needs = any(n.needs_grad for n in ins)
        return self._push(Node(op, inputs, value, attrs, needs))

    # -- op vocabulary --------------------------------------------------

    def matmul(self, a, b):
        return self.record("matmul", (a, b))

    def add(self, a, b):
        return self.record("add", (a, b))

    def tanh(self, a):
        return self.record("tanh", (a,))

    def scale(self, a, factor):
        return self.record("scale", (a,), factor=float(factor))

    def softmax_rows(self, a):
        return self.record("softmax_rows", (a,))

    def l2_normalize_rows(self, a):
        return self.record("l2_normalize_rows", (a,))

    def select_row(self, a, row):
        n = self.nodes[a].value.shape[0]
        if not -n <= row < n:
            raise IndexError(f"row {row} out of range for {n} rows")
        return self.record("select_row", (a,), row=row % n)

    def transpose(self, a):
        return self.record("transpose", (a,))

    def dot(self, a, b):
        return self.record("dot", (a, b))

    def concat_rows(self, parts):
        return self.record("concat_rows", parts)

    def sum(self, a):
        return self.record("sum", (a,))

    def mean_loss(self, probs, labels, kernel_args):
        """Mean over rows of a loss on the posterior rows ``probs``.

        ``kernel_args`` is ``(kind_code, q, alpha, beta, clip)`` as produced
        by :func:`ptnoise.losses.kernel_args`.
        """
        labels = np.asarray(labels, dtype=np.intp)
        return self.record("loss", (probs,), labels=labels, kernel=tuple(kernel_args))

    # -- evaluation -----------------------------------------------------

    def replay(self, overrides=None):
        """Recompute every node value from the leaves.

        ``overrides`` maps leaf ids to substitute values. Returns the list of
        recomputed values; the tape itself is left untouched.
        """
        overrides = overrides or {}
        vals = []
        for i, node in enumerate(self.nodes):
            if node.op in ("leaf", "const"):
                vals.append(as_matrix(overrides[i]) if i in overrides else node.value)
                continue
            fw = FORWARD.get(node.op)
            if fw is None:
                raise UnsupportedOp(node.op)
            attrs = {k: v for k, v in node.attrs.items() if k != "cache"}
            value, _ = fw([vals[j] for j in node.inputs], attrs)
            vals.append(value)
        return vals

    def gradients(self, leaves, output=None):
        """d(output)/d(leaf) for each id in ``leaves``, from one reverse sweep."""
        out = self.output if output is None else output
        if out is None:
            raise ValueError("empty tape")
        if self.nodes[out].value.shape != (1, 1):
            raise DimMismatch(f"output must be scalar, has shape {self.nodes[out].value.shape}")
        for leaf in leaves:
            if self.nodes[leaf].op != "leaf":
                raise ValueError(f"node {leaf} is not a leaf")
        adj: list = [None] * (out + 1)
        adj[out] = np.ones((1, 1))
        for i in range(out, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or not node.needs_grad or not node.inputs:
                continue
            bw = BACKWARD.get(node.op)
            if bw is None:
                raise UnsupportedOp(node.op)
            vals = [self.nodes[j].value for j in node.inputs]
            for j, gj in zip(node.inputs, bw(g, node, vals)):
                if not self.nodes[j].needs_grad:
                    continue
                adj[j] = gj if adj[j] is None else adj[j] + gj
        return [
            adj[leaf] if leaf <= out and adj[leaf] is not None
            else np.zeros_like(self.nodes[leaf].value)
            for leaf in leaves
        ]

    def grad(self, leaf, output=None):
        return self.gradients([leaf], output)[0]


def grad(tape, leaf):
    return tape.grad(leaf)


def finite_diff_check(tape, leaf, samples, step=1e-5, seed=0):
    """Worst relative error between reverse-mode and central differences.

    Up to ``samples`` coordinates of ``leaf`` are drawn at random and each is
    perturbed by +-``step``. Where the analytic entry is below 1e-8 in
    magnitude the absolute error is used instead.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = tape.grad(leaf)
    base = tape.value(leaf)
    out = tape.output
    rng = np.random.default_rng(seed)
    n = base.size
    coords = rng.choice(n, size=min(samples, n), replace=False)
    worst = 0.0
    for flat in coords:
        idx = np.unravel_index(flat, base.shape)
        plus = base.copy()
        plus[idx] += step
        minus = base.copy()
        minus[idx] -= step
        fp = tape.replay({leaf: plus})[out][0, 0]
        fm = tape.replay({leaf: minus})[out][0, 0]
        numeric = (fp - fm) / (2.0 * step)
        a = analytic[idx]
        err = abs(a - numeric)
        if abs(a) >= 1e-8:
            err /= abs(a)
        worst = max(worst, err)
    return worst
