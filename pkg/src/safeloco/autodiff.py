"""Minimal reverse-mode autodiff over named dense float64 arrays.

The op set is fixed and closed: matmul, add/sub/mul/neg, tanh, sigmoid,
exp, log, elementwise max/min, clip, sum/mean reductions, concatenate and
column slicing.  Broadcasting is limited to scalar-with-array and
row-vector-over-matrix; anything fancier is rejected so every gradient
path stays auditable.

Nodes are recorded on a tape in creation order, which is a topological
order by construction; ``backward`` walks the tape in exact reverse.
Constant subtrees never receive gradients, so observation minibatches
cost nothing on the way back.
"""

from __future__ import annotations

import numpy as np


class ConfigurationError(ValueError):
    """Shape or wiring mismatch when assembling a computation."""


class TrainingError(RuntimeError):
    """Numerical fault during optimization (non-finite values)."""


class UsageError(RuntimeError):
    """API misuse, e.g. backward from a non-scalar node."""


def _as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class ParamStore:
    """Named float64 parameter arrays. Shapes are frozen at creation."""

    def __init__(self):
        self._entries: dict[str, np.ndarray] = {}
        self.version = 0

    def create(self, name: str, value) -> np.ndarray:
        if name in self._entries:
            raise ConfigurationError(f"parameter {name!r} already exists")
        arr = _as_f64(value).copy()
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"parameter {name!r} has non-finite entries")
        self._entries[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return list(self._entries)

    def set_(self, name: str, value: np.ndarray) -> None:
        """In-place overwrite; the shape must match the frozen one."""
        cur = self._entries[name]
        arr = _as_f64(value)
        if arr.shape != cur.shape:
            raise ConfigurationError(
                f"parameter {name!r} shape {cur.shape} cannot become {arr.shape}")
        cur[...] = arr

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self._entries.items()}

    def items(self):
        return self._entries.items()

    def n_params(self) -> int:
        return sum(v.size for v in self._entries.values())


class Node:
    """One value in the computation graph."""

    __slots__ = ("data", "grad", "parents", "vjp", "param_ref", "index",
                 "requires_grad")

    def __init__(self, data, parents=(), vjp=None, param_ref=None):
        self.data = data
        self.grad = None
        self.parents = parents
        self.vjp = vjp          # callable (grad, needs) -> tuple of parent grads
        self.param_ref = param_ref
        self.index = -1
        self.requires_grad = (param_ref is not None
                              or any(p.requires_grad for p in parents))

    @property
    def shape(self):
        return self.data.shape


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after row/scalar broadcasting."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    if grad.ndim == 2 and shape == (grad.shape[1],):
        return grad.sum(axis=0)
    raise ConfigurationError(f"cannot reduce gradient {grad.shape} onto {shape}")


def _check_ew_shapes(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.shape == () or b.shape == ():
        return
    if a.ndim == 2 and b.shape == (a.shape[1],):
        return
    if b.ndim == 2 and a.shape == (b.shape[1],):
        return
    raise ConfigurationError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


class Graph:
    """Tape of primitive ops; single-threaded forward and backward."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    # ---- leaves ------------------------------------------------------

    def constant(self, value) -> Node:
        return self._record(Node(_as_f64(value)))

    def param(self, store: ParamStore, name: str) -> Node:
        if name not in store:
            raise ConfigurationError(f"unknown parameter {name!r}")
        return self._record(Node(store[name], param_ref=(store, name)))

    # ---- arithmetic --------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        _check_ew_shapes(a.data, b.data, "add")
        out = Node(a.data + b.data, (a, b))

        def vjp(g, needs):
            return (_unbroadcast(g, a.data.shape) if needs[0] else None,
                    _unbroadcast(g, b.data.shape) if needs[1] else None)

        out.vjp = vjp
        return self._record(out)

    def sub(self, a: Node, b: Node) -> Node:
        _check_ew_shapes(a.data, b.data, "sub")
        out = Node(a.data - b.data, (a, b))

        def vjp(g, needs):
            return (_unbroadcast(g, a.data.shape) if needs[0] else None,
                    _unbroadcast(-g, b.data.shape) if needs[1] else None)

        out.vjp = vjp
        return self._record(out)

    def mul(self, a: Node, b: Node) -> Node:
        _check_ew_shapes(a.data, b.data, "mul")
        out = Node(a.data * b.data, (a, b))

        def vjp(g, needs):
            return (_unbroadcast(g * b.data, a.data.shape) if needs[0] else None,
                    _unbroadcast(g * a.data, b.data.shape) if needs[1] else None)

        out.vjp = vjp
        return self._record(out)

    def neg(self, a: Node) -> Node:
        return self._record(Node(-a.data, (a,), lambda g, needs: (-g,)))

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._record(Node(a.data * c, (a,), lambda g, needs: (g * c,)))

    def add_const(self, a: Node, c: float) -> Node:
        return self._record(Node(a.data + float(c), (a,), lambda g, needs: (g,)))

    def matmul(self, a: Node, b: Node) -> Node:
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ConfigurationError("matmul expects 2-D operands")
        if a.data.shape[1] != b.data.shape[0]:
            raise ConfigurationError(
                f"matmul: inner dims differ {a.data.shape} @ {b.data.shape}")
        out = Node(a.data @ b.data, (a, b))

        def vjp(g, needs):
            return (g @ b.data.T if needs[0] else None,
                    a.data.T @ g if needs[1] else None)

        out.vjp = vjp
        return self._record(out)

    # ---- nonlinearities ----------------------------------------------

    def tanh(self, a: Node) -> Node:
        t = np.tanh(a.data)
        return self._record(Node(t, (a,), lambda g, needs: (g * (1.0 - t * t),)))

    def sigmoid(self, a: Node) -> Node:
        s = 1.0 / (1.0 + np.exp(-a.data))
        return self._record(Node(s, (a,), lambda g, needs: (g * s * (1.0 - s),)))

    def exp(self, a: Node) -> Node:
        e = np.exp(a.data)
        return self._record(Node(e, (a,), lambda g, needs: (g * e,)))

    def log(self, a: Node) -> Node:
        return self._record(Node(np.log(a.data), (a,),
                                 lambda g, needs: (g / a.data,)))

    def maximum(self, a: Node, b: Node) -> Node:
        """Elementwise max; on ties the gradient goes to ``b``."""
        _check_ew_shapes(a.data, b.data, "maximum")
        mask = a.data > b.data
        out = Node(np.where(mask, a.data, b.data), (a, b))

        def vjp(g, needs):
            return (_unbroadcast(g * mask, a.data.shape) if needs[0] else None,
                    _unbroadcast(g * ~mask, b.data.shape) if needs[1] else None)

        out.vjp = vjp
        return self._record(out)

    def minimum(self, a: Node, b: Node) -> Node:
        """Elementwise min; on ties the gradient goes to ``b``."""
        _check_ew_shapes(a.data, b.data, "minimum")
        mask = a.data < b.data
        out = Node(np.where(mask, a.data, b.data), (a, b))

        def vjp(g, needs):
            return (_unbroadcast(g * mask, a.data.shape) if needs[0] else None,
                    _unbroadcast(g * ~mask, b.data.shape) if needs[1] else None)

        out.vjp = vjp
        return self._record(out)

    def relu0(self, a: Node) -> Node:
        """max(0, a) with zero gradient at exactly 0."""
        mask = a.data > 0.0
        out = Node(np.where(mask, a.data, 0.0), (a,),
                   lambda g, needs: (g * mask,))
        return self._record(out)

    def clip(self, a: Node, lo: float, hi: float) -> Node:
        lo, hi = float(lo), float(hi)
        mask = (a.data >= lo) & (a.data <= hi)
        return self._record(Node(np.clip(a.data, lo, hi), (a,),
                                 lambda g, needs: (g * mask,)))

    def square(self, a: Node) -> Node:
        return self._record(Node(a.data * a.data, (a,),
                                 lambda g, needs: (g * 2.0 * a.data,)))

    # ---- reductions and reshaping -------------------------------------

    def sum(self, a: Node, axis: int | None = None) -> Node:
        if axis is None:
            out = Node(np.asarray(a.data.sum()), (a,))
            out.vjp = lambda g, needs: (np.broadcast_to(g, a.data.shape).copy(),)
            return self._record(out)
        if axis not in (-1, a.data.ndim - 1) or a.data.ndim != 2:
            raise ConfigurationError("sum over an axis is supported for 2-D, last axis only")
        out = Node(a.data.sum(axis=1), (a,))
        out.vjp = lambda g, needs: (np.repeat(g[:, None], a.data.shape[1], axis=1),)
        return self._record(out)

    def mean(self, a: Node) -> Node:
        n = a.data.size
        out = Node(np.asarray(a.data.mean()), (a,))
        out.vjp = lambda g, needs: (np.broadcast_to(g / n, a.data.shape).copy(),)
        return self._record(out)

    def concat(self, parts: list[Node], axis: int = -1) -> Node:
        ndim = parts[0].data.ndim
        for p in parts:
            if p.data.ndim != ndim:
                raise ConfigurationError("concat: rank mismatch")
        ax = axis if axis >= 0 else ndim + axis
        data = np.concatenate([p.data for p in parts], axis=ax)
        sizes = [p.data.shape[ax] for p in parts]
        offsets = np.cumsum([0] + sizes)
        out = Node(data, tuple(parts))

        def vjp(g, needs):
            slicer = [slice(None)] * ndim
            grads = []
            for i in range(len(parts)):
                if not needs[i]:
                    grads.append(None)
                    continue
                slicer[ax] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(slicer)])
            return tuple(grads)

        out.vjp = vjp
        return self._record(out)

    def slice_cols(self, a: Node, start: int, stop: int) -> Node:
        if a.data.ndim == 1:
            out = Node(a.data[start:stop], (a,))

            def vjp1(g, needs):
                full = np.zeros_like(a.data)
                full[start:stop] = g
                return (full,)

            out.vjp = vjp1
            return self._record(out)
        if a.data.ndim != 2:
            raise ConfigurationError("slice_cols expects a 1-D or 2-D node")
        out = Node(a.data[:, start:stop], (a,))

        def vjp(g, needs):
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            return (full,)

        out.vjp = vjp
        return self._record(out)

    # ---- backward ------------------------------------------------------

    def backward(self, seed: Node, store: ParamStore | None = None) -> dict[str, np.ndarray]:
        """Reverse-mode gradients of a scalar ``seed`` w.r.t. parameters.

        Gradients for a parameter used several times accumulate by
        summation.  When ``store`` is given, every one of its parameters
        appears in the result, unreachable ones as zeros.
        """
        if seed.data.ndim != 0:
            raise UsageError("backward seed must be a scalar node")
        for node in self.nodes:
            node.grad = None
        seed.grad = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes[: seed.index + 1]):
            if node.grad is None or node.vjp is None or not node.requires_grad:
                continue
            needs = tuple(p.requires_grad for p in node.parents)
            parent_grads = node.vjp(node.grad, needs)
            for parent, g in zip(node.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                # first touch borrows the vjp output (finalized grads are
                # never mutated); later touches reallocate
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
        grads: dict[str, np.ndarray] = store.zeros_like() if store is not None else {}
        for node in self.nodes:
            if node.param_ref is None or node.grad is None:
                continue
            ref_store, name = node.param_ref
            if store is not None and ref_store is not store:
                continue
            if name in grads:
                grads[name] = grads[name] + node.grad
            else:
                grads[name] = node.grad.copy()
        return grads
