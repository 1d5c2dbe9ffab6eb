"""Minimal dense tape-based autodiff kernel.

Supports exactly the primitives needed to express an unrolled n-step loss of
a one-hidden-layer tanh network: add, sub, scalar-mul, hadamard, matvec,
tanh, square, abs, sum, mean. Values are float64 ndarrays of rank 0, 1 or 2
(rank 2 only as matvec operands). No broadcasting.

A Tape records primitive applications while active (``with Tape() as t:``)
and replays them in reverse to accumulate gradients. Tapes are rebuilt per
use and are single-threaded; Matrix values are immutable and safe to share.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

__all__ = [
    "Matrix", "Node", "Tape", "node", "add", "sub", "smul", "hadamard",
    "matvec", "tanh", "square", "vabs", "vsum", "vmean",
]


class Matrix:
    """Immutable row-major float64 matrix."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Matrix requires 2-D data, got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Matrix entries must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        self._data = arr

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def data(self) -> np.ndarray:
        return self._data

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols})"


class Node:
    """A value tracked by the active tape. Leaves are user-created nodes."""

    __slots__ = ("value", "tape_id")

    def __init__(self, value):
        if isinstance(value, Matrix):
            value = value.data
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim > 2:
            raise ValueError(f"rank-{arr.ndim} values are not supported")
        self.value = arr
        self.tape_id: int | None = None

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(float(other), self)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def node(value) -> Node:
    return Node(value)


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of primitive ops; replayed in reverse by backward()."""

    def __init__(self):
        # each record: (op kind, operand ids, output id, saved payload)
        self.records: list[tuple[str, tuple[int, ...], int, tuple]] = []
        self._values: list[Node] = []
        self._leaf_ids: list[int] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _register(self, n: Node, leaf: bool) -> int:
        if n.tape_id is not None and n.tape_id < len(self._values) \
                and self._values[n.tape_id] is n:
            return n.tape_id
        n.tape_id = len(self._values)
        self._values.append(n)
        if leaf:
            self._leaf_ids.append(n.tape_id)
        return n.tape_id

    def record(self, op: str, inputs: Iterable[Node], output: Node, payload: tuple = ()):
        in_ids = tuple(self._register(n, leaf=True) for n in inputs)
        out_id = self._register(output, leaf=False)
        self.records.append((op, in_ids, out_id, payload))

    def backward(self, output: Node) -> dict[Node, np.ndarray]:
        """Gradient of a scalar output w.r.t. every leaf seen by this tape.

        Leaves that do not reach the output get zero gradients. Replays the
        record list strictly in reverse, visiting each record exactly once.
        """
        if output.value.ndim != 0:
            raise ValueError(
                f"backward requires a scalar output, got shape {output.value.shape}")
        if output.tape_id is None or self._values[output.tape_id] is not output:
            raise ValueError("output was not computed on this tape")

        grads: list[np.ndarray | None] = [None] * len(self._values)
        grads[output.tape_id] = np.ones(())

        def accum(idx: int, g: np.ndarray):
            if grads[idx] is None:
                grads[idx] = g.copy()
            else:
                grads[idx] += g

        for op, in_ids, out_id, payload in reversed(self.records):
            g = grads[out_id]
            if g is None:
                continue
            if op == "add":
                accum(in_ids[0], g)
                accum(in_ids[1], g)
            elif op == "sub":
                accum(in_ids[0], g)
                accum(in_ids[1], -g)
            elif op == "smul":
                (c,) = payload
                accum(in_ids[0], c * g)
            elif op == "hadamard":
                a, b = (self._values[i].value for i in in_ids)
                accum(in_ids[0], g * b)
                accum(in_ids[1], g * a)
            elif op == "matvec":
                m, v = (self._values[i].value for i in in_ids)
                accum(in_ids[0], np.outer(g, v))
                accum(in_ids[1], m.T @ g)
            elif op == "tanh":
                y = self._values[out_id].value
                accum(in_ids[0], g * (1.0 - y * y))
            elif op == "square":
                a = self._values[in_ids[0]].value
                accum(in_ids[0], g * (2.0 * a))
            elif op == "abs":
                a = self._values[in_ids[0]].value
                accum(in_ids[0], g * np.sign(a))
            elif op == "sum":
                a = self._values[in_ids[0]].value
                accum(in_ids[0], np.broadcast_to(g, a.shape).astype(np.float64))
            elif op == "mean":
                a = self._values[in_ids[0]].value
                accum(in_ids[0], np.broadcast_to(g / a.size, a.shape).astype(np.float64))
            else:  # pragma: no cover
                raise AssertionError(f"unknown op {op!r}")

        out: dict[Node, np.ndarray] = {}
        for i in self._leaf_ids:
            n = self._values[i]
            out[n] = grads[i] if grads[i] is not None else np.zeros_like(n.value)
        return out


def _as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(x)


def _emit(op: str, inputs: tuple[Node, ...], value: np.ndarray, payload: tuple = ()) -> Node:
    out = Node(value)
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.record(op, inputs, out, payload)
    return out


def _check_same_shape(op: str, a: Node, b: Node):
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_same_shape("add", a, b)
    return _emit("add", (a, b), a.value + b.value)


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_same_shape("sub", a, b)
    return _emit("sub", (a, b), a.value - b.value)


def smul(c: float, a) -> Node:
    a = _as_node(a)
    c = float(c)
    return _emit("smul", (a,), c * a.value, payload=(c,))


def hadamard(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_same_shape("hadamard", a, b)
    return _emit("hadamard", (a, b), a.value * b.value)


def matvec(m, v) -> Node:
    """Matrix-vector product; records to the active tape if one is open."""
    if isinstance(m, Matrix):
        m = Node(m)
    m, v = _as_node(m), _as_node(v)
    if m.value.ndim != 2 or v.value.ndim != 1:
        raise ValueError(
            f"matvec requires (matrix, vector), got shapes {m.value.shape} and {v.value.shape}")
    if m.value.shape[1] != v.value.shape[0]:
        raise ValueError(
            f"matvec dimension mismatch: matrix {m.value.shape} x vector {v.value.shape}")
    return _emit("matvec", (m, v), m.value @ v.value)


def tanh(a) -> Node:
    a = _as_node(a)
    return _emit("tanh", (a,), np.tanh(a.value))


def square(a) -> Node:
    a = _as_node(a)
    return _emit("square", (a,), a.value * a.value)


def vabs(a) -> Node:
    a = _as_node(a)
    return _emit("abs", (a,), np.abs(a.value))


def vsum(a) -> Node:
    a = _as_node(a)
    return _emit("sum", (a,), np.sum(a.value))


def vmean(a) -> Node:
    a = _as_node(a)
    return _emit("mean", (a,), np.mean(a.value))
