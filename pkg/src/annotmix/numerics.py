"""Dense float64 matrices, a reverse-mode tape, and seeded sampling.

Every quantity is a 2-D ``numpy.ndarray`` of dtype float64 (a "matrix").
Differentiable computations are recorded on a :class:`Tape`; calling
:func:`backward` on a scalar node replays the recorded operations in reverse
and returns one adjoint per registered variable.

Broadcasting is limited to adding or multiplying a ``1 x n`` row vector onto
an ``m x n`` matrix. Every other shape mismatch raises :class:`ShapeError`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError

__all__ = [
    "Node",
    "Tape",
    "Rng",
    "as_matrix",
    "backward",
    "matmul",
    "add",
    "mul",
    "scale",
    "leaky_relu",
    "softmax_rows",
    "log",
    "sum_all",
    "reshape",
    "concat_cols",
    "vecmat_rows",
    "sample_gamma",
    "sample_beta",
    "softmax_rows_array",
]


def as_matrix(value, name="matrix") -> np.ndarray:
    """Coerce ``value`` to a 2-D float64 array, rejecting other ranks."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


class Node:
    """A value on a tape together with the rule for pushing adjoints to its parents."""

    __slots__ = ("value", "tape", "parents", "grad_fn", "index")

    def __init__(self, value, tape, parents=(), grad_fn=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.grad_fn = grad_fn
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


class Tape:
    """Ordered record of primitive operations.

    Leaves come in two kinds: *variables* (registered parameters whose
    adjoints :func:`backward` returns) and *constants* (inputs that never
    receive gradients).
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.variables: list[Node] = []

    def _push(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def variable(self, value) -> Node:
        node = self._push(Node(as_matrix(value, "variable"), self))
        self.variables.append(node)
        return node

    def constant(self, value) -> Node:
        return self._push(Node(as_matrix(value, "constant"), self))

    def op(self, value, parents, grad_fn) -> Node:
        return self._push(Node(value, self, tuple(parents), grad_fn))


def _tape_of(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ContractError("operands live on different tapes")
    return tape


def backward(tape: Tape, loss: Node) -> list[np.ndarray]:
    """Adjoints of ``loss`` for every variable on ``tape``, in registration order.

    Variables that do not influence ``loss`` get an all-zero adjoint.
    """
    if loss.tape is not tape:
        raise ContractError("loss node does not belong to this tape")
    if loss.value.shape != (1, 1):
        raise ContractError(f"loss must be a 1x1 scalar, got shape {loss.value.shape}")
    adjoints: dict[int, np.ndarray] = {loss.index: np.ones((1, 1))}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = adjoints.pop(node.index, None) if node.grad_fn is not None else adjoints.get(node.index)
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None:
                continue
            prev = adjoints.get(parent.index)
            adjoints[parent.index] = pg if prev is None else prev + pg
    return [adjoints.get(v.index, np.zeros_like(v.value)) for v in tape.variables]


# --- primitive operations --------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} x {b.value.shape}")
    av, bv = a.value, b.value

    def grad_fn(g):
        return g @ bv.T, av.T @ g

    return tape.op(av @ bv, (a, b), grad_fn)


def _broadcast_kind(a: np.ndarray, b: np.ndarray, opname: str) -> bool:
    """True if ``b`` is a row vector broadcast over ``a``'s rows."""
    if a.shape == b.shape:
        return False
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return True
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Node, b: Node) -> Node:
    """``a + b``; ``b`` may be a ``1 x n`` row broadcast over ``a``."""
    tape = _tape_of(a, b)
    row = _broadcast_kind(a.value, b.value, "add")

    def grad_fn(g):
        return g, (g.sum(axis=0, keepdims=True) if row else g)

    return tape.op(a.value + b.value, (a, b), grad_fn)


def mul(a: Node, b: Node) -> Node:
    """Elementwise product; ``b`` may be a ``1 x n`` row broadcast over ``a``."""
    tape = _tape_of(a, b)
    row = _broadcast_kind(a.value, b.value, "mul")
    av, bv = a.value, b.value

    def grad_fn(g):
        gb = g * av
        return g * bv, (gb.sum(axis=0, keepdims=True) if row else gb)

    return tape.op(av * bv, (a, b), grad_fn)


def scale(a: Node, factor: float) -> Node:
    factor = float(factor)
    return a.tape.op(a.value * factor, (a,), lambda g: (g * factor,))


def leaky_relu(a: Node, slope: float = 0.01) -> Node:
    mask = np.where(a.value > 0, 1.0, slope)
    return a.tape.op(a.value * mask, (a,), lambda g: (g * mask,))


def softmax_rows_array(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array, stabilized by subtracting the row max."""
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(a: Node) -> Node:
    y = softmax_rows_array(a.value)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return a.tape.op(y, (a,), grad_fn)


def log(a: Node, floor: float = 1e-12) -> Node:
    """Natural log of ``max(a, floor)``; no gradient flows through clamped entries."""
    clamped = np.maximum(a.value, floor)
    live = a.value > floor

    def grad_fn(g):
        return (np.where(live, g / clamped, 0.0),)

    return a.tape.op(np.log(clamped), (a,), grad_fn)


def sum_all(a: Node) -> Node:
    shape = a.value.shape
    return a.tape.op(np.array([[a.value.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),))


def reshape(a: Node, rows: int, cols: int) -> Node:
    shape = a.value.shape
    if rows * cols != shape[0] * shape[1]:
        raise ShapeError(f"reshape: cannot view {shape} as ({rows}, {cols})")
    return a.tape.op(a.value.reshape(rows, cols), (a,), lambda g: (g.reshape(shape),))


def concat_cols(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    if a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"concat_cols: row counts {a.value.shape[0]} and {b.value.shape[0]}")
    k = a.value.shape[1]
    return tape.op(np.hstack([a.value, b.value]), (a, b), lambda g: (g[:, :k], g[:, k:]))


def vecmat_rows(p: Node, mats: Node) -> Node:
    """Row-wise vector-matrix product.

    ``p`` is ``B x C``; each row of ``mats`` (``B x C*C``) is a row-major
    ``C x C`` matrix. Row ``i`` of the result is ``p[i] @ mats[i]``.
    """
    tape = _tape_of(p, mats)
    b, c = p.value.shape
    if mats.value.shape != (b, c * c):
        raise ShapeError(f"vecmat_rows: {p.value.shape} with {mats.value.shape}")
    pv = p.value
    mv = mats.value.reshape(b, c, c)

    def grad_fn(g):
        gp = np.einsum("bkj,bj->bk", mv, g)
        gm = np.einsum("bk,bj->bkj", pv, g).reshape(b, c * c)
        return gp, gm

    return tape.op(np.einsum("bk,bkj->bj", pv, mv), (p, mats), grad_fn)


# --- random sampling -------------------------------------------------------


class Rng:
    """Seeded random stream.

    Bits come from numpy's PCG64, whose output is specified bit-for-bit and
    identical across platforms. ``stream`` selects an independent substream
    for the same seed so that, e.g., shuffling and mixing-coefficient draws
    never perturb each other.
    """

    def __init__(self, seed: int, stream: Sequence[int] | int = ()):
        if isinstance(stream, int):
            stream = (stream,)
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self.stream])
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *stream: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(stream))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, size=None):
        return self.gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def beta(self, alpha: float) -> float:
        return sample_beta(self, alpha)


def sample_gamma(rng: Rng, shape: float) -> float:
    """Gamma(shape, 1) draw by Marsaglia and Tsang's squeeze method."""
    if not shape > 0:
        raise DomainError(f"gamma shape must be positive, got {shape}")
    if shape < 1.0:
        # boost: Gamma(a) = Gamma(a + 1) * U^(1/a)
        g = sample_gamma(rng, shape + 1.0)
        u = rng.uniform()
        while u == 0.0:
            u = rng.uniform()
        return g * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = float(rng.normal())
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = float(rng.uniform())
        if u < 1.0 - 0.0331 * x**4:
            return d * v
        if u > 0.0 and math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample_beta(rng: Rng, alpha: float) -> float:
    """Symmetric Beta(alpha, alpha) draw as a ratio of two Gamma draws."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    x = sample_gamma(rng, alpha)
    y = sample_gamma(rng, alpha)
    total = x + y
    if total == 0.0:
        # both underflowed (tiny alpha); the limit law puts mass 1/2 on each end
        return 1.0 if rng.uniform() < 0.5 else 0.0
    return x / total

