"""Minimal taped reverse-mode automatic differentiation.

The denoiser needs exact input-Jacobian transpose products at evaluation
time and, during training, gradients of a loss that itself contains such a
product.  Every primitive therefore expresses its backward rule in terms of
the same primitive vocabulary, so the tape built while computing a gradient
is again differentiable (backward-of-backward works to any order).

Primitive set: add, mul, neg, matmul, transpose_last2, reshape, sum_to,
broadcast_to, sum_all, gather, scatter (mutual adjoints over a shared index
plan), softplus, sigmoid, abs.  Convolutions, padding, and resampling in the
network layer are compositions of gather/matmul/reshape/add, so nothing
outside this set is ever differentiated.

Gradients follow the input dtype: float64 in the correctness tests, float32
in training.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError


class Tensor:
    """Graph node: a value plus links to its parents and their vjp rules."""

    __slots__ = ("value", "parents", "vjps", "requires")

    def __init__(self, value, parents=(), vjps=(), requires=None):
        self.value = np.asarray(value)
        if requires is None:
            requires = any(p.requires for p in parents)
        if requires:
            self.parents = tuple(parents)
            self.vjps = tuple(vjps)
        else:
            # constant subgraphs never receive gradients; drop the links so
            # long computations do not accumulate dead tape
            self.parents = ()
            self.vjps = ()
        self.requires = requires

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires={self.requires})"


def leaf(value) -> Tensor:
    return Tensor(np.asarray(value), requires=True)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value), requires=False)


def detach(t: Tensor) -> Tensor:
    return constant(t.value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


# ---------------------------------------------------------------------------
# shape plumbing


def _reduced(value: np.ndarray, shape: tuple) -> np.ndarray:
    if value.shape == shape:
        return value
    extra = value.ndim - len(shape)
    if extra:
        value = value.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(value.shape, shape)) if want == 1 and have != 1)
    if axes:
        value = value.sum(axis=axes, keepdims=True)
    return value.reshape(shape)


def sum_to(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if a.value.shape == shape:
        return a
    src_shape = a.value.shape
    return Tensor(
        _reduced(a.value, shape),
        (a,),
        (lambda v: broadcast_to(v, src_shape),),
    )


def broadcast_to(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if a.value.shape == shape:
        return a
    src_shape = a.value.shape
    return Tensor(
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        (lambda v: sum_to(v, src_shape),),
    )


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    src_shape = a.value.shape
    return Tensor(a.value.reshape(shape), (a,), (lambda v: reshape(v, src_shape),))


def transpose_last2(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.value.ndim < 2:
        raise ArgumentError("transpose_last2 needs ndim >= 2")
    return Tensor(
        np.ascontiguousarray(np.swapaxes(a.value, -1, -2)),
        (a,),
        (lambda v: transpose_last2(v),),
    )


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    a_shape, b_shape = a.value.shape, b.value.shape
    return Tensor(
        a.value + b.value,
        (a, b),
        (lambda v: sum_to(v, a_shape), lambda v: sum_to(v, b_shape)),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(-a.value, (a,), (lambda v: neg(v),))


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    a_shape, b_shape = a.value.shape, b.value.shape
    return Tensor(
        a.value * b.value,
        (a, b),
        (
            lambda v: sum_to(mul(v, b), a_shape),
            lambda v: sum_to(mul(v, a), b_shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ArgumentError("matmul operands need ndim >= 2")
    a_shape, b_shape = a.value.shape, b.value.shape
    return Tensor(
        a.value @ b.value,
        (a, b),
        (
            lambda v: sum_to(matmul(v, transpose_last2(b)), a_shape),
            lambda v: sum_to(matmul(transpose_last2(a), v), b_shape),
        ),
    )


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    src_shape = a.value.shape
    return Tensor(
        np.asarray(a.value.sum()),
        (a,),
        (lambda v: broadcast_to(v, src_shape),),
    )


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid_value(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    holder = []

    def vjp(v):
        s = holder[0]
        return mul(v, mul(s, add(neg(s), np.asarray(1.0, dtype=s.value.dtype))))

    node = Tensor(_sigmoid_value(a.value), (a,), (vjp,))
    holder.append(node)
    return node


def softplus(a) -> Tensor:
    """log(1 + exp(x)), evaluated stably; derivative is sigmoid(x)."""
    a = _as_tensor(a)
    x = a.value
    value = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return Tensor(value, (a,), (lambda v: mul(v, sigmoid(a)),))


def abs_(a) -> Tensor:
    """|x| with the a.e. derivative sign(x) treated as locally constant."""
    a = _as_tensor(a)
    sign = np.sign(a.value)
    return Tensor(np.abs(a.value), (a,), (lambda v: mul(v, constant(sign)),))


# ---------------------------------------------------------------------------
# gather / scatter over a shared index plan


class IndexPlan:
    """Immutable flat index map for last-axis gather and its adjoint scatter."""

    __slots__ = ("indices", "n_in", "_scatter_cache")

    def __init__(self, indices: np.ndarray, n_in: int):
        idx = np.ascontiguousarray(indices, dtype=np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= n_in):
            raise ArgumentError("index plan entries out of range")
        idx.flags.writeable = False
        self.indices = idx
        self.n_in = int(n_in)
        self._scatter_cache = None

    @property
    def n_out(self) -> int:
        return int(self.indices.size)

    def _scatter_plan(self):
        if self._scatter_cache is None:
            order = np.argsort(self.indices, kind="stable")
            sorted_idx = self.indices[order]
            uniq, starts = np.unique(sorted_idx, return_index=True)
            self._scatter_cache = (order, starts, uniq)
        return self._scatter_cache

    def gather_values(self, x: np.ndarray) -> np.ndarray:
        # np.take keeps the output C-contiguous; x[..., idx] may not
        return np.take(x, self.indices, axis=-1)

    def scatter_values(self, g: np.ndarray) -> np.ndarray:
        out = np.zeros(g.shape[:-1] + (self.n_in,), g.dtype)
        if self.indices.size:
            order, starts, uniq = self._scatter_plan()
            out[..., uniq] = np.add.reduceat(np.take(g, order, axis=-1), starts, axis=-1)
        return out


def gather(a, plan: IndexPlan) -> Tensor:
    a = _as_tensor(a)
    if a.value.shape[-1] != plan.n_in:
        raise ArgumentError(
            f"gather plan expects last axis {plan.n_in}, got {a.value.shape[-1]}"
        )
    return Tensor(plan.gather_values(a.value), (a,), (lambda v: scatter(v, plan),))


def scatter(a, plan: IndexPlan) -> Tensor:
    a = _as_tensor(a)
    if a.value.shape[-1] != plan.n_out:
        raise ArgumentError(
            f"scatter plan expects last axis {plan.n_out}, got {a.value.shape[-1]}"
        )
    return Tensor(plan.scatter_values(a.value), (a,), (lambda v: gather(v, plan),))


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires and id(p) not in seen:
                stack.append((p, False))
    return order


class Gradients:
    """Result of a backward pass: leaf tensor -> gradient tensor lookup.

    Only gradients of leaves (tensors without parents) are retained;
    intermediate cotangents are released as the sweep consumes them.
    """

    def __init__(self, table: dict[int, Tensor]):
        self._table = table

    def get(self, t: Tensor) -> Tensor | None:
        return self._table.get(id(t))

    def __getitem__(self, t: Tensor) -> Tensor:
        g = self._table.get(id(t))
        if g is None:
            raise KeyError("tensor did not receive a gradient")
        return g


def backward(output: Tensor, output_grad: Tensor | np.ndarray | None = None,
             traced: bool = True, wrt=None) -> Gradients:
    """Reverse-mode sweep from `output`; keeps gradients for leaf tensors.

    With traced=True the returned gradients are graph tensors built from
    traced primitives, so they can be differentiated again.  With
    traced=False every cotangent is detached as soon as it is computed and
    tape entries are dropped once consumed, which bounds peak memory to
    roughly the forward tape; use it when only gradient values are needed.

    `wrt` optionally restricts the sweep to branches that can reach the
    given tensors; everything else is pruned, not just skipped at the end.
    """
    if not output.requires:
        return Gradients({})
    if output_grad is None:
        if output.value.size != 1:
            raise ArgumentError("backward without output_grad needs a scalar output")
        output_grad = constant(np.ones_like(output.value))
    output_grad = _as_tensor(output_grad)
    if output_grad.value.shape != output.value.shape:
        raise ArgumentError("output_grad shape must match output shape")

    order = _topo_order(output)
    needs = None
    if wrt is not None:
        targets = {id(t) for t in wrt}
        needs = {}
        for node in order:  # parents precede consumers in the order
            needs[id(node)] = id(node) in targets or any(
                needs.get(id(p), False) for p in node.parents if p.requires
            )
        if not needs.get(id(output), False):
            return Gradients({})

    table: dict[int, Tensor] = {id(output): output_grad}
    keep: dict[int, Tensor] = {}
    for node in reversed(order):
        g = table.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            keep[id(node)] = g
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires:
                continue
            if needs is not None and not needs.get(id(parent), False):
                continue
            contrib = vjp(g)
            if not traced:
                contrib = constant(contrib.value)
            prev = table.get(id(parent))
            table[id(parent)] = contrib if prev is None else add(prev, contrib)
    keep.update(table)
    return Gradients(keep)


def grad(output: Tensor, inputs: list[Tensor],
         output_grad: Tensor | np.ndarray | None = None,
         traced: bool = True) -> list[Tensor]:
    grads = backward(output, output_grad, traced=traced, wrt=inputs)
    out = []
    for t in inputs:
        g = grads.get(t)
        if g is None:
            g = constant(np.zeros_like(t.value))
        out.append(g)
    return out
