"""Reverse-mode differentiation over dense NCHW numpy arrays.

Values flow through Node objects that remember how they were computed.
Calling backward(loss) walks the recorded graph once in reverse
topological order and accumulates d(loss)/d(weight) into every reachable
Variable. Everything is eager; the "tape" is just the parent links.

Feature tensors are 4-D (N, C, H, W) float arrays. Loss reductions
produce 0-d arrays, which only ever appear at the root of the graph.
"""

import contextlib

import numpy as np

from .errors import ContractViolation

# Default compute dtype. Verification (gradient checks, Parseval) runs in
# float64 to separate algorithmic error from rounding; training defaults
# to float32.
DEFAULT_DTYPE = np.float32

_grad_enabled = True


def grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "_parents", "_backward", "needs_grad")

    def __init__(self, value, parents=(), backward=None, needs_grad=False):
        self.value = value
        self._parents = parents
        self._backward = backward
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def detach(self):
        """A constant view of this node's value (cuts the graph)."""
        return Node(self.value)

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        return f"Node(shape={shape}, needs_grad={self.needs_grad})"


class Variable(Node):
    """A named trainable tensor with a persistent gradient slot."""

    __slots__ = ("name", "grad")

    def __init__(self, name, value):
        super().__init__(np.ascontiguousarray(value), needs_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Variable({self.name!r}, shape={self.value.shape})"


def as_node(x):
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x))


def constant(value, dtype=None):
    arr = np.asarray(value, dtype=dtype)
    return Node(arr)


def apply(value, parents, backward):
    """Record one operation if any parent needs gradients.

    `backward` maps the upstream gradient array to a tuple of gradient
    arrays aligned with `parents` (None for a parent that needs none).
    Returned arrays must be freshly allocated or owned views of fresh
    allocations; the accumulator never mutates them in place.
    """
    if _grad_enabled and any(p.needs_grad for p in parents):
        return Node(value, tuple(parents), backward, needs_grad=True)
    return Node(value)


# ---------------------------------------------------------------------------
# elementwise / reduction primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape:
        raise ContractViolation(
            f"add: shape mismatch {a.value.shape} vs {b.value.shape}")
    return apply(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape:
        raise ContractViolation(
            f"sub: shape mismatch {a.value.shape} vs {b.value.shape}")
    return apply(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape:
        raise ContractViolation(
            f"mul: shape mismatch {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    return apply(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, s):
    """Multiply by a python scalar."""
    a = as_node(a)
    s = float(s)
    return apply(a.value * s, (a,), lambda g: (g * s,))


def neg(a):
    return scale(a, -1.0)


def abs_(a):
    """Elementwise |x| with subgradient 0 at x = 0."""
    a = as_node(a)
    sign = np.sign(a.value)
    return apply(np.abs(a.value), (a,), lambda g: (g * sign,))


def sum_(a):
    """Full reduction to a 0-d scalar node."""
    a = as_node(a)
    shape = a.value.shape
    dtype = a.value.dtype

    def bwd(g):
        return (np.full(shape, g, dtype=dtype),)

    return apply(np.asarray(a.value.sum(), dtype=dtype), (a,), bwd)


def mean_abs(a, b):
    """Per-element mean of |a - b|, the building block of both losses."""
    d = sub(a, b)
    return scale(sum_(abs_(d)), 1.0 / d.value.size)


def add_scalars(nodes):
    """Sum a list of 0-d scalar nodes."""
    if not nodes:
        raise ContractViolation("add_scalars: empty list")
    total = nodes[0]
    for n in nodes[1:]:
        total = add(total, n)
    return total


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    """Iterative post-order; children appear before their consumers."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss, retain_values=False):
    """Accumulate d(loss)/d(v) into v.grad for every reachable Variable.

    The loss must be a 0-d (or single-element) node. Unless
    retain_values is set, intermediate nodes release their buffers
    afterwards; read any forward values you still need first.
    """
    if loss.value is None or loss.value.size != 1:
        size = None if loss.value is None else loss.value.size
        raise ContractViolation(f"backward: loss must be scalar, got size {size}")

    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Variable):
            node.grad += g
            continue
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.needs_grad:
                continue
            acc = grads.get(id(parent))
            # never accumulate in place: pg may alias upstream buffers
            grads[id(parent)] = pg if acc is None else acc + pg

    if not retain_values:
        # release intermediates; leaves (Variables, constants) and the
        # loss itself keep their buffers
        for node in order:
            if node._backward is None:
                continue
            node._backward = None
            node._parents = ()
            if node is not loss and not isinstance(node, Variable):
                node.value = None


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_grad(f, theta, eps=1e-4):
    """Central-difference gradient of a scalar function at theta.

    Perturbs every element; intended for small tensors in 64-bit mode.
    """
    if eps <= 0:
        raise ContractViolation("finite_diff_grad: eps must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(theta))
        flat[i] = orig - eps
        f_minus = float(f(theta))
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad
