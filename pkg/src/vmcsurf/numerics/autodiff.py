"""Registered-primitive evaluation in three modes.

Every network in this package is written once as a composition of the
primitives in :mod:`vmcsurf.numerics.ops` and can then be evaluated

* on plain numpy arrays (values only),
* on :class:`Dual` boxes carrying exact first derivatives and the
  accumulated trace of second derivatives with respect to a set of
  designated input coordinates (forward propagation, no graph), or
* on :class:`Node` boxes recorded on a :class:`Tape` for reverse-mode
  parameter gradients, optionally keeping a per-sample leading axis so
  one backward pass yields one gradient row per sample.

A primitive that lacks the rule for the requested mode raises
:class:`UnsupportedPrimitiveError`.

Conventions for tape mode: the sample axis, when present, is axis 0 of
every sample-dependent tensor, and einsum subscripts spell it as the
first index letter of the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnsupportedPrimitiveError(RuntimeError):
    """A primitive has no propagation rule registered for this mode."""


@dataclass
class DualBatch:
    """Value, exact jacobian and accumulated second-derivative trace.

    ``jacobian[..., d]`` is the derivative of ``value`` with respect to
    input coordinate ``d``; ``laplacian_trace`` is the sum of second
    derivatives over all input coordinates.
    """

    value: np.ndarray
    jacobian: np.ndarray
    laplacian_trace: np.ndarray


class Dual:
    """Forward-propagation box: value, jac (n_dirs leading axis), lap."""

    __slots__ = ("value", "jac", "lap")
    __array_ufunc__ = None

    def __init__(self, value, jac, lap):
        self.value = value
        self.jac = jac
        self.lap = lap

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, (Dual, Node)):
            raise UnsupportedPrimitiveError("division by a traced value")
        return ops.mul(self, 1.0 / np.asarray(other))

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops

        return ops.matmul(other, self)

    def __getitem__(self, idx):
        from . import ops

        return ops.take(self, idx)


class Node:
    """A recorded value on a :class:`Tape`."""

    __slots__ = ("tape", "value", "prim", "args", "kw", "sample", "grad", "aux", "path")
    __array_ufunc__ = None

    def __init__(self, tape, value, prim, args, kw, sample, path=None):
        self.tape = tape
        self.value = value
        self.prim = prim
        self.args = args
        self.kw = kw
        self.sample = sample
        self.grad = None
        self.aux = None
        self.path = path
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, (Dual, Node)):
            raise UnsupportedPrimitiveError("division by a traced value")
        return ops.mul(self, 1.0 / np.asarray(other))

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops

        return ops.matmul(other, self)

    def __getitem__(self, idx):
        from . import ops

        return ops.take(self, idx)


class Tape:
    """Records primitive applications for a single backward pass.

    ``sample_size`` switches per-sample mode: parameter-leaf gradients
    keep a leading axis of that size, one row per sample, provided the
    traced function never mixes samples.
    """

    def __init__(self, sample_size: int | None = None):
        self.nodes = []
        self.sample_size = sample_size

    def input(self, value, sample: bool = False) -> Node:
        return Node(self, np.asarray(value), None, (), {}, sample)

    def param(self, path, value) -> Node:
        return Node(self, np.asarray(value), None, (), {}, False, path=tuple(path))

    def wrap_params(self, tree, prefix=()):
        """Wrap a parameter tree's leaves as tape leaves."""
        if isinstance(tree, dict):
            return {k: self.wrap_params(v, prefix + (k,)) for k, v in tree.items()}
        return self.param(prefix, tree)

    def backward(self, out: Node, seed=None) -> dict:
        """Accumulate cotangents from ``out`` back to parameter leaves.

        Returns ``{path: grad}``.  In per-sample mode every grad has shape
        ``(sample_size, *param_shape)``.
        """
        if seed is None:
            seed = np.ones(out.value.shape, dtype=out.value.dtype)
        out.grad = np.asarray(seed)
        per_sample = self.sample_size is not None
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or node.prim is None:
                continue
            cots = node.prim.vjp(node, g)
            for arg, c in zip(node.args, cots):
                if not isinstance(arg, Node) or c is None:
                    continue
                if per_sample and not arg.sample:
                    c = _reduce_keep_axis0(c, arg.value.shape, self.sample_size)
                else:
                    c = _reduce_to(c, arg.value.shape)
                # cotangents may alias each other (an add's two inputs share
                # one buffer), so accumulation always allocates
                arg.grad = c if arg.grad is None else arg.grad + c
            node.grad = None
            node.aux = None
        grads = {}
        for node in self.nodes:
            if node.path is not None:
                g = node.grad
                if g is None:
                    shape = node.value.shape
                    if per_sample:
                        shape = (self.sample_size,) + shape
                    g = np.zeros(shape, dtype=node.value.dtype)
                grads[node.path] = g
        return grads


def _reduce_to(cot, shape):
    """Standard unbroadcast: sum surplus leading axes, then broadcast axes."""
    while cot.ndim > len(shape):
        cot = cot.sum(axis=0)
    axes = tuple(i for i, (c, s) in enumerate(zip(cot.shape, shape)) if s == 1 and c != 1)
    if axes:
        cot = cot.sum(axis=axes, keepdims=True)
    return cot


def _reduce_keep_axis0(cot, shape, n_sample):
    """Unbroadcast to ``(n_sample, *shape)``.

    In per-sample mode every cotangent carries the sample axis as axis 0
    (flagged tensors store samples there; rules preserve it).  The body
    dims behind it are right-aligned against ``shape`` and unbroadcast.
    """
    body_shape = tuple(shape)
    if cot.ndim == 0 or cot.shape[0] != n_sample:
        # The argument never met the samples through this edge.
        red = _reduce_to(cot, body_shape)
        return np.broadcast_to(red, (n_sample,) + body_shape)
    missing = len(body_shape) - (cot.ndim - 1)
    if missing > 0:
        cot = cot.reshape(cot.shape[:1] + (1,) * missing + cot.shape[1:])
    while cot.ndim - 1 > len(body_shape):
        cot = cot.sum(axis=1)
    axes = tuple(
        i + 1
        for i, (c, s) in enumerate(zip(cot.shape[1:], body_shape))
        if s == 1 and c != 1
    )
    if axes:
        cot = cot.sum(axis=axes, keepdims=True)
    return cot


class Primitive:
    """A named operation with per-mode rules.

    ``impl`` computes values; ``dual`` propagates (value, jac, lap); ``vjp``
    maps an output cotangent to argument cotangents.  Missing rules raise
    :class:`UnsupportedPrimitiveError` when that mode is requested.
    """

    def __init__(self, name, impl, dual=None, vjp=None):
        self.name = name
        self.impl = impl
        self.dual = dual
        self.vjp = vjp

    def __call__(self, *args, **kw):
        tape = None
        has_dual = False
        for a in args:
            if isinstance(a, Node):
                tape = a.tape
                break
            if isinstance(a, Dual):
                has_dual = True
        if tape is not None:
            if self.vjp is None:
                raise UnsupportedPrimitiveError(
                    f"primitive '{self.name}' has no reverse rule"
                )
            vals = tuple(a.value if isinstance(a, Node) else np.asarray(a) for a in args)
            sample = any(isinstance(a, Node) and a.sample for a in args)
            value = self.impl(*vals, **kw)
            return Node(tape, value, self, args, kw, sample)
        if has_dual:
            if self.dual is None:
                raise UnsupportedPrimitiveError(
                    f"primitive '{self.name}' has no derivative-propagation rule"
                )
            return self.dual(*args, **kw)
        return self.impl(*args, **kw)


def value_of(x):
    if isinstance(x, (Node, Dual)):
        return x.value
    return np.asarray(x)


def lift_dual(x, template: Dual) -> Dual:
    """Lift a constant to a Dual with zero derivatives (broadcast-safe)."""
    if isinstance(x, Dual):
        return x
    v = np.asarray(x)
    n_dirs = template.jac.shape[0]
    return Dual(
        v,
        np.zeros((n_dirs,) + v.shape, dtype=template.jac.dtype),
        np.zeros_like(v),
    )


def seed_duals(inputs: np.ndarray) -> Dual:
    """Seed identity duals over the trailing axis of ``inputs``.

    ``inputs`` has shape ``(..., D)``; every one of the ``D`` coordinates
    becomes an independent differentiation direction shared across the
    leading (batch) axes.
    """
    x = np.asarray(inputs)
    d = x.shape[-1]
    eye = np.eye(d, dtype=x.dtype)
    jac = np.broadcast_to(eye.reshape((d,) + (1,) * (x.ndim - 1) + (d,)), (d,) + x.shape)
    return Dual(x, jac, np.zeros_like(x))


def propagate_derivatives(network, params, inputs) -> DualBatch:
    """Exact jacobian and Laplacian trace of ``network(params, inputs)``.

    ``inputs`` is an array of differentiation coordinates along its last
    axis.  The network must be composed of registered primitives; an
    unregistered one raises :class:`UnsupportedPrimitiveError`.
    """
    dual = network(params, seed_duals(inputs))
    if not isinstance(dual, Dual):
        raise UnsupportedPrimitiveError("network output does not carry derivatives")
    return DualBatch(
        dual.value,
        np.moveaxis(dual.jac, 0, -1),
        dual.lap,
    )
