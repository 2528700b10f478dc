"""Dense real tensors, binary spike tensors, and a reverse-mode gradient tape.

The tape records every primitive applied to tracked tensors while a
``GradTape`` context is active. ``GradTape.backward`` replays the records in
reverse, visiting each node exactly once, and deposits gradients on leaf
tensors that carry ``requires_grad``. All storage is float64; the time axis
of the network lives in axis 0 of every activation.
"""

from __future__ import annotations

import numpy as np

from . import errors

__all__ = [
    "Tensor", "SpikeTensor", "GradTape", "as_tensor", "apply_op",
    "add", "subtract", "multiply", "matmul", "reshape", "transpose",
    "tsum", "tmean", "concatenate", "stack",
]


class GradTape:
    """Ordered record of primitive ops for one forward/backward cycle.

    Single-writer: exactly one tape may be active at a time, and a tape can
    be consumed by ``backward`` once. Create a fresh tape per training step.
    """

    _active = None

    def __init__(self):
        self._nodes = []        # (out_tensor, backward_fn)
        self._consumed = False

    def __enter__(self):
        if GradTape._active is not None:
            raise errors.StateError("a GradTape is already active")
        GradTape._active = self
        return self

    def __exit__(self, exc_type, exc, tb):
        GradTape._active = None
        return False

    @staticmethod
    def active():
        return GradTape._active

    def _record(self, out, backward_fn):
        self._nodes.append((out, backward_fn))

    def backward(self, loss):
        """Run reverse-mode accumulation from a scalar loss.

        Returns a dict mapping each reachable leaf tensor with
        ``requires_grad`` to its gradient array; the same arrays are stored
        on the tensors' ``.grad``. Intermediate gradients are released as
        soon as their producer node has been processed.
        """
        if self._consumed:
            raise errors.StaleTapeError(
                "tape already consumed; run a new forward pass")
        if not self._nodes:
            raise errors.StaleTapeError("tape is empty; no ops were recorded")
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise errors.DimensionError("backward expects a scalar loss tensor")
        self._consumed = True

        grads = {id(loss): np.ones_like(loss.data)}
        leaf_grads = {}
        for out, backward_fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in backward_fn(g):
                if not inp.requires_grad:
                    continue
                if inp._op_output:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                else:
                    if inp in leaf_grads:
                        leaf_grads[inp] = leaf_grads[inp] + gi
                    else:
                        leaf_grads[inp] = gi
        for t, g in leaf_grads.items():
            g = np.broadcast_to(g, t.data.shape).copy() if g.shape != t.data.shape else g
            t.grad = g
        return leaf_grads


class Tensor:
    """Dense float64 tensor participating in the gradient tape."""

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._op_output = False   # True when produced by a recorded op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.data.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def __getitem__(self, key):
        return _getitem(self, key)


class SpikeTensor(Tensor):
    """Binary activation tensor; axis 0 is the shared timestep axis."""

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=False, name=name)
        d = self.data
        if not np.all((d == 0.0) | (d == 1.0)):
            bad = d[(d != 0.0) & (d != 1.0)]
            raise errors.SpikeValueError(
                f"spike tensor holds non-binary values, e.g. {bad.flat[0]!r}")

    @classmethod
    def _wrap(cls, data, name=None):
        """Wrap already-binary float data without re-copying."""
        obj = cls.__new__(cls)
        Tensor.__init__(obj, data, requires_grad=False, name=name)
        return obj


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def apply_op(out_data, inputs, backward_fn, spike=False):
    """Create the output tensor of a primitive and record it on the tape.

    ``backward_fn(g)`` must return an iterable of ``(input_tensor, grad)``
    pairs. Recording only happens when a tape is active and some input is
    tracked; otherwise this is a plain numpy computation.
    """
    out = SpikeTensor(out_data) if spike else Tensor(out_data)
    tape = GradTape.active()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        out._op_output = True
        tape._record(out, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given operand shape (undo broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(g, b.data.shape))]

    return apply_op(out, [a, b], backward)


def subtract(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.data.shape)),
                (b, _unbroadcast(-g, b.data.shape))]

    return apply_op(out, [a, b], backward)


def multiply(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return [(a, _unbroadcast(g * bd, ad.shape)),
                (b, _unbroadcast(g * ad, bd.shape))]

    return apply_op(out, [a, b], backward)


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise errors.DimensionError(
            f"matmul needs 2-D (or batched) operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise errors.DimensionError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return [(a, ga), (b, gb)]

    return apply_op(out, [a, b], backward)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    orig = a.data.shape

    def backward(g):
        return [(a, g.reshape(orig))]

    return apply_op(out, [a], backward)


def transpose(a, axes):
    a = as_tensor(a)
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def backward(g):
        return [(a, g.transpose(inv))]

    return apply_op(out, [a], backward)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [(a, np.broadcast_to(g, shape).copy())]

    return apply_op(out, [a], backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    n = a.data.size if axis is None else np.prod(
        [shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return [(a, np.broadcast_to(g / n, shape).copy())]

    return apply_op(out, [a], backward)


def power(a, p):
    a = as_tensor(a)
    out = a.data ** p
    ad = a.data

    def backward(g):
        return [(a, g * p * ad ** (p - 1))]

    return apply_op(out, [a], backward)


def concatenate(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        return list(zip(tensors, parts))

    return apply_op(out, tensors, backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return [(t, parts[i]) for i, t in enumerate(tensors)]

    return apply_op(out, tensors, backward)


def _getitem(a, key):
    a = as_tensor(a)
    out = a.data[key]
    shape = a.data.shape

    def backward(g):
        full = np.zeros(shape)
        full[key] = g
        return [(a, full)]

    return apply_op(out, [a], backward)
