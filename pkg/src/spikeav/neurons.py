"""Leaky integrate-and-fire neurons with threshold forward, triangular
surrogate backward, multiplicative reset, and an optional recurrent term.

Two operating modes:

* spiking (default): the activation is a hard threshold, backward substitutes
  the triangular surrogate evaluated at the recorded pre-reset potential, and
  the reset factor (1 - spike) is treated as a constant so gradient flows
  only through the retained-potential path;
* relaxed: the activation is the clamped piecewise-quadratic ramp whose exact
  derivative is the triangle, and backward differentiates the whole update
  including the reset product. This makes the network end-to-end
  differentiable so finite-difference oracles apply.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels, errors, opcount
from .module import Module
from .tensor import SpikeTensor, Tensor, apply_op, as_tensor, matmul, multiply, subtract, add


@dataclass
class LifParams:
    """Membrane constants: decay tau in [0,1), threshold, surrogate width."""

    tau: float = 0.5
    v_th: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise errors.ConfigError(f"tau must be in [0,1), got {self.tau}")
        if self.v_th <= 0.0:
            raise errors.ConfigError(f"v_th must be positive, got {self.v_th}")
        if self.gamma <= 0.0:
            raise errors.ConfigError(f"gamma must be positive, got {self.gamma}")


def surrogate_grad(u, params):
    """Triangle around the threshold: (1/gamma^2) * max(0, gamma - |u - v_th|)."""
    u = np.asarray(u, dtype=np.float64)
    out = np.maximum(0.0, params.gamma - np.abs(u - params.v_th)) / params.gamma ** 2
    return float(out) if out.ndim == 0 else out


def soft_spike(u, params):
    """Antiderivative of the surrogate triangle, clamped to [0, 1].

    Quadratic ramp from 0 at v_th - gamma to 1 at v_th + gamma, crossing 0.5
    at the threshold; its derivative equals ``surrogate_grad`` everywhere.
    """
    u = np.asarray(u, dtype=np.float64)
    z = (u - params.v_th) / params.gamma
    out = np.where(z <= -1.0, 0.0,
                   np.where(z >= 1.0, 1.0,
                            np.where(z < 0.0, 0.5 * (1.0 + z) ** 2,
                                     1.0 - 0.5 * (1.0 - z) ** 2)))
    return float(out) if out.ndim == 0 else out


@dataclass
class NeuronState:
    """Per-layer membrane potential plus the pre-reset record for backward.

    Owned by a single forward/backward pass; potentials start at rest (0)
    and are exactly 0 after any timestep in which the neuron fired.
    """

    u: Tensor
    recorded_u: list = field(default_factory=list)

    @classmethod
    def zeros(cls, shape):
        return cls(u=Tensor(np.zeros(shape)))


def spike_fn(u, params, relaxed=False):
    """Activation primitive. Threshold (spiking) or ramp (relaxed) forward;
    backward multiplies by the triangle at the membrane potential."""
    u = as_tensor(u)
    ud = u.data
    if relaxed:
        out = soft_spike(ud, params)
    else:
        out = (ud >= params.v_th).astype(np.float64)

    def backward(g):
        h = np.maximum(0.0, params.gamma - np.abs(ud - params.v_th)) / params.gamma ** 2
        return [(u, g * h)]

    return apply_op(out, [u], backward, spike=not relaxed)


def lif_step(state, input_current, params, relaxed=False):
    """One membrane update: decay, integrate, fire, multiplicative reset.

    Returns the spike tensor for this timestep and mutates ``state``.
    """
    input_current = as_tensor(input_current)
    if state.u.data.shape != input_current.data.shape:
        raise errors.DimensionError(
            f"current shape {input_current.data.shape} does not match "
            f"membrane shape {state.u.data.shape}")
    u_pre = add(multiply(state.u, params.tau), input_current)
    spikes = spike_fn(u_pre, params, relaxed)
    state.recorded_u.append(u_pre.data)
    if relaxed:
        state.u = multiply(u_pre, subtract(1.0, spikes))
    else:
        # reset factor is constant w.r.t. the spike: gradient flows through
        # the retained potential only
        state.u = multiply(u_pre, Tensor(1.0 - spikes.data))
    return spikes


def rlif_step(state, input_current, prev_spikes, recurrent_w, params,
              relaxed=False):
    """LIF step with an added recurrent drive from the layer's own previous
    spikes through a square weight matrix."""
    input_current = as_tensor(input_current)
    prev_spikes = as_tensor(prev_spikes)
    recurrent_w = as_tensor(recurrent_w)
    n = recurrent_w.data.shape
    if len(n) != 2 or n[0] != n[1]:
        raise errors.DimensionError(
            f"recurrent weights must be square, got {n}")
    if prev_spikes.data.shape[-1] != n[0]:
        raise errors.DimensionError(
            f"previous spikes width {prev_spikes.data.shape} does not match "
            f"recurrent weights {n}")
    total = add(input_current, matmul(prev_spikes, recurrent_w))
    return lif_step(state, total, params, relaxed)


def _lif_scan(currents, params, relaxed):
    """Fused whole-horizon scan used by non-recurrent layers. The time axis
    is axis 0; the kernel keeps the per-step recurrence out of Python."""
    currents = as_tensor(currents)
    cd = currents.data
    if relaxed:
        out, u_pre = _kernels.lif_scan_relaxed_forward(
            cd, params.tau, params.v_th, params.gamma)

        def backward(g):
            return [(currents, _kernels.lif_scan_relaxed_backward(
                g, u_pre, out, params.tau, params.v_th, params.gamma))]
    else:
        out, u_pre = _kernels.lif_scan_forward(cd, params.tau, params.v_th)

        def backward(g):
            return [(currents, _kernels.lif_scan_backward(
                g, u_pre, out, params.tau, params.v_th, params.gamma))]

    return apply_op(out, [currents], backward, spike=not relaxed), u_pre


class LifLayer(Module):
    """Stateless-module wrapper: runs the membrane scan over axis 0."""

    def __init__(self, params=None, name="lif"):
        self.params = params or LifParams()
        self.relaxed = False
        self.name = name
        self.last_state = None
        self.last_spike_rate = 0.0

    def forward(self, currents):
        spikes, u_pre = _lif_scan(currents, self.params, self.relaxed)
        self.last_state = NeuronState(
            u=Tensor(u_pre[-1] * (1.0 - spikes.data[-1])),
            recorded_u=list(u_pre))
        self.last_spike_rate = float(spikes.data.mean())
        c = opcount.active()
        if c is not None:
            n = currents.data.size
            if self.params.tau != 0.0:
                c.add(self.name, n, n)
            c.rate(self.name, self.last_spike_rate)
        return spikes

    __call__ = forward


class RlifLayer(Module):
    """Recurrent LIF layer: adds learnable feedback from its own spikes.

    The feedforward projection is owned by the caller; this layer receives
    per-timestep currents and applies the recurrent term internally. Backward
    runs through the full unrolled recurrence.
    """

    def __init__(self, width, params=None, rng=None, name="rlif"):
        self.width = width
        self.params = params or LifParams()
        self.relaxed = False
        self.name = name
        rng = rng or np.random.default_rng(0)
        self.recurrent_w = Tensor(_orthogonal(width, rng) * 0.1,
                                  requires_grad=True, name=name + ".recurrent_w")
        self.last_spike_rate = 0.0

    def forward(self, currents):
        currents = as_tensor(currents)
        t_steps = currents.data.shape[0]
        if currents.data.shape[-1] != self.width:
            raise errors.DimensionError(
                f"current width {currents.data.shape} does not match layer "
                f"width {self.width}")
        state = NeuronState.zeros(currents.data.shape[1:])
        prev = Tensor(np.zeros(currents.data.shape[1:]))
        outs = []
        c = opcount.active()
        for t in range(t_steps):
            if c is not None:
                c.add(self.name + ".recurrent", 0,
                      int(prev.data.sum()) * self.width)
            spikes = rlif_step(state, currents[t], prev, self.recurrent_w,
                               self.params, self.relaxed)
            outs.append(spikes)
            prev = spikes
        from .tensor import stack
        out = stack(outs, axis=0)
        if not self.relaxed:
            out = SpikeTensor._wrap(out.data) if not out.requires_grad else out
        self.last_spike_rate = float(out.data.mean())
        if c is not None:
            n = currents.data.size
            if self.params.tau != 0.0:
                c.add(self.name, n, n)
            c.rate(self.name, self.last_spike_rate)
        return out

    __call__ = forward


def _orthogonal(n, rng):
    """Orthogonal square matrix from the QR of a Gaussian draw."""
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))
