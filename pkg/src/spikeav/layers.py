"""Affine layers, batch normalization, pooling, and the conv/linear +
BN + spiking-neuron blocks the two subnets are assembled from.

Activations are time-major: [T, B, D] for feature vectors and
[T, B, C, H, W] for spatial maps. Per-timestep layers are time-local; all
state across timesteps lives in the neurons (and in train-mode BN batch
statistics, which pool over batch and time so that inference stays causal).
"""

import logging

import numpy as np

from . import _kernels, errors, opcount
from .module import Module
from .neurons import LifLayer, LifParams
from .tensor import (Tensor, add, apply_op, as_tensor, matmul, multiply,
                     reshape, subtract)

log = logging.getLogger(__name__)


def kaiming_uniform(shape, fan_in, rng):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _is_spike_valued(x):
    """True when every element is a small non-negative integer (spike counts)."""
    d = x if isinstance(x, np.ndarray) else x.data
    return bool(np.all((d == np.floor(d)) & (d >= 0) & (d <= 8)))


class Linear(Module):
    """y = x @ w + b over the trailing axis."""

    def __init__(self, in_dim, out_dim, rng, bias=True, name="linear"):
        if in_dim <= 0 or out_dim <= 0:
            raise errors.ConfigError("linear dims must be positive")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.name = name
        self.w = Tensor(kaiming_uniform((in_dim, out_dim), in_dim, rng),
                        requires_grad=True, name=name + ".w")
        self.b = Tensor(np.zeros(out_dim), requires_grad=True,
                        name=name + ".b") if bias else None

    def forward(self, x):
        x = as_tensor(x)
        if x.data.shape[-1] != self.in_dim:
            raise errors.DimensionError(
                f"{self.name}: input {x.data.shape} does not match "
                f"weight {self.w.data.shape}")
        c = opcount.active()
        if c is not None:
            if _is_spike_valued(x):
                c.add(self.name, 0, int(x.data.sum()) * self.out_dim)
            else:
                macs = x.data.size * self.out_dim
                c.add(self.name, macs, macs)
        out = matmul(x, self.w)
        if self.b is not None:
            out = add(out, self.b)
        return out

    __call__ = forward


def conv2d(x, w, b, stride, pad, name="conv"):
    """Per-image cross-correlation as a tape primitive over the kernels."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise errors.DimensionError(
            f"{name}: input {x.data.shape} incompatible with kernel "
            f"{w.data.shape}")
    k = w.data.shape[2]
    if (x.data.shape[2] + 2 * pad < k) or (x.data.shape[3] + 2 * pad < k):
        raise errors.DimensionError(
            f"{name}: spatial dims {x.data.shape[2:]} smaller than kernel {k}")
    from .tensor import GradTape
    cache = {} if GradTape.active() is not None else None
    out = _kernels.conv2d_forward(x.data, w.data,
                                  None if b is None else b.data, stride, pad,
                                  cache=cache)
    xd, wd = x.data, w.data
    inputs = [x, w] + ([b] if b is not None else [])

    def backward(g):
        gx, gw, gb = _kernels.conv2d_backward(
            g, xd, wd, stride, pad, need_gx=x.requires_grad, cache=cache)
        pairs = [(w, gw)]
        if b is not None:
            pairs.append((b, gb))
        if gx is not None:
            pairs.append((x, gx))
        return pairs

    return apply_op(out, inputs, backward)


class Conv2d(Module):
    """2-D convolution layer, same-padding by default for odd kernels."""

    def __init__(self, in_channels, out_channels, kernel, rng, stride=1,
                 pad=None, bias=True, name="conv"):
        if kernel % 2 != 1:
            raise errors.ConfigError(f"kernel must be odd, got {kernel}")
        if in_channels <= 0 or out_channels <= 0:
            raise errors.ConfigError("channel counts must be positive")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        self.pad = kernel // 2 if pad is None else pad
        self.name = name
        fan_in = in_channels * kernel * kernel
        self.w = Tensor(kaiming_uniform(
            (out_channels, in_channels, kernel, kernel), fan_in, rng),
            requires_grad=True, name=name + ".w")
        self.b = Tensor(np.zeros(out_channels), requires_grad=True,
                        name=name + ".b") if bias else None

    def forward(self, x):
        c = opcount.active()
        if c is not None:
            self._count(x, c)
        return conv2d(x, self.w, self.b, self.stride, self.pad, self.name)

    __call__ = forward

    def _count(self, x, counter):
        # one accumulation per (output position, active input tap) pair per
        # output channel; real-valued inputs additionally pay a multiply
        occ = (np.asarray(as_tensor(x).data) != 0).astype(np.float64)
        ones = np.ones((1,) + self.w.data.shape[1:])
        taps = _kernels.conv2d_forward(occ, ones, None, self.stride, self.pad)
        active = int(round(taps.sum())) * self.out_channels
        if _is_spike_valued(occ * as_tensor(x).data):
            counter.add(self.name, 0, active)
        else:
            counter.add(self.name, active, active)


def _batchnorm_train(x, scale, shift, axes, bshape, eps):
    """Fused train-mode normalization with the closed-form backward."""
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    var = xd.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)
    scale_b = scale.data.reshape(bshape)

    def backward(g):
        g_shift = g.sum(axis=axes)
        g_scale = (g * xhat).sum(axis=axes)
        mean_g = g.mean(axis=axes, keepdims=True)
        mean_gx = (g * xhat).mean(axis=axes, keepdims=True)
        gx = (scale_b * inv) * (g - mean_g - xhat * mean_gx)
        return [(x, gx), (scale, g_scale), (shift, g_shift)]

    return apply_op(out, [x, scale, shift], backward), mu, var


class BatchNorm(Module):
    """Per-channel normalization with statistics shared over batch and time.

    Train mode normalizes with the current batch moments and updates running
    statistics (momentum 0.1); eval mode applies the affine map implied by
    the running statistics, which keeps inference input-independent.
    """

    def __init__(self, num_features, channel_axis=2, momentum=0.1, eps=1e-5,
                 name="bn"):
        self.num_features = num_features
        self.channel_axis = channel_axis
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self.scale = Tensor(np.ones(num_features), requires_grad=True,
                            name=name + ".scale")
        self.shift = Tensor(np.zeros(num_features), requires_grad=True,
                            name=name + ".shift")
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self._seen_batch = False
        self._warned = False

    def _bshape(self, ndim):
        shape = [1] * ndim
        shape[self.channel_axis] = self.num_features
        return tuple(shape)

    def forward(self, x):
        x = as_tensor(x)
        if x.data.shape[self.channel_axis] != self.num_features:
            raise errors.DimensionError(
                f"{self.name}: axis {self.channel_axis} of {x.data.shape} "
                f"is not {self.num_features}")
        axes = tuple(i for i in range(x.ndim) if i != self.channel_axis)
        bshape = self._bshape(x.ndim)
        if self.training:
            out, mu, var = _batchnorm_train(x, self.scale, self.shift,
                                            axes, bshape, self.eps)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean
                                 + m * mu.reshape(-1))
            self.running_var = ((1 - m) * self.running_var
                                + m * var.reshape(-1))
            self._seen_batch = True
            return out
        if not self._seen_batch and not self._warned:
            log.warning("%s: eval before any training batch, using init "
                        "statistics (mean 0, var 1)", self.name)
            self._warned = True
        scale_b = reshape(self.scale, bshape)
        shift_b = reshape(self.shift, bshape)
        centered = multiply(subtract(x, Tensor(self.running_mean.reshape(bshape))),
                            Tensor((1.0 / np.sqrt(self.running_var + self.eps))
                                   .reshape(bshape)))
        return add(multiply(centered, scale_b), shift_b)

    __call__ = forward

    def fold(self):
        """Eval-mode affine coefficients: y = gain * x + offset per channel."""
        gain = self.scale.data / np.sqrt(self.running_var + self.eps)
        offset = self.shift.data - self.running_mean * gain
        return gain, offset


class Identity(Module):
    """Stand-in left behind when a BatchNorm has been folded away."""

    def forward(self, x):
        return as_tensor(x)

    __call__ = forward


def maxpool2x2(x, name="pool"):
    """2x2 max over the trailing two axes; on binary inputs this is an OR."""
    x = as_tensor(x)
    *lead, h, w = x.data.shape
    if h % 2 or w % 2:
        raise errors.DimensionError(
            f"{name}: spatial dims {(h, w)} not divisible by 2")
    r = x.data.reshape(*lead, h // 2, 2, w // 2, 2)
    r2 = r.swapaxes(-3, -2).reshape(*lead, h // 2, w // 2, 4)
    idx = r2.argmax(axis=-1)
    out = np.take_along_axis(r2, idx[..., None], axis=-1)[..., 0]
    shape = x.data.shape

    def backward(g):
        gr = np.zeros(r2.shape)
        np.put_along_axis(gr, idx[..., None], g[..., None], axis=-1)
        gr = gr.reshape(*lead, h // 2, w // 2, 2, 2).swapaxes(-3, -2)
        return [(x, gr.reshape(shape))]

    return apply_op(out, [x], backward)


def fold_bn_into_affine(weight, bias, bn):
    """Absorb an eval-mode BatchNorm into the preceding affine layer.

    For a linear layer pass w [in,out]; for conv pass w [oc,ic,k,k]. Returns
    new (weight, bias) arrays.
    """
    gain, offset = bn.fold()
    w = weight.data
    if w.ndim == 2:     # linear: output axis last
        w2 = w * gain[None, :]
    else:               # conv: output channel axis first
        w2 = w * gain[:, None, None, None]
    b = bias.data if bias is not None else 0.0
    b2 = b * gain + offset
    return w2, b2


class VisualBlockCfg:
    """Configuration of one conv + BN + spiking-neuron visual block."""

    def __init__(self, in_channels, out_channels, kernel=3, stride=1,
                 pool=False):
        if in_channels <= 0 or out_channels <= 0:
            raise errors.ConfigError("channel counts must be positive")
        if kernel % 2 != 1:
            raise errors.ConfigError("kernel size must be odd")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pool = pool


class VisualBlock(Module):
    """conv -> BN -> LIF on [T, B, C, H, W], optional 2x spike-OR pooling."""

    def __init__(self, cfg, neuron_params, rng, name="vblock"):
        self.cfg = cfg
        self.name = name
        self.conv = Conv2d(cfg.in_channels, cfg.out_channels, cfg.kernel,
                           rng, stride=cfg.stride, name=name + ".conv")
        self.bn = BatchNorm(cfg.out_channels, channel_axis=1,
                            name=name + ".bn")
        self.sn = LifLayer(neuron_params, name=name + ".sn")

    def forward(self, x):
        t, b = x.data.shape[0], x.data.shape[1]
        flat = reshape(x, (t * b,) + x.data.shape[2:])
        h = self.bn(self.conv(flat))
        h = reshape(h, (t, b) + h.data.shape[1:])
        spikes = self.sn(h)
        if self.cfg.pool:
            spikes = maxpool2x2(spikes, self.name + ".pool")
        return spikes

    __call__ = forward

    def fold_bn(self):
        if isinstance(self.bn, Identity):
            return
        w2, b2 = fold_bn_into_affine(self.conv.w, self.conv.b, self.bn)
        self.conv.w.data = w2
        self.conv.b = Tensor(b2, requires_grad=True,
                             name=self.conv.name + ".b")
        self.bn = Identity()


class SpeechBlockCfg:
    """Configuration of one linear + BN + spiking-neuron speech block."""

    def __init__(self, in_dim, out_dim, has_attention=False):
        if in_dim <= 0 or out_dim <= 0:
            raise errors.ConfigError("speech block dims must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.has_attention = has_attention


class SpeechBlock(Module):
    """linear -> BN -> LIF on [T, B, D]; the attention variant is handled by
    the caller placing a cueing module in front."""

    def __init__(self, cfg, neuron_params, rng, name="sblock"):
        self.cfg = cfg
        self.name = name
        self.linear = Linear(cfg.in_dim, cfg.out_dim, rng,
                             name=name + ".linear")
        self.bn = BatchNorm(cfg.out_dim, channel_axis=2, name=name + ".bn")
        self.sn = LifLayer(neuron_params, name=name + ".sn")

    def forward(self, x):
        return self.sn(self.bn(self.linear(x)))

    __call__ = forward

    def fold_bn(self):
        if isinstance(self.bn, Identity):
            return
        w2, b2 = fold_bn_into_affine(self.linear.w, self.linear.b, self.bn)
        self.linear.w.data = w2
        self.linear.b = Tensor(b2, requires_grad=True,
                               name=self.linear.name + ".b")
        self.bn = Identity()
