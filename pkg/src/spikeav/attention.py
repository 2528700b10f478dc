"""Visual-cued auditory attention: spiking cross-attention where visual
embeddings form the query and audio features form key and value.

Scores are plain spike-count accumulations (no softmax); a learnable scalar
controls their magnitude, and a lower-triangular mask removes every
contribution from future timesteps before the value aggregation. The module
output is the audio input plus the binary attention features, so downstream
layers see values in {0, 1, 2}.
"""

import numpy as np

from . import errors, opcount
from .layers import BatchNorm, Linear
from .module import Module
from .neurons import LifLayer, LifParams
from .tensor import Tensor, add, as_tensor, matmul, multiply, transpose

__all__ = ["causal_mask", "Vca2m", "project_qkv", "masked_attention"]


def causal_mask(t_steps):
    """[T, T] binary matrix keeping current and past positions only."""
    return np.tril(np.ones((t_steps, t_steps)))


def _check_mask(mask, t_steps):
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (t_steps, t_steps):
        raise errors.ContractError(
            f"mask shape {mask.shape} does not match horizon {t_steps}")
    if not np.array_equal(mask, np.tril(mask)):
        raise errors.ContractError(
            "attention mask must be lower triangular (no future positions)")
    return mask


def masked_attention(q, k, v, s, mask, sn, counter_name="attn",
                     validate_mask=True):
    """SN(mask * (Q K^T) V * s) with spiking inputs on [T, B, D].

    ``s`` may be a learnable scalar tensor; ``sn`` is the spiking layer
    applied to the scaled aggregate (threshold 0.5 in the reference setup).
    Pass ``mask=None`` to use the causal mask for the input horizon; any
    explicit mask must be lower triangular unless validation is switched
    off (used only by the causality harness to sabotage a model on purpose).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if not (q.data.shape == k.data.shape == v.data.shape):
        raise errors.DimensionError(
            f"Q/K/V shapes disagree: {q.data.shape}, {k.data.shape}, "
            f"{v.data.shape}")
    t_steps = q.data.shape[0]
    if mask is None:
        mask = causal_mask(t_steps)
    elif validate_mask:
        mask = _check_mask(mask, t_steps)
    else:
        mask = np.asarray(mask, dtype=np.float64)

    qb = transpose(q, (1, 0, 2))                    # [B, T, D]
    kb = transpose(k, (1, 2, 0))                    # [B, D, T]
    vb = transpose(v, (1, 0, 2))
    scores = matmul(qb, kb)                         # [B, T, T] accumulations
    masked = multiply(scores, Tensor(mask))
    agg = matmul(masked, vb)                        # [B, T, D]
    scaled = multiply(agg, s)
    c = opcount.active()
    if c is not None:
        # every unit of a masked score is one accumulation; the value
        # aggregation adds one term per nonzero (score, active value) pair
        c.add(counter_name + ".qk", 0, int(masked.data.sum()))
        nz = (masked.data != 0).astype(np.float64)
        c.add(counter_name + ".v", 0, int((nz @ vb.data).sum()))
        c.add(counter_name + ".scale", agg.data.size, 0)
    return sn(transpose(scaled, (1, 0, 2)))         # back to [T, B, D]


class Vca2m(Module):
    """Cross-modal cueing block: queries from the visual embedding, keys and
    values from the audio features, causal-masked spike attention, linear
    feedforward, and a residual merge with the audio input."""

    def __init__(self, cue_dim, audio_dim, attn_dim, rng, neuron_params=None,
                 scale_init=0.25, name="vca2m"):
        if attn_dim <= 0:
            raise errors.ConfigError("attention dim must be positive")
        np_main = neuron_params or LifParams()
        # the aggregate after the masked score-value product fires at a
        # lower threshold (0.5); every other neuron keeps the layer default
        np_attn = LifParams(tau=np_main.tau, v_th=0.5, gamma=np_main.gamma)
        self.name = name
        self.cue_dim, self.audio_dim, self.attn_dim = cue_dim, audio_dim, attn_dim
        self.w_q = Linear(cue_dim, attn_dim, rng, bias=False, name=name + ".w_q")
        self.w_k = Linear(audio_dim, attn_dim, rng, bias=False, name=name + ".w_k")
        self.w_v = Linear(audio_dim, attn_dim, rng, bias=False, name=name + ".w_v")
        self.bn_q = BatchNorm(attn_dim, channel_axis=2, name=name + ".bn_q")
        self.bn_k = BatchNorm(attn_dim, channel_axis=2, name=name + ".bn_k")
        self.bn_v = BatchNorm(attn_dim, channel_axis=2, name=name + ".bn_v")
        self.sn_q = LifLayer(np_main, name=name + ".sn_q")
        self.sn_k = LifLayer(np_main, name=name + ".sn_k")
        self.sn_v = LifLayer(np_main, name=name + ".sn_v")
        self.sn_attn = LifLayer(np_attn, name=name + ".sn_attn")
        self.s = Tensor(float(scale_init), requires_grad=True,
                        name=name + ".s")
        self.ff = Linear(attn_dim, audio_dim, rng, bias=False,
                         name=name + ".ff")
        self.bn_ff = BatchNorm(audio_dim, channel_axis=2, name=name + ".bn_ff")
        self.sn_ff = LifLayer(np_main, name=name + ".sn_ff")
        # verification hooks: the causality harness overrides the mask to
        # prove it catches a non-causal model
        self.mask_override = None
        self._unsafe_allow_any_mask = False

    def fold_bn(self):
        from .layers import Identity, fold_bn_into_affine
        for lin_name, bn_name in (("w_q", "bn_q"), ("w_k", "bn_k"),
                                  ("w_v", "bn_v"), ("ff", "bn_ff")):
            lin, bn = getattr(self, lin_name), getattr(self, bn_name)
            if isinstance(bn, Identity):
                continue
            w2, b2 = fold_bn_into_affine(lin.w, lin.b, bn)
            lin.w.data = w2
            lin.b = Tensor(b2, requires_grad=True, name=lin.name + ".b")
            setattr(self, bn_name, Identity())

    def project_qkv(self, phi, psi):
        """Spike projections of the two modalities onto the attention space."""
        phi, psi = as_tensor(phi), as_tensor(psi)
        if phi.data.shape[0] != psi.data.shape[0]:
            raise errors.AlignmentError(
                f"modalities disagree on timestep axis: {phi.data.shape[0]} "
                f"vs {psi.data.shape[0]}")
        q = self.sn_q(self.bn_q(self.w_q(phi)))
        k = self.sn_k(self.bn_k(self.w_k(psi)))
        v = self.sn_v(self.bn_v(self.w_v(psi)))
        return q, k, v

    def forward(self, phi, psi):
        """Returns psi + SA on [T, B, L]; values land in {0, 1, 2}.

        2-D single-sample inputs [T, D] are accepted and returned as such.
        """
        squeeze = as_tensor(psi).ndim == 2
        phi, psi = _lift(phi), _lift(psi)
        q, k, v = self.project_qkv(phi, psi)
        attn = masked_attention(q, k, v, self.s, self.mask_override,
                                self.sn_attn, counter_name=self.name,
                                validate_mask=not self._unsafe_allow_any_mask)
        sa = self.sn_ff(self.bn_ff(self.ff(attn)))
        c = opcount.active()
        if c is not None:
            c.add(self.name + ".residual", 0, psi.data.size)
        out = add(psi, sa)
        if squeeze:
            from .tensor import reshape
            out = reshape(out, (out.data.shape[0], out.data.shape[2]))
        return out

    __call__ = forward


def _lift(x):
    """Accept [T, D] single-sample input by inserting a batch axis."""
    x = as_tensor(x)
    if x.ndim == 2:
        from .tensor import reshape
        return reshape(x, (x.data.shape[0], 1, x.data.shape[1]))
    return x


def project_qkv(phi, psi, module):
    """Functional alias over a built module (single-sample friendly)."""
    return module.project_qkv(_lift(phi), _lift(psi))
