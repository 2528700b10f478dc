"""Network assembly: the visual cue extraction subnet, the speech processing
subnet with configurable cueing positions, and the fused/baseline variants.

The fused network feeds event voxels through the visual stack to produce a
per-timestep class-sized spike embedding, which cues masked cross-attention
inside the speech stack. Logits are read out per timestep by a non-spiking
linear layer and averaged over time for classification, so a prediction is
available after any prefix of the input.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import checkpoint, errors
from .attention import Vca2m
from .layers import Linear, SpeechBlock, SpeechBlockCfg, VisualBlock, VisualBlockCfg
from .module import Module
from .neurons import LifLayer, LifParams, RlifLayer
from .tensor import Tensor, as_tensor, concatenate, reshape, tmean

FUSION_MODES = ("hi_avsnn", "concat_baseline", "audio_only", "visual_only")


@dataclass
class NetworkConfig:
    """Architecture description; defaults follow the reference setup."""

    T: int = 28
    n_v: int = 8
    n_as: int = 3
    n_s: int = 0
    cue_positions: tuple = (1, 2, 3)
    num_classes: int = 10
    audio_hidden: int = 256
    attention_dim: int = 64
    audio_dim: int = 40
    visual_channels: tuple = (16, 16, 32, 32, 64, 64, 128, 128)
    visual_strides: tuple = (1, 1, 2, 1, 2, 1, 2, 1)
    visual_input: tuple = (2, 44, 44)
    tau: float = 0.5
    v_th: float = 1.0
    gamma: float = 1.0
    scale_init: float = 0.25
    fusion_mode: str = "hi_avsnn"

    def __post_init__(self):
        self.cue_positions = tuple(sorted(set(self.cue_positions)))
        if self.T < 1:
            raise errors.ConfigError("T must be at least 1")
        if self.fusion_mode not in FUSION_MODES:
            raise errors.ConfigError(
                f"fusion_mode must be one of {FUSION_MODES}, "
                f"got {self.fusion_mode!r}")
        if any(p not in (1, 2, 3, 4) for p in self.cue_positions):
            raise errors.ConfigError(
                f"cue positions must be drawn from 1..4, got "
                f"{self.cue_positions}")
        if len(self.visual_channels) != self.n_v:
            raise errors.ConfigError(
                f"visual_channels has {len(self.visual_channels)} entries "
                f"for n_v={self.n_v}")
        if len(self.visual_strides) != self.n_v:
            raise errors.ConfigError(
                f"visual_strides has {len(self.visual_strides)} entries "
                f"for n_v={self.n_v}")
        cued = len([p for p in self.cue_positions if p in (1, 2, 3)])
        if self.fusion_mode == "hi_avsnn" and cued != self.n_as:
            raise errors.ConfigError(
                f"n_as={self.n_as} does not match cue positions "
                f"{self.cue_positions} ({cued} cued blocks)")

    @property
    def n_blocks(self):
        return self.n_as + self.n_s

    def neuron_params(self):
        return LifParams(tau=self.tau, v_th=self.v_th, gamma=self.gamma)

    def as_dict(self):
        d = dataclasses.asdict(self)
        for key in ("cue_positions", "visual_channels", "visual_strides",
                    "visual_input"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("cue_positions", "visual_channels", "visual_strides",
                    "visual_input"):
            if key in d:
                d[key] = tuple(d[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise errors.ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class Vcen(Module):
    """Visual cue extraction: conv blocks, global average pooling, and a
    per-timestep projection to a class-sized spike embedding."""

    def __init__(self, cfg, rng, name="vcen"):
        self.cfg = cfg
        self.name = name
        np_ = cfg.neuron_params()
        chans = (cfg.visual_input[0],) + tuple(cfg.visual_channels)
        self.blocks = [
            VisualBlock(VisualBlockCfg(chans[i], chans[i + 1],
                                       stride=cfg.visual_strides[i]),
                        np_, rng, name=f"{name}.block{i + 1}")
            for i in range(cfg.n_v)]
        self.fc = Linear(chans[-1], cfg.num_classes, rng, name=name + ".fc")
        from .layers import BatchNorm
        self.bn = BatchNorm(cfg.num_classes, channel_axis=2, name=name + ".bn")
        self.sn = LifLayer(np_, name=name + ".sn")

    def forward(self, voxels):
        voxels = as_tensor(voxels)
        expect = self.cfg.visual_input
        if voxels.data.shape[2:] != tuple(expect):
            raise errors.ConfigError(
                f"voxel grid shape {voxels.data.shape[2:]} does not match "
                f"configured input {tuple(expect)}")
        x = voxels
        for block in self.blocks:
            x = block(x)
        pooled = tmean(x, axis=(3, 4))          # [T, B, C_last]
        return self.sn(self.bn(self.fc(pooled)))

    __call__ = forward

    def fold_bn(self):
        from .layers import Identity, fold_bn_into_affine
        if not isinstance(self.bn, Identity):
            w2, b2 = fold_bn_into_affine(self.fc.w, self.fc.b, self.bn)
            self.fc.w.data = w2
            self.fc.b = Tensor(b2, requires_grad=True,
                               name=self.fc.name + ".b")
            self.bn = Identity()


class Spn(Module):
    """Speech processing: two recurrent spiking encoder layers, a stack of
    speech blocks with optional cueing in front of each, and a non-spiking
    per-timestep readout."""

    def __init__(self, cfg, rng, cued, name="spn"):
        self.cfg = cfg
        self.name = name
        self.cued = tuple(sorted(cued))
        np_ = cfg.neuron_params()
        lw = cfg.audio_hidden
        self.enc1 = Linear(cfg.audio_dim, lw, rng, name=name + ".enc1")
        self.rlif1 = RlifLayer(lw, np_, rng, name=name + ".rlif1")
        self.enc2 = Linear(lw, lw, rng, name=name + ".enc2")
        self.rlif2 = RlifLayer(lw, np_, rng, name=name + ".rlif2")
        self.blocks = [
            SpeechBlock(SpeechBlockCfg(lw, lw, has_attention=(i + 1) in self.cued),
                        np_, rng, name=f"{name}.block{i + 1}")
            for i in range(cfg.n_blocks)]
        self.vca2ms = {
            pos: Vca2m(cfg.num_classes, lw, cfg.attention_dim, rng,
                       neuron_params=np_, scale_init=cfg.scale_init,
                       name=f"{name}.vca2m{pos}")
            for pos in self.cued}
        self.readout = Linear(lw, cfg.num_classes, rng, name=name + ".readout")

    def forward(self, frames, cue=None):
        if self.cued and cue is None:
            raise errors.ContractError(
                "speech subnet configured with cueing positions "
                f"{self.cued} but no visual cue was provided")
        x = self.rlif1(self.enc1(frames))
        x = self.rlif2(self.enc2(x))
        for i, block in enumerate(self.blocks):
            pos = i + 1
            if pos in self.vca2ms and cue is not None:
                x = self.vca2ms[pos](cue, x)
            x = block(x)
        if 4 in self.vca2ms and cue is not None:
            x = self.vca2ms[4](cue, x)
        return self.readout(x)

    __call__ = forward


class ConcatStack(Module):
    """Baseline fusion: per-timestep concatenation of the two modality
    features in front of the same speech-block stack (no attention)."""

    def __init__(self, cfg, rng, name="concat"):
        self.cfg = cfg
        self.name = name
        np_ = cfg.neuron_params()
        lw = cfg.audio_hidden
        self.enc1 = Linear(cfg.audio_dim, lw, rng, name=name + ".enc1")
        self.rlif1 = RlifLayer(lw, np_, rng, name=name + ".rlif1")
        self.enc2 = Linear(lw, lw, rng, name=name + ".enc2")
        self.rlif2 = RlifLayer(lw, np_, rng, name=name + ".rlif2")
        dims = [lw + cfg.num_classes] + [lw] * cfg.n_blocks
        self.blocks = [
            SpeechBlock(SpeechBlockCfg(dims[i], dims[i + 1]), np_, rng,
                        name=f"{name}.block{i + 1}")
            for i in range(cfg.n_blocks)]
        self.readout = Linear(lw, cfg.num_classes, rng, name=name + ".readout")

    def forward(self, frames, visual_feats):
        psi = self.rlif2(self.enc2(self.rlif1(self.enc1(frames))))
        if psi.data.shape[0] != as_tensor(visual_feats).data.shape[0]:
            raise errors.AlignmentError(
                f"modalities disagree on timestep axis: "
                f"{psi.data.shape[0]} vs {as_tensor(visual_feats).data.shape[0]}")
        x = concatenate([psi, as_tensor(visual_feats)], axis=2)
        for block in self.blocks:
            x = block(x)
        return self.readout(x)

    __call__ = forward


class AvsnnModel(Module):
    """Top-level network; ``fusion_mode`` selects the assembly."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        self._forward_active = False
        rng = np.random.default_rng(seed)
        mode = cfg.fusion_mode
        if mode in ("hi_avsnn", "visual_only", "concat_baseline"):
            self.vcen = Vcen(cfg, rng)
        if mode == "hi_avsnn":
            self.spn = Spn(cfg, rng, cued=cfg.cue_positions)
        elif mode == "audio_only":
            self.spn = Spn(cfg, rng, cued=())
        elif mode == "visual_only":
            self.visual_readout = Linear(cfg.num_classes, cfg.num_classes,
                                         rng, name="visual_readout")
        elif mode == "concat_baseline":
            self.concat = ConcatStack(cfg, rng)

    def forward(self, voxels=None, frames=None):
        """Run the configured assembly; returns logits [T, B, C].

        Single-sample inputs (voxels [T, C, H, W], frames [T, F]) are lifted
        to a batch of one and the batch axis is kept in the output.
        """
        self._forward_active = True
        try:
            mode = self.cfg.fusion_mode
            if frames is not None:
                frames = _lift_frames(frames)
            if voxels is not None:
                voxels = _lift_voxels(voxels)
            if mode == "hi_avsnn":
                cue = self.vcen(voxels)
                return self.spn(frames, cue)
            if mode == "audio_only":
                return self.spn(frames)
            if mode == "visual_only":
                return self.visual_readout(self.vcen(voxels))
            return self.concat(frames, self.vcen(voxels))
        finally:
            self._forward_active = False

    __call__ = forward

    def spike_rates(self):
        """Mean firing fraction of each spiking layer in the last forward."""
        rates = {}

        def walk(mod):
            if isinstance(mod, (LifLayer, RlifLayer)):
                rates[mod.name] = mod.last_spike_rate
            for _, child in mod._children():
                walk(child)

        walk(self)
        return rates

    def folded_copy(self):
        """Same weights with every BatchNorm absorbed into the preceding
        affine layer (eval-mode equivalence; used by the energy counter)."""
        copy = AvsnnModel(self.cfg, seed=0)
        copy.load_state_dict(self.state_dict())
        copy.eval()

        def walk(mod):
            if hasattr(mod, "fold_bn"):
                mod.fold_bn()
            for _, child in mod._children():
                walk(child)

        walk(copy)
        return copy

    # persistence -----------------------------------------------------

    def save(self, path, extra=None):
        checkpoint.save_checkpoint(path, self.state_dict(),
                                   self.cfg.as_dict(), extra)

    @classmethod
    def load(cls, path, seed=0):
        arrays, config, extra = checkpoint.load_checkpoint(path)
        model = cls(NetworkConfig.from_dict(config), seed=seed)
        model.load_state_dict(arrays)
        return model, extra

    def load_weights(self, path):
        """Load weights from a checkpoint that must match this model's
        configuration hash and parameter shapes."""
        arrays, config, extra = checkpoint.load_checkpoint(path)
        if checkpoint.config_hash(config) != checkpoint.config_hash(self.cfg.as_dict()):
            raise errors.CheckpointError(
                "checkpoint configuration does not match the model; "
                "rebuild the model from the checkpoint config instead")
        self.load_state_dict(arrays)
        return extra


def _lift_frames(x):
    x = as_tensor(x)
    if x.ndim == 2:
        return reshape(x, (x.data.shape[0], 1, x.data.shape[1]))
    return x


def _lift_voxels(x):
    x = as_tensor(x)
    if x.ndim == 4:
        return reshape(x, (x.data.shape[0], 1) + x.data.shape[1:])
    return x


def predict(logits, upto_t=None):
    """Class index from the time-averaged logits over steps 1..upto_t.

    Ties resolve to the lowest class index. Accepts [T, C] or [T, B, C]
    (the latter returns one index per batch row).
    """
    o = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    t_steps = o.shape[0]
    if upto_t is None:
        upto_t = t_steps
    if not 1 <= upto_t <= t_steps:
        raise errors.ContractError(
            f"upto_t must lie in 1..{t_steps}, got {upto_t}")
    avg = o[:upto_t].mean(axis=0)
    return int(np.argmax(avg)) if avg.ndim == 1 else np.argmax(avg, axis=-1)
