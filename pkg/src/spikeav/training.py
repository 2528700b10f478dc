"""Loss, optimizer, schedule, and the pretrain/finetune driver.

The classification loss is softmax cross-entropy of the time-averaged
per-timestep logits. Backward runs through the unrolled time graph, so the
weight update is exact backpropagation through both depth and time with the
surrogate standing in for the threshold derivative.
"""

import dataclasses
import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import errors
from .model import AvsnnModel, NetworkConfig, predict
from .tensor import GradTape, Tensor, apply_op, as_tensor, tmean

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_pretrain: float = 0.001
    lr_finetune: float = 0.0005
    epochs_pretrain: int = 150
    epochs_finetune: int = 50
    batch: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    skip_pretrain: bool = False

    def __post_init__(self):
        if self.lr_pretrain < 0 or self.lr_finetune < 0:
            raise errors.ConfigError("learning rates must be non-negative")
        if self.epochs_pretrain < 1 or self.epochs_finetune < 1:
            raise errors.ConfigError("epoch counts must be positive")
        if self.batch < 1:
            raise errors.ConfigError("batch size must be positive")

    def as_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise errors.ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of [B, C] logits against integer labels."""
    logits = as_tensor(logits)
    ld = logits.data
    if not np.all(np.isfinite(ld)):
        bad = np.argwhere(~np.isfinite(ld))
        raise errors.NumericError(
            f"non-finite logits at {len(bad)} positions, first {bad[0].tolist()}")
    labels = np.asarray(labels, dtype=np.int64)
    b, c = ld.shape
    if np.any(labels < 0) or np.any(labels >= c):
        raise errors.ContractError(
            f"labels must lie in 0..{c - 1}")
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss_val = -logp[np.arange(b), labels].mean()
    probs = np.exp(logp)

    def backward(g):
        grad = probs.copy()
        grad[np.arange(b), labels] -= 1.0
        return [(logits, g * grad / b)]

    return apply_op(np.asarray(loss_val), [logits], backward)


def loss_from_logits(o, label):
    """Cross-entropy of the time-averaged logits.

    ``o`` is [T, C] or [T, B, C]; ``label`` an int or [B] array.
    """
    o = as_tensor(o)
    if o.ndim == 2:
        from .tensor import reshape
        o = reshape(o, (o.data.shape[0], 1, o.data.shape[1]))
        label = np.asarray([label]) if np.isscalar(label) else label
    avg = tmean(o, axis=0)
    return softmax_cross_entropy(avg, label)


class Adam:
    """Bias-corrected adaptive-moment optimizer over named parameters."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)      # (name, Tensor) pairs
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** t)
            v_hat = self.v[name] / (1 - b2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self, prefix="opt."):
        out = {prefix + "m." + k: v for k, v in self.m.items()}
        out.update({prefix + "v." + k: v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays, step_count, prefix="opt."):
        for k in self.m:
            self.m[k] = arrays[prefix + "m." + k].copy()
            self.v[k] = arrays[prefix + "v." + k].copy()
        self.step_count = int(step_count)


def cosine_lr(initial, epoch, total_epochs, eta_min=0.0):
    """eta_min + 0.5 (eta_max - eta_min) (1 + cos(pi e / E))."""
    return eta_min + 0.5 * (initial - eta_min) * (
        1.0 + np.cos(np.pi * epoch / total_epochs))


def clip_gradients(params, max_norm):
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    norm = np.sqrt(total)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def _check_finite_grads(params):
    bad = [name for name, p in params
           if p.grad is not None and not np.all(np.isfinite(p.grad))]
    if bad:
        raise errors.NumericError(
            f"non-finite gradients in layers: {bad}")


def train_step(model, optimizer, voxels, frames, labels, clip_norm=5.0):
    """One forward / backward / update; returns step metrics."""
    if not model.training:
        raise errors.ContractError("train_step requires the model in train mode")
    model.zero_grad()
    with GradTape() as tape:
        logits = model(voxels=None if voxels is None else Tensor(voxels),
                       frames=None if frames is None else Tensor(frames))
        loss = loss_from_logits(logits, labels)
        tape.backward(loss)
    params = list(model.named_parameters())
    _check_finite_grads(params)
    grad_norm = clip_gradients(params, clip_norm)
    optimizer.step()
    pred = predict(logits)
    acc = float(np.mean(pred == np.asarray(labels)))
    return {"loss": float(loss.data), "accuracy": acc,
            "grad_norm": float(grad_norm),
            "spike_rates": model.spike_rates()}


def evaluate(model, dataset, batch=32, upto_t=None):
    """Accuracy of time-averaged prefix predictions over a CachedDataset."""
    model.eval()
    needs_v = model.cfg.fusion_mode != "audio_only"
    needs_a = model.cfg.fusion_mode != "visual_only"
    correct = total = 0
    for voxels, frames, labels in dataset.batches(batch, train=False):
        logits = model(voxels=Tensor(voxels) if needs_v else None,
                       frames=Tensor(frames) if needs_a else None)
        pred = predict(logits, upto_t)
        correct += int(np.sum(pred == labels))
        total += len(labels)
    return correct / max(total, 1)


def train_model(model, dataset, cfg, lr, epochs, seed, log_path=None,
                eval_dataset=None, phase="train", optimizer=None,
                start_epoch=0, stop_epoch=None):
    """Cosine-annealed training loop with JSONL epoch logging.

    ``epochs`` is the schedule horizon; ``start_epoch``/``stop_epoch`` pick
    the slice actually run. Shuffling and augmentation derive from
    (seed, epoch), so a run resumed from a saved model + optimizer at an
    epoch boundary replays the exact remaining trajectory.
    """
    model.train()
    needs_v = model.cfg.fusion_mode != "audio_only"
    needs_a = model.cfg.fusion_mode != "visual_only"
    if optimizer is None:
        optimizer = Adam(model.named_parameters(), lr,
                         cfg.beta1, cfg.beta2, cfg.eps)
    history = []
    for epoch in range(start_epoch, stop_epoch or epochs):
        optimizer.lr = cosine_lr(lr, epoch, epochs)
        t_start = time.time()
        losses, accs = [], []
        model.train()
        for voxels, frames, labels in dataset.batches(
                cfg.batch, train=True, seed=seed, epoch=epoch):
            metrics = train_step(model, optimizer,
                                 voxels if needs_v else None,
                                 frames if needs_a else None,
                                 labels, cfg.clip_norm)
            losses.append(metrics["loss"])
            accs.append(metrics["accuracy"])
        entry = {"phase": phase, "epoch": epoch,
                 "loss": float(np.mean(losses)),
                 "accuracy": float(np.mean(accs)),
                 "lr": optimizer.lr,
                 "spike_rates": model.spike_rates(),
                 "wall_time_s": time.time() - t_start}
        if eval_dataset is not None:
            entry["eval_accuracy"] = evaluate(model, eval_dataset)
        history.append(entry)
        if log_path:
            with open(log_path, "a") as f:
                f.write(json.dumps(entry) + "\n")
        log.info("%s epoch %d: loss %.4f acc %.3f (%.1fs)", phase, epoch,
                 entry["loss"], entry["accuracy"], entry["wall_time_s"])
    return history, optimizer


def run_pipeline(model_cfg, train_cfg, train_set, test_set, seed,
                 out_dir=None, log_path=None):
    """Pretrain the two subnets separately, then finetune the fused network.

    Phase 1 trains the visual subnet with a temporary readout and the speech
    subnet without cueing; phase 2 builds the fused model, copies the
    pretrained weights in, and finetunes everything jointly at the lower
    rate. Returns (fused model, phase history dict).
    """
    import os
    histories = {}

    vis_cfg = dataclasses.replace(model_cfg, fusion_mode="visual_only")
    aud_cfg = dataclasses.replace(model_cfg, fusion_mode="audio_only")
    visual = AvsnnModel(vis_cfg, seed=seed)
    audio = AvsnnModel(aud_cfg, seed=seed + 1)

    if train_cfg.skip_pretrain:
        log.warning("pretraining skipped by configuration; fused network "
                    "starts from fresh weights")
        if log_path:
            with open(log_path, "a") as f:
                f.write(json.dumps({"phase": "pretrain",
                                    "skipped": True}) + "\n")
    else:
        histories["pretrain_visual"], _ = train_model(
            visual, train_set, train_cfg, train_cfg.lr_pretrain,
            train_cfg.epochs_pretrain, seed, log_path, phase="pretrain_visual")
        histories["pretrain_audio"], _ = train_model(
            audio, train_set, train_cfg, train_cfg.lr_pretrain,
            train_cfg.epochs_pretrain, seed + 1, log_path,
            phase="pretrain_audio")
        if out_dir:
            visual.save(os.path.join(out_dir, "pretrain_visual.ckpt"),
                        {"phase": "pretrain_visual", "seed": seed})
            audio.save(os.path.join(out_dir, "pretrain_audio.ckpt"),
                       {"phase": "pretrain_audio", "seed": seed})

    fused_cfg = dataclasses.replace(model_cfg, fusion_mode="hi_avsnn")
    fused = AvsnnModel(fused_cfg, seed=seed + 2)
    if not train_cfg.skip_pretrain:
        transfer_pretrained(fused, visual, audio)

    histories["finetune"], _ = train_model(
        fused, train_set, train_cfg, train_cfg.lr_finetune,
        train_cfg.epochs_finetune, seed + 2, log_path, phase="finetune")
    if out_dir:
        fused.save(os.path.join(out_dir, "fused.ckpt"),
                   {"phase": "finetune", "seed": seed})
    if test_set is not None:
        histories["test_accuracy"] = evaluate(fused, test_set)
    return fused, histories


def save_training_state(path, model, optimizer, epoch, seed, phase="train"):
    """Checkpoint with optimizer moments for exact continuation."""
    arrays = dict(model.state_dict())
    arrays.update(optimizer.state_arrays())
    model_cfg = model.cfg.as_dict()
    from . import checkpoint
    checkpoint.save_checkpoint(path, arrays, model_cfg,
                               {"epoch": epoch, "seed": seed,
                                "phase": phase,
                                "opt_step": optimizer.step_count,
                                "opt_lr": optimizer.lr})


def resume_training_state(path, model, cfg):
    """Load a training checkpoint into the model; returns (optimizer,
    next_epoch, seed). The checkpoint config hash must match the model."""
    from . import checkpoint
    arrays, config, extra = checkpoint.load_checkpoint(path)
    if checkpoint.config_hash(config) != checkpoint.config_hash(
            model.cfg.as_dict()):
        raise errors.CheckpointError(
            "training checkpoint was written for a different configuration")
    model_arrays = {k: v for k, v in arrays.items()
                    if not k.startswith("opt.")}
    model.load_state_dict(model_arrays)
    optimizer = Adam(model.named_parameters(), extra["opt_lr"],
                     cfg.beta1, cfg.beta2, cfg.eps)
    optimizer.load_state_arrays(arrays, extra["opt_step"])
    return optimizer, extra["epoch"] + 1, extra["seed"]


def transfer_pretrained(fused, visual, audio):
    """Copy phase-1 weights into the fused assembly (bitwise).

    The visual subnet transfers wholesale; the speech subnet transfers every
    entry whose name and shape exist in the fused stack (the cueing modules
    are new, so they keep their fresh initialization).
    """
    fused.vcen.load_state_dict(visual.vcen.state_dict())
    own = fused.spn.state_dict()
    for name, arr in audio.spn.state_dict().items():
        if name in own and own[name].shape == arr.shape:
            fused.spn.assign_named(name, arr)
