"""Energy estimation, causality verification, and recognition-over-time.

Energy uses the 45nm op-cost model: additions cost 0.9 pJ, multiplications
3.7 pJ. Op counts come from an instrumented eval forward with batch-norm
folded into the preceding affine maps, so spike-driven layers register pure
accumulation.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import errors, opcount
from .model import predict
from .tensor import Tensor

PJ_PER_ADD = 0.9
PJ_PER_MULT = 3.7
MJ_PER_PJ = 1e-9


@dataclass
class EnergyReport:
    """Operation counts and their picojoule-weighted total."""

    mult_count: int
    add_count: int
    energy_mj: float
    per_layer: dict = field(default_factory=dict)
    spike_rates: dict = field(default_factory=dict)

    @classmethod
    def from_counts(cls, mult_count, add_count, per_layer=None,
                    spike_rates=None):
        energy = (PJ_PER_MULT * mult_count + PJ_PER_ADD * add_count) * MJ_PER_PJ
        return cls(int(mult_count), int(add_count), energy,
                   per_layer or {}, spike_rates or {})

    def as_json(self):
        layers = {name: {"mult": m, "add": a,
                         "energy_mj": (PJ_PER_MULT * m + PJ_PER_ADD * a)
                         * MJ_PER_PJ}
                  for name, (m, a) in sorted(self.per_layer.items())}
        return json.dumps({"mult_count": self.mult_count,
                           "add_count": self.add_count,
                           "energy_mj": self.energy_mj,
                           "per_layer": layers,
                           "spike_rates": self.spike_rates}, indent=2)

    def as_text(self):
        lines = [f"{'layer':40s} {'mult':>12s} {'add':>12s} {'energy_mJ':>12s}"]
        for name, (m, a) in sorted(self.per_layer.items()):
            e = (PJ_PER_MULT * m + PJ_PER_ADD * a) * MJ_PER_PJ
            lines.append(f"{name:40s} {m:12d} {a:12d} {e:12.6f}")
        lines.append(f"{'total':40s} {self.mult_count:12d} "
                     f"{self.add_count:12d} {self.energy_mj:12.6f}")
        return "\n".join(lines)


def estimate_energy(model, voxels=None, frames=None):
    """Count ops for one forward pass of a single sample.

    The model must be in eval mode; a folded copy is produced internally so
    batch normalization contributes nothing. Counting conventions live in
    ``opcount``.
    """
    if model.training:
        raise errors.ContractError(
            "energy estimation requires eval mode (train-mode statistics "
            "would distort the counts)")
    folded = model.folded_copy()
    counter = opcount.OpCounter()
    with opcount.counting(counter):
        folded(voxels=None if voxels is None else Tensor(voxels),
               frames=None if frames is None else Tensor(frames))
    return EnergyReport.from_counts(counter.mults, counter.adds,
                                    dict(counter.per_layer),
                                    dict(counter.spike_rates))


@dataclass
class CausalityVerdict:
    """Outcome of the future-perturbation probe."""

    passed: bool
    first_violation: tuple = None    # (timestep, tensor id, max abs diff)
    probes: int = 0
    trials: int = 0


def _perturb_future_events(events, t_probe, t_bins, rng):
    """Replace position/polarity of every event in bins > t_probe.

    Timestamps stay fixed so the bin structure (and the stream's time span)
    is unchanged; only the content of future segments is randomized.
    """
    ts = events.timestamps
    t0, t1 = int(ts[0]), int(ts[-1])
    span = t1 - t0
    if span > 0:
        bins = ((ts - t0) * t_bins // span).astype(np.int64)
        np.minimum(bins, t_bins - 1, out=bins)
    else:
        bins = np.zeros(len(ts), dtype=np.int64)
    future = bins >= t_probe       # bins are 0-indexed; probe t keeps 1..t
    xs = events.xs.copy()
    ys = events.ys.copy()
    ps = events.polarities.copy()
    n = int(future.sum())
    xs[future] = rng.integers(0, events.width, n)
    ys[future] = rng.integers(0, events.height, n)
    ps[future] = rng.integers(0, 2, n)
    from .frontend.events import EventStream
    return EventStream(ts.copy(), xs, ys, ps, events.width, events.height)


def verify_causality(model, sample, pipeline, trials=20, rng=None,
                     probe_ts=None):
    """Check that logits up to t never react to content after t.

    For every probed timestep the raw future event content and the future
    audio feature frames are replaced with random data; the first t rows of
    the logits must stay bitwise identical to the unperturbed run.
    """
    if model.training:
        raise errors.ContractError("causality verification requires eval mode")
    rng = rng or np.random.default_rng(0)
    t_bins = pipeline.cfg.t_bins
    needs_v = model.cfg.fusion_mode != "audio_only"
    needs_a = model.cfg.fusion_mode != "visual_only"

    base_vox = pipeline.voxels(sample.events, train=False)
    base_frames = pipeline.frames(sample.wave)
    base = model(voxels=Tensor(base_vox) if needs_v else None,
                 frames=Tensor(base_frames) if needs_a else None).data

    probe_list = list(probe_ts) if probe_ts is not None else list(
        range(1, t_bins + 1))
    n_trials = 0
    for t in probe_list:
        for _ in range(trials):
            n_trials += 1
            ev = (_perturb_future_events(sample.events, t, t_bins, rng)
                  if needs_v else sample.events)
            frames = base_frames.copy()
            if needs_a and t < t_bins:
                frames[t:] = rng.normal(0.0, 1.0,
                                        size=frames[t:].shape)
            vox = pipeline.voxels(ev, train=False) if needs_v else None
            out = model(voxels=Tensor(vox) if needs_v else None,
                        frames=Tensor(frames) if needs_a else None).data
            if not np.array_equal(out[:t], base[:t]):
                diff = float(np.abs(out[:t] - base[:t]).max())
                return CausalityVerdict(False, (t, "logits", diff),
                                        len(probe_list), n_trials)
    return CausalityVerdict(True, None, len(probe_list), n_trials)


def accuracy_over_time(model, dataset, batch=32):
    """Accuracy of the prefix prediction at every timestep. Returns [T]."""
    if model.training:
        raise errors.ContractError("accuracy curves require eval mode")
    needs_v = model.cfg.fusion_mode != "audio_only"
    needs_a = model.cfg.fusion_mode != "visual_only"
    all_logits, all_labels = [], []
    for voxels, frames, labels in dataset.batches(batch, train=False):
        logits = model(voxels=Tensor(voxels) if needs_v else None,
                       frames=Tensor(frames) if needs_a else None)
        all_logits.append(logits.data)
        all_labels.append(labels)
    logits = np.concatenate(all_logits, axis=1)   # [T, N, C]
    labels = np.concatenate(all_labels)
    t_bins = logits.shape[0]
    curve = np.empty(t_bins)
    for t in range(1, t_bins + 1):
        pred = predict(logits, upto_t=t)
        curve[t - 1] = float(np.mean(pred == labels))
    return curve


def curve_as_csv(curve):
    lines = ["t,accuracy"]
    for t, acc in enumerate(curve, start=1):
        lines.append(f"{t},{acc:.6f}")
    return "\n".join(lines) + "\n"
