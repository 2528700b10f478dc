"""Synthetic audio-visual classification task.

Classes pair up: classes 2j and 2j+1 share one visual prototype (an orbiting
bright blob whose radius and angular speed identify the pair), so vision
alone cannot separate pair members. A pair tone during the first part of
the clip carries the pair identity acoustically as well.

The within-pair bit lives in the second part of the clip: the class's
member tone plays through one contiguous window during which the blob
visibly "mouths" (a ring of extra events). On clean audio the mere presence
of the member tone identifies the class, so sound alone approaches perfect
accuracy. The babble used for noisy variants mixes other samples and
preferentially includes the pair-mate class, whose opposite member tone
then appears at comparable energy but in a window placed independently of
this speaker's mouth movement: presence and loudness stop being reliable,
and the class is recoverable from which tone is heard while the mouth
moves. Vision alone never separates pair members (the mouth window carries
no label). Everything is deterministic given the seed.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .. import errors
from .audio import SAMPLE_RATE, AudioWave, mix_at_snr
from .events import EventStream, write_events

GROUP_RADII = (8, 13, 18, 23, 28)
GROUP_SPEEDS = (1.0, 1.45, 1.9, 2.35, 2.8)      # revolutions per second
GROUP_TONES = (350.0, 700.0, 1100.0, 1600.0, 2200.0)
MEMBER_TONES = (3200.0, 4000.0)


@dataclass
class SynthSpec:
    """Generator parameters; ten classes by default."""

    num_classes: int = 10
    train_per_class: int = 200
    test_per_class: int = 50
    t_bins: int = 28
    grid_hw: int = 96
    audio_seconds: float = 1.0
    sample_rate: int = SAMPLE_RATE
    snr_db: float = None          # None = clean audio
    babble_voices: int = 6
    blob_radius: int = 3
    micro_steps: int = 120
    event_dropout: float = 0.1
    confuser_prob: float = 0.9   # chance the pair-mate joins the babble

    def __post_init__(self):
        if self.num_classes < 2 or self.num_classes % 2 != 0:
            raise errors.ConfigError(
                "num_classes must be an even number of paired classes")
        if self.num_classes // 2 > len(GROUP_RADII):
            raise errors.ConfigError(
                f"at most {2 * len(GROUP_RADII)} classes supported")
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise errors.ConfigError("sample counts must be positive")
        if self.t_bins < 1 or self.grid_hw < 16:
            raise errors.ConfigError("invalid grid configuration")

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class AvSample:
    """One labeled clip: raw events plus raw (possibly noisy) waveform."""

    events: EventStream
    wave: AudioWave
    label: int


def _blob_coords(cy, cx, radius, hw):
    """Pixel coordinate set of a disk, computed on a local window only."""
    y0, y1 = max(int(cy - radius) - 1, 0), min(int(cy + radius) + 2, hw)
    x0, x1 = max(int(cx - radius) - 1, 0), min(int(cx + radius) + 2, hw)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    inside = (ys - cy) ** 2 + (xs - cx) ** 2 <= radius ** 2
    return ys[inside] * hw + xs[inside]


def _ring_coords(cy, cx, r_in, r_out, hw):
    y0, y1 = max(int(cy - r_out) - 1, 0), min(int(cy + r_out) + 2, hw)
    x0, x1 = max(int(cx - r_out) - 1, 0), min(int(cx + r_out) + 2, hw)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    inside = (d2 <= r_out ** 2) & (d2 >= r_in ** 2)
    return ys[inside] * hw + xs[inside]


def _in_windows(frac_s, windows):
    return any(lo <= frac_s < hi for lo, hi in windows)


def _visual_events(group, spec, rng, mouth_windows=()):
    """Orbit a blob, emitting edge events, plus a ring burst while the blob
    "mouths" (the windows are in seconds)."""
    hw = spec.grid_hw
    duration_us = int(spec.audio_seconds * 1e6)
    radius = GROUP_RADII[group] + rng.uniform(-1.0, 1.0)
    speed = GROUP_SPEEDS[group] * rng.uniform(0.92, 1.08)
    phase = rng.uniform(0.0, 2 * np.pi)
    cy0 = hw / 2 + rng.uniform(-3, 3)
    cx0 = hw / 2 + rng.uniform(-3, 3)

    prev = np.empty(0, dtype=np.int64)
    ts, flat, ps = [], [], []
    for step in range(spec.micro_steps):
        frac = step / (spec.micro_steps - 1)
        ang = phase + 2 * np.pi * speed * frac * spec.audio_seconds
        cy = cy0 + radius * np.sin(ang)
        cx = cx0 + radius * np.cos(ang)
        cur = _blob_coords(cy, cx, spec.blob_radius, hw)
        t_us = int(frac * (duration_us - 1))
        on = np.setdiff1d(cur, prev, assume_unique=True)
        off = np.setdiff1d(prev, cur, assume_unique=True)
        if _in_windows(frac * spec.audio_seconds, mouth_windows):
            ring = _ring_coords(cy, cx, spec.blob_radius + 3,
                                spec.blob_radius + 8, hw)
            ring = ring[rng.random(len(ring)) < 0.9]
            on = np.concatenate([on, ring])
        for idx, pol in ((on, 1), (off, 0)):
            ts.extend([t_us] * len(idx))
            flat.extend(idx.tolist())
            ps.extend([pol] * len(idx))
        prev = cur
    ts = np.asarray(ts, dtype=np.int64)
    flat = np.asarray(flat, dtype=np.int64)
    ys, xs = flat // hw, flat % hw
    ps = np.asarray(ps)
    keep = rng.random(len(ts)) >= spec.event_dropout
    keep[0] = keep[-1] = True     # anchor the time span
    ts, xs, ys, ps = ts[keep], xs[keep], ys[keep], ps[keep]
    order = np.argsort(ts, kind="stable")
    return EventStream(ts[order], xs[order], ys[order], ps[order],
                       width=hw, height=hw)


def _ramp_window(n, rate, ramp_s=0.02):
    w = np.ones(n)
    r = min(int(ramp_s * rate), max(n // 2, 1))
    if r > 0:
        edge = 0.5 * (1 - np.cos(np.linspace(0, np.pi, r)))
        w[:r] = edge
        w[-r:] = edge[::-1]
    return w


def _tone(freq, start_s, stop_s, total_s, rate, rng):
    n = int(total_s * rate)
    t = np.arange(n) / rate
    x = np.zeros(n)
    lo, hi = int(start_s * rate), min(int(stop_s * rate), n)
    f = freq * rng.uniform(0.99, 1.01)
    seg = np.sin(2 * np.pi * f * t[lo:hi] + rng.uniform(0, 2 * np.pi))
    x[lo:hi] = seg * _ramp_window(hi - lo, rate)
    return x


def _speech_window(rng, total, lo_frac=0.40, hi_frac=0.97, width_frac=0.18,
                   avoid=None):
    """One contiguous mouthing window (seconds), placed uniformly inside the
    second part of the clip. With ``avoid`` set, the window is re-drawn away
    from that span so competing speakers do not talk over this one."""
    width = width_frac * total
    lo = lo_frac * total
    hi = hi_frac * total - width
    start = rng.uniform(lo, hi)
    if avoid is not None:
        a_lo, a_hi = avoid
        for _ in range(20):
            if start + width <= a_lo or start >= a_hi:
                break
            start = rng.uniform(lo, hi)
    return [(start, start + width)]


def _clean_audio(label, spec, rng, windows):
    """Pair tone early; the class's member tone plays in its windows."""
    group, member = label // 2, label % 2
    total = spec.audio_seconds
    amp = rng.uniform(0.5, 0.6)
    x = 0.75 * amp * _tone(GROUP_TONES[group], 0.0, 0.58 * total, total,
                           spec.sample_rate, rng)
    for lo, hi in windows:
        x += amp * _tone(MEMBER_TONES[member], lo, hi, total,
                         spec.sample_rate, rng)
    return AudioWave(x, spec.sample_rate)


def _babble(spec, rng, exclude, avoid=None):
    """Mixture of other-sample prototypes; the pair-mate class usually
    joins, planting the opposite member tone - away from this speaker's
    mouthing window, since competing speech is uncorrelated with it."""
    voices = np.zeros(int(spec.audio_seconds * spec.sample_rate))
    for i in range(spec.babble_voices):
        if i == 0 and rng.random() < spec.confuser_prob:
            other = exclude ^ 1          # the pair mate
            window = _speech_window(rng, spec.audio_seconds, avoid=avoid)
        else:
            other = int(rng.integers(0, spec.num_classes))
            while other == exclude:
                other = int(rng.integers(0, spec.num_classes))
            window = _speech_window(rng, spec.audio_seconds)
        voices += _clean_audio(other, spec, rng, window).samples
    return AudioWave(voices / spec.babble_voices, spec.sample_rate)


def make_sample(label, spec, rng):
    windows = _speech_window(rng, spec.audio_seconds)
    ev = _visual_events(label // 2, spec, rng, mouth_windows=windows)
    wave = _clean_audio(label, spec, rng, windows)
    if spec.snr_db is not None:
        babble = _babble(spec, rng, exclude=label, avoid=windows[0])
        wave = mix_at_snr(wave, babble, spec.snr_db)
        peak = np.abs(wave.samples).max()
        if peak > 0.99:
            wave = AudioWave(wave.samples * (0.99 / peak), wave.rate)
    return AvSample(ev, wave, label)


def synth_dataset(spec, seed):
    """Deterministic (train, test) sample lists."""
    train, test = [], []
    for split_idx, (bucket, count) in enumerate(
            [(train, spec.train_per_class), (test, spec.test_per_class)]):
        for label in range(spec.num_classes):
            for i in range(count):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, split_idx, label, i]))
                bucket.append(make_sample(label, spec, rng))
    return train, test


def write_dataset(samples, out_dir, prefix="sample"):
    """Write events, WAVs, and a JSONL manifest; returns the manifest path."""
    from .audio import save_wav
    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w") as mf:
        for i, s in enumerate(samples):
            ev_name = f"{prefix}_{i:05d}.evb"
            au_name = f"{prefix}_{i:05d}.wav"
            write_events(os.path.join(out_dir, ev_name), s.events)
            save_wav(os.path.join(out_dir, au_name), s.wave)
            mf.write(json.dumps({"event_path": ev_name,
                                 "audio_path": au_name,
                                 "label": s.label}) + "\n")
    return manifest


def read_manifest(path):
    """Load a JSONL manifest into AvSample records."""
    from .audio import load_wav
    from .events import read_events
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples.append(AvSample(
                read_events(os.path.join(base, rec["event_path"])),
                load_wav(os.path.join(base, rec["audio_path"])),
                int(rec["label"])))
    return samples
