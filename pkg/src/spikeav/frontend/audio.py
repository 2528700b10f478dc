"""Audio ingestion: WAV IO, resampling, log mel-filterbank features, frame
standardization, train-time augmentation, and SNR-controlled noise mixing.

Feature settings follow the reference recipe: 44.1 kHz input, 120 ms frames
with an 80 ms hop (40 ms overlap), 40 mel bins spanning 0 Hz to Nyquist on
the HTK mel scale, log compression with a 1e-6 floor.
"""

import wave as _wave
from dataclasses import dataclass

import numpy as np

from .. import errors

SAMPLE_RATE = 44100
FRAME_SIZE = 5292      # 120 ms at 44.1 kHz
HOP_SIZE = 3528        # 80 ms hop -> 40 ms overlap
NUM_MELS = 40
LOG_FLOOR = 1e-6


@dataclass
class AudioWave:
    """Mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise errors.NumericError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)


def save_wav(path, wave):
    """16-bit PCM mono WAV."""
    pcm = np.clip(np.round(wave.samples * 32767.0), -32768, 32767)
    with _wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(wave.rate)
        f.writeframes(pcm.astype("<i2").tobytes())


def load_wav(path):
    with _wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise errors.ContractError(
                f"{path}: expected 16-bit mono PCM")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return AudioWave(samples, rate)


def resample(wave, target_rate=SAMPLE_RATE):
    """Linear-interpolation resampling."""
    if wave.rate == target_rate:
        return wave
    n_out = int(round(len(wave) * target_rate / wave.rate))
    t_in = np.arange(len(wave)) / wave.rate
    t_out = np.arange(n_out) / target_rate
    return AudioWave(np.interp(t_out, t_in, wave.samples), target_rate)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_filterbank(n_fft, rate=SAMPLE_RATE, n_mels=NUM_MELS):
    """[n_mels, n_fft//2 + 1] triangular filters from 0 Hz to Nyquist."""
    n_bins = n_fft // 2 + 1
    mel_pts = np.linspace(0.0, _hz_to_mel(rate / 2.0), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    freqs = np.arange(n_bins) * rate / n_fft
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_centers(rate=SAMPLE_RATE, n_mels=NUM_MELS):
    """Center frequency (Hz) of each mel filter."""
    mel_pts = np.linspace(0.0, _hz_to_mel(rate / 2.0), n_mels + 2)
    return _mel_to_hz(mel_pts)[1:-1]


def fbank(wave):
    """Raw log mel-filterbank frames [N, 40] of a 44.1 kHz waveform.

    Frames of 5292 samples advance by 3528; each is Hann-windowed, taken to
    a power spectrum, projected on the mel filters, and log-compressed.
    Waveforms shorter than one frame are zero-padded to a single frame.
    """
    if wave.rate != SAMPLE_RATE:
        raise errors.ContractError(
            f"fbank expects {SAMPLE_RATE} Hz input, got {wave.rate}; "
            "resample first")
    x = wave.samples
    if len(x) == 0:
        raise errors.EmptyInputError("cannot extract features from empty audio")
    if len(x) < FRAME_SIZE:
        x = np.pad(x, (0, FRAME_SIZE - len(x)))
    n_frames = (len(x) - FRAME_SIZE) // HOP_SIZE + 1
    window = np.hanning(FRAME_SIZE)
    fb = mel_filterbank(FRAME_SIZE)
    out = np.empty((n_frames, NUM_MELS))
    for i in range(n_frames):
        seg = x[i * HOP_SIZE:i * HOP_SIZE + FRAME_SIZE] * window
        power = np.abs(np.fft.rfft(seg)) ** 2
        out[i] = np.log(fb @ power + LOG_FLOOR)
    return out


def standardize_frames(frames, t_target):
    """Force exactly ``t_target`` rows: linearly sample when longer,
    zero-pad at the end when shorter."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[0]
    if n < 1:
        raise errors.EmptyInputError("no frames to standardize")
    if n > t_target:
        idx = np.round(np.linspace(0, n - 1, t_target)).astype(int)
        return frames[idx].copy()
    if n == t_target:
        return frames.copy()
    pad = np.zeros((t_target - n, frames.shape[1]))
    return np.concatenate([frames, pad], axis=0)


# log energy of digital silence; shifting by it maps silence to 0 so padded
# and silent frames agree, and scaling keeps typical energies near unit size
FEATURE_OFFSET = float(np.log(LOG_FLOOR))
FEATURE_SCALE = 0.1


def audio_features(wave, t_target, offset=FEATURE_OFFSET, scale=FEATURE_SCALE):
    """Model-ready feature matrix [t_target, 40]: fbank, fixed affine
    normalization (input-independent, so causal), then standardization."""
    raw = fbank(wave)
    normed = (raw - offset) * scale
    return standardize_frames(normed, t_target)


def augment_audio(wave, rng, p_invert=0.8, p_noise=0.1, p_volume=0.3):
    """Train-time waveform augmentation: polarity inversion, a small amount
    of additive noise (30 dB SNR), and volume scaling in [0.7, 1.3]."""
    x = wave.samples.copy()
    if rng.random() < p_invert:
        x = -x
    if rng.random() < p_noise:
        p_sig = float(np.mean(x ** 2))
        noise = rng.standard_normal(len(x))
        p_noise_target = p_sig / 10.0 ** 3.0   # 30 dB below signal
        p_cur = float(np.mean(noise ** 2))
        if p_cur > 0:
            x = x + noise * np.sqrt(p_noise_target / p_cur)
    if rng.random() < p_volume:
        x = x * rng.uniform(0.7, 1.3)
    return AudioWave(x, wave.rate)


def mix_at_snr(clean, noise, snr_db):
    """clean + noise scaled so that 10*log10(P_clean/P_noise) = snr_db."""
    if clean.rate != noise.rate:
        raise errors.AlignmentError(
            f"sample rates differ: {clean.rate} vs {noise.rate}")
    n = len(clean)
    if len(noise) == 0:
        raise errors.DegenerateInputError("noise waveform is empty")
    reps = int(np.ceil(n / len(noise)))
    nz = np.tile(noise.samples, reps)[:n]
    p_c = float(np.mean(clean.samples ** 2))
    p_n = float(np.mean(nz ** 2))
    if p_c <= 0.0 or p_n <= 0.0:
        raise errors.DegenerateInputError(
            "zero-power operand in SNR mixing")
    alpha = np.sqrt(p_c / (p_n * 10.0 ** (snr_db / 10.0)))
    return AudioWave(clean.samples + alpha * nz, clean.rate)
