"""Input frontends: event streams, audio features, synthetic data, and the
feature pipeline shared by training and evaluation."""

from .audio import (AudioWave, audio_features, augment_audio, fbank,
                    load_wav, mel_centers, mix_at_snr, resample, save_wav,
                    standardize_frames)
from .data import CachedDataset, FeaturePipeline, FrontendCfg
from .events import (EventStream, augment_visual, read_events, voxelize,
                     write_events)
from .synth import (AvSample, SynthSpec, make_sample, read_manifest,
                    synth_dataset, write_dataset)

__all__ = [
    "AudioWave", "AvSample", "CachedDataset", "EventStream",
    "FeaturePipeline", "FrontendCfg", "SynthSpec", "audio_features",
    "augment_audio", "augment_visual", "fbank", "load_wav", "make_sample",
    "mel_centers", "mix_at_snr", "read_events", "read_manifest", "resample",
    "save_wav", "standardize_frames", "synth_dataset", "voxelize",
    "write_dataset", "write_events",
]
