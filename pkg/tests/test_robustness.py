"""Noise-robustness properties of the synthetic task: sound alone is nearly
perfect on clean audio and degrades monotonically as babble is mixed in.
Statistical over three seeds; small models and datasets keep this quick."""

import dataclasses

import numpy as np
import pytest

import desk
from spikeav.frontend import (CachedDataset, FeaturePipeline, SynthSpec,
                              synth_dataset)
from spikeav.model import AvsnnModel
from spikeav.training import TrainConfig, evaluate, train_model

SNRS = [None, 10.0, 0.0, -10.0]       # None = clean


@pytest.mark.slow
def test_audio_only_degrades_monotonically_with_snr():
    pipeline = FeaturePipeline(desk.DESK_FRONTEND)
    curves = []
    for seed in range(3):
        spec = SynthSpec(num_classes=10, train_per_class=40,
                         test_per_class=10, snr_db=None)
        train, _ = synth_dataset(spec, seed)
        train_ds = CachedDataset(train, pipeline)
        model = AvsnnModel(desk.desk_config("audio_only"), seed=seed)
        cfg = TrainConfig(epochs_pretrain=8, epochs_finetune=1, batch=16)
        train_model(model, train_ds, cfg, 1e-3, 8, seed, phase="aud")
        accs = []
        for snr in SNRS:
            spec_t = dataclasses.replace(spec, snr_db=snr)
            _, test = synth_dataset(spec_t, seed + 100)
            accs.append(evaluate(model, CachedDataset(test, pipeline)))
        curves.append(accs)
    mean = np.mean(curves, axis=0)
    assert mean[0] >= 0.9, f"clean accuracy {mean[0]:.3f}"
    for a, b in zip(mean[:-1], mean[1:]):
        assert b <= a + 0.02, f"not monotone: {mean}"
    assert mean[-1] <= mean[0] - 0.2, f"no real degradation: {mean}"
