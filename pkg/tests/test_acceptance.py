"""Acceptance suite: one test per acceptance criterion, each printing a
PASS line with its measured numbers (run with ``pytest -v -s`` to see them
inline). The desk-scale comparison is trained once per session and shared.
"""

import time

import numpy as np
import pytest

import desk
from probes import fused_probe_model, visual_probe_model
from spikeav import errors
from spikeav.analysis import (EnergyReport, accuracy_over_time,
                              estimate_energy, verify_causality)
from spikeav.frontend import (AudioWave, FeaturePipeline, FrontendCfg,
                              SynthSpec, fbank, standardize_frames,
                              synth_dataset)
from spikeav.frontend.audio import SAMPLE_RATE, audio_features
from spikeav.model import AvsnnModel, predict
from spikeav.neurons import LifLayer, LifParams, surrogate_grad
from spikeav.tensor import SpikeTensor, Tensor


def report(n, detail):
    print(f"\n[ACCEPTANCE] criterion {n}: PASS - {detail}")


# ------------------------------------------------------------------ 1

def test_criterion_1_energy_model_reproduction():
    printed = [
        (707.5e6, 707.5e6, 3.25),
        (36.7e6, 1076.2e6, 1.10),
        (31.5e6, 1048.3e6, 1.06),
        (31.5e6, 1116.0e6, 1.12),
        (31.5e6, 1143.6e6, 1.15),
        (31.5e6, 1105.7e6, 1.11),
    ]
    worst = 0.0
    for mult, add, expect in printed:
        got = EnergyReport.from_counts(mult, add).energy_mj
        worst = max(worst, abs(got - expect))
        assert abs(got - expect) <= 0.005, (mult, add, got, expect)
    report(1, f"six printed op-count rows reproduced, worst |err| "
              f"{worst * 1000:.2f} uJ (tolerance 5 uJ)")


# ------------------------------------------------------------------ 2

def test_criterion_2_gradient_correctness():
    from test_gradients import (build_instance, engine_grads, Oracle,
                                rel_err)
    from spikeav.training import loss_from_logits

    t0 = time.time()
    model, voxels, frames, labels = build_instance(seed=0)
    loss, grads = engine_grads(model, voxels, frames, labels)
    loss_ref, grads_ref = Oracle(model).run(voxels, frames, labels)
    worst = max(np.abs(g - grads_ref[k]).max() for k, g in grads.items())
    assert worst <= 1e-10

    model2, vox2, fr2, lab2 = build_instance(seed=1)
    model2.set_relaxed(True)
    _, g2 = engine_grads(model2, vox2, fr2, lab2)
    h = 1e-4
    total = passed = 0
    for name, p in model2.named_parameters():
        flat = p.data.reshape(-1)
        gf = g2[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_from_logits(model2(voxels=Tensor(vox2),
                                               frames=Tensor(fr2)),
                                        lab2).data)
            flat[i] = orig - h
            fm = float(loss_from_logits(model2(voxels=Tensor(vox2),
                                               frames=Tensor(fr2)),
                                        lab2).data)
            flat[i] = orig
            total += 1
            if rel_err(gf[i], (fp - fm) / (2 * h)) <= 1e-3:
                passed += 1
    frac = passed / total
    assert frac >= 0.99
    report(2, f"spiking backward matches loop-level reference to "
              f"{worst:.1e} (tol 1e-10); relaxed finite differences agree "
              f"on {frac:.2%} of {total} parameters ({time.time() - t0:.0f}s)")


# ------------------------------------------------------------------ shared desk training

@pytest.fixture(scope="session")
def desk_runs():
    results = []
    keep_models = None
    t0 = time.time()
    for seed in (0, 1, 2):
        train_ds, test_ds = desk.build_datasets(seed)
        accs, models = desk.run_desk_seed(seed, train_ds, test_ds)
        results.append(accs)
        if seed == 0:
            keep_models = models
            keep_test = test_ds
    return {"accs": results, "models": keep_models, "test": keep_test,
            "minutes": (time.time() - t0) / 60}


# ------------------------------------------------------------------ 3

def test_criterion_3_causality_suite(desk_runs):
    t0 = time.time()
    fused = desk_runs["models"]["fused"].eval()
    spec = SynthSpec(train_per_class=1, test_per_class=1, snr_db=0.0)
    _, probe_samples = synth_dataset(spec, seed=41)
    pipe = FeaturePipeline(desk.DESK_FRONTEND)
    verdict = verify_causality(fused, probe_samples[0], pipe, trials=20,
                               rng=np.random.default_rng(0))
    assert verdict.passed and verdict.probes == 28
    assert verdict.trials == 28 * 20

    # sabotage a: attention mask replaced by all-ones
    bad = fused_probe_model()
    attn = bad.spn.vca2ms[3]
    attn._unsafe_allow_any_mask = True
    attn.mask_override = np.ones((28, 28))
    pipe28 = FeaturePipeline(FrontendCfg(t_bins=28))
    v_mask = verify_causality(bad, probe_samples[0], pipe28, trials=20,
                              rng=np.random.default_rng(1))
    assert not v_mask.passed and v_mask.first_violation[0] < 28

    # sabotage b: voxelizer leaks one future bin
    class LeakyPipeline(FeaturePipeline):
        def voxels(self, events, train=False, rng=None):
            grid = super().voxels(events, train, rng)
            grid[10] = np.maximum(grid[10], grid[11])
            return grid

    v_leak = verify_causality(visual_probe_model(), probe_samples[0],
                              LeakyPipeline(FrontendCfg(t_bins=28)),
                              trials=20, rng=np.random.default_rng(2))
    assert not v_leak.passed
    report(3, f"trained fused model passes all t in 1..28 x 20 trials; "
              f"all-ones mask fails at t={v_mask.first_violation[0]}, "
              f"leaky voxelizer fails at t={v_leak.first_violation[0]} "
              f"({time.time() - t0:.0f}s)")


# ------------------------------------------------------------------ 4

def test_criterion_4_spiking_invariants():
    rng = np.random.default_rng(7)
    layer = LifLayer(LifParams())
    for _ in range(1000):
        shape = (int(rng.integers(2, 6)), int(rng.integers(1, 4)),
                 int(rng.integers(2, 12)))
        out = layer(Tensor(rng.standard_normal(shape) * 2.0))
        assert isinstance(out, SpikeTensor)
        assert np.all((out.data == 0.0) | (out.data == 1.0))
        for t, u_pre in enumerate(layer.last_state.recorded_u):
            post = u_pre * (1.0 - out.data[t])
            assert np.all(post[out.data[t] == 1.0] == 0.0)

    p = LifParams(tau=0.5, v_th=1.0, gamma=0.8)
    u = rng.uniform(-4.0, 6.0, size=10_000)
    closed = np.maximum(0.0, p.gamma - np.abs(u - p.v_th)) / p.gamma ** 2
    assert np.abs(surrogate_grad(u, p) - closed).max() <= 1e-12
    report(4, "1000 random forwards binary, post-spike potentials exactly 0, "
              "surrogate matches closed form at 10k points to 1e-12")


# ------------------------------------------------------------------ 5

def test_criterion_5_desk_scale_fusion_benefit(desk_runs):
    accs = desk_runs["accs"]
    mean = {k: float(np.mean([a[k] for a in accs])) for k in accs[0]}
    fused = mean["hi_avsnn"]
    assert fused >= mean["audio_only"] + 0.05, mean
    assert fused >= mean["visual_only"] + 0.05, mean
    assert fused >= mean["concat_baseline"], mean
    report(5, "mean over 3 seeds: fused "
              f"{fused:.3f} vs audio {mean['audio_only']:.3f} "
              f"(+{(fused - mean['audio_only']) * 100:.1f}), visual "
              f"{mean['visual_only']:.3f} "
              f"(+{(fused - mean['visual_only']) * 100:.1f}), concat "
              f"{mean['concat_baseline']:.3f}; wall time "
              f"{desk_runs['minutes']:.1f} min")


# ------------------------------------------------------------------ 6

def test_criterion_6_frame_standardization():
    rng = np.random.default_rng(9)
    one_second = AudioWave(rng.uniform(-0.5, 0.5, SAMPLE_RATE))
    raw = fbank(one_second)
    assert raw.shape[0] == 12
    feats = audio_features(one_second, 28)
    assert feats.shape == (28, 40)
    assert not feats[12:].any() and feats[:12].any()

    frames55 = rng.standard_normal((55, 40))
    out = standardize_frames(frames55, 28)
    idx = np.round(np.linspace(0, 54, 28)).astype(int)
    assert np.array_equal(out, frames55[idx])
    report(6, "1.0 s -> 12 raw frames, padded rows 12..27 all zero; "
              "55 frames -> round(linspace(0,54,28)) selection")


# ------------------------------------------------------------------ 7

def test_criterion_7_recognition_over_time(desk_runs):
    t0 = time.time()
    fused = desk_runs["models"]["fused"].eval()
    test_ds = desk_runs["test"]
    curve = accuracy_over_time(fused, test_ds)
    gap = curve[27] - curve[6]
    assert gap >= 0.10, f"acc(28)={curve[27]:.3f} acc(7)={curve[6]:.3f}"

    # causality cross-check: truncated-input evaluation must reproduce the
    # prefix-logit curve bitwise on a subsample
    n_sub = 40
    logits_full = []
    labels = []
    seen = 0
    for vox, frm, lab in test_ds.batches(8, train=False):
        out = fused(voxels=Tensor(vox), frames=Tensor(frm)).data
        logits_full.append(out)
        labels.append(lab)
        seen += len(lab)
        if seen >= n_sub:
            break
    logits_full = np.concatenate(logits_full, axis=1)[:, :n_sub]
    labels = np.concatenate(labels)[:n_sub]
    prefix_curve = [float(np.mean(predict(logits_full, upto_t=t) == labels))
                    for t in range(1, 29)]
    trunc_curve = []
    per_sample = []
    seen = 0
    for vox, frm, lab in test_ds.batches(8, train=False):
        per_sample.append((vox, frm, lab))
        seen += len(lab)
        if seen >= n_sub:
            break
    for t in range(1, 29):
        correct = []
        count = 0
        for vox, frm, lab in per_sample:
            out = fused(voxels=Tensor(vox[:t]), frames=Tensor(frm[:t]))
            pred = predict(out)
            take = min(len(lab), n_sub - count)
            correct.extend((pred[:take] == lab[:take]).tolist())
            count += take
        trunc_curve.append(float(np.mean(correct)))
    assert trunc_curve == prefix_curve
    report(7, f"accuracy t=28 {curve[27]:.3f} vs t=7 {curve[6]:.3f} "
              f"(gap {gap * 100:.1f} pts >= 10); truncated-input curve "
              f"bitwise equal to prefix curve on {n_sub} samples "
              f"({time.time() - t0:.0f}s)")


# ------------------------------------------------------------------ 8

def test_criterion_8_cueing_position_ablation(tmp_path):
    import json
    import os
    from spikeav import cli

    t0 = time.time()
    config = {
        "model": {"T": 28, "n_v": 2, "n_as": 1, "n_s": 2,
                  "cue_positions": [3], "num_classes": 10,
                  "audio_hidden": 16, "attention_dim": 8,
                  "visual_channels": [4, 8], "visual_strides": [2, 2],
                  "visual_input": [2, 22, 22]},
        "train": {"epochs_pretrain": 1, "epochs_finetune": 1, "batch": 8},
        "frontend": {"t_bins": 28, "out_hw": 22},
        "synth": {"num_classes": 10, "train_per_class": 4,
                  "test_per_class": 2, "snr_db": 0.0},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    data_dir = str(tmp_path / "data")
    assert cli.main(["synth-data", "--config", str(cfg_path),
                     "--out", data_dir, "--seed", "3"]) == 0
    out_dir = str(tmp_path / "ablation")
    assert cli.main(["cue-ablation", "--config", str(cfg_path),
                     "--data", data_dir, "--out", out_dir,
                     "--seed", "3"]) == 0
    rows = json.load(open(os.path.join(out_dir, "cue_ablation.json")))
    assert [r["cue_positions"] for r in rows] == [
        [3], [2, 3], [1, 2, 3], [1, 2, 3, 4]]
    assert all(0.0 <= r["test_accuracy"] <= 1.0 for r in rows)
    assert all(r["parameters"] > 0 for r in rows)
    table = open(os.path.join(out_dir, "cue_ablation.txt")).read()
    assert table.count("\n") >= 4
    report(8, f"four cueing configurations trained and compared via the CLI "
              f"({time.time() - t0:.0f}s)")
