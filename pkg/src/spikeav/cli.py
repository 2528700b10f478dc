"""Command-line entry point.

Subcommands: synth-data, train, eval, energy, causality, curve,
cue-ablation, bench. Configuration comes from a JSON file (sections
``model``, ``train``, ``frontend``, ``synth``); flags override file values.
Every command records a run manifest (command, config, seed) in its output
directory so results are reproducible from the artifact alone. Failures
print machine-readable JSON to stderr and exit nonzero.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import analysis, errors, training
from .frontend import (CachedDataset, FeaturePipeline, FrontendCfg,
                       SynthSpec, mix_at_snr, read_manifest, synth_dataset,
                       write_dataset)
from .frontend.audio import AudioWave
from .model import AvsnnModel, NetworkConfig
from .training import TrainConfig

_SECTIONS = ("model", "train", "frontend", "synth")


def load_config(path):
    """Parse and validate the JSON config; diagnostics carry line/field."""
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise errors.ConfigError(
            f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})")
    if not isinstance(cfg, dict):
        raise errors.ConfigError(f"{path}: top level must be an object")
    for key in cfg:
        if key not in _SECTIONS:
            raise errors.ConfigError(
                f"{path}: unknown section {key!r} (expected one of "
                f"{_SECTIONS})")
        if not isinstance(cfg[key], dict):
            raise errors.ConfigError(f"{path}: section {key!r} must be an "
                                     "object")
    return cfg


def build_configs(cfg, args):
    """Materialize dataclass configs from file + flag overrides."""
    model_d = dict(cfg.get("model", {}))
    if getattr(args, "cue_positions", None) is not None:
        positions = tuple(int(p) for p in args.cue_positions.split(",") if p)
        total = model_d.get("n_as", 3) + model_d.get("n_s", 0)
        model_d["cue_positions"] = positions
        model_d["n_as"] = len([p for p in positions if p in (1, 2, 3)])
        model_d["n_s"] = total - model_d["n_as"]
    if getattr(args, "fusion_mode", None):
        model_d["fusion_mode"] = args.fusion_mode
    try:
        model_cfg = NetworkConfig.from_dict(model_d)
    except TypeError as e:
        raise errors.ConfigError(f"model config: {e}")
    train_d = dict(cfg.get("train", {}))
    if getattr(args, "skip_pretrain", False):
        train_d["skip_pretrain"] = True
    train_cfg = TrainConfig.from_dict(train_d)
    fe_d = dict(cfg.get("frontend", {}))
    fe_d.setdefault("t_bins", model_cfg.T)
    frontend_cfg = FrontendCfg(**fe_d)
    return model_cfg, train_cfg, frontend_cfg


def _write_run_manifest(out_dir, command, args, cfg):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"command": command,
                "seed": getattr(args, "seed", None),
                "config": cfg,
                "argv": sys.argv[1:]}
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _frontend_for(model_cfg):
    """Feature settings implied by a checkpointed model configuration."""
    return FrontendCfg(t_bins=model_cfg.T, out_hw=model_cfg.visual_input[1])


def _load_split(data_dir, split, frontend_cfg):
    manifest = os.path.join(data_dir, split, "manifest.jsonl")
    if not os.path.exists(manifest):
        raise errors.ConfigError(f"no manifest at {manifest}")
    samples = read_manifest(manifest)
    return samples, CachedDataset(samples, FeaturePipeline(frontend_cfg))


def cmd_synth_data(args):
    cfg = load_config(args.config)
    spec_d = dict(cfg.get("synth", {}))
    spec = SynthSpec(**spec_d)
    train, test = synth_dataset(spec, args.seed)
    _write_run_manifest(args.out, "synth-data", args,
                        {"synth": spec.as_dict()})
    write_dataset(train, os.path.join(args.out, "train"))
    write_dataset(test, os.path.join(args.out, "test"))
    print(json.dumps({"train_samples": len(train),
                      "test_samples": len(test), "out": args.out}))
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    model_cfg, train_cfg, fe_cfg = build_configs(cfg, args)
    _, train_ds = _load_split(args.data, "train", fe_cfg)
    _, test_ds = _load_split(args.data, "test", fe_cfg)
    _write_run_manifest(args.out, "train", args,
                        {"model": model_cfg.as_dict(),
                         "train": train_cfg.as_dict()})
    log_path = os.path.join(args.out, "train_log.jsonl")
    if model_cfg.fusion_mode == "hi_avsnn":
        model, hist = training.run_pipeline(
            model_cfg, train_cfg, train_ds, test_ds, args.seed,
            out_dir=args.out, log_path=log_path)
        acc = hist.get("test_accuracy")
    else:
        model = AvsnnModel(model_cfg, seed=args.seed)
        training.train_model(model, train_ds, train_cfg,
                             train_cfg.lr_pretrain, train_cfg.epochs_pretrain,
                             args.seed, log_path,
                             phase=model_cfg.fusion_mode)
        model.save(os.path.join(args.out, f"{model_cfg.fusion_mode}.ckpt"),
                   {"seed": args.seed})
        acc = training.evaluate(model, test_ds)
    print(json.dumps({"test_accuracy": acc, "out": args.out}))
    return 0


def _dataset_with_noise(samples, fe_cfg, snr_db, seed):
    """Apply babble mixing (other samples as interference) before features."""
    if snr_db is None:
        return CachedDataset(samples, FeaturePipeline(fe_cfg))
    rng = np.random.default_rng(seed)
    noisy = []
    for i, s in enumerate(samples):
        others = rng.choice(len(samples), size=6, replace=False)
        babble = np.zeros(len(s.wave.samples))
        for j in others:
            src = samples[int(j)].wave.samples
            reps = int(np.ceil(len(babble) / len(src)))
            babble += np.tile(src, reps)[:len(babble)]
        mixed = mix_at_snr(s.wave, AudioWave(babble / 6.0, s.wave.rate),
                           snr_db)
        noisy.append(dataclasses.replace(s, wave=mixed))
    return CachedDataset(noisy, FeaturePipeline(fe_cfg))


def cmd_eval(args):
    model, _ = AvsnnModel.load(args.ckpt)
    model.eval()
    fe_cfg = _frontend_for(model.cfg)
    samples, _ = _load_split(args.data, args.split, fe_cfg)
    ds = _dataset_with_noise(samples, fe_cfg, args.snr, args.seed)
    acc = training.evaluate(model, ds, upto_t=args.upto_t)
    print(json.dumps({"accuracy": acc, "snr_db": args.snr,
                      "upto_t": args.upto_t, "samples": len(ds)}))
    return 0


def cmd_energy(args):
    model, _ = AvsnnModel.load(args.ckpt)
    model.eval()
    fe_cfg = _frontend_for(model.cfg)
    samples, ds = _load_split(args.data, args.split, fe_cfg)
    idx = args.index
    voxels = ds.voxels(idx, train=False)
    frames = ds.frames[idx]
    needs_v = model.cfg.fusion_mode != "audio_only"
    needs_a = model.cfg.fusion_mode != "visual_only"
    report = analysis.estimate_energy(
        model, voxels if needs_v else None, frames if needs_a else None)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "energy.json"), "w") as f:
            f.write(report.as_json())
        with open(os.path.join(args.out, "energy.txt"), "w") as f:
            f.write(report.as_text() + "\n")
    print(report.as_text())
    return 0


def cmd_causality(args):
    model, _ = AvsnnModel.load(args.ckpt)
    model.eval()
    fe_cfg = _frontend_for(model.cfg)
    if args.data:
        samples, _ = _load_split(args.data, args.split, fe_cfg)
        sample = samples[args.index]
    else:
        spec = SynthSpec(train_per_class=1, test_per_class=0)
        sample = synth_dataset(spec, args.seed)[0][args.index]
    pipeline = FeaturePipeline(fe_cfg)
    verdict = analysis.verify_causality(
        model, sample, pipeline, trials=args.trials,
        rng=np.random.default_rng(args.seed))
    print(json.dumps({"passed": verdict.passed,
                      "first_violation": verdict.first_violation,
                      "probes": verdict.probes, "trials": verdict.trials}))
    return 0 if verdict.passed else 1


def cmd_curve(args):
    model, _ = AvsnnModel.load(args.ckpt)
    model.eval()
    fe_cfg = _frontend_for(model.cfg)
    _, ds = _load_split(args.data, args.split, fe_cfg)
    curve = analysis.accuracy_over_time(model, ds)
    csv = analysis.curve_as_csv(curve)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "curve.csv"), "w") as f:
            f.write(csv)
    print(csv, end="")
    return 0


def cmd_cue_ablation(args):
    """Train the fused model at the four cueing configurations and emit a
    comparison table."""
    cfg = load_config(args.config)
    model_cfg, train_cfg, fe_cfg = build_configs(cfg, args)
    _, train_ds = _load_split(args.data, "train", fe_cfg)
    _, test_ds = _load_split(args.data, "test", fe_cfg)
    _write_run_manifest(args.out, "cue-ablation", args,
                        {"model": model_cfg.as_dict(),
                         "train": train_cfg.as_dict()})
    variants = [(3,), (2, 3), (1, 2, 3), (1, 2, 3, 4)]
    rows = []
    for positions in variants:
        cued = len([p for p in positions if p in (1, 2, 3)])
        mc = dataclasses.replace(model_cfg, cue_positions=positions,
                                 n_as=cued, n_s=model_cfg.n_blocks - cued)
        log_path = os.path.join(
            args.out, "ablate_" + "".join(map(str, positions)) + ".jsonl")
        model, hist = training.run_pipeline(
            mc, train_cfg, train_ds, test_ds, args.seed,
            out_dir=None, log_path=log_path)
        rows.append({"cue_positions": list(positions),
                     "test_accuracy": hist["test_accuracy"],
                     "parameters": model.num_parameters()})
    table = [f"{'cue positions':>16s} {'accuracy':>10s} {'params':>10s}"]
    for r in rows:
        table.append(f"{str(r['cue_positions']):>16s} "
                     f"{r['test_accuracy']:>10.4f} {r['parameters']:>10d}")
    text = "\n".join(table)
    with open(os.path.join(args.out, "cue_ablation.json"), "w") as f:
        json.dump(rows, f, indent=2)
    with open(os.path.join(args.out, "cue_ablation.txt"), "w") as f:
        f.write(text + "\n")
    print(text)
    return 0


def cmd_bench(args):
    from benchmarks import bench_kernels
    bench_kernels.main()
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="spikeav",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, ckpt=False, out=False):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--config", default=None)
        if data:
            sp.add_argument("--data", required=True)
            sp.add_argument("--split", default="test",
                            choices=("train", "test"))
        if ckpt:
            sp.add_argument("--ckpt", required=True)
        if out:
            sp.add_argument("--out", required=True)

    sp = sub.add_parser("synth-data", help="generate the synthetic dataset")
    common(sp, out=True)
    sp.set_defaults(fn=cmd_synth_data)

    sp = sub.add_parser("train", help="train a model (fused runs the "
                        "pretrain/finetune pipeline)")
    common(sp, out=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--fusion-mode", default=None,
                    choices=("hi_avsnn", "concat_baseline", "audio_only",
                             "visual_only"))
    sp.add_argument("--cue-positions", default=None,
                    help="comma list from {1,2,3,4}")
    sp.add_argument("--skip-pretrain", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="accuracy of a checkpoint on a split")
    common(sp, data=True, ckpt=True)
    sp.add_argument("--snr", type=float, default=None,
                    help="mix babble noise at this SNR (dB) before features")
    sp.add_argument("--upto-t", type=int, default=None)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("energy", help="estimate energy for one forward")
    common(sp, data=True, ckpt=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_energy)

    sp = sub.add_parser("causality", help="verify causal processing; exits "
                        "nonzero on violation")
    common(sp, ckpt=True)
    sp.add_argument("--data", default=None)
    sp.add_argument("--split", default="test", choices=("train", "test"))
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--trials", type=int, default=20)
    sp.set_defaults(fn=cmd_causality)

    sp = sub.add_parser("curve", help="recognition accuracy over time")
    common(sp, data=True, ckpt=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_curve)

    sp = sub.add_parser("cue-ablation", help="compare cueing positions")
    common(sp, out=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_cue_ablation)

    sp = sub.add_parser("bench", help="compare kernel backends")
    sp.set_defaults(fn=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except errors.SpikeavError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1
    except OSError as e:
        print(json.dumps({"error": "OSError", "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
