"""Command-line entry points: dataset synthesis, phase training, batch
super-resolution and evaluation, all driven by one YAML experiment config.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure. Errors
print a single `error: <message>` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import shutil
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from . import checkpoints, matcher, networks, poreeval, quality, synthgen, training
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .imagedata import (
    FingerprintImage,
    Manifest,
    PoreIntensityMap,
    PorePointSet,
    TrainingSample,
    degrade_to_lr,
    extract_patches,
    load_image,
    load_manifest,
    load_record,
    pore_sigma_for_ppi,
    render_pore_map,
    save_image,
)

PHASES = ("verifier", "sr", "pore", "joint")
CONDITIONS = ("hr", "sr", "lr")


# ---------------------------------------------------------------------------
# shared plumbing


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "output", None):
        cfg.output_dir = args.output
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
        if cfg.dataset.synth is not None:
            cfg.dataset.synth = dataclasses.replace(
                cfg.dataset.synth, orientation_seed=seed
            )
    device = getattr(args, "device", None)
    if device:
        cfg.train = dataclasses.replace(cfg.train, device=device)
    return cfg


def _archive_config(args, cfg: ExperimentConfig, out_dir: Path) -> None:
    """Copy the config file verbatim into the run directory, plus the
    resolved form after CLI overrides."""
    out_dir.mkdir(parents=True, exist_ok=True)
    src = Path(args.config)
    dst = out_dir / "config.yaml"
    if src.resolve() != dst.resolve():
        shutil.copyfile(src, dst)
    save_config(cfg, out_dir / "config.resolved.yaml")


def ensure_dataset(cfg: ExperimentConfig, out_dir: Path) -> Manifest:
    """Load the configured manifest, or synthesize into out_dir/dataset once."""
    ds = cfg.dataset
    if ds.manifest is not None:
        path = Path(ds.manifest)
        if not path.exists():
            raise ConfigError(f"no such manifest: {path}")
        return load_manifest(path)
    target = out_dir / "dataset"
    manifest_path = target / "manifest.json"
    if manifest_path.exists():
        return load_manifest(manifest_path)
    return synthgen.generate_dataset(ds.synth, target)


def build_samples(manifest: Manifest, cfg: ExperimentConfig) -> List[TrainingSample]:
    """Cut every record into aligned (LR, HR, pore map) training triples."""
    ds = cfg.dataset
    samples = []
    for rec in manifest.records:
        img, pores = load_record(manifest, rec)
        sigma = pore_sigma_for_ppi(img.ppi)
        patches = extract_patches(
            img, pores, ds.patch_h, ds.patch_w, (ds.patch_stride, ds.patch_stride)
        )
        for patch, local in patches:
            pmap = render_pore_map(local, sigma)
            samples.append(TrainingSample(degrade_to_lr(patch), patch, pmap))
    if not samples:
        raise ConfigError("dataset produced no training patches")
    return samples


def _phase_dir(out_dir: Path, phase: str) -> Path:
    return out_dir / "checkpoints" / phase


def _final_dir(out_dir: Path, phase: str) -> Path:
    return _phase_dir(out_dir, phase) / "final"


def _load_final(out_dir: Path, phase: str):
    d = _final_dir(out_dir, phase)
    if not d.exists():
        raise ConfigError(
            f"missing '{phase}' checkpoint at {d}; run \"train --phase {phase}\" first"
        )
    return checkpoints.load_checkpoint(d)


def _to_tensor(img: FingerprintImage, device: str) -> torch.Tensor:
    arr = img.pixels.astype(np.float32)[None, None]
    return torch.from_numpy(arr).to(device)


def _detect_pores(net: torch.nn.Module, img: FingerprintImage,
                  device: str) -> PoreIntensityMap:
    # the detector's head already ends in a sigmoid
    with torch.no_grad():
        probs = net(_to_tensor(img, device))[0, 0].cpu().numpy().astype(np.float64)
    return PoreIntensityMap(np.clip(probs, 0.0, 1.0))


def _generate_sr(gen: torch.nn.Module, lr: FingerprintImage,
                 device: str) -> FingerprintImage:
    with torch.no_grad():
        y = gen(_to_tensor(lr, device))[0, 0].cpu().numpy().astype(np.float64)
    return FingerprintImage(
        np.clip(y, 0.0, 1.0),
        ppi=lr.ppi * 2,
        subject_id=lr.subject_id,
        session_id=lr.session_id,
    )


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> None:
    cfg = _load_cfg(args)
    if cfg.dataset.synth is None:
        raise ConfigError("'synth' needs a dataset.synth section in the config")
    out = Path(args.output) if args.output else Path(cfg.output_dir) / "dataset"
    manifest = synthgen.generate_dataset(cfg.dataset.synth, out)
    print(str(manifest.base_dir / "manifest.json"))


# ---------------------------------------------------------------------------
# train


def _check_fusion_widths(cfg: ExperimentConfig) -> None:
    nc = cfg.networks
    if nc.discriminator.base_width != nc.verifier.base_width:
        raise ConfigError(
            "discriminator.base_width must equal verifier.base_width "
            f"({nc.discriminator.base_width} vs {nc.verifier.base_width}); "
            "the discriminator fuses verifier feature taps channel-wise"
        )
    if tuple(nc.discriminator.input_hw) != (cfg.dataset.patch_h, cfg.dataset.patch_w):
        raise ConfigError(
            f"discriminator.input_hw {tuple(nc.discriminator.input_hw)} must equal "
            f"the dataset patch size ({cfg.dataset.patch_h}, {cfg.dataset.patch_w})"
        )


def _joint_epoch_override(tc: training.TrainConfig, total: int) -> training.TrainConfig:
    """Interpret --epochs for the joint phase as a cumulative total; phase 1
    keeps its configured length unless the total is smaller."""
    p1 = min(total, tc.joint_phase1_epochs)
    return dataclasses.replace(
        tc, joint_phase1_epochs=p1, joint_phase2_epochs=total - p1
    )


def cmd_train(args) -> None:
    cfg = _load_cfg(args)
    if args.epochs is not None and args.epochs < 0:
        raise ConfigError(f"--epochs must be >= 0, got {args.epochs}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _archive_config(args, cfg, out)
    manifest = ensure_dataset(cfg, out)
    samples = build_samples(manifest, cfg)

    tc = cfg.train
    nc = cfg.networks
    phase = args.phase
    ckpt_dir = _phase_dir(out, phase)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_dir = out / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)

    resume_state = None
    if args.resume:
        resume_state = checkpoints.load_checkpoint(Path(args.resume))

    if phase == "verifier":
        state = resume_state
        if state is None:
            models = training.build_models(
                tc, nc.generator, nc.discriminator, nc.verifier, nc.pore_detector
            )
            state = training.make_state({"verifier": models["verifier"]}, tc)
        pairs = training.make_verifier_pairs(
            samples, np.random.default_rng(tc.seed), tc.verifier_pairs_per_class
        )
        state = training.train_verifier(
            pairs, tc, state=state, epochs=args.epochs, checkpoint_dir=ckpt_dir
        )
    elif phase == "sr":
        _check_fusion_widths(cfg)
        extractor = networks.PerceptualExtractor(nc.extractor).to(tc.device)
        state = resume_state
        if state is None:
            v_state = _load_final(out, "verifier")
            models = training.build_models(
                tc, nc.generator, nc.discriminator, nc.verifier, nc.pore_detector
            )
            sub = {
                "generator": models["generator"],
                "discriminator": models["discriminator"],
                "verifier": v_state.models["verifier"],
            }
            for p in sub["verifier"].parameters():
                p.requires_grad_(False)
            state = training.make_state(sub, tc)
        state = training.pretrain_sr(
            samples, tc, extractor, state=state, epochs=args.epochs,
            checkpoint_dir=ckpt_dir,
        )
    elif phase == "pore":
        state = resume_state
        if state is None:
            models = training.build_models(
                tc, nc.generator, nc.discriminator, nc.verifier, nc.pore_detector
            )
            state = training.make_state({"pore_detector": models["pore_detector"]}, tc)
        state = training.pretrain_pore(
            samples, tc, state=state, epochs=args.epochs, checkpoint_dir=ckpt_dir
        )
    else:
        _check_fusion_widths(cfg)
        extractor = networks.PerceptualExtractor(nc.extractor).to(tc.device)
        if args.epochs is not None:
            tc = _joint_epoch_override(tc, args.epochs)
        pretrained = None
        if resume_state is None:
            pretrained = (
                _load_final(out, "sr"),
                _load_final(out, "pore"),
                _load_final(out, "verifier"),
            )
        state = training.joint_train(
            samples, pretrained, tc, extractor, state=resume_state,
            checkpoint_dir=ckpt_dir,
        )

    final = _final_dir(out, phase)
    checkpoints.save_checkpoint(state, final)
    training.write_training_log(state.loss_records, log_dir / f"{phase}.csv")
    print(str(final))


# ---------------------------------------------------------------------------
# superresolve


def cmd_superresolve(args) -> None:
    state = checkpoints.load_checkpoint(Path(args.checkpoint))
    if "generator" not in state.models:
        raise ConfigError(f"checkpoint {args.checkpoint} has no generator")
    gen = state.models["generator"].to(args.device).eval()
    if args.reference and len(args.inputs) != 1:
        raise ConfigError("--reference requires exactly one input image")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for inp in args.inputs:
        lr = load_image(inp, ppi=args.ppi)
        sr = _generate_sr(gen, lr, args.device)
        out_path = out_dir / Path(inp).name
        save_image(sr, out_path, bits=16)
        print(str(out_path))
        if args.reference:
            ref = load_image(args.reference, ppi=sr.ppi)
            print(f"psnr_db={quality.psnr(sr, ref):.6f} "
                  f"ssim={quality.ssim(sr, ref):.6f}")


# ---------------------------------------------------------------------------
# evaluate


def _eval_checkpoint_state(args, out: Path, phases: Tuple[str, ...]):
    """Checkpoint for evaluation: explicit --checkpoint wins, else the first
    existing final checkpoint among `phases`."""
    if args.checkpoint:
        return checkpoints.load_checkpoint(Path(args.checkpoint))
    for phase in phases:
        d = _final_dir(out, phase)
        if d.exists():
            return checkpoints.load_checkpoint(d)
    raise ConfigError(
        f"no {'/'.join(phases)} checkpoint under {out / 'checkpoints'}; "
        f"run \"train --phase {phases[-1]}\" first or pass --checkpoint"
    )


def _evaluate_pores(args, cfg: ExperimentConfig, manifest: Manifest,
                    out: Path, run_dir: Path) -> None:
    ev = cfg.eval
    device = cfg.train.device
    net = None
    if args.detector == "network":
        state = _eval_checkpoint_state(args, run_dir, ("joint", "pore"))
        if "pore_detector" not in state.models:
            raise ConfigError("checkpoint has no pore_detector")
        net = state.models["pore_detector"].to(device).eval()

    maps: List[PoreIntensityMap] = []
    truths: List[PorePointSet] = []
    ids: List[str] = []
    radius = None
    for rec in manifest.records:
        img, truth = load_record(manifest, rec)
        if radius is None:
            radius = (ev.match_radius if ev.match_radius is not None
                      else poreeval.match_radius_for_ppi(img.ppi))
        if net is None:
            pmap = render_pore_map(truth, pore_sigma_for_ppi(img.ppi))
        else:
            pmap = _detect_pores(net, img, device)
        maps.append(pmap)
        truths.append(truth)
        ids.append(matcher.record_id(rec))

    rows = []
    per_image = []
    for image_id, pmap, truth in zip(ids, maps, truths):
        m = poreeval.evaluate_detection(pmap, truth, ev.threshold, ev.nms_radius, radius)
        rows.append(poreeval.metrics_row(image_id, ev.threshold, m))
        per_image.append(m)
    out.mkdir(parents=True, exist_ok=True)
    poreeval.write_metrics_csv(rows, out / "metrics.csv")
    summary = poreeval.summarize_metrics(per_image)
    summary["detector"] = args.detector
    summary["threshold"] = ev.threshold
    poreeval.write_summary_json(summary, out / "summary.json")

    sweep_rows = []
    for t in ev.sweep_thresholds:
        pooled = poreeval.summarize_metrics([
            poreeval.evaluate_detection(pmap, truth, t, ev.nms_radius, radius)
            for pmap, truth in zip(maps, truths)
        ])
        sweep_rows.append({"threshold": t, "tdr": pooled["tdr"], "fdr": pooled["fdr"],
                           "tp": pooled["tp"], "fp": pooled["fp"], "fn": pooled["fn"]})
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("threshold", "tdr", "fdr",
                                                "tp", "fp", "fn"))
        writer.writeheader()
        writer.writerows(sweep_rows)
    print(f"pores[{args.detector}]: tdr={summary['tdr']:.4f} fdr={summary['fdr']:.4f}")


def _condition_images(cond: str, manifest: Manifest, gen,
                      device: str) -> Dict[str, FingerprintImage]:
    images = {}
    for rec in manifest.records:
        hr, _ = load_record(manifest, rec)
        if cond == "hr":
            img = hr
        elif cond == "lr":
            img = degrade_to_lr(hr)
        else:
            img = _generate_sr(gen, degrade_to_lr(hr), device)
        images[matcher.record_id(rec)] = img
    return images


def evaluate_recognition_condition(
    cond: str,
    manifest: Manifest,
    images: Dict[str, FingerprintImage],
    pore_net,
    cfg: ExperimentConfig,
) -> Tuple[List[matcher.MatchScore], Dict[str, matcher.RocCurve]]:
    """Score all protocol pairs at every level for one input condition and
    fuse them; returns the flat score list plus per-level ROC curves."""
    ev = cfg.eval
    device = cfg.train.device
    minutiae: Dict[str, list] = {}
    pores: Dict[str, PorePointSet] = {}
    for rec in manifest.records:
        rid = matcher.record_id(rec)
        img = images[rid]
        try:
            minutiae[rid] = matcher.extract_minutiae(img)
        except ValueError:
            minutiae[rid] = []
        pmap = _detect_pores(pore_net, img, device)
        result = poreeval.extract_pore_coords(pmap, ev.threshold, ev.nms_radius)
        pores[rid] = result.detected

    pairs = matcher.make_pairs(manifest)
    corr_scores, minu_scores, pore_scores = [], [], []
    for probe, gallery, genuine in pairs:
        pid, gid = matcher.record_id(probe), matcher.record_id(gallery)
        key = (pid, gid)
        a, b = images[pid], images[gid]
        corr_scores.append(matcher.MatchScore(
            matcher.correlation_match_score(a, b, max_shift=ev.corr_max_shift),
            "L1L2_corr", key, genuine))
        minu_scores.append(matcher.MatchScore(
            matcher.minutiae_match_score(minutiae[pid], minutiae[gid]),
            "L2_minutiae", key, genuine))
        pore_scores.append(matcher.MatchScore(
            matcher.pore_match_score(pores[pid], a, pores[gid], b),
            "L3_pore", key, genuine))
    fused = matcher.fuse_scores([corr_scores, minu_scores, pore_scores])
    all_scores = corr_scores + minu_scores + pore_scores + fused
    curves = {
        "L1L2_corr": matcher.roc_and_eer(corr_scores),
        "L2_minutiae": matcher.roc_and_eer(minu_scores),
        "L3_pore": matcher.roc_and_eer(pore_scores),
        "fused": matcher.roc_and_eer(fused),
    }
    return all_scores, curves


def _evaluate_recognition(args, cfg: ExperimentConfig, manifest: Manifest,
                          out: Path, run_dir: Path) -> None:
    device = cfg.train.device
    conditions = cfg.eval.conditions
    gen = None
    if "sr" in conditions:
        state = _eval_checkpoint_state(args, run_dir, ("joint", "sr"))
        if "generator" not in state.models:
            raise ConfigError("checkpoint has no generator")
        gen = state.models["generator"].to(device).eval()
    p_state = _eval_checkpoint_state(args, run_dir, ("joint", "pore"))
    if "pore_detector" not in p_state.models:
        raise ConfigError("checkpoint has no pore_detector")
    pore_net = p_state.models["pore_detector"].to(device).eval()

    for cond in conditions:
        images = _condition_images(cond, manifest, gen, device)
        scores, curves = evaluate_recognition_condition(
            cond, manifest, images, pore_net, cfg
        )
        cond_dir = out / cond
        cond_dir.mkdir(parents=True, exist_ok=True)
        matcher.write_scores_csv(scores, cond_dir / "scores.csv")
        for level, curve in curves.items():
            matcher.write_roc_csv(curve, cond_dir / f"roc_{level}.csv")
        matcher.write_recognition_summary(curves, cond_dir / "summary.json")
        print(f"recognition[{cond}]: "
              + " ".join(f"{lvl}_eer={c.eer:.4f}" for lvl, c in curves.items()))


def cmd_evaluate(args) -> None:
    cfg = _load_cfg(args)
    run_dir = Path(cfg.output_dir)
    out = run_dir / "eval" / args.mode
    out.mkdir(parents=True, exist_ok=True)
    _archive_config(args, cfg, out)
    manifest = ensure_dataset(cfg, run_dir)
    if args.mode == "pores":
        _evaluate_pores(args, cfg, manifest, out, run_dir)
    else:
        _evaluate_recognition(args, cfg, manifest, out, run_dir)


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poresr",
        description="Fingerprint super-resolution and pore-detection experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment config YAML")
        p.add_argument("--seed", type=int, help="override the training/synth seed")
        p.add_argument("--output", help="override the output directory")

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one training phase")
    common(p)
    p.add_argument("--phase", required=True, choices=PHASES)
    p.add_argument("--epochs", type=int,
                   help="cumulative epoch target overriding the config")
    p.add_argument("--resume", metavar="CHECKPOINT_DIR",
                   help="continue from a saved checkpoint")
    p.add_argument("--device", help="torch device override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("superresolve", help="2x upscale images with a trained generator")
    p.add_argument("inputs", nargs="+", help="LR image files (.pgm/.png)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--ppi", type=float, default=500.0, help="input resolution")
    p.add_argument("--reference", help="HR reference for PSNR/SSIM (single input)")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_superresolve)

    p = sub.add_parser("evaluate", help="pore detection or recognition metrics")
    common(p)
    p.add_argument("--mode", required=True, choices=("pores", "recognition"))
    p.add_argument("--checkpoint", help="explicit checkpoint directory")
    p.add_argument("--detector", choices=("network", "renderer"), default="network",
                   help="pore source for mode=pores; 'renderer' replays ground truth")
    p.add_argument("--device", help="torch device override")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; the contract reserves 2 for
        # runtime failures
        return 0 if exc.code == 0 else 1
    try:
        args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
