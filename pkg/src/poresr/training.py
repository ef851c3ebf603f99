"""Training orchestration: verifier, SR and pore-detector pretraining, and
the two-phase joint procedure, with deterministic resumable checkpoints.

Every procedure consumes an explicit TrainState whose numpy generator drives
the data order, so a run resumed from a checkpoint replays exactly the same
batches as an uninterrupted one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoints, networks
from .checkpoints import CheckpointError, load_checkpoint, save_checkpoint
from .imagedata import TrainingSample
from .losses import (
    LossWeights,
    adversarial_losses,
    generator_adversarial_loss,
    mse_loss,
    perceptual_loss,
    pore_loss,
    ridge_loss,
    total_generator_loss,
)

LOG_FIELDS = ("step", "epoch", "loss", "value")


@dataclass
class TrainConfig:
    """Hyperparameters for all training phases.

    `adam_beta` and `adam_momentum` are the paper-style names for the Adam
    moment decays of the SR generator/discriminator pair: beta is the first
    moment (0.5, the usual adversarial choice), momentum the second (0.9).
    The pore detector and verifier use the conventional (0.9, 0.999).
    """

    batch_size: int = 64
    sr_lr: float = 1e-4
    pore_lr: float = 1e-3
    verifier_lr: float = 1e-4
    adam_beta: float = 0.5
    adam_momentum: float = 0.9
    sr_epochs: int = 20
    pore_epochs: int = 30
    verifier_epochs: int = 20
    joint_phase1_epochs: int = 20
    joint_phase2_epochs: int = 20
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    device: str = "cpu"
    contrastive_margin: float = 1.0
    grad_clip_norm: Optional[float] = 5.0
    d_steps_per_g: int = 1
    saturating_adversarial: bool = False
    freeze_pore_in_phase1: bool = True
    perceptual_layer: Optional[str] = None
    ridge_layers: Optional[Tuple[str, ...]] = None
    verifier_pairs_per_class: int = 64

    def __post_init__(self):
        for name in ("sr_lr", "pore_lr", "verifier_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("sr_epochs", "pore_epochs", "verifier_epochs",
                     "joint_phase1_epochs", "joint_phase2_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if self.contrastive_margin <= 0:
            raise ValueError("contrastive_margin must be positive")
        if self.verifier_pairs_per_class < 1:
            raise ValueError("verifier_pairs_per_class must be >= 1")


@dataclass
class TrainState:
    """Everything a phase mutates: weights, optimizer moments, counters,
    the data-order RNG and the structured loss log."""

    models: Dict[str, nn.Module]
    optimizers: Dict[str, torch.optim.Optimizer]
    epoch: int = 0
    global_step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    loss_records: List[dict] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)

    def bump(self, counter: str):
        self.counters[counter] = self.counters.get(counter, 0) + 1


# ---------------------------------------------------------------------------
# model/optimizer construction


def build_models(
    cfg: TrainConfig,
    generator_spec: networks.GeneratorSpec = None,
    discriminator_spec: networks.DiscriminatorSpec = None,
    verifier_spec: networks.VerifierSpec = None,
    pore_spec: networks.PoreDetectorSpec = None,
) -> Dict[str, nn.Module]:
    """Seeded construction of the four trainable networks, in a fixed order
    so weight initialization is reproducible."""
    torch.manual_seed(cfg.seed)
    models = {
        "generator": networks.SRGenerator(generator_spec or networks.GeneratorSpec()),
        "discriminator": networks.QualityDiscriminator(
            discriminator_spec or networks.DiscriminatorSpec()
        ),
        "verifier": networks.SiameseVerifier(verifier_spec or networks.VerifierSpec()),
        "pore_detector": networks.PoreDetector(pore_spec or networks.PoreDetectorSpec()),
    }
    for m in models.values():
        m.to(cfg.device)
    return models


def _gan_adam(cfg: TrainConfig, module: nn.Module) -> torch.optim.Adam:
    return torch.optim.Adam(module.parameters(), lr=cfg.sr_lr,
                            betas=(cfg.adam_beta, cfg.adam_momentum))


def make_state(models: Dict[str, nn.Module], cfg: TrainConfig) -> TrainState:
    optimizers = {}
    if "generator" in models:
        optimizers["generator"] = _gan_adam(cfg, models["generator"])
    if "discriminator" in models:
        optimizers["discriminator"] = _gan_adam(cfg, models["discriminator"])
    if "pore_detector" in models:
        optimizers["pore_detector"] = torch.optim.Adam(
            models["pore_detector"].parameters(), lr=cfg.pore_lr
        )
    if "verifier" in models and any(
        p.requires_grad for p in models["verifier"].parameters()
    ):
        optimizers["verifier"] = torch.optim.Adam(
            models["verifier"].parameters(), lr=cfg.verifier_lr
        )
    return TrainState(models=models, optimizers=optimizers,
                      rng=np.random.default_rng(cfg.seed))


# ---------------------------------------------------------------------------
# data plumbing


def samples_to_tensors(
    samples: Sequence[TrainingSample], device: str = "cpu"
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack a sample list into (lr, hr, pore_map) float32 batches."""
    if not samples:
        raise ValueError("empty dataset")
    lr = torch.tensor(
        np.stack([s.lr_patch.pixels for s in samples])[:, None], dtype=torch.float32
    )
    hr = torch.tensor(
        np.stack([s.hr_patch.pixels for s in samples])[:, None], dtype=torch.float32
    )
    maps = torch.tensor(
        np.stack([s.hr_pore_map.values for s in samples])[:, None], dtype=torch.float32
    )
    return lr.to(device), hr.to(device), maps.to(device)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield torch.from_numpy(perm[start : start + batch_size].copy())


def nn_upsample(x: torch.Tensor, scale: int = 2) -> torch.Tensor:
    """Nearest-neighbor upsampling used to feed LR patches to HR-sized nets."""
    return F.interpolate(x, scale_factor=scale, mode="nearest")


def make_verifier_pairs(
    samples: Sequence[TrainingSample],
    rng: np.random.Generator,
    pairs_per_class: int,
) -> List[Tuple[torch.Tensor, torch.Tensor, int]]:
    """Same/different-subject pairs of nearest-neighbor upsampled LR patches.

    Labels are 1 for same-subject pairs, 0 for different subjects.
    """
    by_subject: Dict[str, List[int]] = {}
    for k, s in enumerate(samples):
        sid = s.hr_patch.subject_id
        if sid is None:
            raise ValueError("verifier pairs need subject_id on every sample")
        by_subject.setdefault(sid, []).append(k)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        raise ValueError("need at least two subjects for contrastive pairs")
    lr, _, _ = samples_to_tensors(samples)
    up = nn_upsample(lr)

    pairs = []
    multi = [s for s in subjects if len(by_subject[s]) >= 2]
    if not multi:
        raise ValueError("need a subject with at least two patches")
    for _ in range(pairs_per_class):
        sid = multi[rng.integers(len(multi))]
        i, j = rng.choice(by_subject[sid], size=2, replace=False)
        pairs.append((up[i], up[j], 1))
    for _ in range(pairs_per_class):
        sa, sb = rng.choice(len(subjects), size=2, replace=False)
        i = by_subject[subjects[sa]][rng.integers(len(by_subject[subjects[sa]]))]
        j = by_subject[subjects[sb]][rng.integers(len(by_subject[subjects[sb]]))]
        pairs.append((up[i], up[j], 0))
    return pairs


# ---------------------------------------------------------------------------
# logging helpers


def _log(state: TrainState, values: Dict[str, float]):
    for name, value in values.items():
        state.loss_records.append(
            {"step": int(state.global_step), "epoch": int(state.epoch),
             "loss": str(name), "value": float(value)}
        )


def weighted_total(parts: Dict[str, float], w: LossWeights) -> float:
    """The logged total: evaluated in this exact order so the bookkeeping
    invariant (total == weighted sum of logged parts) is reproducible."""
    return (
        w.mse * parts["mse"]
        + w.adversarial * parts["adversarial"]
        + w.perceptual * parts["perceptual"]
        + w.ridge * parts["ridge"]
        + w.pore * parts["pore"]
    )


def _require_finite(parts: Dict[str, float], state: TrainState, phase: str):
    bad = {k: v for k, v in parts.items() if not np.isfinite(v)}
    if bad:
        raise RuntimeError(
            f"non-finite loss during {phase} at step {state.global_step}: "
            f"{bad} (all parts: {parts})"
        )


def write_training_log(records: Sequence[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in records:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# contrastive loss


def contrastive_loss(
    emb_a: torch.Tensor, emb_b: torch.Tensor, labels: torch.Tensor,
    margin: float = 1.0,
) -> torch.Tensor:
    """Mean of y·d^2 + (1-y)·max(0, margin - d)^2 over the pair batch."""
    d = torch.norm(emb_a - emb_b, dim=1)
    y = labels.to(emb_a.dtype)
    return torch.mean(y * d**2 + (1.0 - y) * torch.clamp(margin - d, min=0.0) ** 2)


# ---------------------------------------------------------------------------
# shared step helpers


def _clip_and_step(cfg: TrainConfig, module: nn.Module, opt: torch.optim.Optimizer):
    if cfg.grad_clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(
            [p for p in module.parameters() if p.requires_grad], cfg.grad_clip_norm
        )
    opt.step()


def _verifier_taps(verifier: nn.Module, x: torch.Tensor) -> List[torch.Tensor]:
    _, taps = verifier(x)
    return taps


def _discriminator_step(
    state: TrainState, cfg: TrainConfig, lr: torch.Tensor, hr: torch.Tensor
) -> float:
    g = state.models["generator"]
    d = state.models["discriminator"]
    v = state.models["verifier"]
    with torch.no_grad():
        sr = g(lr)
        taps_real = _verifier_taps(v, hr)
        taps_fake = _verifier_taps(v, sr)
    d_real = d(lr, hr, taps_real)
    d_fake = d(lr, sr, taps_fake)
    _, d_loss = adversarial_losses(d_real, d_fake, cfg.saturating_adversarial)
    state.optimizers["discriminator"].zero_grad()
    d_loss.backward()
    _clip_and_step(cfg, d, state.optimizers["discriminator"])
    state.bump("d_steps")
    return float(d_loss.detach())


def _generator_step(
    state: TrainState,
    cfg: TrainConfig,
    extractor: networks.PerceptualExtractor,
    lr: torch.Tensor,
    hr: torch.Tensor,
    maps: Optional[torch.Tensor],
    with_pore_terms: bool,
) -> Dict[str, float]:
    g = state.models["generator"]
    d = state.models["discriminator"]
    v = state.models["verifier"]
    w = cfg.loss_weights

    sr = g(lr)
    d_fake = d(lr, sr, _verifier_taps(v, sr))
    mse = mse_loss(sr, hr)
    adv = generator_adversarial_loss(d_fake, cfg.saturating_adversarial)
    per = perceptual_loss(sr, hr, extractor, cfg.perceptual_layer)
    zero = sr.new_zeros(())
    if with_pore_terms:
        ridge = ridge_loss(sr, hr, extractor, cfg.ridge_layers)
        pore = pore_loss(state.models["pore_detector"](sr), maps)
        phase_w = w
    else:
        ridge = zero
        pore = zero
        phase_w = replace(w, ridge=0.0, pore=0.0)
    total = total_generator_loss(mse, adv, per, ridge, pore, phase_w)

    state.optimizers["generator"].zero_grad()
    total.backward()
    _clip_and_step(cfg, g, state.optimizers["generator"])
    state.bump("g_steps")

    parts = {
        "mse": float(mse.detach()),
        "adversarial": float(adv.detach()),
        "perceptual": float(per.detach()),
        "ridge": float(ridge.detach()),
        "pore": float(pore.detach()),
    }
    parts["total"] = weighted_total(parts, w)
    return parts


def _maybe_checkpoint(state: TrainState, directory, tag: str):
    if directory is not None:
        save_checkpoint(state, Path(directory) / f"{tag}_{state.epoch:04d}")


# ---------------------------------------------------------------------------
# phase drivers


def pretrain_sr(
    data: Sequence[TrainingSample],
    cfg: TrainConfig,
    extractor: networks.PerceptualExtractor,
    verifier: Optional[nn.Module] = None,
    state: Optional[TrainState] = None,
    epochs: Optional[int] = None,
    checkpoint_dir=None,
) -> TrainState:
    """Adversarial SR pretraining: generator and discriminator optimized with
    the reconstruction, adversarial and perceptual terms only; the verifier
    (normally the contrastively pretrained one) is a frozen feature source;
    one checkpoint per finished epoch."""
    lr_all, hr_all, _ = samples_to_tensors(data, cfg.device)
    if state is None:
        models = build_models(cfg)
        sub = {
            "generator": models["generator"],
            "discriminator": models["discriminator"],
            "verifier": verifier if verifier is not None else models["verifier"],
        }
        for p in sub["verifier"].parameters():
            p.requires_grad_(False)
        state = make_state(sub, cfg)
    for p in state.models["verifier"].parameters():
        p.requires_grad_(False)
    target = cfg.sr_epochs if epochs is None else epochs
    while state.epoch < target:
        for idx in _epoch_batches(len(data), cfg.batch_size, state.rng):
            lr, hr = lr_all[idx], hr_all[idx]
            d_loss = 0.0
            for _ in range(cfg.d_steps_per_g):
                d_loss = _discriminator_step(state, cfg, lr, hr)
            parts = _generator_step(state, cfg, extractor, lr, hr, None, False)
            parts["d_adversarial"] = d_loss
            _require_finite(parts, state, "sr-pretrain")
            _log(state, parts)
            state.global_step += 1
        state.epoch += 1
        _maybe_checkpoint(state, checkpoint_dir, "sr")
    return state


def pretrain_pore(
    data: Sequence[TrainingSample],
    cfg: TrainConfig,
    state: Optional[TrainState] = None,
    epochs: Optional[int] = None,
    checkpoint_dir=None,
) -> TrainState:
    """Supervised pore-detector pretraining on real HR patches and their
    rendered ground-truth maps; logs one `pore` row per step."""
    _, hr_all, map_all = samples_to_tensors(data, cfg.device)
    if state is None:
        models = build_models(cfg)
        state = make_state({"pore_detector": models["pore_detector"]}, cfg)
    p_net = state.models["pore_detector"]
    opt = state.optimizers["pore_detector"]
    target = cfg.pore_epochs if epochs is None else epochs
    while state.epoch < target:
        for idx in _epoch_batches(len(data), cfg.batch_size, state.rng):
            hr, maps = hr_all[idx], map_all[idx]
            loss = pore_loss(p_net(hr), maps)
            opt.zero_grad()
            loss.backward()
            _clip_and_step(cfg, p_net, opt)
            state.bump("p_steps")
            parts = {"pore": float(loss.detach())}
            _require_finite(parts, state, "pore-pretrain")
            _log(state, parts)
            state.global_step += 1
        state.epoch += 1
        _maybe_checkpoint(state, checkpoint_dir, "pore")
    return state


def train_verifier(
    pairs: Sequence[Tuple[torch.Tensor, torch.Tensor, int]],
    cfg: TrainConfig,
    state: Optional[TrainState] = None,
    epochs: Optional[int] = None,
    checkpoint_dir=None,
) -> TrainState:
    """Contrastive training of the Siamese verifier on labeled patch pairs."""
    if not pairs:
        raise ValueError("empty pair list")
    labels = {int(lbl) for _, _, lbl in pairs}
    if labels != {0, 1}:
        raise ValueError(
            f"need both same and different pairs, got labels {sorted(labels)}"
        )
    a_all = torch.stack([a for a, _, _ in pairs]).to(cfg.device)
    b_all = torch.stack([b for _, b, _ in pairs]).to(cfg.device)
    y_all = torch.tensor([lbl for _, _, lbl in pairs], dtype=torch.float32,
                         device=cfg.device)
    if state is None:
        models = build_models(cfg)
        state = make_state({"verifier": models["verifier"]}, cfg)
    v = state.models["verifier"]
    opt = state.optimizers["verifier"]
    target = cfg.verifier_epochs if epochs is None else epochs
    while state.epoch < target:
        for idx in _epoch_batches(len(pairs), cfg.batch_size, state.rng):
            ea, _ = v(a_all[idx])
            eb, _ = v(b_all[idx])
            loss = contrastive_loss(ea, eb, y_all[idx], cfg.contrastive_margin)
            opt.zero_grad()
            loss.backward()
            _clip_and_step(cfg, v, opt)
            state.bump("v_steps")
            parts = {"contrastive": float(loss.detach())}
            _require_finite(parts, state, "verifier")
            _log(state, parts)
            state.global_step += 1
        state.epoch += 1
        _maybe_checkpoint(state, checkpoint_dir, "verifier")
    return state


def _check_joint_compatibility(sr_state, pore_state, verifier_state):
    v_from_sr = sr_state.models.get("verifier")
    v_trained = verifier_state.models.get("verifier")
    if v_from_sr is None or v_trained is None:
        raise CheckpointError("both SR and verifier states must carry a verifier")
    if networks.architecture_hash(v_from_sr) != networks.architecture_hash(v_trained):
        raise CheckpointError("verifier architecture differs between states")
    d = sr_state.models["discriminator"]
    if d.spec.base_width != v_trained.spec.base_width:
        raise CheckpointError(
            f"discriminator width {d.spec.base_width} cannot fuse verifier "
            f"width {v_trained.spec.base_width}"
        )
    if "pore_detector" not in pore_state.models:
        raise CheckpointError("pore state does not carry a pore detector")


def joint_train(
    data: Sequence[TrainingSample],
    pretrained: Tuple[TrainState, TrainState, TrainState],
    cfg: TrainConfig,
    extractor: networks.PerceptualExtractor,
    state: Optional[TrainState] = None,
    checkpoint_dir=None,
) -> TrainState:
    """Two-phase joint training from (sr, pore, verifier) pretrained states.

    Phase 1 (joint_phase1_epochs): the generator trains against the full
    five-term objective while the pore detector stays frozen (bitwise).
    Phase 2 (joint_phase2_epochs): the pore detector unfreezes and updates
    alternately with the discriminator and generator, fitting both real and
    generated patches. The verifier stays frozen throughout.
    """
    lr_all, hr_all, map_all = samples_to_tensors(data, cfg.device)
    if state is None:
        sr_state, pore_state, verifier_state = pretrained
        _check_joint_compatibility(sr_state, pore_state, verifier_state)
        models = {
            "generator": sr_state.models["generator"],
            "discriminator": sr_state.models["discriminator"],
            "verifier": verifier_state.models["verifier"],
            "pore_detector": pore_state.models["pore_detector"],
        }
        state = TrainState(
            models=models,
            optimizers={
                "generator": sr_state.optimizers["generator"],
                "discriminator": sr_state.optimizers["discriminator"],
                "pore_detector": pore_state.optimizers["pore_detector"],
            },
            rng=np.random.default_rng(cfg.seed),
        )
    for p in state.models["verifier"].parameters():
        p.requires_grad_(False)

    p_net = state.models["pore_detector"]
    g = state.models["generator"]
    total_epochs = cfg.joint_phase1_epochs + cfg.joint_phase2_epochs
    while state.epoch < total_epochs:
        in_phase1 = state.epoch < cfg.joint_phase1_epochs
        freeze_p = in_phase1 and cfg.freeze_pore_in_phase1
        for p in p_net.parameters():
            p.requires_grad_(not freeze_p)
        for idx in _epoch_batches(len(data), cfg.batch_size, state.rng):
            lr, hr, maps = lr_all[idx], hr_all[idx], map_all[idx]
            d_loss = 0.0
            for _ in range(cfg.d_steps_per_g):
                d_loss = _discriminator_step(state, cfg, lr, hr)
            parts = _generator_step(state, cfg, extractor, lr, hr, maps, True)
            parts["d_adversarial"] = d_loss
            if not freeze_p:
                with torch.no_grad():
                    sr = g(lr)
                p_pred_real = p_net(hr)
                p_pred_sr = p_net(sr)
                p_loss = pore_loss(p_pred_real, maps) + pore_loss(p_pred_sr, maps)
                state.optimizers["pore_detector"].zero_grad()
                p_loss.backward()
                _clip_and_step(cfg, p_net, state.optimizers["pore_detector"])
                state.bump("p_steps")
                parts["pore_detector"] = float(p_loss.detach())
            _require_finite(parts, state, "joint")
            _log(state, parts)
            state.global_step += 1
        state.epoch += 1
        _maybe_checkpoint(state, checkpoint_dir, "joint")
    for p in p_net.parameters():
        p.requires_grad_(True)
    return state
