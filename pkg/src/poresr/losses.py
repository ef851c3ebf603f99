"""The five training loss terms and their weighted total.

All losses take torch tensors shaped (n, c, h, w) and return 0-d tensors, so
gradients flow to whichever side requires them. Probabilities entering the
adversarial terms are clamped to [eps, 1-eps] with eps = 1e-7 to keep the
logs finite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import torch

from .networks import PerceptualExtractor

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    """Weights on (mse, adversarial, perceptual, ridge, pore), in that order."""

    mse: float = 1e-3
    adversarial: float = 1e-3
    perceptual: float = 1e-3
    ridge: float = 1e-2
    pore: float = 1e-2

    def __post_init__(self):
        for name in ("mse", "adversarial", "perceptual", "ridge", "pore"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be non-negative")


@dataclass
class GramMatrix:
    """Channel inner-product matrix of one feature map, exactly symmetric."""

    values: torch.Tensor
    layer: str = ""

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"expected a square matrix, got {tuple(v.shape)}")
        if not torch.equal(v, v.transpose(0, 1)):
            raise ValueError("Gram matrix must be symmetric")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_loss(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    """Mean over batch of per-image mean squared pixel difference."""
    _check_same_shape(sr, hr)
    return torch.mean((sr - hr) ** 2)


def generator_adversarial_loss(
    d_fake: torch.Tensor, saturating: bool = False
) -> torch.Tensor:
    """Generator objective from discriminator scores on generated samples:
    non-saturating -mean log d_fake by default, mean log(1 - d_fake) when
    `saturating` requests the literal minimized form."""
    fake = torch.clamp(d_fake, PROB_EPS, 1.0 - PROB_EPS)
    if saturating:
        return torch.mean(torch.log(1.0 - fake))
    return -torch.mean(torch.log(fake))


def adversarial_losses(
    d_real: torch.Tensor, d_fake: torch.Tensor, saturating: bool = False
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator objectives from probability batches.

    d_loss = -mean log d_real - mean log(1 - d_fake). The generator term
    defaults to the non-saturating -mean log d_fake; set `saturating` for the
    literal mean log(1 - d_fake) minimized form.
    """
    real = torch.clamp(d_real, PROB_EPS, 1.0 - PROB_EPS)
    fake = torch.clamp(d_fake, PROB_EPS, 1.0 - PROB_EPS)
    d_loss = -torch.mean(torch.log(real)) - torch.mean(torch.log(1.0 - fake))
    return generator_adversarial_loss(d_fake, saturating), d_loss


def perceptual_loss(
    sr: torch.Tensor,
    hr: torch.Tensor,
    extractor: PerceptualExtractor,
    layer: Optional[str] = None,
) -> torch.Tensor:
    """Mean squared difference of named-layer features of the two batches."""
    _check_same_shape(sr, hr)
    f_sr = extractor(sr, layer)
    f_hr = extractor(hr, layer)
    return torch.mean((f_sr - f_hr) ** 2)


def gram_matrix(features: torch.Tensor, layer: str = "") -> GramMatrix:
    """G[c, c'] = sum_{w,h} f[c]·f[c'] / (C·W·H) for one C x W x H map.

    The product is symmetrized as (M + M^T)/2, which is exact because the two
    addends are elementwise transposes of each other.
    """
    if features.ndim != 3 or features.numel() == 0:
        raise ValueError(f"expected non-empty (C, W, H) features, got {tuple(features.shape)}")
    c = features.shape[0]
    flat = features.reshape(c, -1)
    m = flat @ flat.transpose(0, 1)
    sym = (m + m.transpose(0, 1)) / 2.0
    return GramMatrix(sym / features.numel(), layer=layer)


def batch_gram(features: torch.Tensor) -> torch.Tensor:
    """Batch-averaged Gram matrix of (n, C, W, H) features."""
    if features.ndim != 4 or features.numel() == 0:
        raise ValueError(f"expected non-empty (n, C, W, H) features, got {tuple(features.shape)}")
    n, c = features.shape[0], features.shape[1]
    flat = features.reshape(n, c, -1)
    m = torch.matmul(flat, flat.transpose(1, 2)).mean(dim=0)
    sym = (m + m.transpose(0, 1)) / 2.0
    return sym / (features.numel() // n)


def ridge_loss(
    sr: torch.Tensor,
    hr: torch.Tensor,
    extractor: PerceptualExtractor,
    layers: Optional[Sequence[str]] = None,
) -> torch.Tensor:
    """Sum over layers of squared Frobenius distance between batch-averaged
    Gram matrices of the two batches."""
    _check_same_shape(sr, hr)
    if layers is None:
        layers = [extractor.spec.default_layer]
    total = sr.new_zeros(())
    for layer in layers:
        g_sr = batch_gram(extractor(sr, layer))
        g_hr = batch_gram(extractor(hr, layer))
        total = total + torch.sum((g_sr - g_hr) ** 2)
    return total


def pore_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-pixel-normalized L1 distance between pore-map batches.

    The raw per-image L1 norm is divided by W·H (and averaged over the
    batch), so the value is resolution independent; multiply by W·H to
    recover the unnormalized per-image norm.
    """
    _check_same_shape(pred, target)
    return torch.mean(torch.abs(pred - target))


def total_generator_loss(
    mse: torch.Tensor,
    adversarial: torch.Tensor,
    perceptual: torch.Tensor,
    ridge: torch.Tensor,
    pore: torch.Tensor,
    weights: LossWeights = LossWeights(),
) -> torch.Tensor:
    parts = {"mse": mse, "adversarial": adversarial, "perceptual": perceptual,
             "ridge": ridge, "pore": pore}
    for name, value in parts.items():
        v = torch.as_tensor(value)
        if not torch.all(torch.isfinite(v)):
            raise ValueError(f"loss part {name} is not finite")
    return (
        weights.mse * mse
        + weights.adversarial * adversarial
        + weights.perceptual * perceptual
        + weights.ridge * ridge
        + weights.pore * pore
    )


# ---------------------------------------------------------------------------
# structured loss logging


def append_loss_records(
    records: List[dict], step: int, values: dict
) -> List[dict]:
    """Append one (step, name, value) row per named loss value."""
    for name, value in values.items():
        records.append({"step": int(step), "loss": str(name), "value": float(value)})
    return records


def write_loss_log(records: Iterable[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=("step", "loss", "value"))
        writer.writeheader()
        for row in records:
            writer.writerow(row)
