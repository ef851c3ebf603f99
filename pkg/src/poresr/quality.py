"""Image-quality reporting: PSNR, SSIM and score-distribution histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from skimage.metrics import structural_similarity

from .imagedata import FingerprintImage

PSNR_CAP_DB = 99.0  # reported for identical images instead of infinity


@dataclass
class QualityReport:
    """Aggregate over a set of (candidate, reference) pairs."""

    psnr: float  # mean across pairs, dB
    ssim: float  # mean across pairs, clipped to [0, 1]
    histogram: np.ndarray  # per-pair PSNR counts
    bin_edges: np.ndarray


def psnr(a: FingerprintImage, b: FingerprintImage) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 99 dB."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"size mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def ssim(a: FingerprintImage, b: FingerprintImage) -> float:
    """Structural similarity (Gaussian-free 7x7 window, K1=0.01, K2=0.03,
    data range 1.0), clipped into [0, 1] for reporting."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"size mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    value = structural_similarity(a.pixels, b.pixels, data_range=1.0)
    return float(np.clip(value, 0.0, 1.0))


def quality_histogram(
    scores: Sequence[float], bins: int, value_range: Tuple[float, float]
) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform-bin histogram; the last bin is right-inclusive, out-of-range
    scores are dropped. Returns (counts, edges)."""
    lo, hi = value_range
    if lo >= hi:
        raise ValueError(f"empty range ({lo}, {hi})")
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts, edges = np.histogram(np.asarray(list(scores), dtype=np.float64),
                                 bins=bins, range=(lo, hi))
    return counts, edges


def quality_report(
    candidates: Sequence[FingerprintImage],
    references: Sequence[FingerprintImage],
    bins: int = 12,
    score_range: Tuple[float, float] = (0.0, 60.0),
) -> QualityReport:
    """Per-pair PSNR/SSIM averaged over a matched list of image pairs, plus a
    histogram of the per-pair PSNR values."""
    if len(candidates) != len(references) or not candidates:
        raise ValueError("need equal-length, non-empty image lists")
    psnrs = [psnr(c, r) for c, r in zip(candidates, references)]
    ssims = [ssim(c, r) for c, r in zip(candidates, references)]
    counts, edges = quality_histogram(psnrs, bins, score_range)
    return QualityReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        histogram=counts,
        bin_edges=edges,
    )


def write_histogram_csv(counts: np.ndarray, edges: np.ndarray, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for k in range(len(counts)):
            writer.writerow([edges[k], edges[k + 1], int(counts[k])])
