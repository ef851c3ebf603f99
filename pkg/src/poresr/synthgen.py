"""Synthetic ridge-pattern generator with planted pores and exact ground truth.

Ridges are oriented sinusoids squashed through a sigmoid (dark ridges, bright
valleys); pores are bright Gaussian blobs added on ridge pixels. Impressions
of one subject share the orientation field and pore layout and differ only by
a small recorded translation, contrast jitter and additive noise, so genuine
pairs stay matchable while different subjects are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from . import kernels
from .imagedata import (
    FingerprintImage,
    Manifest,
    ManifestRecord,
    PorePointSet,
    save_image,
    save_manifest,
    save_pore_annotations,
)

# pixels darker than this count as ridge area for pore placement
RIDGE_LEVEL = 0.35
# impressions translate by at most this many pixels in each axis
TRANSLATION_MAX = 4
# per-impression contrast jitter range (gamma exponent)
GAMMA_JITTER = (0.8, 1.25)

# seed-stream purposes, kept distinct so substreams never collide
_P_ORIENT = 1
_P_PHASE = 2
_P_PORES = 3
_P_OFFSET = 4
_P_PHOTO = 5


@dataclass
class SynthConfig:
    """Knobs for one synthetic dataset; all randomness roots at orientation_seed."""

    image_h: int = 128
    image_w: int = 128
    ridge_period: float = 9.0  # ridge+valley wavelength in pixels
    orientation_seed: int = 0
    pore_density: float = 6.0  # pores per 1000 ridge pixels
    pore_radius: float = 2.0
    noise_level: float = 0.03  # std of additive intensity noise
    subject_count: int = 4
    impressions_per_subject: int = 4
    ppi: float = 1000.0
    orientation_variation: float = 0.35  # radians around the per-subject base angle
    ridge_sharpness: float = 3.0  # sigmoid steepness of the ridge profile
    phase_noise: float = 0.6  # radians of smooth phase perturbation
    pore_amplitude: float = 0.85  # peak brightness added at a pore center

    def __post_init__(self):
        if self.image_h < 8 or self.image_w < 8:
            raise ValueError(f"image size {self.image_h}x{self.image_w} below 8x8")
        if self.ridge_period < 4:
            raise ValueError(f"ridge_period must be >= 4 px, got {self.ridge_period}")
        if not self.pore_radius < self.ridge_period / 2:
            raise ValueError(
                f"pore_radius {self.pore_radius} must be < ridge_period/2 "
                f"({self.ridge_period / 2})"
            )
        if self.pore_radius <= 0:
            raise ValueError("pore_radius must be positive")
        if not 0 <= self.noise_level <= 0.2:
            raise ValueError(f"noise_level must be in [0, 0.2], got {self.noise_level}")
        if self.subject_count < 1 or self.impressions_per_subject < 1:
            raise ValueError("subject_count and impressions_per_subject must be >= 1")


def _rng(*path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in path]))


def _smooth_noise(shape: Tuple[int, int], sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean smooth field normalized to unit max amplitude."""
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def _orientation_field(
    shape: Tuple[int, int], master_seed: int, subject_seed: int, variation: float
) -> np.ndarray:
    rng = _rng(master_seed, subject_seed, _P_ORIENT)
    base = rng.uniform(0.0, math.pi)
    if variation == 0.0:
        return np.full(shape, base % math.pi)
    wobble = _smooth_noise(shape, sigma=min(shape) / 4.0, rng=rng)
    return (base + variation * wobble) % math.pi


def generate_orientation_field(config: SynthConfig, subject_seed: int) -> np.ndarray:
    """Smooth per-subject ridge-direction field with angles in [0, pi)."""
    return _orientation_field(
        (config.image_h, config.image_w),
        config.orientation_seed,
        subject_seed,
        config.orientation_variation,
    )


def _ridge_pattern(
    orientation: np.ndarray, config: SynthConfig, phase_seed: int
) -> np.ndarray:
    h, w = orientation.shape
    rng = _rng(config.orientation_seed, phase_seed, _P_PHASE)
    phase = config.phase_noise * _smooth_noise((h, w), sigma=min(h, w) / 8.0, rng=rng)
    rows, cols = np.indices((h, w), dtype=np.float64)
    # the wave vector (sin t, cos t) is normal to the local ridge direction
    arg = (2.0 * math.pi / config.ridge_period) * (
        cols * np.sin(orientation) + rows * np.cos(orientation)
    ) + phase
    # cos = +1 at ridge centers, squashed dark; valleys squash bright
    return expit(-config.ridge_sharpness * np.cos(arg))


def synthesize_ridge_pattern(
    orientation: np.ndarray, config: SynthConfig, phase_seed: int = 0
) -> FingerprintImage:
    """Quasi-periodic dark-ridge pattern following the given orientation field."""
    if orientation.shape != (config.image_h, config.image_w):
        raise ValueError(
            f"orientation shape {orientation.shape} does not match config "
            f"{(config.image_h, config.image_w)}"
        )
    return FingerprintImage(_ridge_pattern(orientation, config, phase_seed), ppi=config.ppi)


def _plant_pores_on(
    pixels: np.ndarray, config: SynthConfig, rng_seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    h, w = pixels.shape
    mask = pixels < RIDGE_LEVEL
    n_ridge = int(mask.sum())
    n_target = int(round(config.pore_density * n_ridge / 1000.0))
    # centers stay a pixel inside the ridge so each blob peaks on dark ground
    interior = ndimage.binary_erosion(mask, structure=np.ones((3, 3), dtype=bool))
    if not interior.any():
        interior = mask
    if n_target == 0 or n_ridge == 0:
        return pixels.copy(), np.empty((0, 2), dtype=np.float64)

    rng = _rng(config.orientation_seed, rng_seed, _P_PORES)
    coords = np.argwhere(interior).astype(np.float64)
    coords = coords[rng.permutation(len(coords))]
    coords += rng.uniform(-0.45, 0.45, size=coords.shape)
    # jitter must not push a center off the ridge interior
    rr = np.clip(np.rint(coords[:, 0]).astype(np.intp), 0, h - 1)
    cc = np.clip(np.rint(coords[:, 1]).astype(np.intp), 0, w - 1)
    coords = coords[interior[rr, cc]]

    keep = kernels.suppress_sorted(
        np.ascontiguousarray(coords), 2.0 * config.pore_radius + 1.0
    )
    kept = coords[keep.astype(bool)][:n_target]

    blob = np.zeros_like(pixels)
    kernels.splat_gaussians(
        blob, np.ascontiguousarray(kept), config.pore_radius / 2.0, 1.0, 4.0
    )
    out = np.clip(pixels + config.pore_amplitude * blob, 0.0, 1.0)
    return out, kept


def plant_pores(
    image: FingerprintImage, config: SynthConfig, rng_seed: int
) -> Tuple[FingerprintImage, PorePointSet]:
    """Add bright pore blobs on ridge pixels; returns the exact planted centers.

    Pore count targets pore_density per 1000 ridge pixels; when the spacing
    floor (2*pore_radius + 1) makes that unattainable, fewer pores are placed.
    """
    out, kept = _plant_pores_on(image.pixels, config, rng_seed)
    h, w = out.shape
    return (
        FingerprintImage(out, ppi=image.ppi, subject_id=image.subject_id,
                         session_id=image.session_id),
        PorePointSet(kept, h, w),
    )


def session_split(n_impressions: int) -> List[int]:
    """Session label per impression index: first ceil(n/2) get 1, rest get 2."""
    first = (n_impressions + 1) // 2
    return [1 if i < first else 2 for i in range(n_impressions)]


def generate_dataset(config: SynthConfig, out_dir) -> Manifest:
    """Write subject_count x impressions_per_subject HR images plus annotations.

    Each subject is rendered once on a canvas oversized by the translation
    margin; impressions crop that canvas at a recorded integer offset, then
    apply gamma jitter and additive noise. Pore ground truth therefore aligns
    exactly across impressions under the recorded offsets.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)

    m = TRANSLATION_MAX
    canvas_shape = (config.image_h + 2 * m, config.image_w + 2 * m)
    sessions = session_split(config.impressions_per_subject)
    records = []
    for s in range(config.subject_count):
        orient = _orientation_field(
            canvas_shape, config.orientation_seed, s, config.orientation_variation
        )
        canvas = _ridge_pattern(orient, config, phase_seed=s)
        canvas, base_pts = _plant_pores_on(canvas, config, rng_seed=s)
        base = PorePointSet(base_pts, *canvas_shape)
        subject_id = f"s{s:03d}"

        for i in range(config.impressions_per_subject):
            off_rng = _rng(config.orientation_seed, s, i, _P_OFFSET)
            dr, dc = (int(v) for v in off_rng.integers(-m, m + 1, size=2))
            crop = canvas[m + dr : m + dr + config.image_h,
                          m + dc : m + dc + config.image_w].copy()
            pores = base.translated(-(m + dr), -(m + dc),
                                    config.image_h, config.image_w)

            photo_rng = _rng(config.orientation_seed, s, i, _P_PHOTO)
            gamma = photo_rng.uniform(*GAMMA_JITTER)
            crop = np.power(crop, gamma)
            if config.noise_level > 0:
                crop = crop + photo_rng.normal(0.0, config.noise_level, crop.shape)
            crop = np.clip(crop, 0.0, 1.0)

            img = FingerprintImage(crop, ppi=config.ppi, subject_id=subject_id,
                                   session_id=sessions[i])
            img_rel = f"images/{subject_id}_i{i:02d}.pgm"
            ann_rel = f"annotations/{subject_id}_i{i:02d}.txt"
            save_image(img, out_dir / img_rel, bits=16)
            save_pore_annotations(pores, out_dir / ann_rel)
            records.append(
                ManifestRecord(
                    image=img_rel,
                    annotations=ann_rel,
                    subject_id=subject_id,
                    session_id=sessions[i],
                    impression=i,
                    ppi=config.ppi,
                    offset=(float(dr), float(dc)),
                )
            )

    save_manifest(records, out_dir / "manifest.json")
    return Manifest(records=records, base_dir=out_dir)
