"""Image and pore-annotation I/O, LR degradation, patching and augmentation.

Conventions: images are 2-D float64 arrays in [0, 1], indexed (row, col).
Pore coordinates are sub-pixel (row, col) pairs in the same frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from . import kernels

# Pore-map Gaussian: sigma in pixels at the reference resolution, scaled
# linearly with ppi elsewhere.
PORE_SIGMA_AT_REF = 2.0
REF_PPI = 1200.0
SPLAT_CUTOFF = 4.0  # kernel evaluated within cutoff*sigma of the center

MERGE_RADIUS = 1.0  # annotation points closer than this are averaged


def pore_sigma_for_ppi(ppi: float) -> float:
    return PORE_SIGMA_AT_REF * ppi / REF_PPI


@dataclass
class FingerprintImage:
    """Single-channel fingerprint raster with capture-resolution metadata."""

    pixels: np.ndarray
    ppi: float
    subject_id: Optional[str] = None
    session_id: Optional[int] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"expected a 2-D raster, got shape {self.pixels.shape}")
        h, w = self.pixels.shape
        if h < 8 or w < 8:
            raise ValueError(f"image too small: {h}x{w} (minimum 8x8)")
        if self.ppi <= 0:
            raise ValueError(f"ppi must be positive, got {self.ppi}")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities outside [0, 1]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class PorePointSet:
    """Sub-pixel pore centers inside an image frame, deduplicated within 1 px."""

    points: np.ndarray
    image_height: int
    image_width: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = np.empty((0, 2), dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must be (n, 2), got shape {pts.shape}")
        in_r = (pts[:, 0] >= 0) & (pts[:, 0] < self.image_height)
        in_c = (pts[:, 1] >= 0) & (pts[:, 1] < self.image_width)
        bad = np.nonzero(~(in_r & in_c))[0]
        if bad.size:
            raise ValueError(
                f"point {tuple(pts[bad[0]])} outside "
                f"[0,{self.image_height})x[0,{self.image_width})"
            )
        self.points = _merge_close_points(pts, MERGE_RADIUS)

    def __len__(self) -> int:
        return len(self.points)

    def translated(self, dr: float, dc: float, height: int, width: int) -> "PorePointSet":
        """Shift all points by (dr, dc) into a new frame, dropping points that fall outside."""
        if len(self.points) == 0:
            return PorePointSet(np.empty((0, 2)), height, width)
        pts = self.points + np.array([dr, dc])
        inside = (
            (pts[:, 0] >= 0)
            & (pts[:, 0] < height)
            & (pts[:, 1] >= 0)
            & (pts[:, 1] < width)
        )
        return PorePointSet(pts[inside], height, width)


def _merge_close_points(pts: np.ndarray, radius: float) -> np.ndarray:
    """Average together points closer than `radius`, iterating until stable."""
    r2 = radius * radius
    while True:
        merged: List[np.ndarray] = []
        counts: List[int] = []
        changed = False
        for p in pts:
            for k, q in enumerate(merged):
                d = p - q
                if d @ d < r2:
                    merged[k] = (q * counts[k] + p) / (counts[k] + 1)
                    counts[k] += 1
                    changed = True
                    break
            else:
                merged.append(p.copy())
                counts.append(1)
        pts = np.array(merged) if merged else np.empty((0, 2))
        if not changed:
            return pts


@dataclass
class PoreIntensityMap:
    """Per-pixel pore likelihood raster in [0, 1], same size as its image."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"expected a 2-D map, got shape {self.values.shape}")
        lo, hi = float(self.values.min()) if self.values.size else 0.0, (
            float(self.values.max()) if self.values.size else 0.0
        )
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"map values outside [0, 1]: min={lo}, max={hi}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class TrainingSample:
    """Aligned (LR patch, HR patch, HR pore map) triple; HR is exactly 2x LR."""

    lr_patch: FingerprintImage
    hr_patch: FingerprintImage
    hr_pore_map: PoreIntensityMap

    def __post_init__(self):
        lh, lw = self.lr_patch.pixels.shape
        hh, hw = self.hr_patch.pixels.shape
        if (hh, hw) != (2 * lh, 2 * lw):
            raise ValueError(f"HR {hh}x{hw} is not 2x the LR {lh}x{lw}")
        if self.hr_pore_map.values.shape != (hh, hw):
            raise ValueError("pore map size differs from HR patch")
        expected_lr = _block_mean(self.hr_patch.pixels, 2)
        if not np.allclose(self.lr_patch.pixels, expected_lr, atol=1e-9):
            raise ValueError("LR patch is not the area-average degradation of the HR patch")


# ---------------------------------------------------------------------------
# raster I/O


def load_image(path, ppi: float, subject_id=None, session_id=None) -> FingerprintImage:
    """Load an 8/16-bit single-channel PGM or PNG, normalized by the format max value."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        arr, maxval = _read_pgm(path)
    elif suffix == ".png":
        arr, maxval = _read_png(path)
    else:
        raise ValueError(f"unsupported image format: {path.name} (use .pgm or .png)")
    if arr.size == 0:
        raise ValueError(f"zero-sized image: {path}")
    pixels = arr.astype(np.float64) / maxval
    return FingerprintImage(pixels, ppi=ppi, subject_id=subject_id, session_id=session_id)


def save_image(image: FingerprintImage, path, bits: int = 8) -> None:
    """Write a PGM (P5) or PNG file; PGM output bytes are deterministic."""
    path = Path(path)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    quant = np.clip(np.rint(image.pixels * maxval), 0, maxval)
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, quant.astype(np.uint16 if bits == 16 else np.uint8), maxval)
    elif path.suffix.lower() == ".png":
        mode = "I;16" if bits == 16 else "L"
        Image.fromarray(quant.astype(np.uint16 if bits == 16 else np.uint8), mode=mode).save(path)
    else:
        raise ValueError(f"unsupported output format: {path.name}")


def _read_pgm(path: Path) -> Tuple[np.ndarray, int]:
    data = path.read_bytes()
    if data[:2] not in (b"P2", b"P5"):
        raise ValueError(f"not a PGM file (bad magic): {path}")
    ascii_fmt = data[:2] == b"P2"

    # header tokens: magic, width, height, maxval; '#' comments run to EOL
    tokens: List[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PGM header: {path}")
        tokens.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ValueError(f"malformed PGM header: {path}") from None
    if maxval <= 0 or maxval > 65535:
        raise ValueError(f"PGM maxval out of range: {maxval}")

    if ascii_fmt:
        try:
            values = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError:
            raise ValueError(f"non-numeric pixel data in {path}") from None
        if values.size != width * height:
            raise ValueError(f"PGM pixel count mismatch in {path}")
        arr = values.reshape(height, width)
    else:
        pos += 1  # single whitespace byte after maxval
        if maxval > 255:
            arr = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos)
        else:
            arr = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
        if arr.size != width * height:
            raise ValueError(f"PGM pixel data truncated in {path}")
        arr = arr.reshape(height, width)
    return arr.astype(np.float64), maxval


def _write_pgm(path: Path, arr: np.ndarray, maxval: int) -> None:
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        payload = arr.astype(">u2").tobytes()
    else:
        payload = arr.astype(np.uint8).tobytes()
    path.write_bytes(header + payload)


def _read_png(path: Path) -> Tuple[np.ndarray, int]:
    img = Image.open(path)
    if img.mode in ("L", "P"):
        arr = np.asarray(img.convert("L"))
        maxval = 255
    elif img.mode in ("I", "I;16"):
        arr = np.asarray(img, dtype=np.int64)
        maxval = 65535
    else:
        raise ValueError(f"unsupported PNG mode {img.mode!r} (need single-channel): {path}")
    return arr.astype(np.float64), maxval


# ---------------------------------------------------------------------------
# annotations


def load_pore_annotations(path, image: FingerprintImage) -> PorePointSet:
    """Read "row col" pairs (one per line, '#' comments allowed) and validate bounds."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such annotation file: {path}")
    points = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'row col', got {raw!r}")
        try:
            r, c = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric coordinate in {raw!r}") from None
        if not (0 <= r < image.height and 0 <= c < image.width):
            raise ValueError(
                f"{path}:{lineno}: point ({r}, {c}) outside "
                f"{image.height}x{image.width} image"
            )
        points.append((r, c))
    return PorePointSet(np.array(points, dtype=np.float64).reshape(-1, 2),
                        image.height, image.width)


def save_pore_annotations(pores: PorePointSet, path) -> None:
    lines = [f"{r:.3f} {c:.3f}" for r, c in pores.points]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# degradation, rendering, patching


def _block_mean(pixels: np.ndarray, factor: int) -> np.ndarray:
    h, w = pixels.shape
    return pixels.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def degrade_to_lr(hr: FingerprintImage, factor: int = 2) -> FingerprintImage:
    """Anti-aliased area-average downsampling by an integer factor."""
    if factor < 2:
        raise ValueError(f"factor must be >= 2, got {factor}")
    h, w = hr.pixels.shape
    if h % factor or w % factor:
        raise ValueError(f"dimensions {h}x{w} not divisible by factor {factor}")
    return FingerprintImage(
        _block_mean(hr.pixels, factor),
        ppi=hr.ppi / factor,
        subject_id=hr.subject_id,
        session_id=hr.session_id,
    )


def render_pore_map(pores: PorePointSet, sigma: float, amplitude: float = 1.0) -> PoreIntensityMap:
    """Render pore centers as clipped-sum isotropic Gaussians of the given sigma."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    out = np.zeros((pores.image_height, pores.image_width), dtype=np.float64)
    if len(pores):
        kernels.splat_gaussians(out, np.ascontiguousarray(pores.points), sigma,
                                amplitude, SPLAT_CUTOFF)
        np.clip(out, 0.0, 1.0, out=out)
    return PoreIntensityMap(out)


def extract_patches(
    image: FingerprintImage,
    pores: PorePointSet,
    patch_h: int,
    patch_w: int,
    stride: Tuple[int, int],
) -> List[Tuple[FingerprintImage, PorePointSet]]:
    """Cut overlapping patches in row-major order, with patch-local pore coordinates."""
    if isinstance(stride, int):
        stride = (stride, stride)
    sr, sc = stride
    if sr < 1 or sc < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    h, w = image.pixels.shape
    if patch_h > h or patch_w > w:
        raise ValueError(f"patch {patch_h}x{patch_w} larger than image {h}x{w}")
    out = []
    for r0 in range(0, h - patch_h + 1, sr):
        for c0 in range(0, w - patch_w + 1, sc):
            patch = FingerprintImage(
                image.pixels[r0 : r0 + patch_h, c0 : c0 + patch_w].copy(),
                ppi=image.ppi,
                subject_id=image.subject_id,
                session_id=image.session_id,
            )
            local = pores.translated(-r0, -c0, patch_h, patch_w)
            out.append((patch, local))
    return out


# ---------------------------------------------------------------------------
# augmentation

GAMMA_RANGE = (0.5, 2.0)
SCALE_RANGE = (0.9, 1.1)
AUGMENT_OPS = ("gamma", "scale", "hflip", "vflip")


def apply_gamma(pixels: np.ndarray, gamma: float) -> np.ndarray:
    return np.power(pixels, gamma)


def apply_scale(pixels: np.ndarray, factor: float, pad_value: float) -> np.ndarray:
    """Rescale by `factor` (bilinear) then center-crop/pad back to the input size."""
    h, w = pixels.shape
    zoomed = ndimage.zoom(pixels, factor, order=1, mode="nearest", grid_mode=True)
    zh, zw = zoomed.shape
    out = np.full((h, w), pad_value, dtype=np.float64)
    # overlap of centered windows
    r_out = max((h - zh) // 2, 0)
    c_out = max((w - zw) // 2, 0)
    r_in = max((zh - h) // 2, 0)
    c_in = max((zw - w) // 2, 0)
    rows = min(h, zh)
    cols = min(w, zw)
    out[r_out : r_out + rows, c_out : c_out + cols] = zoomed[r_in : r_in + rows, c_in : c_in + cols]
    return np.clip(out, 0.0, 1.0)


def augment(sample: TrainingSample, ops: Iterable[str], rng_seed: int) -> TrainingSample:
    """Apply the requested augmentations; geometry hits image and pore map alike,
    gamma hits images only. The LR patch is re-derived from the augmented HR
    patch so the degradation invariant survives every op.
    """
    ops = set(ops)
    unknown = ops - set(AUGMENT_OPS)
    if unknown:
        raise ValueError(f"unknown augmentation ops: {sorted(unknown)}")
    rng = np.random.default_rng(rng_seed)
    hr = sample.hr_patch.pixels.copy()
    pmap = sample.hr_pore_map.values.copy()

    if "scale" in ops:
        factor = rng.uniform(*SCALE_RANGE)
        hr = apply_scale(hr, factor, pad_value=float(np.median(hr)))
        pmap = apply_scale(pmap, factor, pad_value=0.0)
    if "hflip" in ops:
        hr = hr[:, ::-1].copy()
        pmap = pmap[:, ::-1].copy()
    if "vflip" in ops:
        hr = hr[::-1, :].copy()
        pmap = pmap[::-1, :].copy()
    if "gamma" in ops:
        gamma = rng.uniform(*GAMMA_RANGE)
        hr = apply_gamma(hr, gamma)

    hr_img = FingerprintImage(hr, ppi=sample.hr_patch.ppi,
                              subject_id=sample.hr_patch.subject_id,
                              session_id=sample.hr_patch.session_id)
    return TrainingSample(degrade_to_lr(hr_img, 2), hr_img, PoreIntensityMap(pmap))


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass
class ManifestRecord:
    image: str
    annotations: str
    subject_id: str
    session_id: int
    impression: int
    ppi: float
    offset: Tuple[float, float] = (0.0, 0.0)  # recorded translation vs the subject base


@dataclass
class Manifest:
    records: List[ManifestRecord]
    base_dir: Path = field(default_factory=Path)

    def image_path(self, rec: ManifestRecord) -> Path:
        return self.base_dir / rec.image

    def annotation_path(self, rec: ManifestRecord) -> Path:
        return self.base_dir / rec.annotations


def save_manifest(records: Sequence[ManifestRecord], path) -> None:
    path = Path(path)
    payload = {
        "format": "poresr-manifest-v1",
        "records": [
            {
                "image": r.image,
                "annotations": r.annotations,
                "subject_id": r.subject_id,
                "session_id": r.session_id,
                "impression": r.impression,
                "ppi": r.ppi,
                "offset": list(r.offset),
            }
            for r in records
        ],
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such manifest: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("format") != "poresr-manifest-v1":
        raise ValueError(f"unrecognized manifest format in {path}")
    records = []
    for entry in payload["records"]:
        records.append(
            ManifestRecord(
                image=entry["image"],
                annotations=entry["annotations"],
                subject_id=str(entry["subject_id"]),
                session_id=int(entry["session_id"]),
                impression=int(entry["impression"]),
                ppi=float(entry["ppi"]),
                offset=tuple(entry.get("offset", (0.0, 0.0))),
            )
        )
    return Manifest(records=records, base_dir=path.parent)


def load_record(manifest: Manifest, rec: ManifestRecord) -> Tuple[FingerprintImage, PorePointSet]:
    img = load_image(manifest.image_path(rec), ppi=rec.ppi,
                     subject_id=rec.subject_id, session_id=rec.session_id)
    pores = load_pore_annotations(manifest.annotation_path(rec), img)
    return img, pores
